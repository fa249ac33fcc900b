"""Landmark fingerprinting, clustering and quality ranking of concert clips."""

from .audio_io import AudioClip, canonicalise, decode_wav, encode_wav, read_wav, write_wav
from .clustering import ClusterSet, MatchGraph, build_graph, connected_components, propagate_offsets
from .config import PipelineConfig, load_config
from .corpus_gen import CorpusSpec, Manifest, generate_corpus, inject_false_positives
from .filtering import FilterParams, filter_all, filter_decisions, filter_matches
from .fingerprint import Fingerprint, Landmark, Peak, fingerprint_clip
from .match_db import MatchDb, OffsetGroup, RawMatchingList
from .quality import QualityScore, rank_cluster, score_all

__version__ = "0.1.0"

__all__ = [
    "AudioClip", "ClusterSet", "CorpusSpec", "FilterParams", "Fingerprint", "Landmark", "Manifest",
    "MatchDb", "MatchGraph", "OffsetGroup", "Peak", "PipelineConfig", "QualityScore", "RawMatchingList",
    "build_graph", "canonicalise", "connected_components", "decode_wav", "encode_wav", "filter_all",
    "filter_decisions", "filter_matches", "fingerprint_clip", "generate_corpus", "inject_false_positives",
    "load_config", "propagate_offsets", "rank_cluster", "read_wav", "score_all", "write_wav",
]
