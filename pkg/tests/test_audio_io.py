import struct
import wave

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from concertfp.audio_io import (
    AudioClip,
    EmptyInputError,
    UnsupportedFormatError,
    WavDecodeError,
    canonicalise,
    decode_wav,
    encode_wav,
    read_wav,
    write_wav,
)


def riff(fmt_body: bytes, data: bytes, extra: bytes = b"") -> bytes:
    body = b"WAVE" + extra + b"fmt " + struct.pack("<I", len(fmt_body)) + fmt_body
    body += b"data" + struct.pack("<I", len(data)) + data
    return b"RIFF" + struct.pack("<I", len(body)) + body


def test_clip_validation():
    clip = AudioClip(8000, [0.0, 0.5, -1.0])
    assert clip.channels == 1 and clip.n_samples == 3 and clip.duration_s == 3 / 8000
    with pytest.raises(ValueError):
        AudioClip(0, [0.0])
    with pytest.raises(ValueError):
        AudioClip(8000, [1.5])
    with pytest.raises(ValueError):
        AudioClip(8000, [np.nan])
    with pytest.raises(ValueError):
        clip.samples[0, 0] = 0.1


def test_pcm16_scaling():
    data = struct.pack("<4h", 0, 16384, -32768, 32767)
    fmt = struct.pack("<HHIIHH", 1, 1, 8000, 16000, 2, 16)
    clip = decode_wav(riff(fmt, data))
    assert clip.samples[0].tolist() == [0.0, 0.5, -1.0, 32767 / 32768]


def test_float32_and_stereo_interleave():
    frames = np.array([[0.25, -0.5], [1.0, 0.0]], dtype="<f4")
    fmt = struct.pack("<HHIIHH", 3, 2, 44100, 44100 * 8, 8, 32)
    clip = decode_wav(riff(fmt, frames.tobytes()))
    assert clip.channels == 2
    assert clip.samples.tolist() == [[0.25, 1.0], [-0.5, 0.0]]


def test_extensible_format_and_unknown_chunks_skipped():
    fmt = struct.pack("<HHIIHH", 0xFFFE, 1, 8000, 16000, 2, 16)
    fmt += struct.pack("<HHI", 22, 16, 4) + struct.pack("<H", 1) + b"\0" * 14
    junk = b"LIST" + struct.pack("<I", 3) + b"abc\0"
    clip = decode_wav(riff(fmt, struct.pack("<h", 16384), extra=junk))
    assert clip.samples[0].tolist() == [0.5]


def test_reads_stdlib_wave_output(tmp_path):
    path = tmp_path / "x.wav"
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(22050)
        w.writeframes(struct.pack("<3h", 1, -2, 3))
    clip = read_wav(path)
    assert clip.sample_rate == 22050
    assert (clip.samples[0] * 32768).tolist() == [1, -2, 3]


@pytest.mark.parametrize(
    "raw, message",
    [
        (b"RIFF", "RIFF header"),
        (b"RIFX\0\0\0\0WAVE", "RIFF header"),
        (riff(b"\0" * 8, b""), "'fmt '"),
        (b"RIFF\x10\0\0\0WAVEdata\x00\0\0\0", "'fmt '"),
        (b"RIFF\x18\0\0\0WAVEfmt \x10\0\0\0" + struct.pack("<HHIIHH", 1, 1, 8000, 16000, 2, 16), "'data'"),
        (b"RIFF\x20\0\0\0WAVEfmt \x40\0\0\0" + b"\0" * 16, "truncated"),
    ],
)
def test_decode_errors_name_the_chunk(raw, message):
    with pytest.raises(WavDecodeError, match=message):
        decode_wav(raw)


@pytest.mark.parametrize("tag, bits, ch", [(1, 8, 1), (1, 24, 1), (3, 64, 1), (1, 16, 6)])
def test_unsupported_formats(tag, bits, ch):
    fmt = struct.pack("<HHIIHH", tag, ch, 8000, 8000 * ch * bits // 8, ch * bits // 8, bits)
    with pytest.raises(UnsupportedFormatError):
        decode_wav(riff(fmt, b"\0" * 16))


@settings(max_examples=50, deadline=None)
@given(
    st.sampled_from([8000, 11025, 44100]),
    st.integers(1, 2),
    st.integers(0, 200).flatmap(lambda n: arrays(np.int16, (n,))),
)
def test_pcm16_round_trip_is_exact(rate, ch, pcm):
    pcm = pcm[: len(pcm) // ch * ch].reshape(-1, ch).T
    clip = AudioClip(rate, pcm / 32768.0)
    back = decode_wav(encode_wav(clip))
    assert back == clip


def test_write_read_file(tmp_path):
    clip = AudioClip(11025, np.linspace(-1, 1, 101))
    write_wav(tmp_path / "a.wav", clip)
    back = read_wav(tmp_path / "a.wav")
    assert np.max(np.abs(back.samples - clip.samples)) <= 1 / 32768


def test_encode_saturates_full_scale():
    clip = AudioClip(8000, [1.0, -1.0])
    assert decode_wav(encode_wav(clip)).samples[0].tolist() == [32767 / 32768, -1.0]


def test_canonicalise_identity_and_mixdown():
    mono = AudioClip(11025, np.zeros(10))
    assert canonicalise(mono) is mono
    stereo = AudioClip(11025, [[0.5, 1.0], [-0.5, 0.0]])
    assert canonicalise(stereo).samples.tolist() == [[0.0, 0.5]]


def test_canonicalise_resamples_length_and_tone():
    rate = 44100
    t = np.arange(rate) / rate
    clip = AudioClip(rate, 0.5 * np.sin(2 * np.pi * 1000 * t))
    out = canonicalise(clip)
    assert out.sample_rate == 11025 and out.n_samples == 11025
    spec = np.abs(np.fft.rfft(out.mono))
    assert abs(spec.argmax() - 1000) <= 1


def test_canonicalise_upsample_interpolates():
    out = canonicalise(AudioClip(2, [0.0, 1.0]), target_rate=4)
    assert out.samples[0].tolist() == [0.0, 0.5, 1.0, 1.0]


def test_canonicalise_empty():
    with pytest.raises(EmptyInputError):
        canonicalise(AudioClip(8000, np.zeros(0)))
