"""WAV I/O oracles: integer scaling, 24-bit handling, wire round-trips."""

import base64
import struct

import numpy as np
import pytest

from puremix.audio import (
    AudioBuffer,
    AudioIOError,
    decode_wav_base64,
    downmix_mono,
    encode_wav_base64,
    read_wav,
    rms,
    write_wav_float32,
)


def write_pcm_wav(path, samples_int, rate, bits):
    """Hand-rolled PCM writer used as an independent oracle for read_wav."""
    channels = 1
    frame_bytes = bits // 8 * channels
    if bits == 16:
        payload = b"".join(struct.pack("<h", s) for s in samples_int)
    elif bits == 24:
        payload = b"".join(
            int(s & 0xFFFFFF).to_bytes(3, "little") for s in samples_int
        )
    elif bits == 32:
        payload = b"".join(struct.pack("<i", s) for s in samples_int)
    else:
        raise ValueError(bits)
    with open(path, "wb") as fh:
        fh.write(b"RIFF")
        fh.write(struct.pack("<I", 36 + len(payload)))
        fh.write(b"WAVEfmt ")
        fh.write(struct.pack("<IHHIIHH", 16, 1, channels, rate, rate * frame_bytes, frame_bytes, bits))
        fh.write(b"data")
        fh.write(struct.pack("<I", len(payload)))
        fh.write(payload)


def test_int16_scaling(tmp_path):
    path = tmp_path / "a.wav"
    values = [-32768, -16384, 0, 16384, 32767]
    write_pcm_wav(path, values, 8000, 16)
    buf = read_wav(str(path))
    assert buf.sample_rate == 8000
    np.testing.assert_array_equal(buf.samples, np.array(values) / 2.0**15)


def test_int32_scaling(tmp_path):
    path = tmp_path / "a.wav"
    values = [-(2**31), 0, 2**31 - 1]
    write_pcm_wav(path, values, 8000, 32)
    buf = read_wav(str(path))
    np.testing.assert_array_equal(buf.samples, np.array(values) / 2.0**31)


def test_24bit_left_justified(tmp_path):
    # 24-bit samples decode as value / 2^23: full-scale negative hits -1.0
    path = tmp_path / "a.wav"
    raw = [0x800000, 0xFFFFFF, 0x000000, 0x400000, 0x7FFFFF]  # two's complement
    signed = [v - (1 << 24) if v & 0x800000 else v for v in raw]
    write_pcm_wav(path, raw, 8000, 24)
    buf = read_wav(str(path))
    np.testing.assert_allclose(buf.samples, np.array(signed) / 2.0**23, atol=0, rtol=0)


def test_float32_roundtrip_exact(tmp_path):
    path = tmp_path / "a.wav"
    samples = np.array([0.0, 0.25, -0.5, 1.0, -1.0, 1e-7], dtype=np.float64)
    write_wav_float32(str(path), AudioBuffer(samples, 44100, "x"))
    buf = read_wav(str(path))
    np.testing.assert_array_equal(buf.samples, samples.astype(np.float32).astype(np.float64))
    assert buf.sample_rate == 44100


def test_write_rejects_multichannel(tmp_path):
    stereo = AudioBuffer(np.zeros((10, 2)), 44100, "x")
    with pytest.raises(AudioIOError):
        write_wav_float32(str(tmp_path / "s.wav"), stereo)


def test_base64_wire_roundtrip():
    samples = np.linspace(-0.9, 0.9, 1000)
    buf = AudioBuffer(samples, 22050, "wire")
    encoded = encode_wav_base64(buf)
    base64.b64decode(encoded, validate=True)  # is real base64
    back = decode_wav_base64(encoded, source_id="wire")
    assert back.sample_rate == 22050
    np.testing.assert_array_equal(back.samples, samples.astype(np.float32).astype(np.float64))


def test_downmix_mono_mean():
    stereo = AudioBuffer(np.array([[1.0, 0.0], [0.5, 0.5], [-1.0, 1.0]]), 8000, "s")
    mono = downmix_mono(stereo)
    np.testing.assert_array_equal(mono.samples, np.array([0.5, 0.5, 0.0]))
    already = downmix_mono(mono)
    assert already.samples is mono.samples  # no copy for mono input


def test_rms_known_values():
    assert rms(np.zeros(100)) == 0.0
    assert rms(np.full(100, 0.5)) == pytest.approx(0.5, abs=0)
    # sine rms = amp / sqrt(2)
    t = np.arange(44100) / 44100
    sine = 0.2 * np.sin(2 * np.pi * 100 * t)
    assert rms(sine) == pytest.approx(0.2 / np.sqrt(2), rel=1e-6)


def test_missing_file_raises():
    with pytest.raises(AudioIOError):
        read_wav("/nonexistent/no.wav")
