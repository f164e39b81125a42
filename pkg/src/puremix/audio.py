"""WAV reading/writing and basic waveform utilities.

All pipeline audio lives in float64 numpy arrays with a nominal range of
[-1, 1].  Supported input containers are PCM WAV files holding 16-bit or
24-bit integers or IEEE float samples; output is always 32-bit float WAV.
"""

from __future__ import annotations

import base64
import io
from dataclasses import dataclass, replace

import numpy as np
from scipy.io import wavfile


class AudioIOError(Exception):
    """Raised when a WAV file cannot be read or written."""


@dataclass
class AudioBuffer:
    """A waveform plus its sample rate and a provenance tag.

    ``samples`` has shape (n,) for mono or (n, channels) for multichannel
    audio, dtype float64, nominal range [-1, 1].
    """

    samples: np.ndarray
    sample_rate: int
    source_id: str = ""

    def __post_init__(self) -> None:
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        self.samples = np.asarray(self.samples, dtype=np.float64)

    @property
    def channels(self) -> int:
        return 1 if self.samples.ndim == 1 else self.samples.shape[1]

    @property
    def num_frames(self) -> int:
        return self.samples.shape[0]

    @property
    def duration_s(self) -> float:
        return self.num_frames / self.sample_rate


# Divisors that map integer PCM onto [-1, 1).  24-bit data arrives
# left-justified in int32 containers, so one divisor covers both.
_INT_SCALE = {
    np.dtype(np.int16): 2.0**15,
    np.dtype(np.int32): 2.0**31,
}


def read_wav(path: str, source_id: str | None = None) -> AudioBuffer:
    """Read a PCM WAV file into a float64 AudioBuffer in [-1, 1]."""
    try:
        rate, data = wavfile.read(path)
    except (ValueError, OSError) as exc:
        raise AudioIOError(f"unreadable WAV file {path!r}: {exc}") from exc
    if data.dtype in _INT_SCALE:
        samples = data.astype(np.float64) / _INT_SCALE[data.dtype]
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise AudioIOError(
            f"unsupported sample format {data.dtype} in {path!r}; "
            "expected 16/24-bit integer or 32-bit float PCM"
        )
    return AudioBuffer(samples, int(rate), source_id if source_id is not None else str(path))


def write_wav_float32(path: str, buffer: AudioBuffer) -> None:
    """Write a mono AudioBuffer as a 32-bit float WAV file."""
    if buffer.channels != 1:
        raise AudioIOError(f"refusing to write non-mono buffer ({buffer.channels} channels)")
    try:
        wavfile.write(path, buffer.sample_rate, buffer.samples.astype(np.float32))
    except OSError as exc:
        raise AudioIOError(f"cannot write WAV file {path!r}: {exc}") from exc


def encode_wav_base64(buffer: AudioBuffer) -> str:
    """Encode a mono buffer as a base64 32-bit float WAV blob (wire format)."""
    bio = io.BytesIO()
    wavfile.write(bio, buffer.sample_rate, buffer.samples.astype(np.float32))
    return base64.b64encode(bio.getvalue()).decode("ascii")


def decode_wav_base64(blob: str, source_id: str = "") -> AudioBuffer:
    """Decode a base64 WAV blob produced by a service response."""
    try:
        raw = base64.b64decode(blob, validate=True)
        rate, data = wavfile.read(io.BytesIO(raw))
    except Exception as exc:  # noqa: BLE001 - wire data is untrusted
        raise AudioIOError(f"undecodable base64 WAV payload: {exc}") from exc
    if data.dtype in _INT_SCALE:
        samples = data.astype(np.float64) / _INT_SCALE[data.dtype]
    else:
        samples = data.astype(np.float64)
    return AudioBuffer(samples, int(rate), source_id)


def downmix_mono(buffer: AudioBuffer) -> AudioBuffer:
    """Collapse channels to mono by per-frame arithmetic mean."""
    if buffer.samples.ndim == 1:
        return buffer
    if buffer.samples.shape[1] == 0:
        raise ValueError("buffer has zero channels")
    mono = buffer.samples.mean(axis=1)
    return replace(buffer, samples=mono)


def rms(samples: np.ndarray) -> float:
    """Root-mean-square of a sample sequence: sqrt((1/n) * sum(s_i^2))."""
    x = np.asarray(samples, dtype=np.float64)
    if x.size == 0:
        raise ValueError("rms of an empty sequence is undefined")
    return float(np.sqrt(np.mean(np.square(x))))
