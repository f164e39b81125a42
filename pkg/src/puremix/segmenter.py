"""Fixed-window segmentation of raw recordings with RMS silence gating.

Recordings are downmixed to mono, sliced into overlapping windows
(10 s window, 5 s hop by default), and gated on RMS energy: windows
quieter than the threshold are discarded, as is any tail shorter than a
full window.  Kept segments are stored by reference (source id plus
offsets), never as copied audio.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

from .audio import AudioBuffer, downmix_mono, read_wav, rms

DEFAULT_WINDOW_S = 10.0
DEFAULT_HOP_S = 5.0
DEFAULT_RMS_THRESHOLD = 5e-4


@dataclass(frozen=True)
class Segment:
    """One fixed-length window of a source recording, stored by reference."""

    source_id: str
    start_s: float
    duration_s: float
    rms: float
    sample_rate: int

    @property
    def segment_id(self) -> str:
        return f"{self.source_id}@{self.start_s:g}"


def slice_windows(
    buffer: AudioBuffer,
    window_s: float = DEFAULT_WINDOW_S,
    hop_s: float = DEFAULT_HOP_S,
) -> list[Segment]:
    """Slice a mono buffer into windows starting at 0, hop, 2*hop, ...

    A window is emitted only if it fits entirely inside the buffer; the
    residual tail shorter than ``window_s`` is discarded.  For duration D
    this yields 0 windows when D < W and floor((D - W)/H) + 1 otherwise.
    """
    if window_s <= 0:
        raise ValueError(f"window_s must be positive, got {window_s}")
    if hop_s <= 0 or hop_s > window_s:
        raise ValueError(f"hop_s must satisfy 0 < hop_s <= window_s, got {hop_s}")
    if buffer.channels != 1:
        raise ValueError("slice_windows expects a mono buffer; downmix first")

    rate = buffer.sample_rate
    window_n = int(round(window_s * rate))
    hop_n = int(round(hop_s * rate))
    total_n = buffer.num_frames

    segments = []
    start_n = 0
    while start_n + window_n <= total_n:
        chunk = buffer.samples[start_n : start_n + window_n]
        segments.append(
            Segment(
                source_id=buffer.source_id,
                start_s=start_n / rate,
                duration_s=window_s,
                rms=rms(chunk),
                sample_rate=rate,
            )
        )
        start_n += hop_n
    return segments


def gate_segments(
    segments: list[Segment], threshold: float = DEFAULT_RMS_THRESHOLD
) -> tuple[list[Segment], list[Segment]]:
    """Partition segments into (kept, discarded) by ``rms >= threshold``."""
    if threshold < 0:
        raise ValueError(f"threshold must be non-negative, got {threshold}")
    kept = [s for s in segments if s.rms >= threshold]
    discarded = [s for s in segments if s.rms < threshold]
    return kept, discarded


def segment_source(
    path: str,
    source_id: str,
    window_s: float = DEFAULT_WINDOW_S,
    hop_s: float = DEFAULT_HOP_S,
    threshold: float = DEFAULT_RMS_THRESHOLD,
) -> list[Segment]:
    """Load one recording, downmix, slice, and gate; returns kept segments."""
    buffer = downmix_mono(read_wav(path, source_id=source_id))
    kept, _ = gate_segments(slice_windows(buffer, window_s, hop_s), threshold)
    return kept


def load_segment_audio(segment: Segment, path: str) -> AudioBuffer:
    """Re-read a segment's samples from its source file by stored offsets."""
    buffer = downmix_mono(read_wav(path, source_id=segment.source_id))
    rate = buffer.sample_rate
    start_n = int(round(segment.start_s * rate))
    length_n = int(round(segment.duration_s * rate))
    chunk = buffer.samples[start_n : start_n + length_n]
    if chunk.shape[0] != length_n:
        raise ValueError(
            f"segment {segment.segment_id!r} extends past the end of {path!r}"
        )
    return AudioBuffer(chunk, rate, source_id=segment.segment_id)


def render_segment_index(segments: list[Segment]) -> str:
    """Serialize segments as JSONL text, sorted by (source_id, start_s)."""
    ordered = sorted(segments, key=lambda s: (s.source_id, s.start_s))
    return "".join(json.dumps(asdict(seg), sort_keys=True) + "\n" for seg in ordered)


def write_segment_index(segments: list[Segment], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(render_segment_index(segments))


def read_segment_index(path: str) -> list[Segment]:
    segments = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                segments.append(Segment(**json.loads(line)))
    return segments
