"""Shared fixture builders for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from puremix.audio import AudioBuffer, write_wav_float32
from puremix.mixer import PoolClip
from puremix.ontology import Ontology, load_ontology


def tone(freq_hz: float, seconds: float, rate: int, amp: float = 0.05, phase: float = 0.0) -> np.ndarray:
    t = np.arange(int(round(seconds * rate))) / rate
    return amp * np.sin(2 * np.pi * freq_hz * t + phase)


def buffer_of(samples, rate: int = 44100, source_id: str = "test") -> AudioBuffer:
    return AudioBuffer(np.asarray(samples, dtype=np.float64), rate, source_id)


def write_taxonomy(path, rows: list[tuple[str, str, str | None]]) -> None:
    """rows: (id, name, parent or None)."""
    with open(path, "w", encoding="utf-8") as fh:
        for node_id, name, parent in rows:
            fh.write(f"{node_id}\t{name}\t{parent if parent else '-'}\n")


def write_plan(path, rows: list[tuple[str, str | None, list[str]]]) -> None:
    """rows: (kind, target or None, sources)."""
    with open(path, "w", encoding="utf-8") as fh:
        for kind, target, sources in rows:
            fh.write(f"{kind}\t{target if target else '-'}\t{','.join(sources)}\n")


@pytest.fixture
def small_ontology(tmp_path) -> Ontology:
    """root -> (dog -> bark, growl), (cat -> meow), (rain -> drizzle)."""
    path = tmp_path / "taxonomy.tsv"
    write_taxonomy(
        path,
        [
            ("root", "Root", None),
            ("dog", "Dog", "root"),
            ("bark", "Bark", "dog"),
            ("growl", "Growl", "dog"),
            ("cat", "Cat", "root"),
            ("meow", "Meow", "cat"),
            ("rain", "Rain", "root"),
            ("drizzle", "Drizzle", "rain"),
        ],
    )
    return load_ontology(str(path))


def make_clip_files(directory, specs, rate: int = 44100) -> dict[str, list[PoolClip]]:
    """specs: iterable of (clip_id, label, seconds, freq) -> pool dict.

    Writes one standardized tone WAV per spec into ``directory``.
    """
    pool: dict[str, list[PoolClip]] = {}
    for clip_id, label, seconds, freq in specs:
        samples = tone(freq, seconds, rate)
        write_wav_float32(str(directory / f"{clip_id}.wav"), AudioBuffer(samples, rate, clip_id))
        pool.setdefault(label, []).append(
            PoolClip(clip_id=clip_id, label=label, path=f"{clip_id}.wav", duration_s=seconds)
        )
    return pool
