"""Semantically consistent, SNR-controlled mixture synthesis.

Mixtures are built from a pool of standardized single-event clips under a
binary label co-occurrence matrix: a source count C is drawn from a
configurable distribution over {2..5}, C pairwise-compatible distinct
labels are drawn by rejection sampling, and one clip per label is cropped,
RMS-normalized, and summed with per-component gains

    mixture = x_1 + sum_{c=2..C} 10^(snr_c / 20) * x_c

where component 1 is the unit-gain anchor.  If the mixture peak exceeds
0.999, one shared scale is applied to the mixture and every stem, which
preserves all SNR relations and the superposition identity.  Every mixture
is described by a manifest entry sufficient to re-synthesize it exactly.
"""

from __future__ import annotations

import json
import logging
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Iterable

import numpy as np

from .aligner import majority_vote
from .audio import AudioBuffer, downmix_mono, read_wav, rms, write_wav_float32

logger = logging.getLogger(__name__)

DEFAULT_RMS_TARGET = 0.1
DEFAULT_SNR_RANGE = (-5.0, 5.0)
DEFAULT_COUNT_WEIGHTS = {2: 0.20, 3: 0.20, 4: 0.25, 5: 0.35}
PEAK_CEILING = 0.999
SILENT_CROP_REDRAWS = 5
SAMPLE_ATTEMPT_BUDGET = 1000


class MixerError(Exception):
    """Base class for mixture-synthesis failures."""


class PoolTooSparseError(MixerError):
    """Rejection sampling could not find a compatible label tuple."""

    def __init__(self, count: int, attempts: int) -> None:
        self.count = count
        self.attempts = attempts
        super().__init__(
            f"no pairwise-compatible tuple of {count} labels found in "
            f"{attempts} attempts; pool or matrix too sparse for C={count}"
        )


class SilentBufferError(MixerError):
    """A buffer with zero RMS cannot be normalized."""


class SilentCropError(MixerError):
    """All crop re-draws of a clip came back silent."""


@dataclass(frozen=True)
class PoolClip:
    clip_id: str
    label: str
    path: str
    duration_s: float


@dataclass(frozen=True)
class RecipeComponent:
    clip_id: str
    label: str
    snr_db: float
    crop_offset_s: float


@dataclass(frozen=True)
class MixRecipe:
    mixture_id: str
    split: str
    duration_s: float
    seed: int
    components: tuple[RecipeComponent, ...]

    def __post_init__(self) -> None:
        if not 2 <= len(self.components) <= 5:
            raise MixerError(
                f"{self.mixture_id}: component count {len(self.components)} outside [2, 5]"
            )
        labels = [c.label for c in self.components]
        if len(set(labels)) != len(labels):
            raise MixerError(f"{self.mixture_id}: duplicate labels {labels}")
        if self.components[0].snr_db != 0.0:
            raise MixerError(f"{self.mixture_id}: anchor snr_db must be 0")


@dataclass(frozen=True)
class ManifestEntry:
    """Replayable record of one emitted mixture."""

    mixture_id: str
    split: str
    duration_s: float
    seed: int
    components: tuple[RecipeComponent, ...]
    peak_scale: float
    mix_path: str
    stem_paths: tuple[str, ...]

    def to_json(self) -> str:
        record = {
            "mixture_id": self.mixture_id,
            "split": self.split,
            "duration_s": self.duration_s,
            "seed": self.seed,
            "components": [
                {
                    "clip_id": c.clip_id,
                    "label": c.label,
                    "snr_db": c.snr_db,
                    "crop_offset_s": c.crop_offset_s,
                }
                for c in self.components
            ],
            "peak_scale": self.peak_scale,
            "mix_path": self.mix_path,
            "stem_paths": list(self.stem_paths),
        }
        return json.dumps(record)

    @staticmethod
    def from_json(line: str) -> "ManifestEntry":
        record = json.loads(line)
        return ManifestEntry(
            mixture_id=record["mixture_id"],
            split=record["split"],
            duration_s=record["duration_s"],
            seed=record["seed"],
            components=tuple(RecipeComponent(**c) for c in record["components"]),
            peak_scale=record["peak_scale"],
            mix_path=record["mix_path"],
            stem_paths=tuple(record["stem_paths"]),
        )


# ---------------------------------------------------------------------------
# Co-occurrence matrix
# ---------------------------------------------------------------------------


@dataclass
class CooccurrenceMatrix:
    labels: list[str]
    bits: np.ndarray  # N x N bool, symmetric

    def __post_init__(self) -> None:
        self.bits = np.asarray(self.bits, dtype=bool)
        n = len(self.labels)
        if self.bits.shape != (n, n):
            raise MixerError(f"matrix shape {self.bits.shape} does not match {n} labels")
        self._index = {label: i for i, label in enumerate(self.labels)}
        if len(self._index) != n:
            raise MixerError("duplicate labels in co-occurrence matrix")

    def compatible(self, label_a: str, label_b: str) -> bool:
        """Whether two distinct labels may share a mixture (diagonal ignored)."""
        ia, ib = self._index[label_a], self._index[label_b]
        if ia == ib:
            return False
        return bool(self.bits[ia, ib])

    def has_label(self, label: str) -> bool:
        return label in self._index


def load_matrix(path: str, leaves: Iterable[str] | None = None) -> CooccurrenceMatrix:
    """Load a matrix document: a header line of N label ids, then N lines
    of N characters in {0,1}.  Asymmetric entries are AND-symmetrized with
    a warning listing the offending pairs."""
    with open(path, encoding="utf-8") as fh:
        lines = [line.rstrip("\n") for line in fh if line.strip()]
    if not lines:
        raise MixerError(f"{path}: empty matrix document")
    header = lines[0]
    labels = header.split("\t") if "\t" in header else header.split()
    n = len(labels)
    if len(lines) != n + 1:
        raise MixerError(f"{path}: expected {n} rows after header, got {len(lines) - 1}")
    bits = np.zeros((n, n), dtype=bool)
    for i, row in enumerate(lines[1:]):
        row = row.strip()
        if len(row) != n or set(row) - {"0", "1"}:
            raise MixerError(f"{path}: row {i + 1} is not {n} characters of 0/1")
        bits[i] = [ch == "1" for ch in row]
    if leaves is not None:
        unknown = sorted(set(labels) - set(leaves))
        if unknown:
            raise MixerError(f"{path}: labels not in ontology leaves: {unknown}")
    asym = np.argwhere(bits != bits.T)
    if asym.size:
        pairs = sorted({(labels[min(i, j)], labels[max(i, j)]) for i, j in asym})
        logger.warning(
            "co-occurrence matrix is asymmetric; AND-symmetrizing %d pairs: %s",
            len(pairs),
            pairs,
        )
        bits &= bits.T
    return CooccurrenceMatrix(labels, bits)


def write_matrix(matrix: CooccurrenceMatrix, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(matrix.labels) + "\n")
        for row in matrix.bits.astype(int):
            fh.write("".join(str(v) for v in row) + "\n")


def build_matrix(labels: list[str], judge, passes: int = 1) -> CooccurrenceMatrix:
    """Build a matrix by querying a pair-compatibility judge.

    ``judge(label_a, label_b, pass_index)`` returns "yes"/"no"; one query
    batch per unordered pair, majority-voted, ties conservative (0).  The
    result is symmetric by construction.
    """
    n = len(labels)
    bits = np.zeros((n, n), dtype=bool)
    for i in range(n):
        for j in range(i + 1, n):
            counts: dict[str, int] = {}
            for k in range(passes):
                answer = str(judge(labels[i], labels[j], k)).strip().casefold()
                counts[answer] = counts.get(answer, 0) + 1
            verdict = majority_vote(counts)
            value = verdict == "yes"
            bits[i, j] = bits[j, i] = value
    return CooccurrenceMatrix(list(labels), bits)


# ---------------------------------------------------------------------------
# Recipe sampling
# ---------------------------------------------------------------------------


def sample_recipe(
    pool: dict[str, list[PoolClip]],
    matrix: CooccurrenceMatrix,
    count_weights: dict[int, float],
    snr_range: tuple[float, float],
    split: str,
    rng: np.random.Generator,
    duration_s: float,
    mixture_id: str,
    sample_rate: int = 44100,
    max_attempts: int = SAMPLE_ATTEMPT_BUDGET,
) -> MixRecipe:
    """Draw one mixture recipe from the pool under the matrix constraint.

    Fully determined by the rng state and pool ordering: the source count
    is drawn from ``count_weights``, labels by bounded rejection sampling
    until pairwise-compatible, one clip uniformly per label, SNRs uniformly
    from ``snr_range`` for non-anchor components, and sample-aligned crop
    offsets uniformly over the feasible range.
    """
    counts = sorted(count_weights)
    weights = np.array([count_weights[c] for c in counts], dtype=np.float64)
    if not np.isclose(weights.sum(), 1.0, atol=1e-6):
        raise MixerError(f"count_weights sum to {weights.sum()}, expected 1")
    weights = weights / weights.sum()

    # Only labels with at least one clip long enough for this split count.
    eligible = {
        label: [clip for clip in clips if clip.duration_s >= duration_s]
        for label, clips in pool.items()
    }
    labels = [label for label in eligible if eligible[label] and matrix.has_label(label)]

    c = int(rng.choice(np.asarray(counts), p=weights))
    if len(labels) < c:
        raise PoolTooSparseError(c, 0)

    chosen: list[str] | None = None
    for _ in range(max_attempts):
        idx = rng.choice(len(labels), size=c, replace=False)
        tuple_labels = [labels[i] for i in idx]
        ok = all(
            matrix.compatible(tuple_labels[a], tuple_labels[b])
            for a in range(c)
            for b in range(a + 1, c)
        )
        if ok:
            chosen = tuple_labels
            break
    if chosen is None:
        raise PoolTooSparseError(c, max_attempts)

    duration_n = int(round(duration_s * sample_rate))
    components = []
    for k, label in enumerate(chosen):
        clips = eligible[label]
        clip = clips[int(rng.integers(len(clips)))]
        snr_db = 0.0 if k == 0 else float(rng.uniform(snr_range[0], snr_range[1]))
        clip_n = int(round(clip.duration_s * sample_rate))
        offset_n = int(rng.integers(0, clip_n - duration_n + 1))
        components.append(
            RecipeComponent(
                clip_id=clip.clip_id,
                label=label,
                snr_db=snr_db,
                crop_offset_s=offset_n / sample_rate,
            )
        )
    seed = int(rng.integers(0, 2**63))
    return MixRecipe(
        mixture_id=mixture_id,
        split=split,
        duration_s=duration_s,
        seed=seed,
        components=tuple(components),
    )


def validate_recipe(recipe: MixRecipe, matrix: CooccurrenceMatrix) -> None:
    """Raise if the recipe violates distinctness or matrix compatibility."""
    labels = [c.label for c in recipe.components]
    for a in range(len(labels)):
        for b in range(a + 1, len(labels)):
            if labels[a] == labels[b]:
                raise MixerError(f"{recipe.mixture_id}: duplicate label {labels[a]!r}")
            if not matrix.compatible(labels[a], labels[b]):
                raise MixerError(
                    f"{recipe.mixture_id}: incompatible pair ({labels[a]!r}, {labels[b]!r})"
                )


# ---------------------------------------------------------------------------
# Synthesis
# ---------------------------------------------------------------------------


def normalize_rms(buffer: AudioBuffer, target: float = DEFAULT_RMS_TARGET) -> AudioBuffer:
    """Scale a buffer so its RMS equals ``target`` (within float rounding)."""
    level = rms(buffer.samples)
    if level == 0.0:
        raise SilentBufferError(f"buffer {buffer.source_id!r} is silent; cannot normalize")
    return replace(buffer, samples=buffer.samples * (target / level))


class ClipStore:
    """Loads and caches pool clip audio as mono float64 at the target rate."""

    def __init__(self, clips: Iterable[PoolClip], base_dir: str = "", sample_rate: int = 44100):
        self.by_id = {c.clip_id: c for c in clips}
        self.base_dir = base_dir
        self.sample_rate = sample_rate
        self._cache: dict[str, np.ndarray] = {}

    def clip(self, clip_id: str) -> PoolClip:
        if clip_id not in self.by_id:
            raise MixerError(f"clip {clip_id!r} not present in the pool listing")
        return self.by_id[clip_id]

    def samples(self, clip_id: str) -> np.ndarray:
        if clip_id not in self._cache:
            clip = self.clip(clip_id)
            path = clip.path
            if not os.path.isabs(path):
                path = os.path.join(self.base_dir, path)
            buffer = downmix_mono(read_wav(path, source_id=clip_id))
            if buffer.sample_rate != self.sample_rate:
                raise MixerError(
                    f"clip {clip_id!r} is at {buffer.sample_rate} Hz, "
                    f"expected {self.sample_rate}; standardize first"
                )
            self._cache[clip_id] = buffer.samples
        return self._cache[clip_id]


def _crop(samples: np.ndarray, offset_s: float, duration_n: int, rate: int) -> np.ndarray:
    start = int(round(offset_s * rate))
    if start < 0 or start + duration_n > len(samples):
        raise MixerError(f"crop [{start}, {start + duration_n}) outside clip of {len(samples)}")
    return samples[start : start + duration_n]


def synthesize_mixture(
    recipe: MixRecipe,
    store: ClipStore,
    rms_target: float = DEFAULT_RMS_TARGET,
    allow_redraw: bool = True,
) -> tuple[AudioBuffer, list[AudioBuffer], float, MixRecipe]:
    """Render a recipe to audio.

    Returns ``(mixture, stems, peak_scale, final_recipe)``.  Stems are the
    post-gain (and post-peak-scale) component signals, so the mixture is
    their exact ordered sum.  A silent crop is re-drawn up to 5 times using
    a stream derived from the recipe seed; the final offsets are recorded
    in ``final_recipe``, which is what belongs in the manifest.
    """
    rate = store.sample_rate
    duration_n = int(round(recipe.duration_s * rate))
    final_components = []
    stems: list[np.ndarray] = []

    for k, comp in enumerate(recipe.components):
        clip = store.clip(comp.clip_id)
        samples = store.samples(comp.clip_id)
        if len(samples) < duration_n:
            raise MixerError(
                f"{recipe.mixture_id}: clip {comp.clip_id!r} shorter than "
                f"{recipe.duration_s} s"
            )
        offset_s = comp.crop_offset_s
        crop = _crop(samples, offset_s, duration_n, rate)
        if rms(crop) == 0.0:
            if not allow_redraw:
                raise SilentCropError(
                    f"{recipe.mixture_id}: stored crop of {comp.clip_id!r} is silent"
                )
            redraw = np.random.Generator(np.random.PCG64(np.random.SeedSequence([recipe.seed, k])))
            for _ in range(SILENT_CROP_REDRAWS):
                offset_n = int(redraw.integers(0, len(samples) - duration_n + 1))
                offset_s = offset_n / rate
                crop = _crop(samples, offset_s, duration_n, rate)
                if rms(crop) > 0.0:
                    break
            else:
                raise SilentCropError(
                    f"{recipe.mixture_id}: clip {comp.clip_id!r} still silent after "
                    f"{SILENT_CROP_REDRAWS} crop re-draws"
                )
        gain = 1.0 if k == 0 else 10.0 ** (comp.snr_db / 20.0)
        normalized = crop * (rms_target / rms(crop))
        stems.append(normalized * gain)
        final_components.append(replace(comp, crop_offset_s=offset_s))

    mixture = stems[0].copy()
    for stem in stems[1:]:
        mixture += stem

    peak = float(np.max(np.abs(mixture)))
    peak_scale = 1.0
    if peak > PEAK_CEILING:
        peak_scale = PEAK_CEILING / peak
        mixture = mixture * peak_scale
        stems = [stem * peak_scale for stem in stems]

    final_recipe = replace(recipe, components=tuple(final_components))
    mix_buffer = AudioBuffer(mixture, rate, source_id=recipe.mixture_id)
    stem_buffers = [
        AudioBuffer(stem, rate, source_id=f"{recipe.mixture_id}/s{k + 1}")
        for k, stem in enumerate(stems)
    ]
    return mix_buffer, stem_buffers, peak_scale, final_recipe


def synthesize_from_entry(
    entry: ManifestEntry, store: ClipStore, rms_target: float = DEFAULT_RMS_TARGET
) -> tuple[AudioBuffer, list[AudioBuffer]]:
    """Re-synthesize a mixture from its manifest entry (no re-draws)."""
    recipe = MixRecipe(
        mixture_id=entry.mixture_id,
        split=entry.split,
        duration_s=entry.duration_s,
        seed=entry.seed,
        components=entry.components,
    )
    mixture, stems, peak_scale, _ = synthesize_mixture(
        recipe, store, rms_target=rms_target, allow_redraw=False
    )
    if not np.isclose(peak_scale, entry.peak_scale, rtol=0, atol=1e-12):
        raise MixerError(
            f"{entry.mixture_id}: replayed peak_scale {peak_scale} != stored {entry.peak_scale}"
        )
    return mixture, stems


# ---------------------------------------------------------------------------
# Dataset emission
# ---------------------------------------------------------------------------


def _atomic_write_wav(path: str, buffer: AudioBuffer) -> None:
    directory = os.path.dirname(path)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    os.close(fd)
    try:
        write_wav_float32(tmp, buffer)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def emit_dataset(
    recipes: list[MixRecipe],
    store: ClipStore,
    output_root: str,
    rms_target: float = DEFAULT_RMS_TARGET,
    workers: int = 1,
    resume: bool = False,
    progress_hook: Callable[[int, ManifestEntry], None] | None = None,
    manifest_name: str = "manifest.jsonl",
) -> tuple[str, list[ManifestEntry]]:
    """Render recipes to disk and write the manifest.

    Every mixture directory is completed atomically: stems and mix are
    written via temp-then-rename, then an ``entry.json`` marker recording
    the final recipe and peak scale.  With ``resume=True`` directories that
    already carry a marker are trusted and skipped, so an interrupted run
    re-emits only what is missing and converges to identical bytes.
    Silent-beyond-redraw clips are logged and skipped, never emitted.
    """

    def render(index_recipe: tuple[int, MixRecipe]) -> tuple[int, ManifestEntry | None]:
        index, recipe = index_recipe
        mix_dir = os.path.join(output_root, recipe.split, recipe.mixture_id)
        marker = os.path.join(mix_dir, "entry.json")
        if resume and os.path.exists(marker):
            with open(marker, encoding="utf-8") as fh:
                return index, ManifestEntry.from_json(fh.read())
        try:
            mixture, stems, peak_scale, final = synthesize_mixture(
                recipe, store, rms_target=rms_target
            )
        except SilentCropError as exc:
            logger.warning("skipping %s: %s", recipe.mixture_id, exc)
            return index, None
        os.makedirs(mix_dir, exist_ok=True)
        rel_dir = os.path.join(recipe.split, recipe.mixture_id)
        stem_paths = []
        for k, stem in enumerate(stems):
            stem_rel = os.path.join(rel_dir, f"s{k + 1}.wav")
            _atomic_write_wav(os.path.join(output_root, stem_rel), stem)
            stem_paths.append(stem_rel)
        mix_rel = os.path.join(rel_dir, "mix.wav")
        _atomic_write_wav(os.path.join(output_root, mix_rel), mixture)
        entry = ManifestEntry(
            mixture_id=final.mixture_id,
            split=final.split,
            duration_s=final.duration_s,
            seed=final.seed,
            components=final.components,
            peak_scale=peak_scale,
            mix_path=mix_rel,
            stem_paths=tuple(stem_paths),
        )
        atomic_write_text(marker, entry.to_json())
        return index, entry

    os.makedirs(output_root, exist_ok=True)
    indexed = list(enumerate(recipes))
    results: dict[int, ManifestEntry | None] = {}
    if workers <= 1:
        for item in indexed:
            index, entry = render(item)
            results[index] = entry
            if progress_hook is not None and entry is not None:
                progress_hook(index, entry)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for index, entry in pool.map(render, indexed):
                results[index] = entry
                if progress_hook is not None and entry is not None:
                    progress_hook(index, entry)

    entries = [results[i] for i in sorted(results) if results[i] is not None]
    manifest_path = os.path.join(output_root, manifest_name)
    atomic_write_text(manifest_path, "".join(e.to_json() + "\n" for e in entries))
    return manifest_path, entries


def read_manifest(path: str) -> list[ManifestEntry]:
    entries = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                entries.append(ManifestEntry.from_json(line))
    return entries


def load_pool(path: str) -> dict[str, list[PoolClip]]:
    """Read a pool listing (JSONL of {clip_id, label, path, duration_s})."""
    pool: dict[str, list[PoolClip]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                clip = PoolClip(
                    clip_id=record["clip_id"],
                    label=record["label"],
                    path=record["path"],
                    duration_s=record["duration_s"],
                )
            except (KeyError, ValueError) as exc:
                raise MixerError(f"{path}:{lineno}: malformed pool record: {exc}") from exc
            pool.setdefault(clip.label, []).append(clip)
    return pool
