"""Declarative pipeline configuration.

One YAML file drives every stage.  All tunable constants default to the
pipeline's reference settings (10 s / 5 s windows, 5e-4 RMS gate, 0.7
coarse confidence, 10 voting passes at temperature 1.0, 44.1 kHz target,
RMS 0.1, SNR in [-5, 5] dB, count weights over 2..5 sources, 4 s
train/val and 10 s test mixtures), so an empty settings block runs the
canonical recipe.  Validation is exhaustive: every problem is collected
and reported in one pass before any work starts.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Any

import yaml

ANNOTATOR_URL_ENV = "PUREMIX_ANNOTATOR_URL"
TAGGER_URL_ENV = "PUREMIX_TAGGER_URL"
EXTENSION_URL_ENV = "PUREMIX_EXTENSION_URL"

SPLITS = ("train", "val", "test")


class ConfigError(Exception):
    """Raised with the full list of configuration problems."""

    def __init__(self, problems: list[str]) -> None:
        self.problems = problems
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {p}" for p in problems))


@dataclass
class PipelineConfig:
    # paths
    corpus_root: str = ""
    output_root: str = ""
    taxonomy: str = ""
    refinement_plan: str | None = None
    matrix: str | None = None
    prompt_templates: str = ""
    metadata: str | None = None

    # segmentation
    window_s: float = 10.0
    hop_s: float = 5.0
    rms_gate: float = 5e-4

    # alignment
    coarse_confidence: float = 0.7
    passes: int = 10
    temperature: float = 1.0
    annotator: dict[str, Any] = field(default_factory=lambda: {"mode": "mock"})
    tagger: dict[str, Any] = field(default_factory=lambda: {"mode": "mock"})

    # standardization
    target_rate: int = 44100
    extension: dict[str, Any] = field(default_factory=lambda: {"mode": "none"})

    # mixing
    rms_target: float = 0.1
    snr_range: tuple[float, float] = (-5.0, 5.0)
    count_weights: dict[int, float] = field(
        default_factory=lambda: {2: 0.20, 3: 0.20, 4: 0.25, 5: 0.35}
    )
    split_sizes: dict[str, int] = field(
        default_factory=lambda: {"train": 20, "val": 5, "test": 5}
    )
    split_durations: dict[str, float] = field(
        default_factory=lambda: {"train": 4.0, "val": 4.0, "test": 10.0}
    )
    build_matrix_if_missing: bool = False
    matrix_judge_passes: int = 3

    # ontology
    expected_leaf_count: int | None = None

    # evaluation inputs
    eval_pairs: str | None = None
    eval_trials: str | None = None
    bootstrap_resamples: int = 10_000

    # orchestration
    seed: int = 0
    workers: int | None = None

    def effective_workers(self) -> int:
        if self.workers is not None:
            return max(1, self.workers)
        return max(1, os.cpu_count() or 1)

    def annotator_url(self) -> str | None:
        return self.annotator.get("url") or os.environ.get(ANNOTATOR_URL_ENV)

    def tagger_url(self) -> str | None:
        return self.tagger.get("url") or os.environ.get(TAGGER_URL_ENV)

    def extension_url(self) -> str | None:
        return self.extension.get("url") or os.environ.get(EXTENSION_URL_ENV)


_TUPLE_FIELDS = {"snr_range"}


def load_config(path: str) -> PipelineConfig:
    """Load and validate a YAML config file."""
    try:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError([f"cannot read config {path!r}: {exc}"]) from exc
    if not isinstance(raw, dict):
        raise ConfigError([f"config root must be a mapping, got {type(raw).__name__}"])

    config = PipelineConfig()
    problems: list[str] = []
    known = set(config.__dataclass_fields__)
    for key, value in raw.items():
        if key not in known:
            problems.append(f"unknown setting {key!r}")
            continue
        if key in _TUPLE_FIELDS and isinstance(value, list):
            value = tuple(value)
        if key == "count_weights" and isinstance(value, dict):
            value = {int(k): float(v) for k, v in value.items()}
        setattr(config, key, value)

    base = os.path.dirname(os.path.abspath(path))
    for attr in ("corpus_root", "output_root", "taxonomy", "prompt_templates"):
        value = getattr(config, attr)
        if value and not os.path.isabs(value):
            setattr(config, attr, os.path.join(base, value))
    for attr in ("refinement_plan", "matrix", "metadata", "eval_pairs", "eval_trials"):
        value = getattr(config, attr)
        if value and not os.path.isabs(value):
            setattr(config, attr, os.path.join(base, value))

    problems.extend(validate_config(config))
    if problems:
        raise ConfigError(problems)
    return config


def validate_config(config: PipelineConfig) -> list[str]:
    """Return a list of every validation problem (empty when valid)."""
    problems: list[str] = []

    def check(condition: bool, message: str) -> None:
        if not condition:
            problems.append(message)

    check(bool(config.output_root), "output_root is required")
    check(config.window_s > 0, f"window_s must be positive, got {config.window_s}")
    check(
        0 < config.hop_s <= config.window_s,
        f"hop_s must satisfy 0 < hop_s <= window_s, got {config.hop_s}",
    )
    check(config.rms_gate >= 0, f"rms_gate must be non-negative, got {config.rms_gate}")
    check(
        0 <= config.coarse_confidence <= 1,
        f"coarse_confidence must be in [0, 1], got {config.coarse_confidence}",
    )
    check(config.passes >= 1, f"passes must be >= 1, got {config.passes}")
    check(config.temperature >= 0, f"temperature must be >= 0, got {config.temperature}")
    check(config.target_rate > 0, f"target_rate must be positive, got {config.target_rate}")
    check(config.rms_target > 0, f"rms_target must be positive, got {config.rms_target}")

    snr = config.snr_range
    if not (isinstance(snr, (tuple, list)) and len(snr) == 2):
        problems.append(f"snr_range must be [low, high], got {snr!r}")
    else:
        check(snr[0] <= snr[1], f"snr_range low {snr[0]} exceeds high {snr[1]}")

    weights = config.count_weights
    if not isinstance(weights, dict) or not weights:
        problems.append("count_weights must be a non-empty mapping of source count -> weight")
    else:
        bad_counts = [c for c in weights if not (isinstance(c, int) and 2 <= c <= 5)]
        for c in bad_counts:
            problems.append(f"count_weights key {c!r} outside 2..5")
        if not bad_counts:
            total = sum(weights.values())
            check(abs(total - 1.0) < 1e-6, f"count_weights sum to {total}, expected 1")
            for c, w in weights.items():
                check(w >= 0, f"count_weights[{c}] is negative")

    for split, size in config.split_sizes.items():
        check(split in SPLITS, f"unknown split {split!r} in split_sizes")
        check(isinstance(size, int) and size >= 0, f"split_sizes[{split!r}] must be >= 0")
    for split, duration in config.split_durations.items():
        check(split in SPLITS, f"unknown split {split!r} in split_durations")
        check(duration > 0, f"split_durations[{split!r}] must be positive")
    for split in config.split_sizes:
        if split in SPLITS:
            check(
                split in config.split_durations,
                f"split {split!r} has a size but no duration",
            )

    for name, table in (("annotator", config.annotator), ("tagger", config.tagger)):
        if not isinstance(table, dict):
            problems.append(f"{name} must be a mapping")
            continue
        mode = table.get("mode", "mock")
        check(mode in ("mock", "http"), f"{name}.mode must be mock or http, got {mode!r}")
    if not isinstance(config.extension, dict):
        problems.append("extension must be a mapping")
    else:
        mode = config.extension.get("mode", "none")
        check(mode in ("none", "http", "mock"), f"extension.mode must be none, http, or mock")

    check(
        config.expected_leaf_count is None or config.expected_leaf_count >= 1,
        "expected_leaf_count must be >= 1 when set",
    )
    check(config.bootstrap_resamples >= 1, "bootstrap_resamples must be >= 1")
    check(config.workers is None or config.workers >= 1, "workers must be >= 1 when set")
    if not isinstance(config.seed, int):
        problems.append(f"seed must be an integer, got {config.seed!r}")
    return problems
