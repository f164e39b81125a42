"""Signal-fidelity metrics for separation estimates.

Both metrics compare an estimate against a reference of equal length and
report decibels, with explicit ``+/-inf`` sentinels for exact matches and
vanishing projections; callers decide how to present those.

* ``sdr``    -- plain energy ratio 10*log10(||s||^2 / ||s - s_hat||^2).
* ``si_sdr`` -- scale-invariant variant: the reference is first scaled by
  the projection coefficient alpha = <s_hat, s>/||s||^2, then
  10*log10(||alpha*s||^2 / ||alpha*s - s_hat||^2).
"""

from __future__ import annotations

import json
import math

import numpy as np

from ..audio import downmix_mono, read_wav


def _as_pair(estimate, reference) -> tuple[np.ndarray, np.ndarray]:
    est = np.asarray(estimate, dtype=np.float64).ravel()
    ref = np.asarray(reference, dtype=np.float64).ravel()
    if est.size != ref.size:
        raise ValueError(f"length mismatch: estimate {est.size} vs reference {ref.size}")
    if est.size == 0:
        raise ValueError("empty signals")
    return est, ref


def si_sdr(estimate, reference) -> float:
    """Scale-invariant signal-to-distortion ratio in dB."""
    est, ref = _as_pair(estimate, reference)
    ref_energy = float(np.dot(ref, ref))
    if ref_energy == 0.0:
        raise ValueError("reference is all-zero")
    alpha = float(np.dot(est, ref)) / ref_energy
    target_energy = alpha * alpha * ref_energy
    residual = alpha * ref - est
    residual_energy = float(np.dot(residual, residual))
    # order matters: an estimate with no reference component (alpha = 0,
    # the all-zero estimate included) is pure distortion, never a match
    if target_energy == 0.0:
        return -math.inf
    if residual_energy == 0.0:
        return math.inf
    return 10.0 * math.log10(target_energy / residual_energy)


def sdr(estimate, reference) -> float:
    """Signal-to-distortion ratio in dB (plain energy-ratio definition)."""
    est, ref = _as_pair(estimate, reference)
    ref_energy = float(np.dot(ref, ref))
    if ref_energy == 0.0:
        raise ValueError("reference is all-zero")
    error = ref - est
    error_energy = float(np.dot(error, error))
    if error_energy == 0.0:
        return math.inf
    return 10.0 * math.log10(ref_energy / error_energy)


def evaluate_pair_files(pair_id: str, estimate_path: str, reference_path: str) -> dict:
    """Compute both metrics for one (estimate, reference) WAV pair."""
    est = downmix_mono(read_wav(estimate_path)).samples
    ref = downmix_mono(read_wav(reference_path)).samples
    return {
        "pair_id": pair_id,
        "sdr_db": sdr(est, ref),
        "si_sdr_db": si_sdr(est, ref),
    }


def _jsonable(value):
    if isinstance(value, float) and math.isinf(value):
        return "+inf" if value > 0 else "-inf"
    return value


def write_metric_lines(records: list[dict], path: str) -> None:
    """Write metric records as JSONL; infinite dB values become "+inf"/"-inf"."""
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps({k: _jsonable(v) for k, v in record.items()}) + "\n")
