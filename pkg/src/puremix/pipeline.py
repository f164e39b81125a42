"""Stage orchestration: prerequisites, checkpoints, and the worker pool.

Each stage reads earlier artifacts from the output root, validates its
prerequisites up front, and writes its own artifacts atomically
(temp-then-rename).  A content-hash stamp records the exact inputs and
parameters of the last successful run, so re-running a stage with
unchanged inputs is a no-op, and interrupted runs simply redo the missing
work deterministically.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np
import yaml

from . import aligner, mixer, ontology, segmenter, standardizer
from .audio import AudioBuffer
from .config import PipelineConfig
from .evalkit import (
    build_stat_report,
    consensus_and_accuracy,
    dataset_statistics,
    evaluate_pair_files,
    load_trial_table,
    write_dataset_report,
    write_metric_lines,
)
from .mixer import atomic_write_text

logger = logging.getLogger(__name__)

STAGES = ("ontology", "segment", "align", "standardize", "mix", "stats", "eval")


class PrerequisiteError(Exception):
    """A required input artifact or setting is missing."""


class ValidationFailure(Exception):
    """Input data failed a configured expectation."""


@dataclass
class StageResult:
    name: str
    outputs: list[str]
    skipped: bool = False


# ---------------------------------------------------------------------------
# Content-hash stamps
# ---------------------------------------------------------------------------


def _hash_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _fingerprint(files: dict[str, str], params: dict) -> str:
    payload = {
        "files": {key: _hash_file(path) for key, path in sorted(files.items())},
        "params": params,
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def _stamp_path(config: PipelineConfig, stage: str) -> str:
    return os.path.join(config.output_root, ".stamps", f"{stage}.json")


def _stamp_matches(config: PipelineConfig, stage: str, fingerprint: str, outputs: list[str]) -> bool:
    path = _stamp_path(config, stage)
    if not os.path.exists(path):
        return False
    try:
        with open(path, encoding="utf-8") as fh:
            stamp = json.load(fh)
    except (OSError, ValueError):
        return False
    return stamp.get("fingerprint") == fingerprint and all(os.path.exists(p) for p in outputs)


def _write_stamp(config: PipelineConfig, stage: str, fingerprint: str, outputs: list[str]) -> None:
    path = _stamp_path(config, stage)
    os.makedirs(os.path.dirname(path), exist_ok=True)
    atomic_write_text(path, json.dumps({"fingerprint": fingerprint, "outputs": outputs}, indent=2))


def _require(path: str | None, what: str) -> str:
    if not path:
        raise PrerequisiteError(f"{what} is not configured")
    if not os.path.exists(path):
        raise PrerequisiteError(f"{what} missing: {path}")
    return path


def _out(config: PipelineConfig, *parts: str) -> str:
    return os.path.join(config.output_root, *parts)


def _parallel_map(
    fn: Callable,
    items: list,
    workers: int,
    progress_hook: Callable[[int, object], None] | None = None,
) -> list:
    """Map preserving input order; the hook fires in input order too."""
    results = []
    if workers <= 1:
        for index, item in enumerate(items):
            result = fn(item)
            results.append(result)
            if progress_hook is not None:
                progress_hook(index, result)
        return results
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for index, result in enumerate(pool.map(fn, items)):
            results.append(result)
            if progress_hook is not None:
                progress_hook(index, result)
    return results


# ---------------------------------------------------------------------------
# Stage: ontology
# ---------------------------------------------------------------------------


def stage_ontology(config: PipelineConfig, resume: bool = False, progress_hook=None) -> StageResult:
    taxonomy_path = _require(config.taxonomy, "taxonomy document")
    files = {"taxonomy": taxonomy_path}
    if config.refinement_plan:
        files["plan"] = _require(config.refinement_plan, "refinement plan")
    params = {"expected_leaf_count": config.expected_leaf_count}
    outputs = [
        _out(config, "ontology", "refined.tsv"),
        _out(config, "ontology", "aliases.json"),
        _out(config, "ontology", "leaves.txt"),
    ]
    fingerprint = _fingerprint(files, params)
    if _stamp_matches(config, "ontology", fingerprint, outputs):
        return StageResult("ontology", outputs, skipped=True)

    ont = ontology.load_ontology(taxonomy_path)
    if config.refinement_plan:
        plan = ontology.parse_refinement_plan(config.refinement_plan)
        ont = ontology.apply_refinements(ont, plan)
    leaves = ontology.leaf_labels(ont)
    if config.expected_leaf_count is not None and len(leaves) != config.expected_leaf_count:
        raise ValidationFailure(
            f"refined ontology has {len(leaves)} leaves, expected {config.expected_leaf_count}"
        )

    os.makedirs(_out(config, "ontology"), exist_ok=True)
    lines = "".join(
        f"{node.id}\t{node.name}\t{node.parent if node.parent else '-'}\n"
        for node in (ont.nodes[nid] for nid in sorted(ont.nodes))
    )
    atomic_write_text(outputs[0], lines)
    atomic_write_text(outputs[1], json.dumps(ont.alias_map, indent=2, sort_keys=True) + "\n")
    atomic_write_text(outputs[2], "".join(leaf + "\n" for leaf in leaves))
    _write_stamp(config, "ontology", fingerprint, outputs)
    return StageResult("ontology", outputs)


def load_refined_ontology(config: PipelineConfig) -> ontology.Ontology:
    refined = _require(_out(config, "ontology", "refined.tsv"), "refined ontology (run `ontology` first)")
    aliases = _out(config, "ontology", "aliases.json")
    ont = ontology.load_ontology(refined)
    if os.path.exists(aliases):
        with open(aliases, encoding="utf-8") as fh:
            ont.alias_map.update(json.load(fh))
    return ont


# ---------------------------------------------------------------------------
# Stage: segment
# ---------------------------------------------------------------------------


def _corpus_files(config: PipelineConfig) -> list[str]:
    root = _require(config.corpus_root, "corpus root")
    found = []
    for dirpath, _, filenames in os.walk(root):
        for name in filenames:
            if name.lower().endswith(".wav"):
                found.append(os.path.relpath(os.path.join(dirpath, name), root))
    return sorted(found)


def stage_segment(config: PipelineConfig, resume: bool = False, progress_hook=None) -> StageResult:
    relpaths = _corpus_files(config)
    if not relpaths:
        raise PrerequisiteError(f"no .wav files under corpus root {config.corpus_root}")
    files = {f"corpus/{rel}": os.path.join(config.corpus_root, rel) for rel in relpaths}
    params = {"window_s": config.window_s, "hop_s": config.hop_s, "rms_gate": config.rms_gate}
    outputs = [_out(config, "segments", "index.jsonl")]
    fingerprint = _fingerprint(files, params)
    if _stamp_matches(config, "segment", fingerprint, outputs):
        return StageResult("segment", outputs, skipped=True)

    def work(rel: str) -> list[segmenter.Segment]:
        return segmenter.segment_source(
            os.path.join(config.corpus_root, rel),
            source_id=rel,
            window_s=config.window_s,
            hop_s=config.hop_s,
            threshold=config.rms_gate,
        )

    kept_lists = _parallel_map(work, relpaths, config.effective_workers(), progress_hook)
    kept = [segment for chunk in kept_lists for segment in chunk]
    os.makedirs(_out(config, "segments"), exist_ok=True)
    atomic_write_text(outputs[0], segmenter.render_segment_index(kept))
    _write_stamp(config, "segment", fingerprint, outputs)
    return StageResult("segment", outputs)


# ---------------------------------------------------------------------------
# Stage: align
# ---------------------------------------------------------------------------


def _load_yaml(path: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ValidationFailure(f"{path}: expected a mapping")
    return data


def _segment_audio_resolver(config: PipelineConfig, segments: dict[str, segmenter.Segment]):
    def resolve(audio_ref: str) -> AudioBuffer | str:
        segment = segments.get(audio_ref)
        if segment is None:
            return audio_ref  # non-segment refs (e.g. pair judging) pass through
        path = os.path.join(config.corpus_root, segment.source_id)
        return segmenter.load_segment_audio(segment, path)

    return resolve


def build_annotator(config: PipelineConfig, segments: dict[str, segmenter.Segment] | None = None):
    mode = config.annotator.get("mode", "mock")
    if mode == "http":
        url = config.annotator_url()
        if not url:
            raise PrerequisiteError(
                "annotator.mode is http but no URL configured "
                f"(set annotator.url or ${'PUREMIX_ANNOTATOR_URL'})"
            )
        resolver = _segment_audio_resolver(config, segments or {})
        return aligner.HttpAnnotator(url, audio_resolver=resolver)
    table: dict = {}
    overrides: dict[tuple[str, str], object] = {}
    answers_path = config.annotator.get("answers")
    if answers_path:
        raw = _load_yaml(answers_path)
        table = {k: v for k, v in raw.items() if k != "overrides"}
        for ref, per_template in (raw.get("overrides") or {}).items():
            for template_id, answer in per_template.items():
                overrides[(ref, template_id)] = answer
    return aligner.MockAnnotator(table, key=str(config.annotator.get("key", "")), overrides=overrides)


def build_tagger(config: PipelineConfig):
    mode = config.tagger.get("mode", "mock")
    if mode == "http":
        url = config.tagger_url()
        if not url:
            raise PrerequisiteError(
                "tagger.mode is http but no URL configured "
                f"(set tagger.url or ${'PUREMIX_TAGGER_URL'})"
            )
        return aligner.HttpTagger(url)
    table: dict[str, tuple[str, float]] = {}
    table_path = config.tagger.get("table")
    if table_path:
        raw = _load_yaml(table_path)
        table = {key: (str(value[0]), float(value[1])) for key, value in raw.items()}
    default = config.tagger.get("default")
    default_pair = (str(default[0]), float(default[1])) if default else None
    return aligner.MockTagger(table, default=default_pair)


def _load_metadata(path: str | None) -> dict[str, list[str]]:
    if not path:
        return {}
    metadata: dict[str, list[str]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                metadata[record["source_id"]] = list(record["labels"])
            except (ValueError, KeyError, TypeError) as exc:
                raise ValidationFailure(f"{path}:{lineno}: malformed metadata: {exc}") from exc
    return metadata


def stage_align(config: PipelineConfig, resume: bool = False, progress_hook=None) -> StageResult:
    index_path = _require(_out(config, "segments", "index.jsonl"), "segment index (run `segment` first)")
    _require(_out(config, "ontology", "refined.tsv"), "refined ontology (run `ontology` first)")
    templates_dir = _require(config.prompt_templates, "prompt templates directory")

    files = {
        "index": index_path,
        "ontology": _out(config, "ontology", "refined.tsv"),
    }
    aliases_path = _out(config, "ontology", "aliases.json")
    if os.path.exists(aliases_path):
        files["aliases"] = aliases_path
    if config.metadata:
        files["metadata"] = _require(config.metadata, "corpus metadata")
    for template_id in ("purify", "relabel"):
        template_path = os.path.join(templates_dir, f"{template_id}.txt")
        files[f"template/{template_id}"] = _require(template_path, f"{template_id} prompt template")
    for key in ("answers",):
        path = config.annotator.get(key)
        if path:
            files[f"annotator/{key}"] = _require(path, "annotator answers table")
    if config.tagger.get("table"):
        files["tagger/table"] = _require(config.tagger["table"], "tagger table")
    params = {
        "passes": config.passes,
        "temperature": config.temperature,
        "coarse_confidence": config.coarse_confidence,
        "annotator": {k: v for k, v in config.annotator.items() if k != "answers"},
        "tagger": {k: v for k, v in config.tagger.items() if k != "table"},
    }
    outputs = [
        _out(config, "align", "results.jsonl"),
        _out(config, "align", "errors.jsonl"),
    ]
    fingerprint = _fingerprint(files, params)
    if _stamp_matches(config, "align", fingerprint, outputs):
        return StageResult("align", outputs, skipped=True)

    segments = segmenter.read_segment_index(index_path)
    segments.sort(key=lambda s: (s.source_id, s.start_s))
    by_id = {s.segment_id: s for s in segments}
    ont = load_refined_ontology(config)
    annotator_client = build_annotator(config, by_id)
    tagger_client = build_tagger(config)
    templates = aligner.PromptLibrary(templates_dir)
    metadata = _load_metadata(config.metadata)

    def work(segment: segmenter.Segment):
        labels = metadata.get(segment.source_id, [])
        try:
            return aligner.align_segment(
                segment,
                labels,
                ont,
                annotator_client,
                tagger_client,
                templates,
                passes=config.passes,
                temperature=config.temperature,
                confidence_threshold=config.coarse_confidence,
            )
        except aligner.AnnotatorTransportError as exc:
            return (segment, str(exc))

    raw_results = _parallel_map(work, segments, config.effective_workers(), progress_hook)
    results = [r for r in raw_results if isinstance(r, aligner.AlignmentResult)]
    errors = [r for r in raw_results if not isinstance(r, aligner.AlignmentResult)]

    os.makedirs(_out(config, "align"), exist_ok=True)
    atomic_write_text(outputs[0], "".join(r.to_json() + "\n" for r in results))
    atomic_write_text(
        outputs[1],
        "".join(
            json.dumps(
                {
                    "source_id": segment.source_id,
                    "start_s": segment.start_s,
                    "error": message,
                }
            )
            + "\n"
            for segment, message in errors
        ),
    )
    if errors:
        logger.warning("%d segment(s) hit transport errors; rerun to retry them", len(errors))
    else:
        _write_stamp(config, "align", fingerprint, outputs)
    return StageResult("align", outputs)


# ---------------------------------------------------------------------------
# Stage: standardize
# ---------------------------------------------------------------------------


def _clip_id(source_id: str, start_s: float) -> str:
    stem = re.sub(r"[^A-Za-z0-9_-]+", "_", source_id).strip("_")
    return f"{stem}_{start_s:g}s"


def build_extension_client(config: PipelineConfig):
    mode = config.extension.get("mode", "none")
    if mode == "none":
        return None
    if mode == "mock":
        return standardizer.MockExtensionClient()
    url = config.extension_url()
    if not url:
        raise PrerequisiteError(
            "extension.mode is http but no URL configured "
            f"(set extension.url or ${'PUREMIX_EXTENSION_URL'})"
        )
    return standardizer.ExtensionClient(url)


def stage_standardize(config: PipelineConfig, resume: bool = False, progress_hook=None) -> StageResult:
    results_path = _require(_out(config, "align", "results.jsonl"), "alignment results (run `align` first)")
    _require(config.corpus_root, "corpus root")

    accepted = []
    with open(results_path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                result = aligner.AlignmentResult.from_json(line)
                if result.status == aligner.STATUS_ACCEPTED:
                    accepted.append(result)
    accepted.sort(key=lambda r: (r.source_id, r.start_s))

    files = {"results": results_path}
    for source_id in sorted({r.source_id for r in accepted}):
        files[f"corpus/{source_id}"] = _require(
            os.path.join(config.corpus_root, source_id), f"corpus file {source_id}"
        )
    params = {"target_rate": config.target_rate, "extension": config.extension}
    clips_dir = _out(config, "clips")
    pool_path = os.path.join(clips_dir, "pool.jsonl")
    routes_path = os.path.join(clips_dir, "routes.jsonl")
    outputs = [pool_path, routes_path] + [
        os.path.join(clips_dir, f"{_clip_id(r.source_id, r.start_s)}.wav") for r in accepted
    ]
    fingerprint = _fingerprint(files, params)
    if _stamp_matches(config, "standardize", fingerprint, outputs):
        return StageResult("standardize", outputs, skipped=True)

    client = build_extension_client(config)
    os.makedirs(clips_dir, exist_ok=True)

    def work(result: aligner.AlignmentResult):
        segment = segmenter.Segment(
            source_id=result.source_id,
            start_s=result.start_s,
            duration_s=result.duration_s,
            rms=0.0,
            sample_rate=0,
        )
        buffer = segmenter.load_segment_audio(
            segment, os.path.join(config.corpus_root, result.source_id)
        )
        clip = standardizer.standardize(buffer, client=client, target=config.target_rate)
        clip_id = _clip_id(result.source_id, result.start_s)
        wav_path = os.path.join(clips_dir, f"{clip_id}.wav")
        mixer._atomic_write_wav(wav_path, clip.buffer)
        pool_record = {
            "clip_id": clip_id,
            "label": result.leaf_label,
            "path": f"{clip_id}.wav",
            "duration_s": clip.buffer.num_frames / config.target_rate,
        }
        route_record = {
            "clip_id": clip_id,
            "input_rate": clip.route.input_rate,
            "decision": clip.route.decision,
            "extended": clip.extended,
            "warning": clip.warning,
        }
        return pool_record, route_record

    records = _parallel_map(work, accepted, config.effective_workers(), progress_hook)
    atomic_write_text(pool_path, "".join(json.dumps(p) + "\n" for p, _ in records))
    atomic_write_text(routes_path, "".join(json.dumps(r) + "\n" for _, r in records))
    _write_stamp(config, "standardize", fingerprint, outputs)
    return StageResult("standardize", outputs)


# ---------------------------------------------------------------------------
# Stage: mix
# ---------------------------------------------------------------------------


def _matrix_path(config: PipelineConfig) -> str:
    return config.matrix or _out(config, "matrix.tsv")


def _ensure_matrix(config: PipelineConfig) -> str:
    path = _matrix_path(config)
    if os.path.exists(path):
        return path
    if not config.build_matrix_if_missing:
        raise PrerequisiteError(
            f"co-occurrence matrix missing: {path} "
            "(supply one or set build_matrix_if_missing: true)"
        )
    leaves_path = _require(
        _out(config, "ontology", "leaves.txt"),
        "ontology leaves (run `ontology` before building a matrix)",
    )
    with open(leaves_path, encoding="utf-8") as fh:
        leaves = [line.strip() for line in fh if line.strip()]
    templates = aligner.PromptLibrary(_require(config.prompt_templates, "prompt templates directory"))
    _require(os.path.join(config.prompt_templates, "cooccur.txt"), "cooccur prompt template")
    ont = load_refined_ontology(config)
    judge = aligner.PairJudge(build_annotator(config), templates, name_of=ont.name_of)
    matrix = mixer.build_matrix(leaves, judge, passes=config.matrix_judge_passes)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    tmp = path + ".building"
    mixer.write_matrix(matrix, tmp)
    os.replace(tmp, path)
    logger.info("built co-occurrence matrix over %d labels at %s", len(leaves), path)
    return path


def stage_mix(config: PipelineConfig, resume: bool = False, progress_hook=None) -> StageResult:
    pool_path = _require(_out(config, "clips", "pool.jsonl"), "pool listing (run `standardize` first)")
    matrix_path = _ensure_matrix(config)

    pool = mixer.load_pool(pool_path)
    files = {"pool": pool_path, "matrix": matrix_path}
    for label in sorted(pool):
        for clip in pool[label]:
            files[f"clip/{clip.clip_id}"] = os.path.join(os.path.dirname(pool_path), clip.path)
    params = {
        "seed": config.seed,
        "split_sizes": config.split_sizes,
        "split_durations": config.split_durations,
        "count_weights": {str(k): v for k, v in config.count_weights.items()},
        "snr_range": list(config.snr_range),
        "rms_target": config.rms_target,
    }
    mix_root = _out(config, "mixtures")
    manifest_path = os.path.join(mix_root, "manifest.jsonl")
    outputs = [manifest_path]
    fingerprint = _fingerprint(files, params)
    if _stamp_matches(config, "mix", fingerprint, outputs):
        return StageResult("mix", outputs, skipped=True)

    leaves_path = _out(config, "ontology", "leaves.txt")
    leaves = None
    if os.path.exists(leaves_path):
        with open(leaves_path, encoding="utf-8") as fh:
            leaves = [line.strip() for line in fh if line.strip()]
    matrix = mixer.load_matrix(matrix_path, leaves=leaves)

    recipes: list[mixer.MixRecipe] = []
    for split_index, split in enumerate(("train", "val", "test")):
        size = config.split_sizes.get(split, 0)
        if size <= 0:
            continue
        duration = config.split_durations[split]
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([config.seed, split_index])))
        for i in range(size):
            recipes.append(
                mixer.sample_recipe(
                    pool,
                    matrix,
                    config.count_weights,
                    tuple(config.snr_range),
                    split,
                    rng,
                    duration_s=duration,
                    mixture_id=f"{split}-{i:06d}",
                    sample_rate=config.target_rate,
                )
            )

    store = mixer.ClipStore(
        (clip for clips in pool.values() for clip in clips),
        base_dir=os.path.dirname(pool_path),
        sample_rate=config.target_rate,
    )
    mixer.emit_dataset(
        recipes,
        store,
        mix_root,
        rms_target=config.rms_target,
        workers=config.effective_workers(),
        resume=resume,
        progress_hook=progress_hook,
    )
    _write_stamp(config, "mix", fingerprint, outputs)
    return StageResult("mix", outputs)


# ---------------------------------------------------------------------------
# Stage: stats
# ---------------------------------------------------------------------------


def stage_stats(config: PipelineConfig, resume: bool = False, progress_hook=None) -> StageResult:
    manifest_path = _require(_out(config, "mixtures", "manifest.jsonl"), "manifest (run `mix` first)")
    files = {"manifest": manifest_path}
    stats_dir = _out(config, "stats")
    outputs = [
        os.path.join(stats_dir, "dataset_stats.json"),
        os.path.join(stats_dir, "label_counts.csv"),
        os.path.join(stats_dir, "source_counts.csv"),
    ]
    fingerprint = _fingerprint(files, {})
    if _stamp_matches(config, "stats", fingerprint, outputs):
        return StageResult("stats", outputs, skipped=True)

    report = dataset_statistics([manifest_path])
    partial = os.path.join(stats_dir, ".partial")
    os.makedirs(partial, exist_ok=True)
    written = write_dataset_report(report, partial)
    for tmp_file, final in zip(written, outputs):
        os.replace(tmp_file, final)
    os.rmdir(partial)
    if report.malformed:
        for problem in report.malformed:
            logger.warning("malformed manifest line: %s", problem)
    _write_stamp(config, "stats", fingerprint, outputs)
    return StageResult("stats", outputs)


# ---------------------------------------------------------------------------
# Stage: eval
# ---------------------------------------------------------------------------


def _load_pairs(path: str) -> list[dict]:
    base = os.path.dirname(os.path.abspath(path))
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                pair = {
                    "pair_id": record["pair_id"],
                    "estimate": record["estimate"],
                    "reference": record["reference"],
                }
            except (ValueError, KeyError, TypeError) as exc:
                raise ValidationFailure(f"{path}:{lineno}: malformed pair record: {exc}") from exc
            for key in ("estimate", "reference"):
                if not os.path.isabs(pair[key]):
                    pair[key] = os.path.join(base, pair[key])
            pairs.append(pair)
    return pairs


def stage_eval(config: PipelineConfig, resume: bool = False, progress_hook=None) -> StageResult:
    if not config.eval_pairs and not config.eval_trials:
        raise PrerequisiteError("eval needs eval_pairs and/or eval_trials configured")
    files: dict[str, str] = {}
    outputs: list[str] = []
    eval_dir = _out(config, "eval")
    pairs: list[dict] = []
    if config.eval_pairs:
        files["pairs"] = _require(config.eval_pairs, "metric pair listing")
        pairs = _load_pairs(config.eval_pairs)
        for pair in pairs:
            files[f"estimate/{pair['pair_id']}"] = _require(pair["estimate"], "estimate file")
            files[f"reference/{pair['pair_id']}"] = _require(pair["reference"], "reference file")
        outputs.append(os.path.join(eval_dir, "metrics.jsonl"))
    if config.eval_trials:
        files["trials"] = _require(config.eval_trials, "trial table CSV")
        outputs.append(os.path.join(eval_dir, "stat_report.json"))
        outputs.append(os.path.join(eval_dir, "trial_summary.csv"))
    params = {"bootstrap_resamples": config.bootstrap_resamples, "seed": config.seed}
    fingerprint = _fingerprint(files, params)
    if _stamp_matches(config, "eval", fingerprint, outputs):
        return StageResult("eval", outputs, skipped=True)

    os.makedirs(eval_dir, exist_ok=True)
    if config.eval_pairs:
        def work(pair: dict) -> dict:
            return evaluate_pair_files(pair["pair_id"], pair["estimate"], pair["reference"])

        records = _parallel_map(work, pairs, config.effective_workers(), progress_hook)
        tmp = os.path.join(eval_dir, ".metrics.tmp")
        write_metric_lines(records, tmp)
        os.replace(tmp, os.path.join(eval_dir, "metrics.jsonl"))
    if config.eval_trials:
        table = load_trial_table(config.eval_trials)
        report = build_stat_report(
            table, resamples=config.bootstrap_resamples, seed=config.seed
        )
        atomic_write_text(os.path.join(eval_dir, "stat_report.json"), report.to_json() + "\n")
        summary_lines = ["clip_id,consensus_label,h\n"]
        consensus = consensus_and_accuracy(table)
        for trial, h_i in zip(table.trials, consensus.h):
            label = report.consensus_labels.get(trial.clip_id)
            summary_lines.append(f"{trial.clip_id},{label if label is not None else ''},{h_i:.6f}\n")
        atomic_write_text(os.path.join(eval_dir, "trial_summary.csv"), "".join(summary_lines))
    _write_stamp(config, "eval", fingerprint, outputs)
    return StageResult("eval", outputs)


# ---------------------------------------------------------------------------
# Dispatch
# ---------------------------------------------------------------------------

_STAGE_FUNCTIONS = {
    "ontology": stage_ontology,
    "segment": stage_segment,
    "align": stage_align,
    "standardize": stage_standardize,
    "mix": stage_mix,
    "stats": stage_stats,
    "eval": stage_eval,
}


def run_stage(
    stage: str,
    config: PipelineConfig,
    resume: bool = False,
    progress_hook: Callable[[int, object], None] | None = None,
) -> StageResult:
    """Run one pipeline stage; raises PrerequisiteError / ValidationFailure
    for input problems and lets runtime failures propagate."""
    if stage not in _STAGE_FUNCTIONS:
        raise PrerequisiteError(f"unknown stage {stage!r}; expected one of {', '.join(STAGES)}")
    if not config.output_root:
        raise PrerequisiteError("output_root is not configured")
    os.makedirs(config.output_root, exist_ok=True)
    result = _STAGE_FUNCTIONS[stage](config, resume=resume, progress_hook=progress_hook)
    if result.skipped:
        logger.info("stage %s: inputs unchanged, outputs present; nothing to do", stage)
    else:
        logger.info("stage %s: wrote %d artifact(s)", stage, len(result.outputs))
    return result
