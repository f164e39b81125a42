"""Cascaded single-event verification and leaf relabeling.

Each gated segment passes through four stages in order, and the first
failure is terminal:

1. metadata multi-label exclusion (no service involved),
2. polyphony rejection by repeated binary queries to an annotator,
3. coarse tagging with an inclusive confidence threshold,
4. leaf refinement among the coarse label's subtree candidates.

Annotator answers are aggregated by majority vote over N independent
passes; answers matching no expected token fall into an invalid bucket
that can never win, and ties reject the segment outright.
"""

from __future__ import annotations

import hashlib
import json
import re
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import requests

from .audio import AudioBuffer, encode_wav_base64
from .ontology import Ontology, candidate_leaves
from .segmenter import Segment

DEFAULT_PASSES = 10
DEFAULT_TEMPERATURE = 1.0
DEFAULT_CONFIDENCE_THRESHOLD = 0.7
TRANSPORT_RETRIES = 3

INVALID_ANSWER = "__invalid__"

STATUS_ACCEPTED = "accepted"
STATUS_MULTILABEL = "rejected_multilabel_metadata"
STATUS_POLYPHONIC = "rejected_polyphonic"
STATUS_LOW_CONFIDENCE = "rejected_low_confidence"
STATUS_NO_LEAF = "rejected_no_leaf_match"
STATUS_TIE = "rejected_vote_tie"


class AlignerError(Exception):
    """Base class for alignment failures."""


class AlignerConfigError(AlignerError):
    """Misconfiguration: bad templates, unknown labels, malformed replies."""


class AnnotatorTransportError(AlignerError):
    """The annotator was unreachable after the retry budget; retryable."""


@dataclass(frozen=True)
class VoteTally:
    counts: Mapping[str, int]
    total: int

    def __post_init__(self) -> None:
        if self.total < 1:
            raise AlignerError("vote tally needs at least one pass")
        if sum(self.counts.values()) != self.total:
            raise AlignerError(
                f"tally counts sum to {sum(self.counts.values())}, expected {self.total}"
            )


@dataclass
class AlignmentResult:
    source_id: str
    start_s: float
    duration_s: float
    status: str
    leaf_label: str | None = None
    coarse_label: str | None = None
    coarse_confidence: float | None = None
    tallies: dict[str, VoteTally] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {
                "source_id": self.source_id,
                "start_s": self.start_s,
                "duration_s": self.duration_s,
                "status": self.status,
                "leaf_label": self.leaf_label,
                "coarse_label": self.coarse_label,
                "coarse_confidence": self.coarse_confidence,
                "tallies": {
                    stage: {"counts": dict(t.counts), "total": t.total}
                    for stage, t in self.tallies.items()
                },
            }
        )

    @staticmethod
    def from_json(line: str) -> "AlignmentResult":
        record = json.loads(line)
        return AlignmentResult(
            source_id=record["source_id"],
            start_s=record["start_s"],
            duration_s=record["duration_s"],
            status=record["status"],
            leaf_label=record.get("leaf_label"),
            coarse_label=record.get("coarse_label"),
            coarse_confidence=record.get("coarse_confidence"),
            tallies={
                stage: VoteTally(t["counts"], t["total"])
                for stage, t in record.get("tallies", {}).items()
            },
        )


# ---------------------------------------------------------------------------
# Voting
# ---------------------------------------------------------------------------


def majority_vote(counts: Mapping[str, int]) -> str | None:
    """The unique answer with maximal count, or None when the max is shared."""
    if not counts:
        raise AlignerError("empty tally")
    best = max(counts.values())
    winners = [answer for answer, count in counts.items() if count == best]
    return winners[0] if len(winners) == 1 else None


def decide(tally: VoteTally) -> str | None:
    """Majority over valid answers only; the invalid bucket can never win."""
    valid = {a: c for a, c in tally.counts.items() if a != INVALID_ANSWER}
    if not valid:
        return None
    return majority_vote(valid)


def normalize_answer(raw: str, expected: Callable[[str], str | None]) -> str:
    """Trim and case-fold a raw reply, then map it onto an expected token.

    ``expected`` returns the canonical token or None; unmatched replies
    land in the invalid bucket.
    """
    token = expected(raw.strip().casefold())
    return token if token is not None else INVALID_ANSWER


def _binary_token(answer: str) -> str | None:
    return answer if answer in ("single", "multi") else None


def _index_token(num_candidates: int) -> Callable[[str], str | None]:
    def check(answer: str) -> str | None:
        try:
            value = int(answer)
        except ValueError:
            return None
        if value == -1 or 0 <= value < num_candidates:
            return str(value)
        return None

    return check


def _yes_no_token(answer: str) -> str | None:
    return answer if answer in ("yes", "no") else None


# ---------------------------------------------------------------------------
# Prompt templates
# ---------------------------------------------------------------------------

_PLACEHOLDER = re.compile(r"\{([a-z_]+)\}")


class PromptLibrary:
    """Loads ``<template_id>.txt`` files and renders ``{placeholder}`` slots."""

    def __init__(self, directory: str) -> None:
        self.directory = Path(directory)
        self._cache: dict[str, str] = {}

    def template(self, template_id: str) -> str:
        if template_id not in self._cache:
            path = self.directory / f"{template_id}.txt"
            if not path.is_file():
                raise AlignerConfigError(f"missing prompt template {path}")
            self._cache[template_id] = path.read_text(encoding="utf-8")
        return self._cache[template_id]

    def render(self, template_id: str, variables: Mapping[str, str]) -> str:
        text = self.template(template_id)

        def substitute(match: re.Match) -> str:
            name = match.group(1)
            if name not in variables:
                raise AlignerConfigError(
                    f"template {template_id!r} references undefined variable {name!r}"
                )
            return str(variables[name])

        return _PLACEHOLDER.sub(substitute, text)


# ---------------------------------------------------------------------------
# Annotator clients
# ---------------------------------------------------------------------------


class HttpAnnotator:
    """HTTP annotator speaking POST ``{audio, prompt, temperature} -> {text}``.

    ``audio_resolver`` maps an audio reference string to either an
    AudioBuffer (sent as base64 WAV) or a path string; transport failures
    are retried with exponential backoff, then raised as
    AnnotatorTransportError.  Semantic failures are never retried.
    """

    def __init__(
        self,
        url: str,
        audio_resolver: Callable[[str], AudioBuffer | str] | None = None,
        timeout_s: float = 60.0,
        retries: int = TRANSPORT_RETRIES,
        backoff_s: float = 0.5,
    ) -> None:
        self.url = url
        self.audio_resolver = audio_resolver
        self.timeout_s = timeout_s
        self.retries = retries
        self.backoff_s = backoff_s
        self.call_log: list[tuple[str, str, int]] = []

    def ask(
        self, audio_ref: str | None, template_id: str, prompt: str, temperature: float, pass_index: int
    ) -> str:
        self.call_log.append((audio_ref or "", template_id, pass_index))
        audio_payload: str = ""
        if audio_ref is not None and self.audio_resolver is not None:
            resolved = self.audio_resolver(audio_ref)
            audio_payload = (
                encode_wav_base64(resolved) if isinstance(resolved, AudioBuffer) else str(resolved)
            )
        body = {"audio": audio_payload, "prompt": prompt, "temperature": temperature}
        last_exc: Exception | None = None
        for attempt in range(self.retries):
            try:
                response = requests.post(self.url, json=body, timeout=self.timeout_s)
            except requests.RequestException as exc:
                last_exc = exc
                time.sleep(self.backoff_s * (2**attempt))
                continue
            if response.status_code >= 500:
                last_exc = AnnotatorTransportError(
                    f"annotator returned {response.status_code}"
                )
                time.sleep(self.backoff_s * (2**attempt))
                continue
            if response.status_code != 200:
                raise AlignerConfigError(
                    f"annotator rejected request with {response.status_code}: {response.text[:200]}"
                )
            try:
                return str(response.json()["text"])
            except (ValueError, KeyError) as exc:
                raise AlignerConfigError(f"malformed annotator reply: {exc}") from exc
        raise AnnotatorTransportError(
            f"annotator unreachable after {self.retries} attempts: {last_exc}"
        )


class MockAnnotator:
    """Deterministic offline annotator.

    Answers come from a configured table keyed by template id.  Each entry
    is either a fixed string, a list (picked by keyed hash), or a
    weight table answer -> weight (picked by keyed hash against the
    cumulative distribution).  ``overrides`` pins exact answers per
    (audio_ref, template_id).  The keyed hash of
    (audio_ref, template_id, pass_index) makes every reply reproducible.
    """

    def __init__(
        self,
        table: Mapping[str, object],
        key: str = "",
        overrides: Mapping[tuple[str, str], object] | None = None,
    ) -> None:
        self.table = dict(table)
        self.key = key
        self.overrides = dict(overrides or {})
        self.call_log: list[tuple[str, str, int]] = []

    def _unit_hash(self, audio_ref: str, template_id: str, pass_index: int) -> float:
        digest = hashlib.sha256(
            f"{self.key}|{audio_ref}|{template_id}|{pass_index}".encode()
        ).digest()
        return int.from_bytes(digest[:8], "big") / 2.0**64

    def ask(
        self, audio_ref: str | None, template_id: str, prompt: str, temperature: float, pass_index: int
    ) -> str:
        ref = audio_ref or ""
        self.call_log.append((ref, template_id, pass_index))
        rule = self.overrides.get((ref, template_id), self.table.get(template_id))
        if rule is None:
            raise AlignerConfigError(f"mock annotator has no answers for {template_id!r}")
        if isinstance(rule, str):
            return rule
        u = self._unit_hash(ref, template_id, pass_index)
        if isinstance(rule, (list, tuple)):
            return str(rule[int(u * len(rule))])
        if isinstance(rule, Mapping):
            total = float(sum(rule.values()))
            acc = 0.0
            for answer, weight in rule.items():
                acc += float(weight) / total
                if u < acc:
                    return str(answer)
            return str(list(rule)[-1])
        raise AlignerConfigError(f"unsupported mock answer rule for {template_id!r}: {rule!r}")


# ---------------------------------------------------------------------------
# Coarse taggers
# ---------------------------------------------------------------------------


class MockTagger:
    """Offline coarse tagger backed by a lookup table.

    Lookup order: exact segment id, then source id, then the default.
    """

    def __init__(
        self,
        table: Mapping[str, tuple[str, float]],
        default: tuple[str, float] | None = None,
    ) -> None:
        self.table = dict(table)
        self.default = default
        self.call_log: list[str] = []

    def tag(self, segment: Segment) -> tuple[str, float]:
        self.call_log.append(segment.segment_id)
        for key in (segment.segment_id, segment.source_id):
            if key in self.table:
                label, confidence = self.table[key]
                return label, float(confidence)
        if self.default is not None:
            return self.default[0], float(self.default[1])
        raise AlignerConfigError(f"mock tagger has no entry for {segment.segment_id!r}")


class HttpTagger:
    """HTTP coarse tagger: POST ``{audio} -> {label, confidence}``."""

    def __init__(
        self,
        url: str,
        audio_resolver: Callable[[str], AudioBuffer | str] | None = None,
        timeout_s: float = 60.0,
    ) -> None:
        self.url = url
        self.audio_resolver = audio_resolver
        self.timeout_s = timeout_s
        self.call_log: list[str] = []

    def tag(self, segment: Segment) -> tuple[str, float]:
        self.call_log.append(segment.segment_id)
        audio_payload: str = segment.segment_id
        if self.audio_resolver is not None:
            resolved = self.audio_resolver(segment.segment_id)
            audio_payload = (
                encode_wav_base64(resolved) if isinstance(resolved, AudioBuffer) else str(resolved)
            )
        response = requests.post(
            self.url, json={"audio": audio_payload}, timeout=self.timeout_s
        )
        response.raise_for_status()
        body = response.json()
        return str(body["label"]), float(body["confidence"])


# ---------------------------------------------------------------------------
# Cascade stages
# ---------------------------------------------------------------------------


def vote_over_passes(
    client,
    audio_ref: str,
    template_id: str,
    prompt: str,
    temperature: float,
    passes: int,
    expected: Callable[[str], str | None],
) -> VoteTally:
    """Issue ``passes`` annotator queries and tally normalized answers."""
    if passes < 1:
        raise AlignerError("passes must be >= 1")
    counts: dict[str, int] = {}
    for pass_index in range(passes):
        raw = client.ask(audio_ref, template_id, prompt, temperature, pass_index)
        answer = normalize_answer(raw, expected)
        counts[answer] = counts.get(answer, 0) + 1
    return VoteTally(counts, passes)


def detect_polyphony(
    segment: Segment,
    client,
    templates: PromptLibrary,
    passes: int = DEFAULT_PASSES,
    temperature: float = DEFAULT_TEMPERATURE,
) -> tuple[str | None, VoteTally]:
    """Vote single/multi on a segment; returns (verdict, tally); tie -> None."""
    prompt = templates.render("purify", {"segment_id": segment.segment_id})
    tally = vote_over_passes(
        client, segment.segment_id, "purify", prompt, temperature, passes, _binary_token
    )
    return decide(tally), tally


def coarse_tag_filter(
    segment: Segment,
    tagger,
    ont: Ontology,
    threshold: float = DEFAULT_CONFIDENCE_THRESHOLD,
) -> tuple[str, float, bool]:
    """Coarse-tag a segment; returns (label, confidence, passed)."""
    label, confidence = tagger.tag(segment)
    try:
        label = ont.resolve(label)
    except Exception as exc:
        raise AlignerConfigError(
            f"coarse tagger produced unknown ontology label {label!r}"
        ) from exc
    if not 0.0 <= confidence <= 1.0:
        raise AlignerConfigError(f"tagger confidence {confidence} outside [0, 1]")
    return label, confidence, confidence >= threshold


def refine_to_leaf(
    segment: Segment,
    coarse_label: str,
    ont: Ontology,
    client,
    templates: PromptLibrary,
    passes: int = DEFAULT_PASSES,
    temperature: float = DEFAULT_TEMPERATURE,
) -> tuple[str | None, str, VoteTally]:
    """Vote a candidate-leaf index; returns (leaf or None, reason, tally).

    ``reason`` is one of "accepted", "no_leaf_match", "tie".
    """
    candidates = candidate_leaves(ont, coarse_label)
    if not candidates:
        raise AlignerConfigError(f"no candidate leaves under {coarse_label!r}")
    names = json.dumps([ont.name_of(leaf) for leaf in candidates])
    prompt = templates.render(
        "relabel",
        {"leaf_labels": names, "coarse_label": ont.name_of(coarse_label)},
    )
    tally = vote_over_passes(
        client,
        segment.segment_id,
        "relabel",
        prompt,
        temperature,
        passes,
        _index_token(len(candidates)),
    )
    verdict = decide(tally)
    if verdict is None:
        return None, "tie", tally
    index = int(verdict)
    if index == -1:
        return None, "no_leaf_match", tally
    return candidates[index], "accepted", tally


def align_segment(
    segment: Segment,
    metadata_labels: list[str],
    ont: Ontology,
    annotator,
    tagger,
    templates: PromptLibrary,
    passes: int = DEFAULT_PASSES,
    temperature: float = DEFAULT_TEMPERATURE,
    confidence_threshold: float = DEFAULT_CONFIDENCE_THRESHOLD,
) -> AlignmentResult:
    """Run the full cascade on one segment; first failing stage is terminal.

    Transient transport errors propagate as AnnotatorTransportError so the
    caller can retry the segment later; they are never recorded as
    rejections.
    """
    result = AlignmentResult(
        source_id=segment.source_id,
        start_s=segment.start_s,
        duration_s=segment.duration_s,
        status=STATUS_ACCEPTED,
    )

    if len(metadata_labels) > 1:
        result.status = STATUS_MULTILABEL
        return result

    verdict, tally = detect_polyphony(segment, annotator, templates, passes, temperature)
    result.tallies["polyphony"] = tally
    if verdict is None:
        result.status = STATUS_TIE
        return result
    if verdict == "multi":
        result.status = STATUS_POLYPHONIC
        return result

    label, confidence, passed = coarse_tag_filter(segment, tagger, ont, confidence_threshold)
    result.coarse_label = label
    result.coarse_confidence = confidence
    if not passed:
        result.status = STATUS_LOW_CONFIDENCE
        return result

    leaf, reason, tally = refine_to_leaf(
        segment, label, ont, annotator, templates, passes, temperature
    )
    result.tallies["refine"] = tally
    if reason == "tie":
        result.status = STATUS_TIE
    elif reason == "no_leaf_match":
        result.status = STATUS_NO_LEAF
    else:
        result.status = STATUS_ACCEPTED
        result.leaf_label = leaf
    return result


class PairJudge:
    """Adapts an annotator into the mixer's pair-compatibility judge."""

    def __init__(
        self,
        annotator,
        templates: PromptLibrary,
        name_of: Callable[[str], str] = str,
        temperature: float = DEFAULT_TEMPERATURE,
    ) -> None:
        self.annotator = annotator
        self.templates = templates
        self.name_of = name_of
        self.temperature = temperature

    def __call__(self, label_a: str, label_b: str, pass_index: int) -> str:
        prompt = self.templates.render(
            "cooccur", {"label_a": self.name_of(label_a), "label_b": self.name_of(label_b)}
        )
        ref = f"pair:{label_a}|{label_b}"
        raw = self.annotator.ask(ref, "cooccur", prompt, self.temperature, pass_index)
        return normalize_answer(raw, _yes_no_token)
