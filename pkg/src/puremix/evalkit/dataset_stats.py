"""Descriptive statistics over emitted mixture manifests."""

from __future__ import annotations

import csv
import json
import os
from collections import Counter
from dataclasses import dataclass, field

DEFAULT_TOP_K = 20


@dataclass
class DatasetReport:
    num_mixtures: int
    label_counts: dict[str, int]
    source_count_histogram: dict[int, int]
    malformed: list[str] = field(default_factory=list)

    @property
    def label_proportions(self) -> dict[str, float]:
        if self.num_mixtures == 0:
            return {}
        return {k: v / self.num_mixtures for k, v in self.label_counts.items()}

    @property
    def source_count_proportions(self) -> dict[int, float]:
        if self.num_mixtures == 0:
            return {}
        return {k: v / self.num_mixtures for k, v in self.source_count_histogram.items()}

    def top_labels(self, k: int = DEFAULT_TOP_K) -> list[tuple[str, int]]:
        return sorted(self.label_counts.items(), key=lambda kv: (-kv[1], kv[0]))[:k]

    def bottom_labels(self, k: int = DEFAULT_TOP_K) -> list[tuple[str, int]]:
        return sorted(self.label_counts.items(), key=lambda kv: (kv[1], kv[0]))[:k]


def dataset_statistics(manifest_paths: list[str]) -> DatasetReport:
    """Aggregate label counts and source-count histogram across manifests.

    A label is counted once per mixture it appears in.  Malformed lines
    are recorded with their location and skipped.
    """
    labels: Counter[str] = Counter()
    histogram: Counter[int] = Counter()
    malformed: list[str] = []
    num_mixtures = 0
    for path in manifest_paths:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    record = json.loads(line)
                    components = record["components"]
                    mixture_labels = {c["label"] for c in components}
                except (ValueError, KeyError, TypeError) as exc:
                    malformed.append(f"{path}:{lineno}: {exc}")
                    continue
                num_mixtures += 1
                histogram[len(components)] += 1
                labels.update(mixture_labels)
    return DatasetReport(
        num_mixtures=num_mixtures,
        label_counts=dict(sorted(labels.items())),
        source_count_histogram=dict(sorted(histogram.items())),
        malformed=malformed,
    )


def write_dataset_report(report: DatasetReport, out_dir: str, top_k: int = DEFAULT_TOP_K) -> list[str]:
    """Emit the report as JSON plus two CSV tables; returns written paths."""
    os.makedirs(out_dir, exist_ok=True)
    json_path = os.path.join(out_dir, "dataset_stats.json")
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(
            {
                "num_mixtures": report.num_mixtures,
                "label_counts": report.label_counts,
                "label_proportions": report.label_proportions,
                "source_count_histogram": {str(k): v for k, v in report.source_count_histogram.items()},
                "source_count_proportions": {str(k): v for k, v in report.source_count_proportions.items()},
                "top_labels": report.top_labels(top_k),
                "bottom_labels": report.bottom_labels(top_k),
                "malformed": report.malformed,
            },
            fh,
            indent=2,
            sort_keys=True,
        )
        fh.write("\n")

    labels_path = os.path.join(out_dir, "label_counts.csv")
    with open(labels_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "mixtures", "proportion"])
        proportions = report.label_proportions
        for label, count in sorted(report.label_counts.items(), key=lambda kv: (-kv[1], kv[0])):
            writer.writerow([label, count, f"{proportions[label]:.6f}"])

    hist_path = os.path.join(out_dir, "source_counts.csv")
    with open(hist_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sources", "mixtures", "proportion"])
        proportions = report.source_count_proportions
        for count, mixtures in sorted(report.source_count_histogram.items()):
            writer.writerow([count, mixtures, f"{proportions[count]:.6f}"])
    return [json_path, labels_path, hist_path]
