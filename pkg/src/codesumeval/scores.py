"""Per-record metric scores and their line-delimited file format.

A score file starts with one header line followed by one line per record::

    {"kind": "header", "schema_version": "scores-v1", "metric_id": "bleu-a",
     "dataset_id": "roy2021", "provenance": {...}, "cost": {...}}
    {"kind": "score", "record_id": "r1", "score": 0.42}
    {"kind": "failure", "record_id": "r7", "error": "unparseable verdict"}

Scores from tools run elsewhere (e.g. a trained metric) can be brought in
with :func:`load_external_scores` from a two-column CSV (``record_id,score``)
or from a file already in this format.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .providers import CostLedger

SCORES_VERSION = "scores-v1"


class ScoreFileError(ValueError):
    pass


@dataclass
class MetricScoreSet:
    metric_id: str
    dataset_id: str
    scores: dict[str, float]
    failures: dict[str, str] = field(default_factory=dict)
    provenance: dict[str, Any] = field(default_factory=dict)
    cost: CostLedger = field(default_factory=CostLedger)

    def __len__(self) -> int:
        return len(self.scores)

    def sorted_items(self) -> list[tuple[str, float]]:
        return sorted(self.scores.items())

    def write(self, path: str | Path) -> None:
        header = {
            "kind": "header",
            "schema_version": SCORES_VERSION,
            "metric_id": self.metric_id,
            "dataset_id": self.dataset_id,
            "provenance": self.provenance,
            "cost": self.cost.to_dict(),
        }
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(header, sort_keys=True, ensure_ascii=False) + "\n")
            for rid, score in self.sorted_items():
                fh.write(json.dumps({"kind": "score", "record_id": rid, "score": score}) + "\n")
            for rid, err in sorted(self.failures.items()):
                fh.write(json.dumps({"kind": "failure", "record_id": rid, "error": err}) + "\n")

    @classmethod
    def read(cls, path: str | Path) -> "MetricScoreSet":
        path = Path(path)
        with open(path, encoding="utf-8") as fh:
            lines = [json.loads(line) for line in fh if line.strip()]
        if not lines or lines[0].get("kind") != "header":
            raise ScoreFileError(f"{path}: first line must be a header")
        header = lines[0]
        if header.get("schema_version") != SCORES_VERSION:
            raise ScoreFileError(f"{path}: unsupported schema_version {header.get('schema_version')!r}")
        out = cls(header["metric_id"], header["dataset_id"], {}, {}, header.get("provenance", {}),
                  CostLedger.from_dict(header.get("cost", {})))
        for entry in lines[1:]:
            if entry["kind"] == "score":
                out.scores[entry["record_id"]] = float(entry["score"])
            elif entry["kind"] == "failure":
                out.failures[entry["record_id"]] = entry["error"]
            else:
                raise ScoreFileError(f"{path}: unknown line kind {entry['kind']!r}")
        return out


def load_external_scores(path: str | Path, metric_id: str, dataset_id: str) -> MetricScoreSet:
    """Read scores produced outside this package (CSV ``record_id,score`` or a score file)."""
    path = Path(path)
    if path.suffix.lower() in (".jsonl", ".json"):
        out = MetricScoreSet.read(path)
        out.metric_id = metric_id
        return out
    scores: dict[str, float] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if not reader.fieldnames or not {"record_id", "score"} <= set(reader.fieldnames):
            raise ScoreFileError(f"{path}: expected columns record_id,score")
        for row in reader:
            if row["record_id"] in scores:
                raise ScoreFileError(f"{path}: duplicate record_id {row['record_id']}")
            try:
                scores[row["record_id"]] = float(row["score"])
            except ValueError:
                raise ScoreFileError(f"{path}: non-numeric score for {row['record_id']}") from None
    return MetricScoreSet(metric_id, dataset_id, scores, provenance={"source": "external", "file": path.name})
