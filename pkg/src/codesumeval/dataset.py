"""Human-evaluation datasets: ingestion, rating harmonization and aggregation.

Every source layout is converted into :class:`SummaryRecord` objects. Ratings
on negatively phrased questions are flipped at ingestion so that a higher
value always means a better summary; the untouched source values travel
alongside in ``RatingSet.raw_values``.

The harmonized on-disk format (``harmonized-v1``) is line-delimited JSON, one
record per line::

    {"schema_version": "harmonized-v1", "record_id": "...", "dataset_id": "...",
     "system_id": null, "language": "java", "code": "...",
     "generated_summary": "...", "reference_summary": "...",
     "ratings": [{"rater_id": "r0",
                  "scale": {"kind": "likert4", "polarity": "negated", "labels": [...]},
                  "values": {"adequacy": 4.0}, "raw_values": {"adequacy": 1.0}}],
     "reference_ratings": [...]}
"""

from __future__ import annotations

import csv
import json
import logging
import math
import statistics
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping, Sequence

logger = logging.getLogger(__name__)

SCHEMA_VERSION = "harmonized-v1"


class DatasetError(Exception):
    """Base class for ingestion and aggregation failures."""


class UnknownFormatError(DatasetError):
    pass


class RatingOutOfScale(DatasetError):
    pass


class DimensionAbsent(DatasetError):
    pass


class QualityDimension(str, Enum):
    OVERALL = "overall"
    SIMILARITY = "similarity"
    ACCURACY = "accuracy"
    ADEQUACY = "adequacy"
    CONCISENESS = "conciseness"
    FLUENCY = "fluency"
    INFORMATIVENESS = "informativeness"

    @classmethod
    def parse(cls, name: str) -> "QualityDimension":
        try:
            return cls(name.strip().lower())
        except ValueError:
            raise DatasetError(f"unknown quality dimension {name!r}") from None


_SCALE_BOUNDS = {"likert4": (1.0, 4.0), "likert5": (1.0, 5.0), "direct-0-100": (0.0, 100.0)}
_SCALE_LABEL_COUNT = {"likert4": 4, "likert5": 5, "direct-0-100": 0}


@dataclass(frozen=True)
class ScaleDescriptor:
    kind: str
    polarity: str = "positive"
    labels: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.kind not in _SCALE_BOUNDS:
            raise DatasetError(f"unknown scale kind {self.kind!r}")
        if self.polarity not in ("positive", "negated"):
            raise DatasetError(f"unknown polarity {self.polarity!r}")
        object.__setattr__(self, "labels", tuple(self.labels))
        expected = _SCALE_LABEL_COUNT[self.kind]
        if len(self.labels) != expected:
            raise DatasetError(f"{self.kind} scale needs exactly {expected} labels, got {len(self.labels)}")

    @property
    def bounds(self) -> tuple[float, float]:
        return _SCALE_BOUNDS[self.kind]

    def contains(self, value: float) -> bool:
        lo, hi = self.bounds
        return lo <= value <= hi

    def value_of(self, raw: Any) -> float:
        """Numeric value of a raw cell, accepting label text for Likert scales."""
        if isinstance(raw, str):
            text = raw.strip()
            for i, label in enumerate(self.labels):
                if label.lower() == text.lower():
                    return float(i + 1)
            try:
                return float(text)
            except ValueError:
                raise DatasetError(f"rating {raw!r} is neither a number nor a {self.kind} label") from None
        if isinstance(raw, bool) or not isinstance(raw, (int, float)):
            raise DatasetError(f"rating {raw!r} is not numeric")
        return float(raw)

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "polarity": self.polarity, "labels": list(self.labels)}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ScaleDescriptor":
        return cls(data["kind"], data.get("polarity", "positive"), tuple(data.get("labels", ())))

    def negated(self) -> "ScaleDescriptor":
        return ScaleDescriptor(self.kind, "negated" if self.polarity == "positive" else "positive", self.labels)


AGREE4 = ("Strongly disagree", "Somewhat disagree", "Somewhat agree", "Strongly agree")
AGREE5 = ("Strongly disagree", "Disagree", "Neutral", "Agree", "Strongly agree")
SATISFIED5 = ("Very dissatisfied", "Dissatisfied", "Neutral", "Satisfied", "Very satisfied")

LIKERT4 = ScaleDescriptor("likert4", "positive", AGREE4)
LIKERT4_NEGATED = ScaleDescriptor("likert4", "negated", AGREE4)
LIKERT5 = ScaleDescriptor("likert5", "positive", AGREE5)
LIKERT5_SATISFIED = ScaleDescriptor("likert5", "positive", SATISFIED5)
DIRECT_100 = ScaleDescriptor("direct-0-100")


def harmonize_rating(raw: float, scale: ScaleDescriptor) -> float:
    """Map a raw rating so that larger always means better.

    Negated Likert questions are mirrored around the scale midpoint
    (``max + min - raw``); everything else passes through.
    """
    if not scale.contains(raw):
        lo, hi = scale.bounds
        raise RatingOutOfScale(f"rating out of scale: {raw} not in [{lo:g}, {hi:g}] for {scale.kind}")
    if scale.polarity == "negated" and scale.kind != "direct-0-100":
        lo, hi = scale.bounds
        return hi + lo - raw
    return raw


@dataclass(frozen=True)
class RatingSet:
    """Ratings given by one rater on one scale.

    ``values`` are harmonized; ``raw_values`` keep the source numbers.
    """

    values: dict[QualityDimension, float]
    scale: ScaleDescriptor
    rater_id: str | None = None
    raw_values: dict[QualityDimension, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for dim, value in self.values.items():
            if not self.scale.contains(value):
                lo, hi = self.scale.bounds
                raise RatingOutOfScale(f"rating out of scale: {dim.value}={value} not in [{lo:g}, {hi:g}]")

    @classmethod
    def from_raw(cls, raw: Mapping[QualityDimension, float], scale: ScaleDescriptor,
                 rater_id: str | None = None) -> "RatingSet":
        raw = {dim: float(v) for dim, v in raw.items()}
        values = {dim: harmonize_rating(v, scale) for dim, v in raw.items()}
        return cls(values=values, scale=scale, rater_id=rater_id, raw_values=raw)

    def to_dict(self) -> dict[str, Any]:
        return {
            "rater_id": self.rater_id,
            "scale": self.scale.to_dict(),
            "values": {d.value: v for d, v in self.values.items()},
            "raw_values": {d.value: v for d, v in self.raw_values.items()},
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RatingSet":
        scale = ScaleDescriptor.from_dict(data["scale"])
        values = {QualityDimension.parse(k): scale.value_of(v) for k, v in data["values"].items()}
        raw = {QualityDimension.parse(k): scale.value_of(v) for k, v in data.get("raw_values", {}).items()}
        for dim, v in raw.items():
            if dim in values and harmonize_rating(v, scale) != values[dim]:
                raise DatasetError(f"{dim.value}: harmonized value {values[dim]} does not match raw {v}")
        return cls(values=values, scale=scale, rater_id=data.get("rater_id"), raw_values=raw)


@dataclass(frozen=True)
class SummaryRecord:
    record_id: str
    dataset_id: str
    code: str
    generated_summary: str
    reference_summary: str | None = None
    system_id: str | None = None
    language: str | None = None
    ratings: tuple[RatingSet, ...] = ()
    # Ratings of the reference summary itself (used for reference-quality stratification).
    reference_ratings: tuple[RatingSet, ...] = ()

    def __post_init__(self) -> None:
        if not self.code or not self.code.strip():
            raise DatasetError(f"record {self.record_id}: missing code")
        if not self.generated_summary or not self.generated_summary.strip():
            raise DatasetError(f"record {self.record_id}: empty generated summary")
        object.__setattr__(self, "ratings", tuple(self.ratings))
        object.__setattr__(self, "reference_ratings", tuple(self.reference_ratings))

    def dimensions(self) -> set[QualityDimension]:
        return {d for rs in self.ratings for d in rs.values}

    def ratings_for(self, dim: QualityDimension) -> list[float]:
        return [rs.values[dim] for rs in self.ratings if dim in rs.values]

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "record_id": self.record_id,
            "dataset_id": self.dataset_id,
            "system_id": self.system_id,
            "language": self.language,
            "code": self.code,
            "generated_summary": self.generated_summary,
            "reference_summary": self.reference_summary,
            "ratings": [rs.to_dict() for rs in self.ratings],
            "reference_ratings": [rs.to_dict() for rs in self.reference_ratings],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "SummaryRecord":
        version = data.get("schema_version")
        if version != SCHEMA_VERSION:
            raise DatasetError(f"unsupported schema_version {version!r}")
        return cls(
            record_id=str(data["record_id"]),
            dataset_id=str(data["dataset_id"]),
            code=data.get("code") or "",
            generated_summary=data.get("generated_summary") or "",
            reference_summary=data.get("reference_summary"),
            system_id=data.get("system_id"),
            language=data.get("language"),
            ratings=tuple(RatingSet.from_dict(r) for r in data.get("ratings", [])),
            reference_ratings=tuple(RatingSet.from_dict(r) for r in data.get("reference_ratings", [])),
        )


@dataclass(frozen=True)
class Rejection:
    row: int
    record_id: str | None
    reason: str


class Dataset:
    """Immutable collection of validated records plus ingestion diagnostics."""

    def __init__(self, dataset_id: str, records: Iterable[SummaryRecord],
                 rejected: Iterable[Rejection] = ()) -> None:
        self._dataset_id = dataset_id
        self._records = tuple(records)
        self._rejected = tuple(rejected)
        self._index = {r.record_id: r for r in self._records}

    @property
    def dataset_id(self) -> str:
        return self._dataset_id

    @property
    def records(self) -> tuple[SummaryRecord, ...]:
        return self._records

    @property
    def rejected(self) -> tuple[Rejection, ...]:
        return self._rejected

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self) -> Iterator[SummaryRecord]:
        return iter(self._records)

    def __getitem__(self, record_id: str) -> SummaryRecord:
        return self._index[record_id]

    def __contains__(self, record_id: object) -> bool:
        return record_id in self._index

    def ids(self) -> list[str]:
        return [r.record_id for r in self._records]

    def subset(self, record_ids: Iterable[str]) -> "Dataset":
        wanted = set(record_ids)
        return Dataset(self._dataset_id, [r for r in self._records if r.record_id in wanted])

    def write(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for record in self._records:
                fh.write(json.dumps(record.to_dict(), ensure_ascii=False, sort_keys=True) + "\n")


# --- source adapters -------------------------------------------------------


@dataclass(frozen=True)
class SourceLayout:
    """Column layout of one published dataset.

    Rating cells hold either a scalar or a list with one entry per rater
    (``"[2, 2, 1]"`` in CSV, a native list in JSONL). Columns prefixed with
    ``ref_`` rate the reference summary instead of the generated one.
    """

    dataset_id: str
    scales: dict[QualityDimension, ScaleDescriptor]
    language: str | None = None
    has_systems: bool = True


SOURCE_LAYOUTS: dict[str, SourceLayout] = {
    "roy2021": SourceLayout(
        "roy2021",
        {
            QualityDimension.OVERALL: DIRECT_100,
            QualityDimension.ADEQUACY: LIKERT5,
            QualityDimension.CONCISENESS: LIKERT5,
            QualityDimension.FLUENCY: LIKERT5,
            QualityDimension.SIMILARITY: LIKERT5,
            QualityDimension.ACCURACY: LIKERT5,
        },
        language="java",
        has_systems=False,
    ),
    "haque2022": SourceLayout(
        "haque2022",
        {
            QualityDimension.ACCURACY: LIKERT4,
            QualityDimension.ADEQUACY: LIKERT4_NEGATED,
            QualityDimension.CONCISENESS: LIKERT4_NEGATED,
            QualityDimension.SIMILARITY: LIKERT4,
        },
        language="java",
    ),
    "gao2023": SourceLayout(
        "gao2023",
        {
            QualityDimension.ADEQUACY: LIKERT5_SATISFIED,
            QualityDimension.CONCISENESS: LIKERT5_SATISFIED,
            QualityDimension.FLUENCY: LIKERT5_SATISFIED,
        },
    ),
    "su2024": SourceLayout(
        "su2024",
        {QualityDimension.INFORMATIVENESS: LIKERT4},
        language="java",
    ),
}

FORMAT_IDS = (SCHEMA_VERSION, *SOURCE_LAYOUTS)

_ID_COLUMNS = ("id", "record_id")
_CODE_COLUMNS = ("code", "function", "method")
_GENERATED_COLUMNS = ("generated", "generated_summary", "summary")
_REFERENCE_COLUMNS = ("reference", "reference_summary")
_SYSTEM_COLUMNS = ("system", "system_id", "model")


def _first(row: Mapping[str, Any], names: Sequence[str]) -> Any:
    for name in names:
        value = row.get(name)
        if value not in (None, ""):
            return value
    return None


def _cell_values(cell: Any) -> list[Any]:
    if isinstance(cell, list):
        return cell
    if isinstance(cell, str):
        text = cell.strip()
        if text.startswith("["):
            try:
                parsed = json.loads(text)
            except json.JSONDecodeError:
                raise DatasetError(f"malformed rating list {cell!r}") from None
            if not isinstance(parsed, list):
                raise DatasetError(f"malformed rating list {cell!r}")
            return parsed
        return [text]
    return [cell]


def _rating_sets(row: Mapping[str, Any], layout: SourceLayout, prefix: str) -> tuple[RatingSet, ...]:
    # rater index -> scale -> {dim: raw}
    grouped: dict[tuple[int, ScaleDescriptor], dict[QualityDimension, float]] = {}
    for column, cell in row.items():
        if cell in (None, "") or not column.startswith(prefix):
            continue
        name = column[len(prefix):]
        if prefix == "" and name.startswith("ref_"):
            continue
        try:
            dim = QualityDimension(name.lower())
        except ValueError:
            continue
        scale = layout.scales.get(dim)
        if scale is None:
            raise DatasetError(f"dimension {dim.value!r} is not rated in {layout.dataset_id}")
        for k, raw in enumerate(_cell_values(cell)):
            value = scale.value_of(raw)
            if not scale.contains(value):
                lo, hi = scale.bounds
                raise RatingOutOfScale(
                    f"rating out of scale: {column}={value:g} not in [{lo:g}, {hi:g}] ({scale.kind})")
            grouped.setdefault((k, scale), {})[dim] = value
    return tuple(RatingSet.from_raw(raw, scale, rater_id=f"r{k}")
                 for (k, scale), raw in sorted(grouped.items(), key=lambda kv: (kv[0][0], kv[0][1].kind,
                                                                                 kv[0][1].polarity)))


def _record_from_row(row: Mapping[str, Any], layout: SourceLayout, row_index: int) -> SummaryRecord:
    record_id = _first(row, _ID_COLUMNS)
    record_id = str(record_id) if record_id is not None else f"{layout.dataset_id}-{row_index}"
    system = _first(row, _SYSTEM_COLUMNS) if layout.has_systems else None
    return SummaryRecord(
        record_id=record_id,
        dataset_id=layout.dataset_id,
        code=_first(row, _CODE_COLUMNS) or "",
        generated_summary=_first(row, _GENERATED_COLUMNS) or "",
        reference_summary=_first(row, _REFERENCE_COLUMNS),
        system_id=str(system) if system is not None else None,
        language=(_first(row, ("language", "lang")) or layout.language),
        ratings=_rating_sets(row, layout, ""),
        reference_ratings=_rating_sets(row, layout, "ref_"),
    )


def _read_rows(path: Path) -> Iterator[tuple[int, dict[str, Any] | Exception]]:
    if path.suffix.lower() in (".csv", ".tsv"):
        delimiter = "\t" if path.suffix.lower() == ".tsv" else ","
        with open(path, newline="", encoding="utf-8") as fh:
            for i, row in enumerate(csv.DictReader(fh, delimiter=delimiter)):
                yield i, {k.strip().lower(): v for k, v in row.items() if k is not None}
        return
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                yield i, DatasetError(f"malformed row: {exc}")
                continue
            if not isinstance(row, dict):
                yield i, DatasetError("malformed row: expected a JSON object")
                continue
            yield i, row


def ingest_dataset(path: str | Path, format_id: str, *, strict: bool = False) -> Dataset:
    """Read ``path`` under ``format_id`` and return the validated records.

    Rows that fail validation are collected in ``Dataset.rejected`` with a
    reason; ``strict=True`` raises on the first one instead.
    """
    path = Path(path)
    if format_id != SCHEMA_VERSION and format_id not in SOURCE_LAYOUTS:
        raise UnknownFormatError(f"unknown format_id {format_id!r}; expected one of {', '.join(FORMAT_IDS)}")
    if not path.exists():
        raise DatasetError(f"{path} does not exist")

    records: list[SummaryRecord] = []
    rejected: list[Rejection] = []
    dataset_id = SOURCE_LAYOUTS[format_id].dataset_id if format_id in SOURCE_LAYOUTS else None
    for i, row in _read_rows(path):
        rid = None
        try:
            if isinstance(row, Exception):
                raise row
            rid = _first(row, _ID_COLUMNS)
            if format_id == SCHEMA_VERSION:
                record = SummaryRecord.from_dict(row)
            else:
                record = _record_from_row(row, SOURCE_LAYOUTS[format_id], i)
        except (DatasetError, KeyError, TypeError, ValueError) as exc:
            if strict:
                raise
            reason = str(exc) if not isinstance(exc, KeyError) else f"malformed row: missing field {exc}"
            rejected.append(Rejection(i, None if rid is None else str(rid), reason))
            logger.warning("row %d rejected: %s", i, reason)
            continue
        records.append(record)
        dataset_id = dataset_id or record.dataset_id
    return Dataset(dataset_id or path.stem, records, rejected)


def aggregate_ratings(record: SummaryRecord, dim: QualityDimension, *, reference: bool = False) -> float:
    """Mean harmonized rating for ``dim`` (of the reference summary when ``reference``)."""
    sets = record.reference_ratings if reference else record.ratings
    values = [rs.values[dim] for rs in sets if dim in rs.values]
    if not values:
        raise DimensionAbsent(f"dimension absent: {dim.value} on record {record.record_id}")
    return math.fsum(values) / len(values)


@dataclass
class ValidationReport:
    duplicate_ids: list[str] = field(default_factory=list)
    missing_reference: list[str] = field(default_factory=list)
    missing_dimensions: dict[str, list[QualityDimension]] = field(default_factory=dict)
    rejected: list[Rejection] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not (self.duplicate_ids or self.missing_reference or self.missing_dimensions or self.rejected)

    def lines(self) -> list[str]:
        out = [f"duplicate record_id: {rid}" for rid in self.duplicate_ids]
        out += [f"missing reference: {rid}" for rid in self.missing_reference]
        out += [f"missing dimensions on {rid}: {', '.join(d.value for d in dims)}"
                for rid, dims in self.missing_dimensions.items()]
        out += [f"rejected row {r.row} ({r.record_id}): {r.reason}" for r in self.rejected]
        return out


def validate_dataset(dataset: Dataset | Iterable[SummaryRecord],
                     expected: Iterable[QualityDimension] | None = None) -> ValidationReport:
    """Report duplicates, missing references and missing dimensions.

    Dimensions default to every dimension that appears anywhere in the data.
    """
    records = list(dataset)
    counts = Counter(r.record_id for r in records)
    wanted = set(expected) if expected is not None else set().union(*(r.dimensions() for r in records))
    order = [d for d in QualityDimension if d in wanted]
    report = ValidationReport(
        duplicate_ids=sorted(rid for rid, n in counts.items() if n > 1),
        missing_reference=[r.record_id for r in records if not r.reference_summary],
        rejected=list(dataset.rejected) if isinstance(dataset, Dataset) else [],
    )
    for r in records:
        missing = [d for d in order if d not in r.dimensions()]
        if missing:
            report.missing_dimensions[r.record_id] = missing
    return report


def human_scores(dataset: Iterable[SummaryRecord], dim: QualityDimension) -> dict[str, float]:
    """Mean rating per record for ``dim``, skipping records without it."""
    out: dict[str, float] = {}
    for r in dataset:
        try:
            out[r.record_id] = aggregate_ratings(r, dim)
        except DimensionAbsent:
            continue
    return out


def rating_summary(dataset: Iterable[SummaryRecord]) -> dict[str, dict[str, float]]:
    """Per-dimension count/mean/stdev of aggregated ratings; used by ``ingest`` output."""
    per_dim: dict[QualityDimension, list[float]] = {}
    for r in dataset:
        for dim in r.dimensions():
            per_dim.setdefault(dim, []).append(aggregate_ratings(r, dim))
    return {
        d.value: {
            "n": len(v),
            "mean": statistics.fmean(v),
            "stdev": statistics.stdev(v) if len(v) > 1 else 0.0,
        }
        for d, v in sorted(per_dim.items(), key=lambda kv: list(QualityDimension).index(kv[0]))
    }
