"""Length bias, per-system rankings and reference-quality stratification."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from .dataset import DimensionAbsent, QualityDimension, SummaryRecord, aggregate_ratings
from .ngram import tokenize
from .scores import MetricScoreSet
from .stats import CorrelationResult, StatsError, spearman_or_none

logger = logging.getLogger(__name__)

MIN_BUCKET_SIZE = 10


class AnalysisError(ValueError):
    pass


def summary_length(text: str, unit: str = "chars") -> int:
    if unit == "chars":
        return len(text)
    if unit == "tokens":
        return len(tokenize(text))
    raise AnalysisError(f"unknown length unit {unit!r}")


def length_bias(records: Iterable[SummaryRecord], scores: MetricScoreSet, unit: str = "chars") -> CorrelationResult:
    """Spearman between generated-summary length and metric score."""
    records = [r for r in records if r.record_id in scores.scores]
    if len(records) < 3:
        raise StatsError(f"length bias needs at least 3 scored records, got {len(records)}")
    lengths = [summary_length(r.generated_summary, unit) for r in records]
    values = [scores.scores[r.record_id] for r in records]
    return CorrelationResult(scores.metric_id, f"length-{unit}", scores.dataset_id,
                             spearman_or_none(lengths, values), len(records))


def human_length_bias(records: Iterable[SummaryRecord], dim: QualityDimension, dataset_id: str = "",
                      unit: str = "chars") -> CorrelationResult:
    """Same statistic for the human ratings themselves."""
    pairs = []
    for r in records:
        try:
            pairs.append((summary_length(r.generated_summary, unit), aggregate_ratings(r, dim)))
        except DimensionAbsent:
            continue
    if len(pairs) < 3:
        raise StatsError(f"need at least 3 rated records, got {len(pairs)}")
    x, y = zip(*pairs)
    return CorrelationResult(f"human:{dim.value}", f"length-{unit}", dataset_id, spearman_or_none(x, y), len(pairs))


@dataclass(frozen=True)
class RankEntry:
    system_id: str
    mean_score: float
    mean_rank: float
    n: int
    rank: float


RankingTable = dict[str, list[RankEntry]]


def _ranks_descending(values: Sequence[float]) -> np.ndarray:
    return rankdata([-v for v in values], method="average")


def system_rankings(records: Iterable[SummaryRecord], scores_by_metric: Mapping[str, MetricScoreSet], *,
                    by: str = "mean-rank") -> RankingTable:
    """Rank systems per metric, best first; tied systems share the averaged rank.

    ``by="mean-rank"`` (default) orders systems by the mean of their summaries'
    dataset-wide score ranks, which makes the ranking depend only on the
    order of the scores. ``by="mean"`` orders by the raw mean score.
    """
    if by not in ("mean-rank", "mean"):
        raise AnalysisError(f"unknown ranking statistic {by!r}")
    records = list(records)
    with_system = [r for r in records if r.system_id]
    if not with_system:
        raise AnalysisError("rankings unavailable: no record carries a system_id")
    if len(with_system) < len(records):
        logger.warning("skipping %d records without system_id", len(records) - len(with_system))

    table: RankingTable = {}
    for metric_id, score_set in scores_by_metric.items():
        scored = [r for r in with_system if r.record_id in score_set.scores]
        if not scored:
            raise AnalysisError(f"metric {metric_id} scores none of the records with a system_id")
        values = [score_set.scores[r.record_id] for r in scored]
        global_ranks = rankdata(values, method="average")
        per_system: dict[str, tuple[list[float], list[float]]] = {}
        for r, v, gr in zip(scored, values, global_ranks):
            vs, rs = per_system.setdefault(r.system_id, ([], []))
            vs.append(v)
            rs.append(float(gr))
        systems = sorted(per_system)
        means = [math.fsum(per_system[s][0]) / len(per_system[s][0]) for s in systems]
        mean_ranks = [math.fsum(per_system[s][1]) / len(per_system[s][1]) for s in systems]
        ranks = _ranks_descending(mean_ranks if by == "mean-rank" else means)
        entries = [RankEntry(s, m, mr, len(per_system[s][0]), float(rk))
                   for s, m, mr, rk in zip(systems, means, mean_ranks, ranks)]
        table[metric_id] = sorted(entries, key=lambda e: (e.rank, e.system_id))
    return table


@dataclass(frozen=True)
class BucketCorrelation:
    label: str
    lower: float | None
    upper: float | None
    n: int
    rho: float | None
    flagged: bool
    record_ids: tuple[str, ...]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["record_ids"] = list(self.record_ids)
        return d


def _bucket_label(lo: float | None, hi: float | None) -> str:
    left = "-inf" if lo is None else f"{lo:g}"
    right = "inf" if hi is None else f"{hi:g}"
    return f"[{left}, {right})"


def stratify_by_reference_quality(records: Iterable[SummaryRecord], scores: MetricScoreSet,
                                  quality_dim: QualityDimension, target_dim: QualityDimension,
                                  cut_points: Sequence[float] = (), *,
                                  min_size: int = MIN_BUCKET_SIZE) -> list[BucketCorrelation]:
    """Correlate metric scores with ``target_dim`` within reference-quality buckets.

    Records are bucketed by the mean rating of their *reference* summary on
    ``quality_dim``. ``cut_points`` split the real line into half-open
    buckets ``(-inf, c1), [c1, c2), ..., [ck, inf)``, so every rated record
    lands in exactly one. Buckets smaller than ``min_size`` are flagged.
    """
    cuts = sorted(cut_points)
    if len(set(cuts)) != len(cuts):
        raise AnalysisError("bucket cut points must be distinct")
    rows = []
    any_reference_rating = False
    for r in records:
        try:
            quality = aggregate_ratings(r, quality_dim, reference=True)
        except DimensionAbsent:
            continue
        any_reference_rating = True
        if r.record_id not in scores.scores:
            continue
        try:
            human = aggregate_ratings(r, target_dim)
        except DimensionAbsent:
            continue
        rows.append((r.record_id, quality, human, scores.scores[r.record_id]))
    if not any_reference_rating:
        raise AnalysisError(f"no reference-quality ratings for {quality_dim.value}")

    edges: list[float | None] = [None, *cuts, None]
    out = []
    for lo, hi in zip(edges, edges[1:]):
        members = [row for row in rows if (lo is None or row[1] >= lo) and (hi is None or row[1] < hi)]
        rho = spearman_or_none([m[2] for m in members], [m[3] for m in members]) if len(members) >= 3 else None
        out.append(BucketCorrelation(_bucket_label(lo, hi), lo, hi, len(members), rho, len(members) < min_size,
                                     tuple(m[0] for m in members)))
    return out


def correlate(records: Iterable[SummaryRecord], scores: MetricScoreSet,
              dim: QualityDimension) -> tuple[CorrelationResult, list[str]]:
    """Spearman against the mean human rating, over records having both.

    Returns the result and the ids that were excluded (no score or no rating).
    """
    xs, ys, excluded = [], [], []
    for r in records:
        try:
            h = aggregate_ratings(r, dim)
        except DimensionAbsent:
            continue
        if r.record_id not in scores.scores:
            excluded.append(r.record_id)
            continue
        xs.append(h)
        ys.append(scores.scores[r.record_id])
    rho = spearman_or_none(xs, ys) if len(xs) >= 3 else None
    return CorrelationResult(scores.metric_id, dim.value, scores.dataset_id, rho, len(xs)), excluded


def aligned_series(records: Iterable[SummaryRecord], dim: QualityDimension,
                   *score_sets: MetricScoreSet) -> tuple[list[str], list[float], list[list[float]]]:
    """Record ids, human means and per-metric scores over records scored by every set."""
    ids, human, cols = [], [], [[] for _ in score_sets]
    for r in sorted(records, key=lambda rec: rec.record_id):
        if not all(r.record_id in s.scores for s in score_sets):
            continue
        try:
            h = aggregate_ratings(r, dim)
        except DimensionAbsent:
            continue
        ids.append(r.record_id)
        human.append(h)
        for col, s in zip(cols, score_sets):
            col.append(s.scores[r.record_id])
    return ids, human, cols


def system_input_matrices(records: Iterable[SummaryRecord], dim: QualityDimension,
                          scores: MetricScoreSet) -> tuple[list[str], list[str], np.ndarray, np.ndarray]:
    """Systems x inputs matrices of human means and metric scores.

    Inputs are identified by their code text; only inputs rated for every
    system are kept, since Boot-Both needs a complete matrix.
    """
    cells: dict[tuple[str, str], tuple[float, float]] = {}
    for r in records:
        if not r.system_id or r.record_id not in scores.scores:
            continue
        try:
            h = aggregate_ratings(r, dim)
        except DimensionAbsent:
            continue
        cells[(r.system_id, r.code)] = (h, scores.scores[r.record_id])
    systems = sorted({s for s, _ in cells})
    inputs = sorted({i for _, i in cells})
    complete = [i for i in inputs if all((s, i) in cells for s in systems)]
    human = np.array([[cells[(s, i)][0] for i in complete] for s in systems], dtype=float)
    metric = np.array([[cells[(s, i)][1] for i in complete] for s in systems], dtype=float)
    return systems, complete, human.reshape(len(systems), len(complete)), metric.reshape(len(systems), len(complete))
