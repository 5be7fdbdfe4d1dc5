from __future__ import annotations

import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from codesumeval.analysis import (
    AnalysisError,
    aligned_series,
    correlate,
    human_length_bias,
    length_bias,
    stratify_by_reference_quality,
    summary_length,
    system_input_matrices,
    system_rankings,
)
from codesumeval.dataset import LIKERT4, QualityDimension, RatingSet, SummaryRecord
from codesumeval.scores import MetricScoreSet

from oracles import average_ranks, spearman as spearman_oracle

ACC = QualityDimension.ACCURACY
ADE = QualityDimension.ADEQUACY


def rated(rid: str, acc: float, *, system: str | None = None, generated: str = "returns x",
          ref_quality: float | None = None, code: str | None = None) -> SummaryRecord:
    ref = (RatingSet.from_raw({ADE: ref_quality}, LIKERT4),) if ref_quality is not None else ()
    return SummaryRecord(rid, "t", code or f"f_{rid}()", generated, "returns the value", system_id=system,
                         ratings=(RatingSet.from_raw({ACC: acc}, LIKERT4),), reference_ratings=ref)


def score_set(values: dict[str, float], metric_id: str = "m") -> MetricScoreSet:
    return MetricScoreSet(metric_id, "t", dict(values))


# --- length bias -----------------------------------------------------------


def test_summary_length_units():
    assert summary_length("gets the value") == 14
    assert summary_length("gets the value", "tokens") == 3
    with pytest.raises(AnalysisError):
        summary_length("x", "lines")


def test_length_bias_monotone_scores():
    records = [rated(f"r{i}", 2, generated="w " * (i + 1)) for i in range(5)]
    res = length_bias(records, score_set({f"r{i}": i / 10 for i in range(5)}))
    assert res.rho == pytest.approx(1.0) and res.n == 5 and res.dimension == "length-chars"


def test_human_length_bias_matches_oracle():
    accs = [1, 3, 2, 4, 4]
    records = [rated(f"r{i}", a, generated="x" * (i + 2)) for i, a in enumerate(accs)]
    res = human_length_bias(records, ACC)
    assert res.rho == pytest.approx(spearman_oracle([2, 3, 4, 5, 6], accs))


# --- rankings --------------------------------------------------------------


def brute_force_rankings(system_of: dict[str, str], scores: dict[str, float]) -> dict[str, float]:
    ids = sorted(scores)
    ranks = dict(zip(ids, average_ranks([scores[i] for i in ids])))
    systems = sorted(set(system_of[i] for i in ids))
    mean_rank = {s: sum(ranks[i] for i in ids if system_of[i] == s) / sum(system_of[i] == s for i in ids)
                 for s in systems}
    # rank 1 = best: higher mean rank is better, ties share the average position
    desc = average_ranks([-mean_rank[s] for s in systems])
    return dict(zip(systems, desc))


def test_rankings_match_brute_force():
    rng = random.Random(3)
    for _ in range(50):
        system_of = {f"r{i}": rng.choice("ABCD") for i in range(20)}
        scores = {rid: rng.choice([0.1, 0.2, 0.3, 0.5, 0.8]) for rid in system_of}
        records = [rated(rid, 2, system=s) for rid, s in system_of.items()]
        table = system_rankings(records, {"m": score_set(scores)})
        got = {e.system_id: e.rank for e in table["m"]}
        assert got == pytest.approx(brute_force_rankings(system_of, scores))


def test_rankings_ties_share_average_rank():
    records = [rated("a1", 2, system="A"), rated("b1", 2, system="B"), rated("c1", 2, system="C")]
    table = system_rankings(records, {"m": score_set({"a1": 0.5, "b1": 0.5, "c1": 0.1})})
    assert {e.system_id: e.rank for e in table["m"]} == {"A": 1.5, "B": 1.5, "C": 3.0}


def test_rankings_need_system_ids():
    with pytest.raises(AnalysisError, match="rankings unavailable"):
        system_rankings([rated("a", 2)], {"m": score_set({"a": 0.1})})


def test_rankings_by_mean_differs_from_mean_rank():
    # A: one huge outlier; B: consistently middling
    records = [rated(r, 2, system=s) for r, s in [("a1", "A"), ("a2", "A"), ("b1", "B"), ("b2", "B")]]
    scores = score_set({"a1": 100.0, "a2": 0.0, "b1": 0.5, "b2": 0.4})
    by_mean = {e.system_id: e.rank for e in system_rankings(records, {"m": scores}, by="mean")["m"]}
    by_rank = {e.system_id: e.rank for e in system_rankings(records, {"m": scores})["m"]}
    assert by_mean == {"A": 1.0, "B": 2.0}
    assert by_rank == {"A": 1.5, "B": 1.5}


monotone = st.sampled_from([math.exp, lambda v: 3 * v - 2, lambda v: v ** 3, math.atan])


@settings(max_examples=40)
@given(st.lists(st.integers(0, 6), min_size=6, max_size=24), monotone, st.randoms())
def test_rankings_invariant_under_monotone_rescaling(values, f, rnd):
    system_of = {f"r{i}": rnd.choice("ABC") for i in range(len(values))}
    records = [rated(rid, 2, system=s) for rid, s in system_of.items()]
    raw = {f"r{i}": v / 3 for i, v in enumerate(values)}
    a = system_rankings(records, {"m": score_set(raw)})["m"]
    b = system_rankings(records, {"m": score_set({k: f(v) for k, v in raw.items()})})["m"]
    assert [(e.system_id, e.rank) for e in a] == [(e.system_id, e.rank) for e in b]


# --- stratification --------------------------------------------------------


def strat_records():
    accs = [1, 2, 3, 4, 2, 3, 4, 1, 3, 4]
    qual = [1, 1, 2, 2, 3, 3, 3, 4, 4, 4]
    records = [rated(f"r{i}", a, ref_quality=q) for i, (a, q) in enumerate(zip(accs, qual))]
    scores = score_set({f"r{i}": (a + 0.3 * (i % 3)) for i, a in enumerate(accs)})
    return records, scores


def test_single_bucket_equals_unstratified():
    records, scores = strat_records()
    (bucket,) = stratify_by_reference_quality(records, scores, ADE, ACC, min_size=3)
    unstratified, _ = correlate(records, scores, ACC)
    assert bucket.label == "[-inf, inf)"
    assert bucket.rho == pytest.approx(unstratified.rho, abs=1e-12)
    assert not bucket.flagged


def test_buckets_partition_records_exactly_once():
    records, scores = strat_records()
    buckets = stratify_by_reference_quality(records, scores, ADE, ACC, [2.0, 3.0, 4.0], min_size=3)
    assert [b.label for b in buckets] == ["[-inf, 2)", "[2, 3)", "[3, 4)", "[4, inf)"]
    ids = [rid for b in buckets for rid in b.record_ids]
    assert sorted(ids) == sorted(r.record_id for r in records)
    assert [b.n for b in buckets] == [2, 2, 3, 3]
    assert buckets[0].rho is None and buckets[0].flagged
    assert buckets[2].rho is not None and not buckets[2].flagged


def test_small_buckets_flagged_at_default_size():
    records, scores = strat_records()
    assert all(b.flagged for b in stratify_by_reference_quality(records, scores, ADE, ACC, [3.0]))


def test_stratify_without_reference_ratings():
    with pytest.raises(AnalysisError, match="no reference-quality ratings"):
        stratify_by_reference_quality([rated("a", 2)], score_set({"a": 1.0}), ADE, ACC)


# --- alignment helpers -----------------------------------------------------


def test_correlate_reports_exclusions():
    records = [rated(f"r{i}", a) for i, a in enumerate([1, 2, 3, 4])]
    res, excluded = correlate(records, score_set({"r0": 0.1, "r1": 0.2, "r2": 0.4}), ACC)
    assert excluded == ["r3"] and res.n == 3 and res.rho == pytest.approx(1.0)


def test_aligned_series_intersects_score_sets():
    records = [rated(f"r{i}", i + 1) for i in range(3)]
    ids, human, (a, b) = aligned_series(records, ACC, score_set({"r0": 1, "r1": 2, "r2": 3}),
                                        score_set({"r1": 5, "r2": 6}))
    assert ids == ["r1", "r2"] and human == [2, 3] and a == [2, 3] and b == [5, 6]


def test_system_input_matrix_keeps_complete_inputs():
    records = [rated("a1", 1, system="A", code="f"), rated("b1", 2, system="B", code="f"),
               rated("a2", 3, system="A", code="g")]
    systems, inputs, human, metric = system_input_matrices(records, ACC, score_set({"a1": .1, "b1": .2, "a2": .3}))
    assert systems == ["A", "B"] and inputs == ["f"]
    assert human.tolist() == [[1.0], [2.0]] and metric.tolist() == [[0.1], [0.2]]
