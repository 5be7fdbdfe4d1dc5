"""Rank correlation, paired permutation tests, Bonferroni and Boot-Both CIs."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy.stats import rankdata


class StatsError(ValueError):
    pass


@dataclass(frozen=True)
class CorrelationResult:
    metric_id: str
    dimension: str
    dataset_id: str
    rho: float | None
    n: int

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SignificanceResult:
    metric_a: str
    metric_b: str
    rho_a: float
    rho_b: float
    observed_delta_rho: float
    p_value: float
    n_permutations: int
    seed: int
    bonferroni_m: int = 1
    alpha: float = 0.05
    significant_after_correction: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class BootstrapCI:
    statistic_id: str
    lower: float
    upper: float
    level: float
    resamples: int
    seed: int
    valid_resamples: int
    point_estimate: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def _pearson_rows(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Row-wise Pearson correlation of two 2-D arrays; NaN where undefined."""
    xc = x - x.mean(axis=-1, keepdims=True)
    yc = y - y.mean(axis=-1, keepdims=True)
    num = (xc * yc).sum(axis=-1)
    den = np.sqrt((xc * xc).sum(axis=-1) * (yc * yc).sum(axis=-1))
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(den > 0, num / np.where(den > 0, den, 1.0), np.nan)
    return np.clip(r, -1.0, 1.0)


def _check_pair(x: Sequence[float], y: Sequence[float], min_n: int = 3) -> tuple[np.ndarray, np.ndarray]:
    xa = np.asarray(x, dtype=float)
    ya = np.asarray(y, dtype=float)
    if xa.ndim != 1 or ya.ndim != 1 or len(xa) != len(ya):
        raise StatsError(f"length mismatch: {len(xa)} vs {len(ya)}")
    if len(xa) < min_n:
        raise StatsError(f"need at least {min_n} paired values, got {len(xa)}")
    if not (np.isfinite(xa).all() and np.isfinite(ya).all()):
        raise StatsError("series contain non-finite values")
    return xa, ya


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    """Pearson correlation of tie-averaged ranks."""
    xa, ya = _check_pair(x, y)
    r = _pearson_rows(rankdata(xa)[None, :], rankdata(ya)[None, :])[0]
    if np.isnan(r):
        raise StatsError("spearman undefined: zero variance in ranks")
    return float(r)


def spearman_or_none(x: Sequence[float], y: Sequence[float]) -> float | None:
    try:
        return spearman(x, y)
    except StatsError:
        return None


def kfold_spearman(x: Sequence[float], y: Sequence[float], k: int = 10, seed: int = 0) -> float:
    """Mean Spearman over ``k`` seeded random folds (folds with undefined rho are skipped)."""
    xa, ya = _check_pair(x, y)
    if k < 2 or k > len(xa):
        raise StatsError(f"k must lie in [2, {len(xa)}], got {k}")
    order = np.random.default_rng(seed).permutation(len(xa))
    rhos = [spearman_or_none(xa[f], ya[f]) for f in np.array_split(order, k) if len(f) >= 3]
    rhos = [r for r in rhos if r is not None]
    if not rhos:
        raise StatsError("no fold has a defined correlation")
    return float(np.mean(rhos))


def paired_permutation_test(human: Sequence[float], scores_a: Sequence[float], scores_b: Sequence[float],
                            n_perm: int = 10000, seed: int = 0, *, metric_a: str = "a", metric_b: str = "b",
                            bonferroni_m: int = 1, alpha: float = 0.05) -> SignificanceResult:
    """Two-sided paired permutation test on |rho(human, a) - rho(human, b)|.

    Each permutation swaps a_i and b_i independently with probability 1/2.
    The p-value uses the add-one estimator, so it is never below 1/(n_perm+1).
    """
    h, a = _check_pair(human, scores_a)
    _, b = _check_pair(human, scores_b)
    if n_perm < 1:
        raise StatsError("n_perm must be positive")
    rho_a, rho_b = spearman(h, a), spearman(h, b)
    observed = abs(rho_a - rho_b)

    rng = np.random.default_rng(seed)
    swap = rng.random((n_perm, len(h))) < 0.5
    perm_a = np.where(swap, b, a)
    perm_b = np.where(swap, a, b)
    h_ranks = np.broadcast_to(rankdata(h), perm_a.shape)
    ra = _pearson_rows(h_ranks, rankdata(perm_a, axis=1))
    rb = _pearson_rows(h_ranks, rankdata(perm_b, axis=1))
    deltas = np.abs(ra - rb)
    # NaN deltas (constant permuted series) never count as extreme.
    hits = int(np.count_nonzero(deltas >= observed - 1e-12))
    p = (1 + hits) / (n_perm + 1)
    return SignificanceResult(
        metric_a=metric_a, metric_b=metric_b, rho_a=rho_a, rho_b=rho_b,
        observed_delta_rho=observed, p_value=p, n_permutations=n_perm, seed=seed,
        bonferroni_m=bonferroni_m, alpha=alpha,
        significant_after_correction=bonferroni([p], bonferroni_m, alpha)[0],
    )


def bonferroni(p_values: Sequence[float], m: int | None = None, alpha: float = 0.05) -> list[bool]:
    """Flag p-values below alpha/m."""
    m = len(p_values) if m is None else m
    if m < len(p_values) or m < 1:
        raise StatsError(f"bonferroni m={m} is smaller than the number of tests ({len(p_values)})")
    return [p < alpha / m for p in p_values]


# --- Boot-Both -------------------------------------------------------------

CORRELATION_LEVELS = ("global", "system", "summary")


def matrix_correlation(human: np.ndarray, metric: np.ndarray, level: str = "global") -> float:
    """Spearman between two systems x inputs matrices; NaN when undefined.

    ``global`` pools every cell, ``system`` correlates per-system means and
    ``summary`` averages the per-input correlations across systems.
    """
    if level == "global":
        r = _pearson_rows(rankdata(human.ravel())[None, :], rankdata(metric.ravel())[None, :])[0]
    elif level == "system":
        r = _pearson_rows(rankdata(human.mean(axis=1))[None, :], rankdata(metric.mean(axis=1))[None, :])[0]
    elif level == "summary":
        per_input = _pearson_rows(rankdata(human.T, axis=1), rankdata(metric.T, axis=1))
        r = np.nan if np.isnan(per_input).all() else np.nanmean(per_input)
    else:
        raise StatsError(f"unknown correlation level {level!r}")
    return float(r)


def boot_both_ci(human: Sequence[Sequence[float]], metric: Sequence[Sequence[float]], *, level: float = 0.95,
                 resamples: int = 1000, seed: int = 0, correlation: str = "global",
                 statistic_id: str = "spearman") -> BootstrapCI:
    """Percentile CI from resampling systems and inputs independently with replacement.

    ``human`` and ``metric`` are systems x inputs matrices. Resamples whose
    correlation is undefined (e.g. every drawn cell identical) are dropped;
    the count of usable ones is reported.
    """
    h = np.asarray(human, dtype=float)
    mtx = np.asarray(metric, dtype=float)
    if h.ndim != 2 or h.shape != mtx.shape:
        raise StatsError(f"score matrices must share a 2-D shape, got {h.shape} and {mtx.shape}")
    n_sys, n_inp = h.shape
    if n_sys < 2:
        raise StatsError("Boot-Both inapplicable: needs at least 2 systems")
    if n_inp < 2:
        raise StatsError("Boot-Both inapplicable: needs at least 2 inputs")
    if not 0 < level < 1:
        raise StatsError("level must lie in (0, 1)")
    if not (np.isfinite(h).all() and np.isfinite(mtx).all()):
        raise StatsError("score matrices contain missing or non-finite values")

    rng = np.random.default_rng(seed)
    samples = np.empty(resamples)
    for i in range(resamples):
        rows = rng.integers(0, n_sys, n_sys)
        cols = rng.integers(0, n_inp, n_inp)
        samples[i] = matrix_correlation(h[np.ix_(rows, cols)], mtx[np.ix_(rows, cols)], correlation)
    valid = samples[~np.isnan(samples)]
    if valid.size == 0:
        raise StatsError("every bootstrap resample had an undefined correlation")
    tail = (1 - level) / 2 * 100
    lower, upper = np.percentile(valid, [tail, 100 - tail])
    point = matrix_correlation(h, mtx, correlation)
    return BootstrapCI(
        statistic_id=statistic_id, lower=float(lower), upper=float(upper), level=level,
        resamples=resamples, seed=seed, valid_resamples=int(valid.size),
        point_estimate=None if np.isnan(point) else point,
    )
