"""Command-line entry point: ``codesumeval <command> --config run.yaml``."""

from __future__ import annotations

import functools
import itertools
import logging
import sys
from contextlib import nullcontext
from dataclasses import replace
from decimal import Decimal
from pathlib import Path
from typing import Any, Callable

import click

from . import analysis
from .ask_llm import RunStore, ask_llm_metric
from .config import RunConfig, load_config, missing_credentials
from .dataset import Dataset, DatasetError, QualityDimension, human_scores, ingest_dataset, validate_dataset
from .embedding import Embedder, EmbeddingCache, EmbeddingError, embedding_metric
from .ngram import SynonymTable, score_text
from .providers import (
    ConfigError,
    CostLedger,
    ProviderError,
    build_embedder,
    build_llm,
    forbid_network,
)
from .qa import QAError, load_template, qa_metric
from .reports import Report
from .scores import MetricScoreSet, ScoreFileError, load_external_scores
from .stats import StatsError, boot_both_ci, kfold_spearman, paired_permutation_test

logger = logging.getLogger("codesumeval")

EXIT_CONFIG = 2
EXIT_FAILURE = 1


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose: bool) -> None:
    """Evaluate code-summary metrics against human ratings."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(message)s")


def _fail(code: int, lines: list[str]) -> None:
    for line in lines:
        click.echo(line, err=True)
    sys.exit(code)


def guarded(fn: Callable[..., Any]) -> Callable[..., Any]:
    """Turn library errors into a diagnostic on stderr and a nonzero exit code."""

    @functools.wraps(fn)
    def wrapper(*args: Any, **kwargs: Any) -> Any:
        try:
            return fn(*args, **kwargs)
        except ConfigError as exc:
            _fail(EXIT_CONFIG, [f"config error: {e}" for e in exc.errors])
        except (DatasetError, StatsError, ProviderError, ScoreFileError, EmbeddingError, QAError,
                FileNotFoundError, ValueError) as exc:
            _fail(EXIT_FAILURE, [f"error: {exc}"])

    return wrapper


def run_options(fn: Callable[..., Any]) -> Callable[..., Any]:
    fn = click.option("--offline", is_flag=True,
                      help="Refuse all network access; only replay/precomputed providers are allowed.")(fn)
    fn = click.option("--fixtures-dir", type=click.Path(file_okay=False, path_type=Path),
                      help="Directory of recorded responses for replay providers.")(fn)
    fn = click.option("--seed", type=int, help="Override the config seed.")(fn)
    fn = click.option("-c", "--config", "config_path", required=True,
                      type=click.Path(dir_okay=False, path_type=Path), help="Run config (YAML).")(fn)
    return fn


def _load(config_path: Path, seed: int | None) -> RunConfig:
    return load_config(config_path, {"seed": seed})


def _dataset(config: RunConfig) -> Dataset:
    dataset = ingest_dataset(config.dataset_path, config.dataset_format)
    for rej in dataset.rejected:
        logger.warning("rejected row %d (%s): %s", rej.row, rej.record_id, rej.reason)
    return dataset


def _selected(config: RunConfig, metric_ids: tuple[str, ...]) -> list[str]:
    if not metric_ids:
        return [m.id for m in config.metrics]
    for mid in metric_ids:
        config.metric(mid)
    return list(metric_ids)


def _read_scores(config: RunConfig, metric_ids: list[str]) -> dict[str, MetricScoreSet]:
    out = {}
    for mid in metric_ids:
        path = config.score_path(mid)
        if not path.exists():
            raise ScoreFileError(f"no scores for metric {mid!r} at {path}; run the score command first")
        out[mid] = MetricScoreSet.read(path)
    return out


def _write_report(config: RunConfig, report: Report) -> None:
    report.config_hash = config.config_hash
    report.seed = config.seed
    txt, _ = report.write(config.reports_dir)
    click.echo(report.text(), nl=False)
    logger.info("wrote %s", txt)


# --- ingest ----------------------------------------------------------------


@main.command()
@click.argument("source", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--format", "format_id", required=True, help="Source format id, e.g. haque2022.")
@click.option("-o", "--output", required=True, type=click.Path(dir_okay=False, path_type=Path))
@click.option("--strict", is_flag=True, help="Fail on the first invalid row.")
@guarded
def ingest(source: Path, format_id: str, output: Path, strict: bool) -> None:
    """Harmonize a source dataset into the common record format."""
    dataset = ingest_dataset(source, format_id, strict=strict)
    output.parent.mkdir(parents=True, exist_ok=True)
    dataset.write(output)
    report = validate_dataset(dataset)
    click.echo(f"{len(dataset.records)} records written to {output} ({len(dataset.rejected)} rejected)")
    for line in report.lines():
        click.echo(line)


# --- score -----------------------------------------------------------------


def _score_metric(config: RunConfig, metric_id: str, dataset: Dataset, *, offline: bool,
                  fixtures_dir: Path | None) -> MetricScoreSet:
    m = config.metric(metric_id)
    ledger = CostLedger()
    fixtures = str(fixtures_dir) if fixtures_dir else None

    def embedder() -> Embedder:
        pc = config.providers[m.embedder]
        provider = build_embedder(pc, ledger, offline=offline, fixtures_dir=fixtures)
        return Embedder(provider, EmbeddingCache(pc.cache_path))

    if m.kind == "ngram":
        synonyms = SynonymTable.load(m.synonyms) if m.synonyms else None
        scores, failures = {}, {}
        for r in dataset.records:
            if not r.reference_summary:
                failures[r.record_id] = "reference required"
                continue
            scores[r.record_id] = score_text(m.id, r.generated_summary, r.reference_summary, synonyms)
        out = MetricScoreSet(m.id, dataset.dataset_id, scores, failures,
                             {"metric": "ngram", "synonyms": m.synonyms.name if m.synonyms else None})
    elif m.kind == "embedding":
        emb = embedder()
        scores, failures = embedding_metric(emb, dataset.records)
        out = MetricScoreSet(m.id, dataset.dataset_id, scores, failures,
                             {"metric": "embedding", "model_name": emb.model_name})
    elif m.kind == "ask-llm":
        llm = build_llm(config.providers[m.provider], ledger, offline=offline, fixtures_dir=fixtures)
        store = RunStore(config.output_dir / "runs" / f"{m.id}.jsonl")
        out = ask_llm_metric(llm, m.prompt, dataset, metric_id=m.id, store=store)
    elif m.kind == "qa":
        llm = build_llm(config.providers[m.provider], ledger, offline=offline, fixtures_dir=fixtures)
        template = load_template(m.template) if m.template else None
        out = qa_metric(llm, embedder(), dataset, m.variant, template=template, metric_id=m.id)
    else:
        out = load_external_scores(m.path, m.id, dataset.dataset_id)
        unknown = sorted(set(out.scores) - set(dataset.ids()))
        if unknown:
            raise ScoreFileError(f"external scores for {m.id} name unknown records: {', '.join(unknown[:5])}")
    if m.kind != "external":
        out.cost = ledger
    out.provenance = {**out.provenance, "config_hash": config.config_hash, "seed": config.seed}
    return out


@main.command()
@run_options
@click.option("-m", "--metric", "metric_ids", multiple=True, help="Metric id to run (repeatable; default all).")
@guarded
def score(config_path: Path, seed: int | None, fixtures_dir: Path | None, offline: bool,
          metric_ids: tuple[str, ...]) -> None:
    """Score the dataset with the configured metrics."""
    config = _load(config_path, seed)
    selected = _selected(config, metric_ids)
    if not offline:
        needed = {n for mid in selected for n in (config.metric(mid).provider, config.metric(mid).embedder) if n}
        errs = missing_credentials(config, needed)
        if errs:
            raise ConfigError(errs)
    dataset = _dataset(config)
    config.write_provenance()
    config.scores_dir.mkdir(parents=True, exist_ok=True)
    with forbid_network() if offline else nullcontext():
        for mid in selected:
            result = _score_metric(config, mid, dataset, offline=offline, fixtures_dir=fixtures_dir)
            result.write(config.score_path(mid))
            click.echo(f"{mid}: {len(result.scores)} scored, {len(result.failures)} failed, "
                       f"cost {result.cost.total_usd} USD")


# --- correlate -------------------------------------------------------------


@main.command()
@run_options
@click.option("-m", "--metric", "metric_ids", multiple=True)
@guarded
def correlate(config_path: Path, seed: int | None, fixtures_dir: Path | None, offline: bool,
              metric_ids: tuple[str, ...]) -> None:
    """Spearman correlation of each metric with each human-rated dimension."""
    config = _load(config_path, seed)
    dataset = _dataset(config)
    score_sets = _read_scores(config, _selected(config, metric_ids))
    dims = config.dimensions
    report = Report("correlation", f"Spearman correlation with human ratings ({dataset.dataset_id})",
                    ["metric", *[d.value for d in dims]])
    for mid, s in score_sets.items():
        row: list[Any] = [mid]
        for dim in dims:
            result, excluded = analysis.correlate(dataset.records, s, dim)
            kfold = None
            if result.n >= max(3, config.stats.kfold):
                _, human, (vals,) = analysis.aligned_series(dataset.records, dim, s)
                try:
                    kfold = kfold_spearman(human, vals, config.stats.kfold, config.seed)
                except StatsError:
                    kfold = None
            row.append(result.rho)
            report.records.append({**result.to_dict(), "kfold_rho": kfold, "k": config.stats.kfold,
                                   "excluded": len(excluded)})
        report.rows.append(row)
    report.notes.append("'-' marks an undefined correlation (fewer than 3 pairs or constant ratings).")
    _write_report(config, report)


# --- compare ---------------------------------------------------------------


@main.command()
@run_options
@click.option("-m", "--metric", "metric_ids", multiple=True, help="Restrict to these metrics (all pairs).")
@click.option("--pair", "pairs", nargs=2, multiple=True, help="Compare exactly these two metrics (repeatable).")
@click.option("-d", "--dimension", default=None, help="Human dimension (default: first configured).")
@guarded
def compare(config_path: Path, seed: int | None, fixtures_dir: Path | None, offline: bool,
            metric_ids: tuple[str, ...], pairs: tuple[tuple[str, str], ...], dimension: str | None) -> None:
    """Paired permutation tests between metrics, Bonferroni-corrected."""
    config = _load(config_path, seed)
    dataset = _dataset(config)
    dim = QualityDimension.parse(dimension) if dimension else config.dimensions[0]
    pair_list = list(pairs) or list(itertools.combinations(_selected(config, metric_ids), 2))
    if not pair_list:
        raise ConfigError(["metrics: comparison needs at least two metrics"])
    score_sets = _read_scores(config, sorted({m for p in pair_list for m in p}))
    m = config.stats.bonferroni_m or len(pair_list)
    report = Report("compare", f"Paired permutation tests on {dim.value} ({dataset.dataset_id})",
                    ["metric_a", "metric_b", "rho_a", "rho_b", "delta", "p_value", "n", f"sig@{config.stats.alpha}/{m}"],
                    digits=4)
    for a, b in pair_list:
        _, human, (va, vb) = analysis.aligned_series(dataset.records, dim, score_sets[a], score_sets[b])
        res = paired_permutation_test(human, va, vb, config.stats.n_permutations, config.seed,
                                      metric_a=a, metric_b=b, bonferroni_m=m, alpha=config.stats.alpha)
        report.rows.append([a, b, res.rho_a, res.rho_b, res.observed_delta_rho, res.p_value, len(human),
                            res.significant_after_correction])
        report.records.append({**res.to_dict(), "dimension": dim.value, "n": len(human)})
    report.notes.append(f"Two-sided paired permutation test, {config.stats.n_permutations} permutations, "
                        f"p = (1 + hits) / (n + 1); significant when p < {config.stats.alpha}/{m}.")
    _write_report(config, report)


# --- ci --------------------------------------------------------------------


@main.command()
@run_options
@click.option("-m", "--metric", "metric_ids", multiple=True)
@guarded
def ci(config_path: Path, seed: int | None, fixtures_dir: Path | None, offline: bool,
       metric_ids: tuple[str, ...]) -> None:
    """Boot-Both confidence intervals (systems and inputs resampled)."""
    config = _load(config_path, seed)
    dataset = _dataset(config)
    score_sets = _read_scores(config, _selected(config, metric_ids))
    st = config.stats
    report = Report("ci", f"Boot-Both {st.level:.0%} intervals, {st.correlation_level} correlation "
                          f"({dataset.dataset_id})",
                    ["metric", "dimension", "estimate", "lower", "upper", "valid"])
    for mid, s in score_sets.items():
        for dim in config.dimensions:
            systems, inputs, human, metric = analysis.system_input_matrices(dataset.records, dim, s)
            try:
                res = boot_both_ci(human, metric, level=st.level, resamples=st.resamples, seed=config.seed,
                                   correlation=st.correlation_level, statistic_id=f"{mid}:{dim.value}")
            except StatsError as exc:
                report.rows.append([mid, dim.value, None, None, None, str(exc)])
                report.records.append({"metric_id": mid, "dimension": dim.value, "error": str(exc)})
                continue
            report.rows.append([mid, dim.value, res.point_estimate, res.lower, res.upper,
                                f"{res.valid_resamples}/{res.resamples}"])
            report.records.append({**res.to_dict(), "metric_id": mid, "dimension": dim.value,
                                   "systems": len(systems), "inputs": len(inputs)})
    _write_report(config, report)


# --- analyze ---------------------------------------------------------------


def _length_report(config: RunConfig, dataset: Dataset, score_sets: dict[str, MetricScoreSet]) -> Report:
    unit = config.analysis.length_unit
    report = Report("length_bias", f"Correlation of metric scores with summary length ({unit})",
                    ["metric", "rho", "n"])
    for dim in config.dimensions:
        try:
            res = analysis.human_length_bias(dataset.records, dim, dataset.dataset_id, unit)
        except StatsError:
            continue
        report.rows.append([res.metric_id, res.rho, res.n])
        report.records.append(res.to_dict())
    for mid, s in score_sets.items():
        res = analysis.length_bias(dataset.records, s, unit)
        report.rows.append([mid, res.rho, res.n])
        report.records.append(res.to_dict())
    return report


def _rankings_report(config: RunConfig, dataset: Dataset, score_sets: dict[str, MetricScoreSet]) -> Report:
    dim = config.dimensions[0]
    human = MetricScoreSet(f"human:{dim.value}", dataset.dataset_id, human_scores(dataset.records, dim))
    table = analysis.system_rankings(dataset.records, {human.metric_id: human, **score_sets})
    report = Report("rankings", "Per-system rankings (rank 1 = best; ordered by mean global rank)",
                    ["metric", "system", "rank", "mean_score", "mean_rank", "n"])
    for mid, entries in table.items():
        for e in entries:
            report.rows.append([mid, e.system_id, f"{e.rank:g}", e.mean_score, e.mean_rank, e.n])
            report.records.append({"metric_id": mid, "system_id": e.system_id, "rank": e.rank,
                                   "mean_score": e.mean_score, "mean_rank": e.mean_rank, "n": e.n})
    return report


def _stratify_report(config: RunConfig, dataset: Dataset, score_sets: dict[str, MetricScoreSet]) -> Report:
    a = config.analysis
    qdim, tdim = QualityDimension.parse(a.quality_dimension), QualityDimension.parse(a.target_dimension)
    report = Report("stratified", f"Correlation with {tdim.value} by reference {qdim.value} rating",
                    ["metric", "bucket", "n", "rho", "flag"])
    for mid, s in score_sets.items():
        buckets = analysis.stratify_by_reference_quality(dataset.records, s, qdim, tdim, a.cut_points,
                                                         min_size=a.min_bucket_size)
        for bk in buckets:
            report.rows.append([mid, bk.label, bk.n, bk.rho, "insufficient n" if bk.flagged else ""])
            report.records.append({"metric_id": mid, **bk.to_dict()})
    return report


ANALYSES = {"length": _length_report, "rankings": _rankings_report, "stratify": _stratify_report}


@main.command()
@run_options
@click.option("-m", "--metric", "metric_ids", multiple=True)
@click.option("-k", "--kind", "kinds", multiple=True, type=click.Choice(sorted(ANALYSES)),
              help="Analysis to run (repeatable; default all).")
@click.option("--length-unit", type=click.Choice(["chars", "tokens"]), default=None,
              help="Override the configured length unit.")
@guarded
def analyze(config_path: Path, seed: int | None, fixtures_dir: Path | None, offline: bool,
            metric_ids: tuple[str, ...], kinds: tuple[str, ...], length_unit: str | None) -> None:
    """Length bias, per-system rankings and reference-quality stratification."""
    config = _load(config_path, seed)
    if length_unit:
        config.analysis = replace(config.analysis, length_unit=length_unit)
    dataset = _dataset(config)
    score_sets = _read_scores(config, _selected(config, metric_ids))
    for kind in kinds or sorted(ANALYSES):
        try:
            report = ANALYSES[kind](config, dataset, score_sets)
        except analysis.AnalysisError as exc:
            click.echo(f"{kind}: skipped ({exc})", err=True)
            continue
        _write_report(config, report)


# --- cost ------------------------------------------------------------------


@main.command()
@run_options
@click.option("-m", "--metric", "metric_ids", multiple=True)
@guarded
def cost(config_path: Path, seed: int | None, fixtures_dir: Path | None, offline: bool,
         metric_ids: tuple[str, ...]) -> None:
    """Query counts and USD cost per metric, from the score files' ledgers."""
    config = _load(config_path, seed)
    score_sets = _read_scores(config, _selected(config, metric_ids))
    report = Report("cost", "Metric costs (USD)", ["metric", "queries", "total_usd", "usd_per_summary"])
    total = CostLedger()
    for mid, s in score_sets.items():
        n = len(s.scores) + len(s.failures)
        per_summary = (s.cost.total_usd / n) if n else Decimal(0)
        report.rows.append([mid, s.cost.queries, str(s.cost.total_usd), _decimal_text(per_summary)])
        report.records.append({"metric_id": mid, **s.cost.to_dict(), "usd_per_summary": _decimal_text(per_summary),
                               "summaries": n})
        total = total.merge(s.cost)
    report.rows.append(["total", total.queries, str(total.total_usd), ""])
    _write_report(config, report)


def _decimal_text(value: Decimal) -> str:
    return format(value.quantize(Decimal("0.000001")).normalize(), "f")


if __name__ == "__main__":
    main()
