"""Run configuration: a YAML mapping validated into a :class:`RunConfig`.

Example::

    seed: 0
    output_dir: out
    dimensions: [overall, accuracy]
    dataset:
      path: data/fixture.jsonl
      format: harmonized-v1
    providers:
      judge: {kind: llm, adapter_id: replay, model_name: claude-3-opus-20240229}
      embed: {kind: embedding, adapter_id: replay, model_name: voyage-code-3}
    metrics:
      - {id: bleu-a, kind: ngram}
      - {id: voyage-code-3, kind: embedding, embedder: embed}
      - {id: ask-claude, kind: ask-llm, provider: judge, prompt: final}
      - {id: qa, kind: qa, provider: judge, embedder: embed, variant: final}
      - {id: side, kind: external, path: side.csv}
    stats: {n_permutations: 10000, resamples: 1000, alpha: 0.05, level: 0.95}

Relative paths are resolved against the config file's directory. The config
hash is taken over the canonical JSON of the mapping as written (plus CLI
overrides), so it does not depend on where the checkout lives.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

import yaml

from .ask_llm import PRESETS, PromptError, PromptSpec
from .dataset import FORMAT_IDS, DatasetError, QualityDimension
from .ngram import NGRAM_METRICS
from .providers import ConfigError, ProviderConfig
from .qa import QA_VARIANTS, NaPolicy, QAVariant

METRIC_KINDS = ("ngram", "embedding", "ask-llm", "qa", "external")


@dataclass(frozen=True)
class StatsConfig:
    n_permutations: int = 10000
    resamples: int = 1000
    alpha: float = 0.05
    bonferroni_m: int | None = None
    level: float = 0.95
    kfold: int = 10
    correlation_level: str = "global"


@dataclass(frozen=True)
class AnalysisConfig:
    cut_points: tuple[float, ...] = ()
    quality_dimension: str = "overall"
    target_dimension: str = "overall"
    min_bucket_size: int = 10
    length_unit: str = "chars"


@dataclass(frozen=True)
class MetricConfig:
    id: str
    kind: str
    provider: str | None = None
    embedder: str | None = None
    prompt: PromptSpec | None = None
    variant: QAVariant | None = None
    template: Path | None = None
    path: Path | None = None
    synonyms: Path | None = None


@dataclass
class RunConfig:
    raw: dict[str, Any]
    base_dir: Path
    seed: int
    output_dir: Path
    dataset_path: Path
    dataset_format: str
    dimensions: tuple[QualityDimension, ...]
    providers: dict[str, ProviderConfig]
    metrics: tuple[MetricConfig, ...]
    stats: StatsConfig = field(default_factory=StatsConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)

    @property
    def config_hash(self) -> str:
        return config_hash(self.raw)

    def metric(self, metric_id: str) -> MetricConfig:
        for m in self.metrics:
            if m.id == metric_id:
                return m
        raise ConfigError([f"metrics: no metric with id {metric_id!r}"])

    @property
    def scores_dir(self) -> Path:
        return self.output_dir / "scores"

    @property
    def reports_dir(self) -> Path:
        return self.output_dir / "reports"

    def score_path(self, metric_id: str) -> Path:
        return self.scores_dir / f"{metric_id}.jsonl"

    def write_provenance(self) -> Path:
        self.output_dir.mkdir(parents=True, exist_ok=True)
        path = self.output_dir / "provenance.json"
        payload = {"config_hash": self.config_hash, "seed": self.seed, "config": self.raw}
        path.write_text(json.dumps(payload, sort_keys=True, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
        return path


def config_hash(raw: Mapping[str, Any]) -> str:
    canonical = json.dumps(raw, sort_keys=True, separators=(",", ":"), ensure_ascii=False, default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def _dataclass_from(cls: type, data: Any, where: str, errors: list[str]) -> Any:
    if data is None:
        return cls()
    if not isinstance(data, Mapping):
        errors.append(f"{where}: expected a mapping")
        return cls()
    known = {f.name for f in fields(cls)}
    for key in sorted(set(data) - known):
        errors.append(f"{where}.{key}: unknown field")
    kwargs = {k: v for k, v in data.items() if k in known}
    if "cut_points" in kwargs:
        kwargs["cut_points"] = tuple(kwargs["cut_points"] or ())
    try:
        return cls(**kwargs)
    except TypeError as exc:
        errors.append(f"{where}: {exc}")
        return cls()


def _check_stats(s: StatsConfig, errors: list[str]) -> None:
    if not isinstance(s.n_permutations, int) or s.n_permutations < 1:
        errors.append("stats.n_permutations: must be a positive integer")
    if not isinstance(s.resamples, int) or s.resamples < 1:
        errors.append("stats.resamples: must be a positive integer")
    if not 0 < s.alpha < 1:
        errors.append("stats.alpha: must lie in (0, 1)")
    if not 0 < s.level < 1:
        errors.append("stats.level: must lie in (0, 1)")
    if s.bonferroni_m is not None and (not isinstance(s.bonferroni_m, int) or s.bonferroni_m < 1):
        errors.append("stats.bonferroni_m: must be a positive integer")
    if not isinstance(s.kfold, int) or s.kfold < 2:
        errors.append("stats.kfold: must be an integer >= 2")
    if s.correlation_level not in ("global", "system", "summary"):
        errors.append("stats.correlation_level: must be global, system or summary")


def _check_analysis(a: AnalysisConfig, errors: list[str]) -> None:
    for name in ("quality_dimension", "target_dimension"):
        try:
            QualityDimension.parse(getattr(a, name))
        except DatasetError as exc:
            errors.append(f"analysis.{name}: {exc}")
    if len(set(a.cut_points)) != len(a.cut_points):
        errors.append("analysis.cut_points: must be distinct")
    if a.min_bucket_size < 1:
        errors.append("analysis.min_bucket_size: must be >= 1")
    if a.length_unit not in ("chars", "tokens"):
        errors.append("analysis.length_unit: must be chars or tokens")


def _prompt_spec(value: Any, where: str, errors: list[str]) -> PromptSpec | None:
    if value is None:
        return PRESETS["final"]
    if isinstance(value, str):
        if value not in PRESETS:
            errors.append(f"{where}: unknown prompt preset {value!r}")
            return None
        return PRESETS[value]
    if isinstance(value, Mapping):
        try:
            return PromptSpec(**value)
        except (PromptError, TypeError) as exc:
            errors.append(f"{where}: {exc}")
            return None
    errors.append(f"{where}: expected a preset name or a mapping")
    return None


def _qa_variant(value: Any, where: str, errors: list[str]) -> QAVariant | None:
    if value is None:
        return QA_VARIANTS["final"]
    if isinstance(value, str):
        if value not in QA_VARIANTS:
            errors.append(f"{where}: unknown QA variant {value!r}")
            return None
        return QA_VARIANTS[value]
    if isinstance(value, Mapping):
        data = dict(value)
        try:
            if "na_policy" in data:
                data["na_policy"] = NaPolicy(data["na_policy"])
            return QAVariant(**data)
        except (ValueError, TypeError) as exc:
            errors.append(f"{where}: {exc}")
            return None
    errors.append(f"{where}: expected a variant name or a mapping")
    return None


def _metric(entry: Any, index: int, base: Path, providers: Mapping[str, ProviderConfig],
            errors: list[str]) -> MetricConfig | None:
    where = f"metrics[{index}]"
    if not isinstance(entry, Mapping):
        errors.append(f"{where}: expected a mapping")
        return None
    allowed = {f.name for f in fields(MetricConfig)}
    for key in sorted(set(entry) - allowed):
        errors.append(f"{where}.{key}: unknown field")
    metric_id, kind = entry.get("id"), entry.get("kind")
    if not metric_id:
        errors.append(f"{where}.id: required")
    if kind not in METRIC_KINDS:
        errors.append(f"{where}.kind: must be one of {', '.join(METRIC_KINDS)}")
        return None

    def provider_ref(name: str, want: str) -> str | None:
        ref = entry.get(name)
        if not ref:
            errors.append(f"{where}.{name}: required for {kind} metrics")
        elif ref not in providers:
            errors.append(f"{where}.{name}: no provider named {ref!r}")
        elif providers[ref].kind != want:
            errors.append(f"{where}.{name}: provider {ref!r} is not an {want} provider")
        return ref

    def path_of(name: str) -> Path | None:
        return (base / entry[name]) if entry.get(name) else None

    out = MetricConfig(id=str(metric_id or ""), kind=kind, synonyms=path_of("synonyms"))
    if kind == "ngram" and metric_id not in NGRAM_METRICS:
        errors.append(f"{where}.id: n-gram metric must be one of {', '.join(NGRAM_METRICS)}")
    elif kind == "embedding":
        out = MetricConfig(out.id, kind, embedder=provider_ref("embedder", "embedding"))
    elif kind == "ask-llm":
        out = MetricConfig(out.id, kind, provider=provider_ref("provider", "llm"),
                           prompt=_prompt_spec(entry.get("prompt"), f"{where}.prompt", errors))
    elif kind == "qa":
        out = MetricConfig(out.id, kind, provider=provider_ref("provider", "llm"),
                           embedder=provider_ref("embedder", "embedding"),
                           variant=_qa_variant(entry.get("variant"), f"{where}.variant", errors),
                           template=path_of("template"))
    elif kind == "external":
        if not entry.get("path"):
            errors.append(f"{where}.path: required for external metrics")
        out = MetricConfig(out.id, kind, path=path_of("path"))
    return out


def parse_config(raw: Mapping[str, Any], base_dir: str | Path = ".") -> RunConfig:
    """Validate ``raw``; raises :class:`ConfigError` listing every problem found."""
    base = Path(base_dir)
    errors: list[str] = []
    if not isinstance(raw, Mapping):
        raise ConfigError(["config: top level must be a mapping"])
    known = {"seed", "output_dir", "dimensions", "dataset", "providers", "metrics", "stats", "analysis"}
    for key in sorted(set(raw) - known):
        errors.append(f"{key}: unknown field")

    seed = raw.get("seed")
    if seed is None:
        errors.append("seed: required (every randomized step is seeded)")
    elif not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        errors.append(f"seed: must be a non-negative integer, got {seed!r}")

    dataset = raw.get("dataset") or {}
    if not isinstance(dataset, Mapping) or not dataset.get("path"):
        errors.append("dataset.path: required")
        dataset = {}
    fmt = dataset.get("format", "harmonized-v1")
    if fmt not in FORMAT_IDS:
        errors.append(f"dataset.format: {fmt!r} not one of {', '.join(FORMAT_IDS)}")

    dims: list[QualityDimension] = []
    for d in raw.get("dimensions") or ["overall"]:
        try:
            dims.append(QualityDimension.parse(d))
        except DatasetError as exc:
            errors.append(f"dimensions: {exc}")

    providers: dict[str, ProviderConfig] = {}
    raw_providers = raw.get("providers") or {}
    if not isinstance(raw_providers, Mapping):
        errors.append("providers: expected a mapping of name -> provider config")
        raw_providers = {}
    for name, pdata in raw_providers.items():
        if not isinstance(pdata, Mapping):
            errors.append(f"providers.{name}: expected a mapping")
            continue
        pdata = dict(pdata)
        for key in ("fixtures_dir", "vectors_path", "cache_path"):
            if pdata.get(key):
                pdata[key] = str(base / pdata[key])
        try:
            pc = ProviderConfig.from_dict(pdata)
        except ConfigError as exc:
            errors.extend(f"providers.{name}.{e}" for e in exc.errors)
            continue
        except TypeError as exc:
            errors.append(f"providers.{name}: {exc}")
            continue
        errors.extend(f"providers.{name}.{e}" for e in pc.problems())
        providers[name] = pc

    metrics = []
    raw_metrics = raw.get("metrics") or []
    if not isinstance(raw_metrics, list) or not raw_metrics:
        errors.append("metrics: at least one metric is required")
        raw_metrics = []
    for i, entry in enumerate(raw_metrics):
        m = _metric(entry, i, base, providers, errors)
        if m is not None:
            metrics.append(m)
    ids = [m.id for m in metrics]
    for dup in sorted({i for i in ids if ids.count(i) > 1}):
        errors.append(f"metrics: duplicate id {dup!r}")

    stats = _dataclass_from(StatsConfig, raw.get("stats"), "stats", errors)
    _check_stats(stats, errors)
    analysis = _dataclass_from(AnalysisConfig, raw.get("analysis"), "analysis", errors)
    _check_analysis(analysis, errors)

    if errors:
        raise ConfigError(errors)
    return RunConfig(
        raw=dict(raw), base_dir=base, seed=seed, output_dir=base / raw.get("output_dir", "out"),
        dataset_path=base / dataset["path"], dataset_format=fmt, dimensions=tuple(dims),
        providers=providers, metrics=tuple(metrics), stats=stats, analysis=analysis,
    )


def load_config(path: str | Path, overrides: Mapping[str, Any] | None = None) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError([f"config: file {path} does not exist"])
    with open(path, encoding="utf-8") as fh:
        try:
            raw = yaml.safe_load(fh) or {}
        except yaml.YAMLError as exc:
            raise ConfigError([f"config: invalid YAML: {exc}"]) from None
    if overrides:
        raw = {**raw, **{k: v for k, v in overrides.items() if v is not None}}
    return parse_config(raw, path.parent)


def missing_credentials(config: RunConfig, provider_names: set[str] | None = None) -> list[str]:
    """Errors for networked providers whose key variable is unset."""
    errs = []
    for name, pc in sorted(config.providers.items()):
        if provider_names is not None and name not in provider_names:
            continue
        env = pc.resolved_auth_env()
        if env and not os.environ.get(env):
            errs.append(f"providers.{name}.auth_env: environment variable {env} is not set")
    return errs
