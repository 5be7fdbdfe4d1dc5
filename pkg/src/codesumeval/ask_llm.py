"""Ask an LLM directly for a rating of a generated summary.

Prompts are assembled from a fixed grammar::

    [role] [response options: before dimension] [quality dimension] [response options: before data]

    [data block: reference summary / function / generated summary]
    [response options: after data]

The header pieces are joined with single spaces (absent pieces are skipped),
the header is separated from the data block by a blank line, and every data
line and the closing instruction sit on their own lines.
"""

from __future__ import annotations

import json
import logging
import re
import threading
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterable

from .dataset import Dataset, SummaryRecord
from .providers import AuthenticationError, ConfigError, LLMProvider, ProviderError
from .scores import MetricScoreSet

logger = logging.getLogger(__name__)

REFERENCE_CLAUSE = " or the reference summary"

QUALITY_DIMENSIONS: dict[str, str] = {
    "Consistent-1": (
        "Rate how consistent the following summary is with the corresponding function and reference summary. "
        "Note that consistency means that all the information in the new summary is supported by the code"
        "{reference_clause}."
    ),
    "Consistent-2": (
        "The following summary is consistent. Note that consistency means that all the information in the "
        "new summary is supported by the code{reference_clause}."
    ),
    "Accurate-POS": "Independent of other factors, I feel the new summary is accurate.",
    "Accurate-NEG": "Independent of other factors, I feel the new summary is inaccurate.",
    "Adequate-POS": "The new summary contains all of the important information required for understanding the method.",
    "Adequate-NEG": (
        "The new summary is missing important information, and that can hinder the understanding of the method."
    ),
    "Concise-POS": "The new summary only contains necessary information.",
    "Concise-NEG": "The new summary contains a lot of unnecessary information.",
    "Informative-1": "The summary contains information that helps to understand why the method exists in the project",
    "Informative-2": (
        "Independent of other factors, I feel that the new summary contains relevant information that helps to "
        "understand why the method exists in the project"
    ),
}

ROLES: dict[str, str] = {
    "none": "",
    "software-engineer": "You are a professional software engineer.",
    "professor": "You are a Professor of Computer Science at a reputable university.",
}

AGREE_LABELS = ("Strongly agree", "Somewhat agree", "Somewhat disagree", "Strongly disagree")
NEUTRAL_LABELS = ("Strongly agree", "Somewhat agree", "Neutral", "Somewhat disagree", "Strongly disagree")


@dataclass(frozen=True)
class ResponseOptions:
    name: str
    before_dimension: str = ""
    before_data: str = ""
    after_data: str = ""
    # Ordered from most to least agreement; empty for numeric scales.
    labels: tuple[str, ...] = ()
    numeric_range: tuple[float, float] | None = None

    @property
    def is_numeric(self) -> bool:
        return self.numeric_range is not None


_AGREE_BEFORE = ("Evaluate the statement by responding 'Strongly agree', 'Somewhat agree', "
                 "'Somewhat disagree' or 'Strongly disagree'.")

RESPONSE_OPTIONS: dict[str, ResponseOptions] = {
    "scale-1-5": ResponseOptions("scale-1-5", after_data="Rating (1 to 5):", numeric_range=(1, 5)),
    "scale-0-100": ResponseOptions(
        "scale-0-100",
        before_data=("Give a rating from 0 to 100 where 0 means completely inconsistent and 100 means the "
                     "summary is fully consistent with the code or the reference summary."),
        after_data="Rating (0 to 100):",
        numeric_range=(0, 100),
    ),
    "agree-disagree": ResponseOptions(
        "agree-disagree",
        before_dimension=_AGREE_BEFORE,
        after_data="Evaluation (Strongly agree, Somewhat agree, Somewhat disagree or Strongly disagree):",
        labels=AGREE_LABELS,
    ),
    "agree-disagree-cot": ResponseOptions(
        "agree-disagree-cot",
        before_dimension=_AGREE_BEFORE,
        after_data=("What are the steps you would take to evaluate this statement? Show your steps and then "
                    "provide an evaluation (Strongly agree, Somewhat agree, Somewhat disagree or "
                    "Strongly disagree)."),
        labels=AGREE_LABELS,
    ),
    "agree-neutral-disagree-cot": ResponseOptions(
        "agree-neutral-disagree-cot",
        before_dimension=("Evaluate the statement by responding (Strongly agree, Somewhat agree, Neutral, "
                          "Somewhat disagree or Strongly disagree)."),
        after_data=("What are the steps you would take to evaluate this statement? Show your steps and then "
                    "provide an evaluation (Strongly agree, Somewhat agree, Neutral, Somewhat disagree or "
                    "Strongly disagree):"),
        labels=NEUTRAL_LABELS,
    ),
}

LABEL_SCORES: dict[tuple[str, ...], dict[str, float]] = {
    AGREE_LABELS: {"Strongly agree": 4, "Somewhat agree": 3, "Somewhat disagree": 2, "Strongly disagree": 1},
    NEUTRAL_LABELS: {"Strongly agree": 5, "Somewhat agree": 4, "Neutral": 3, "Somewhat disagree": 2,
                     "Strongly disagree": 1},
}


class PromptError(ValueError):
    pass


class UnparseableVerdict(ValueError):
    pass


@dataclass(frozen=True)
class PromptSpec:
    quality_dimension: str = "Accurate-POS"
    role: str = "software-engineer"
    response_options: str = "agree-disagree-cot"
    include_reference: bool = True
    include_code: bool = True

    def __post_init__(self) -> None:
        errs = []
        if self.quality_dimension not in QUALITY_DIMENSIONS:
            errs.append(f"quality_dimension: {self.quality_dimension!r} not one of {', '.join(QUALITY_DIMENSIONS)}")
        if self.role not in ROLES:
            errs.append(f"role: {self.role!r} not one of {', '.join(ROLES)}")
        if self.response_options not in RESPONSE_OPTIONS:
            errs.append(f"response_options: {self.response_options!r} not one of {', '.join(RESPONSE_OPTIONS)}")
        if not (self.include_reference or self.include_code):
            errs.append("include_reference/include_code: at least one must be set")
        if errs:
            raise PromptError("; ".join(errs))

    @property
    def options(self) -> ResponseOptions:
        return RESPONSE_OPTIONS[self.response_options]

    def without_reference(self) -> "PromptSpec":
        return replace(self, include_reference=False)

    def to_dict(self) -> dict:
        return asdict(self)


def _spec(dim: str, role: str, options: str, ref: bool = True, code: bool = True) -> PromptSpec:
    return PromptSpec(dim, role, options, ref, code)


PRESETS: dict[str, PromptSpec] = {
    "consistency-no-ref": _spec("Consistent-1", "none", "scale-1-5", ref=False),
    "consistency-no-ref-code": _spec("Consistent-1", "none", "scale-1-5", code=False),
    "consistency-1-5": _spec("Consistent-1", "none", "scale-1-5"),
    "consistency-0-100": _spec("Consistent-1", "none", "scale-0-100"),
    "consistency-agree-disagree": _spec("Consistent-2", "none", "agree-disagree"),
    "accuracy": _spec("Accurate-POS", "none", "agree-disagree"),
    "adequacy-neg": _spec("Adequate-NEG", "none", "agree-disagree"),
    "conciseness-neg": _spec("Concise-NEG", "none", "agree-disagree"),
    "adequacy": _spec("Adequate-POS", "none", "agree-disagree"),
    "conciseness": _spec("Concise-POS", "none", "agree-disagree"),
    "accuracy-sftw-eng": _spec("Accurate-POS", "software-engineer", "agree-disagree"),
    "accuracy-professor": _spec("Accurate-POS", "professor", "agree-disagree"),
    "final": _spec("Accurate-POS", "software-engineer", "agree-disagree-cot"),
    "accuracy-neg": _spec("Accurate-NEG", "none", "agree-disagree"),
    "accuracy-sftw-eng-cot-neutral": _spec("Accurate-POS", "software-engineer", "agree-neutral-disagree-cot"),
    "accuracy-sftw-eng-cot-no-ref": _spec("Accurate-POS", "software-engineer", "agree-disagree-cot", ref=False),
    "informative-sftw-eng-cot": _spec("Informative-1", "software-engineer", "agree-disagree-cot"),
    "informative2-sftw-eng-cot": _spec("Informative-2", "software-engineer", "agree-disagree-cot"),
}
PRESETS["final-no-ref"] = PRESETS["accuracy-sftw-eng-cot-no-ref"]

FINAL_SPEC = PRESETS["final"]


def dimension_text(spec: PromptSpec) -> str:
    return QUALITY_DIMENSIONS[spec.quality_dimension].format(
        reference_clause=REFERENCE_CLAUSE if spec.include_reference else "")


def data_block(spec: PromptSpec, record: SummaryRecord) -> list[str]:
    lines = []
    if spec.include_reference:
        if not record.reference_summary:
            raise PromptError(f"record {record.record_id} has no reference summary but the prompt needs one")
        lines.append(f"Reference summary: {record.reference_summary}")
    if spec.include_code:
        lines.append(f"Function:{record.code}")
    lines.append(f"Generated summary: {record.generated_summary}")
    return lines


def assemble_prompt(spec: PromptSpec, record: SummaryRecord) -> str:
    options = spec.options
    header = " ".join(part for part in (ROLES[spec.role], options.before_dimension, dimension_text(spec),
                                        options.before_data) if part)
    return header + "\n\n" + "\n".join(data_block(spec, record)) + "\n" + options.after_data


# --- verdicts --------------------------------------------------------------


@dataclass(frozen=True)
class LikertVerdict:
    label: str
    numeric: float
    options: str


_NUMBER_RE = re.compile(r"(?<![\d.])(\d+(?:\.\d+)?)(?:\s*/\s*\d+)?")


def _label_pattern(labels: Iterable[str]) -> re.Pattern[str]:
    alts = sorted((r"\s+".join(map(re.escape, label.split())) for label in labels), key=len, reverse=True)
    return re.compile(r"\b(" + "|".join(alts) + r")\b", re.IGNORECASE)


def parse_verdict(raw: str, options: str | ResponseOptions) -> LikertVerdict:
    """Pull the verdict out of a response; the last label (or in-range number) wins."""
    opts = RESPONSE_OPTIONS[options] if isinstance(options, str) else options
    if opts.is_numeric:
        lo, hi = opts.numeric_range  # type: ignore[misc]
        found = [float(m.group(1)) for m in _NUMBER_RE.finditer(raw)]
        found = [v for v in found if lo <= v <= hi]
        if not found:
            raise UnparseableVerdict(f"unparseable verdict: no number in [{lo:g}, {hi:g}]")
        value = found[-1]
        return LikertVerdict(f"{value:g}", value, opts.name)
    matches = list(_label_pattern(opts.labels).finditer(raw))
    if not matches:
        raise UnparseableVerdict("unparseable verdict: no response option found")
    text = " ".join(matches[-1].group(1).split()).lower()
    label = next(lbl for lbl in opts.labels if lbl.lower() == text)
    return LikertVerdict(label, LABEL_SCORES[opts.labels][label], opts.name)


def verdict_to_score(verdict: LikertVerdict) -> float:
    opts = RESPONSE_OPTIONS[verdict.options]
    if opts.is_numeric:
        return verdict.numeric
    return float(LABEL_SCORES[opts.labels][verdict.label])


# --- judge runs ------------------------------------------------------------


@dataclass(frozen=True)
class JudgeRunRecord:
    record_id: str
    prompt: str
    raw_response: str | None
    verdict: str | None
    score: float | None
    model_name: str
    cost_usd: str
    retries: int
    timestamp: str
    error: str | None = None


class RunStore:
    """Append-only line-delimited log of judge queries."""

    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def append(self, entry: JudgeRunRecord) -> None:
        line = json.dumps(asdict(entry), ensure_ascii=False, sort_keys=True)
        with self._lock, open(self.path, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")

    def read(self) -> list[JudgeRunRecord]:
        if not self.path.exists():
            return []
        with open(self.path, encoding="utf-8") as fh:
            return [JudgeRunRecord(**json.loads(line)) for line in fh if line.strip()]


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def judge_record(provider: LLMProvider, spec: PromptSpec, record: SummaryRecord,
                 clock: Callable[[], str] = _now) -> JudgeRunRecord:
    """Assemble, query, parse and map one record. Failures come back in ``error``."""
    try:
        prompt = assemble_prompt(spec, record)
    except PromptError as exc:
        return JudgeRunRecord(record.record_id, "", None, None, None, provider.model_name, "0", 0, clock(), str(exc))
    try:
        completion = provider.complete(prompt)
    except (AuthenticationError, ConfigError):
        raise
    except ProviderError as exc:
        return JudgeRunRecord(record.record_id, prompt, None, None, None, provider.model_name, "0", 0, clock(),
                              f"provider error: {exc}")
    try:
        verdict = parse_verdict(completion.text, spec.options)
    except UnparseableVerdict as exc:
        return JudgeRunRecord(record.record_id, prompt, completion.text, None, None, completion.model_name,
                              str(completion.cost_usd), completion.retries, clock(), str(exc))
    return JudgeRunRecord(record.record_id, prompt, completion.text, verdict.label, verdict_to_score(verdict),
                          completion.model_name, str(completion.cost_usd), completion.retries, clock())


UNPARSEABLE_WARN_RATE = 0.05


def ask_llm_metric(provider: LLMProvider, spec: PromptSpec, dataset: Dataset | Iterable[SummaryRecord], *,
                   metric_id: str = "ask-llm", store: RunStore | None = None, parallelism: int | None = None,
                   clock: Callable[[], str] = _now) -> MetricScoreSet:
    records = list(dataset)
    dataset_id = dataset.dataset_id if isinstance(dataset, Dataset) else (records[0].dataset_id if records else "")
    workers = parallelism or provider.config.parallelism
    before = provider.ledger.total_usd, provider.ledger.queries

    def run(record: SummaryRecord) -> JudgeRunRecord:
        entry = judge_record(provider, spec, record, clock)
        if store is not None:
            store.append(entry)
        return entry

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            entries = list(pool.map(run, records))
    else:
        entries = [run(r) for r in records]

    scores = {e.record_id: e.score for e in entries if e.score is not None}
    failures = {e.record_id: e.error or "no score" for e in entries if e.score is None}
    unparseable = sum(1 for e in entries if e.error and e.error.startswith("unparseable"))
    rate = unparseable / len(entries) if entries else 0.0
    if rate > UNPARSEABLE_WARN_RATE:
        logger.warning("%s: %.1f%% of responses were unparseable", metric_id, 100 * rate)

    out = MetricScoreSet(metric_id, dataset_id, dict(sorted(scores.items())), dict(sorted(failures.items())))
    out.cost.queries = provider.ledger.queries - before[1]
    out.cost.total_usd = provider.ledger.total_usd - before[0]
    out.provenance = {
        "metric": "ask-llm",
        "prompt_spec": spec.to_dict(),
        "model_name": provider.model_name,
        "adapter_id": provider.config.adapter_id,
        "temperature": provider.config.temperature,
        "max_tokens": provider.config.max_tokens,
        "unparseable": unparseable,
        "unparseable_rate": round(rate, 6),
        "unparseable_flag": rate > UNPARSEABLE_WARN_RATE,
    }
    return out


# --- self-evaluation -------------------------------------------------------

SUMMARY_GENERATION_PROMPT = (
    "Write a comment that summarises the following code. Ensure that it is fully consistent, so all "
    "information in the comment is supported by the code.\nFunction: {code}\nComment:"
)


@dataclass
class SelfEvaluationReport:
    model_name: str
    counts: dict[str, int]
    n_rated: int
    unparseable: int
    generated: dict[str, str] = field(default_factory=dict)

    @property
    def top_rating_fraction(self) -> float:
        if not self.n_rated:
            return 0.0
        return next(iter(self.counts.values())) / self.n_rated


def self_evaluation(provider: LLMProvider, dataset: Iterable[SummaryRecord],
                    spec: PromptSpec = PRESETS["consistency-agree-disagree"]) -> SelfEvaluationReport:
    """Have ``provider`` summarise each function, then rate its own summaries.

    ``counts`` is ordered from the highest verdict to the lowest.
    """
    records = list(dataset)
    generated: dict[str, str] = {}
    rated: list[SummaryRecord] = []
    for r in records:
        text = provider.complete(SUMMARY_GENERATION_PROMPT.format(code=r.code)).text.strip()
        if not text:
            continue
        generated[r.record_id] = text
        rated.append(replace(r, generated_summary=text, system_id=f"self:{provider.model_name}"))
    counter: Counter[str] = Counter()
    unparseable = 0
    for r in rated:
        entry = judge_record(provider, spec, r)
        if entry.verdict is None:
            unparseable += 1
        else:
            counter[entry.verdict] += 1
    opts = spec.options
    order = list(opts.labels) if not opts.is_numeric else sorted(counter, key=float, reverse=True)
    counts = {label: counter.get(label, 0) for label in order}
    return SelfEvaluationReport(provider.model_name, counts, sum(counts.values()), unparseable, generated)
