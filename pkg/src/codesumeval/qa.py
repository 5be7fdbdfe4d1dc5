"""Fill-in-the-blank question answering metric.

Noun phrases (optionally verbs) are cut out of the reference summary one at a
time, the judge fills each gap using only the generated summary, and the
answers are compared to the removed text by embedding cosine similarity.

The bundled :class:`RuleChunker` is a small closed-class-word chunker tuned
for one-line code summaries: a noun phrase is an optional determiner followed
by a maximal run of open-class words. Anything with ``noun_chunks(text)`` and
``verbs(text)`` methods returning :class:`Span` lists can replace it.
"""

from __future__ import annotations

import json
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Protocol

from .dataset import Dataset, SummaryRecord
from .embedding import Embedder
from .providers import AuthenticationError, ConfigError, LLMProvider, ProviderError
from .scores import MetricScoreSet

GAP = "___"
NA_TEXT = "n.a."


class QAError(ValueError):
    pass


class NaPolicy(str, Enum):
    TREAT_AS_TEXT = "treat-as-text"
    SCORE_ZERO = "score-zero"
    SCORE_HALF = "score-half"
    EXCLUDE = "exclude"


@dataclass(frozen=True)
class Span:
    start: int
    end: int
    text: str
    kind: str = "np"


@dataclass(frozen=True)
class QAItem:
    question: str
    gold_answer: str
    gap_offset: int
    predicted_answer: str | None = None
    similarity: float | None = None

    def __post_init__(self) -> None:
        if self.question.count(GAP) != 1:
            raise QAError(f"question must contain exactly one gap marker: {self.question!r}")
        if self.question[self.gap_offset:self.gap_offset + len(GAP)] != GAP:
            raise QAError("gap_offset does not point at the gap marker")

    def fill(self, answer: str) -> str:
        return self.question[:self.gap_offset] + answer + self.question[self.gap_offset + len(GAP):]

    def reconstruct(self) -> str:
        return self.fill(self.gold_answer)

    @property
    def is_na(self) -> bool:
        return is_na(self.predicted_answer)


def is_na(answer: str | None) -> bool:
    if answer is None:
        return True
    norm = answer.strip().strip("'\"`").strip().lower()
    return norm in ("", "n.a.", "n.a", "na", "n/a")


# --- chunking --------------------------------------------------------------

_TOKEN_RE = re.compile(r"\w+(?:['\-]\w+)*|[^\w\s]")

DETERMINERS = frozenset(
    "the a an this that these those each every all some any no its their his her our your my another "
    "such both either neither".split())
_CLOSED = frozenset(
    # prepositions and subordinators
    "of for in on at by with from to into onto over under about as after before between through during "
    "without within via per against among upon if when whether until than while since because unless "
    "up out off down "
    # conjunctions
    "and or but nor so yet then "
    # pronouns and wh-words
    "it they them he she we you i me us him which who whom whose what where how why there here "
    # auxiliaries and modals
    "is are was were be been being am has have had do does did can could will would shall should may "
    "might must "
    # adverbs
    "not also only just very already otherwise else always never currently directly too more most less "
    "least".split())

_VERB_BASES = (
    "return get set create add remove delete check compute calculate convert parse read write load save "
    "update find build make initialize initialise handle process generate validate test determine retrieve "
    "fetch send receive open close start stop run execute call invoke register unregister clear reset "
    "append insert sort print display show render draw apply perform evaluate notify wrap unwrap extract "
    "format encode decode copy clone compare merge split replace resolve store put map filter count sum "
    "select use take give try throw catch log wait listen connect disconnect release lock unlock allocate "
    "free destroy dispose invalidate refresh enable disable toggle install configure define declare "
    "implement override extend provide represent contain indicate specify describe allow ensure verify "
    "match search scan collect iterate increment decrement assign bind attach detach push pop peek move "
    "shift strip trim transform serialize deserialize export import upload download request respond accept "
    "reject cancel schedule submit commit query emit dispatch trigger fire post mark flush sync normalize "
    "escape unescape sanitize truncate pad join concatenate fill populate reverse swap hash sign encrypt "
    "decrypt compress decompress instantiate construct obtain lookup look keep hold"
).split()
_IRREGULAR = frozenset(
    "given gave got gotten made built found written wrote ran sent thrown threw taken took done did held "
    "kept left lost shown knew known begun began chosen chose drawn drew bound".split())


def _inflections(base: str) -> set[str]:
    forms = {base, base + "s", base + "es", base + "ed", base + "ing", base + "d"}
    if base.endswith("e"):
        forms |= {base[:-1] + "ing"}
    if base.endswith("y") and len(base) > 1 and base[-2] not in "aeiou":
        forms |= {base[:-1] + "ies", base[:-1] + "ied"}
    if len(base) >= 3 and base[-1] not in "aeiouwxy" and base[-2] in "aeiou" and base[-3] not in "aeiou":
        forms |= {base + base[-1] + "ed", base + base[-1] + "ing"}
    return forms


VERBS = frozenset(f for b in _VERB_BASES for f in _inflections(b)) | _IRREGULAR


class Chunker(Protocol):
    def noun_chunks(self, text: str) -> list[Span]: ...

    def verbs(self, text: str) -> list[Span]: ...


class RuleChunker:
    """Determiner + open-class-word chunker (no statistical model)."""

    def _tag(self, text: str) -> list[tuple[int, int, str, str]]:
        tokens = [(m.start(), m.end(), m.group()) for m in _TOKEN_RE.finditer(text)]
        tagged: list[tuple[int, int, str, str]] = []
        for i, (s, e, tok) in enumerate(tokens):
            low = tok.lower()
            prev = tagged[i - 1][3] if i else "BREAK"
            nxt = tokens[i + 1][2].lower() if i + 1 < len(tokens) else None
            if not tok[0].isalnum() and tok[0] != "_":
                tag = "BREAK"
            elif low in DETERMINERS:
                tag = "DET"
            elif low in _CLOSED:
                tag = "OTHER"
            elif prev == "DET":
                tag = "NOM"
            elif low in VERBS and not (prev == "NOM" and nxt not in DETERMINERS):
                # after a noun, only a following determiner makes it a verb: "the method returns the ..."
                tag = "VERB"
            elif i == 0 and nxt in DETERMINERS:
                # sentence-initial word directly followed by a determiner: "instantiates the ..."
                tag = "VERB"
            else:
                tag = "NOM"
            tagged.append((s, e, tok, tag))
        return tagged

    def noun_chunks(self, text: str) -> list[Span]:
        tagged = self._tag(text)
        spans: list[Span] = []
        i = 0
        while i < len(tagged):
            start_i = i
            if tagged[i][3] == "DET" and i + 1 < len(tagged) and tagged[i + 1][3] == "NOM":
                i += 1
            if tagged[i][3] != "NOM":
                i = start_i + 1
                continue
            while i + 1 < len(tagged) and tagged[i + 1][3] == "NOM":
                i += 1
            s, e = tagged[start_i][0], tagged[i][1]
            spans.append(Span(s, e, text[s:e], "np"))
            i += 1
        return spans

    def verbs(self, text: str) -> list[Span]:
        return [Span(s, e, tok, "verb") for s, e, tok, tag in self._tag(text) if tag == "VERB"]


DEFAULT_CHUNKER = RuleChunker()


def extract_answer_spans(reference: str, chunker: Chunker = DEFAULT_CHUNKER,
                         include_verbs: bool = False) -> list[Span]:
    if not reference or not reference.strip():
        return []
    spans = list(chunker.noun_chunks(reference))
    if include_verbs:
        spans += list(chunker.verbs(reference))
    return spans


def generate_questions(reference: str, spans: Iterable[Span]) -> list[QAItem]:
    spans = list(spans)
    if GAP in reference:
        raise QAError(f"reference already contains the gap marker {GAP!r}")
    ordered = sorted(spans, key=lambda sp: (sp.start, sp.end))
    for a, b in zip(ordered, ordered[1:]):
        if b.start < a.end:
            raise QAError(f"overlapping spans {a.text!r} and {b.text!r}")
    items = []
    for sp in spans:
        if not (0 <= sp.start < sp.end <= len(reference)) or reference[sp.start:sp.end] != sp.text:
            raise QAError(f"span {sp.text!r} does not match the reference at [{sp.start}, {sp.end})")
        question = reference[:sp.start] + GAP + reference[sp.end:]
        items.append(QAItem(question, sp.text, sp.start))
    return items


# --- prompting -------------------------------------------------------------


@dataclass(frozen=True)
class QAVariant:
    include_verbs: bool = False
    few_shot: bool = True
    word_only: bool = True
    allow_na: bool = False
    whole_sentence: bool = False
    embedding_model: str = "gte-base-en-v1.5"
    na_policy: NaPolicy = NaPolicy.TREAT_AS_TEXT

    def to_dict(self) -> dict:
        d = asdict(self)
        d["na_policy"] = self.na_policy.value
        return d


QA_VARIANTS: dict[str, QAVariant] = {
    "final": QAVariant(),
    "na-counts-as-0": QAVariant(allow_na=True, na_policy=NaPolicy.SCORE_ZERO),
    "nps-only": QAVariant(allow_na=True),
    "nps-only-json": QAVariant(allow_na=True, word_only=False),
    "na-counts-as-0.5": QAVariant(allow_na=True, na_policy=NaPolicy.SCORE_HALF),
    "na-not-counted": QAVariant(allow_na=True, na_policy=NaPolicy.EXCLUDE),
    "nps+vps": QAVariant(include_verbs=True, allow_na=True),
    "nps+vps-sbert": QAVariant(include_verbs=True, allow_na=True, embedding_model="stsb-roberta-large"),
    "nps-only-zero-shot": QAVariant(allow_na=True, few_shot=False),
    "full-sent-sbert": QAVariant(include_verbs=True, allow_na=True, whole_sentence=True,
                                 embedding_model="stsb-roberta-large"),
    "full-sent-gte": QAVariant(include_verbs=True, allow_na=True, whole_sentence=True),
}

_FEW_SHOT_INTRO = ("Based on the following code summary, fill in the blanks for the other code summary based "
                   "on the same function.")
_ZERO_SHOT_INTRO = "Use only the information from the code summary to fill in the blank on the following question."
_NA_INSTRUCTION = "If there is not enough information to give an answer, write 'n.a.'."
_WORD_ONLY_INSTRUCTION = "Only provide your answer in the response."
_JSON_INSTRUCTION = 'Return your answer in json format, for example\n{\n    "answers": [\n         "answer"\n    ]\n}'
_EXAMPLE_WORD = ("For example:\nCode Summary: 'get the list of the user'\n"
                 "Question: 'returns ___ of collaborate collections for the given user id'\n"
                 "Answer: 'the list'")
_EXAMPLE_JSON = ("For example:\nCode Summary: 'get the list of the user'\n"
                 "Question: returns ___ of collaborate collections for the given user id\n"
                 'Answer:{\n    "answers": [\n        "the list"\n    ]\n}')
_QUERY = "Code Summary: {generated_summary}\nQuestion: {question}\nAnswer:"


def qa_template(variant: QAVariant) -> str:
    """Prompt template with ``{generated_summary}`` and ``{question}`` placeholders."""
    intro = _FEW_SHOT_INTRO if variant.few_shot else _ZERO_SHOT_INTRO
    if variant.allow_na:
        intro += " " + _NA_INSTRUCTION
    blocks = [intro]
    if not variant.word_only:
        blocks.append(_JSON_INSTRUCTION)
    elif not variant.few_shot:
        blocks.append(_WORD_ONLY_INSTRUCTION)
    if variant.few_shot:
        blocks.append(_EXAMPLE_WORD if variant.word_only else _EXAMPLE_JSON)
    blocks.append(_QUERY)
    return "\n\n".join(blocks)


def load_template(path: str | Path) -> str:
    text = Path(path).read_text(encoding="utf-8")
    for placeholder in ("{generated_summary}", "{question}"):
        if placeholder not in text:
            raise QAError(f"template {path} lacks the {placeholder} placeholder")
    return text


def build_qa_prompt(template: str, generated_summary: str, question: str) -> str:
    # Plain replacement: templates may contain literal JSON braces.
    return template.replace("{generated_summary}", generated_summary).replace("{question}", question)


_JSON_RE = re.compile(r"\{.*\}", re.DOTALL)


def parse_answer(raw: str, word_only: bool = True) -> str:
    text = raw.strip()
    if not word_only:
        m = _JSON_RE.search(text)
        if m:
            try:
                answers = json.loads(m.group()).get("answers")
                if answers:
                    return str(answers[0]).strip()
            except (json.JSONDecodeError, AttributeError):
                pass
    if text.lower().startswith("answer:"):
        text = text[len("answer:"):].strip()
    text = text.splitlines()[0].strip() if text else ""
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "'\"`":
        text = text[1:-1].strip()
    return text


def answer_question(provider: LLMProvider, generated_summary: str, item: QAItem,
                    variant: QAVariant = QAVariant(), template: str | None = None) -> str:
    prompt = build_qa_prompt(template or qa_template(variant), generated_summary, item.question)
    return parse_answer(provider.complete(prompt).text, variant.word_only)


# --- scoring ---------------------------------------------------------------


def item_similarity(item: QAItem, embedder: Embedder, whole_sentence: bool = False) -> float:
    predicted = NA_TEXT if is_na(item.predicted_answer) else item.predicted_answer
    if whole_sentence:
        return embedder.similarity(item.fill(predicted), item.reconstruct())
    return embedder.similarity(item.gold_answer, predicted)


def score_qa(items: Iterable[QAItem], embedder: Embedder, na_policy: NaPolicy = NaPolicy.TREAT_AS_TEXT,
             whole_sentence: bool = False) -> float:
    """Mean per-item similarity, with n.a. answers handled per ``na_policy``."""
    na_policy = NaPolicy(na_policy)
    sims = []
    for item in items:
        if item.is_na and na_policy is not NaPolicy.TREAT_AS_TEXT:
            if na_policy is NaPolicy.SCORE_ZERO:
                sims.append(0.0)
            elif na_policy is NaPolicy.SCORE_HALF:
                sims.append(0.5)
            continue
        sims.append(item.similarity if item.similarity is not None
                    else item_similarity(item, embedder, whole_sentence))
    if not sims:
        raise QAError("no scorable items")
    return math.fsum(sims) / len(sims)


def qa_record(provider: LLMProvider, embedder: Embedder, record: SummaryRecord, variant: QAVariant = QAVariant(),
              chunker: Chunker = DEFAULT_CHUNKER, template: str | None = None) -> tuple[float, list[QAItem]]:
    if not record.reference_summary:
        raise QAError(f"reference required: record {record.record_id} has no reference summary")
    spans = extract_answer_spans(record.reference_summary, chunker, variant.include_verbs)
    items = generate_questions(record.reference_summary, spans)
    if not items:
        raise QAError("no answer spans in reference; metric undefined")
    answered = []
    for item in items:
        pred = answer_question(provider, record.generated_summary, item, variant, template)
        item = replace(item, predicted_answer=pred)
        if not (item.is_na and variant.na_policy is not NaPolicy.TREAT_AS_TEXT):
            item = replace(item, similarity=item_similarity(item, embedder, variant.whole_sentence))
        answered.append(item)
    return score_qa(answered, embedder, variant.na_policy, variant.whole_sentence), answered


def qa_metric(provider: LLMProvider, embedder: Embedder, dataset: Dataset | Iterable[SummaryRecord],
              variant: QAVariant = QAVariant(), *, chunker: Chunker = DEFAULT_CHUNKER, template: str | None = None,
              metric_id: str = "qa", parallelism: int | None = None) -> MetricScoreSet:
    records = list(dataset)
    dataset_id = dataset.dataset_id if isinstance(dataset, Dataset) else (records[0].dataset_id if records else "")
    before = provider.ledger.total_usd, provider.ledger.queries

    def run(record: SummaryRecord) -> tuple[str, float | None, str | None]:
        try:
            score, _ = qa_record(provider, embedder, record, variant, chunker, template)
        except (AuthenticationError, ConfigError):
            raise
        except (QAError, ProviderError, ValueError) as exc:
            return record.record_id, None, str(exc)
        return record.record_id, score, None

    workers = parallelism or provider.config.parallelism
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(run, records))
    else:
        results = [run(r) for r in records]
    out = MetricScoreSet(
        metric_id, dataset_id,
        {rid: s for rid, s, _ in sorted(results, key=lambda t: t[0]) if s is not None},
        {rid: e for rid, s, e in sorted(results, key=lambda t: t[0]) if s is None and e is not None},
    )
    out.cost.queries = provider.ledger.queries - before[1]
    out.cost.total_usd = provider.ledger.total_usd - before[0]
    out.provenance = {"metric": "qa", "variant": variant.to_dict(), "model_name": provider.model_name,
                      "embedding_model": embedder.model_name, "chunker": type(chunker).__name__}
    return out
