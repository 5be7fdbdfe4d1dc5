from __future__ import annotations

from decimal import Decimal

import pytest
from hypothesis import given
from hypothesis import strategies as st

from codesumeval.ask_llm import (
    AGREE_LABELS,
    FINAL_SPEC,
    PRESETS,
    PromptError,
    PromptSpec,
    RunStore,
    UnparseableVerdict,
    ask_llm_metric,
    assemble_prompt,
    judge_record,
    parse_verdict,
    self_evaluation,
    verdict_to_score,
)
from codesumeval.dataset import SummaryRecord
from codesumeval.providers import FixtureStore, LLMProvider, ProviderConfig, ReplayLLM

CODE = "public int size() { return n; }"
REF = "returns the number of elements"
GEN = "gets the size"

FINAL_TEXT = (
    "You are a professional software engineer. Evaluate the statement by responding 'Strongly agree', "
    "'Somewhat agree', 'Somewhat disagree' or 'Strongly disagree'. Independent of other factors, I feel the "
    "new summary is accurate.\n"
    "\n"
    "Reference summary: {ref}\n"
    "Function:{code}\n"
    "Generated summary: {gen}\n"
    "What are the steps you would take to evaluate this statement? Show your steps and then provide an "
    "evaluation (Strongly agree, Somewhat agree, Somewhat disagree or Strongly disagree)."
)


def rec(rid="r1", reference: str | None = REF, generated=GEN) -> SummaryRecord:
    return SummaryRecord(rid, "t", CODE, generated, reference)


class Scripted(LLMProvider):
    def __init__(self, replies: dict[str, str], **kw):
        super().__init__(ProviderConfig("llm", "anthropic", "claude-3-opus-20240229"), **kw)
        self.replies = replies

    def _request(self, prompt):
        for needle, reply in self.replies.items():
            if needle in prompt:
                return reply, {}
        return "Evaluation: Strongly agree", {}


# --- prompt assembly -------------------------------------------------------


def test_final_prompt_text_exact():
    assert assemble_prompt(FINAL_SPEC, rec()) == FINAL_TEXT.format(ref=REF, code=CODE, gen=GEN)


def test_no_reference_variant_only_drops_the_reference_line():
    with_ref = assemble_prompt(FINAL_SPEC, rec()).split("\n")
    without = assemble_prompt(FINAL_SPEC.without_reference(), rec()).split("\n")
    assert [line for line in with_ref if not line.startswith("Reference summary:")] == without


def test_prompt_needs_reference_when_configured():
    with pytest.raises(PromptError, match="no reference"):
        assemble_prompt(FINAL_SPEC, rec(reference=None))
    assert "Reference" not in assemble_prompt(FINAL_SPEC.without_reference(), rec(reference=None))


def test_numeric_prompt_layout():
    text = assemble_prompt(PRESETS["consistency-1-5"], rec())
    assert text.startswith("Rate how consistent the following summary is")
    assert text.endswith(f"Generated summary: {GEN}\nRating (1 to 5):")


def test_spec_must_see_something():
    with pytest.raises(PromptError, match="at least one"):
        PromptSpec(include_reference=False, include_code=False)
    with pytest.raises(PromptError, match="role"):
        PromptSpec(role="poet")


def test_prompt_is_deterministic():
    assert assemble_prompt(FINAL_SPEC, rec()).encode() == assemble_prompt(FINAL_SPEC, rec()).encode()


# --- parsing ---------------------------------------------------------------


def test_parse_direct_label():
    v = parse_verdict("1. read\n2. compare\nEvaluation: Strongly agree", "agree-disagree-cot")
    assert v.label == "Strongly agree" and verdict_to_score(v) == 4


def test_last_label_wins():
    v = parse_verdict("I would Somewhat disagree at first, but overall: Strongly agree", "agree-disagree")
    assert v.label == "Strongly agree"


def test_label_parsing_is_case_and_space_insensitive():
    assert parse_verdict("SOMEWHAT   AGREE.", "agree-disagree").label == "Somewhat agree"


def test_unparseable():
    with pytest.raises(UnparseableVerdict, match="unparseable verdict"):
        parse_verdict("The summary is nice.", "agree-disagree")
    with pytest.raises(UnparseableVerdict):
        parse_verdict("Rating: 7", "scale-1-5")


def test_numeric_last_in_range_wins():
    assert verdict_to_score(parse_verdict("Rating (0 to 100): 85", "scale-0-100")) == 85
    assert verdict_to_score(parse_verdict("maybe 2, then 4; 9 is too high", "scale-1-5")) == 4
    assert verdict_to_score(parse_verdict("I give it 4/5", "scale-1-5")) == 4


def test_score_mapping():
    assert [verdict_to_score(parse_verdict(lbl, "agree-disagree")) for lbl in AGREE_LABELS] == [4, 3, 2, 1]
    neutral = [verdict_to_score(parse_verdict(lbl, "agree-neutral-disagree-cot"))
               for lbl in ("Strongly agree", "Somewhat agree", "Neutral", "Somewhat disagree", "Strongly disagree")]
    assert neutral == [5, 4, 3, 2, 1]


filler = st.text(alphabet="abcxyz .,:\n", max_size=40)


@given(filler, st.sampled_from(AGREE_LABELS), filler)
def test_single_label_found_anywhere(before, label, after):
    assert parse_verdict(f"{before} {label} {after}", "agree-disagree").label == label


# --- metric runs -----------------------------------------------------------


def test_three_records_from_replay(tmp_path):
    store = FixtureStore(tmp_path)
    replies = ["Evaluation: Strongly agree", "Evaluation: Somewhat disagree", "Evaluation: Strongly disagree"]
    records = [rec(f"r{i}", generated=f"summary {i}") for i in range(3)]
    for r, reply in zip(records, replies):
        store.record(assemble_prompt(FINAL_SPEC, r), reply)
    llm = ReplayLLM(ProviderConfig("llm", "replay", "claude-3-opus-20240229", fixtures_dir=str(tmp_path)))
    out = ask_llm_metric(llm, FINAL_SPEC, records)
    assert out.scores == {"r0": 4, "r1": 2, "r2": 1}
    assert out.cost.total_usd == Decimal("0.072")


def test_unparseable_record_is_excluded_and_counted(tmp_path):
    llm = Scripted({"summary 1": "No idea."})
    runs = RunStore(tmp_path / "runs.jsonl")
    out = ask_llm_metric(llm, FINAL_SPEC, [rec(f"r{i}", generated=f"summary {i}") for i in range(3)], store=runs)
    assert sorted(out.scores) == ["r0", "r2"]
    assert list(out.failures) == ["r1"] and out.failures["r1"].startswith("unparseable")
    assert out.provenance["unparseable"] == 1 and out.provenance["unparseable_flag"]
    logged = {e.record_id: e for e in runs.read()}
    assert logged["r1"].raw_response == "No idea."


def test_missing_reference_is_a_record_failure():
    entry = judge_record(Scripted({}), FINAL_SPEC, rec(reference=None), clock=lambda: "t0")
    assert entry.score is None and "no reference" in entry.error


def test_self_evaluation_counts():
    class Generous(LLMProvider):
        def _request(self, prompt):
            if prompt.startswith("Write a comment"):
                return "returns n", {}
            return "Strongly agree", {}

    report = self_evaluation(Generous(ProviderConfig("llm", "anthropic", "m")), [rec("a"), rec("b")])
    assert report.n_rated == 2
    assert report.top_rating_fraction == 1.0
