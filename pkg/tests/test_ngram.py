from __future__ import annotations

import math
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from codesumeval.ngram import (
    SynonymTable,
    bleu_a,
    count_chunks,
    lcs_length,
    meteor,
    meteor_alignment,
    rouge_l,
    score_text,
    tokenize,
)

from oracles import bleu_average, lcs_exhaustive, rouge_l_f1

T = str.split

# (generated, reference, expected) with the per-n precisions worked out by hand.
BLEU_CASES = [
    # P1..P3 = 1, no 4-grams in a 3-token hypothesis, BP = e^(1 - 4/3)
    ("the cat sat", "the cat sat down", 3 * math.exp(-1 / 3) / 4),
    # BP = 1; P1 = 5/6, P2 = 3/5 (the cat, on the, the mat), P3 = 1/4 (on the mat), P4 = 0
    ("the cat sat on the mat", "the cat is on the mat", (5 / 6 + 3 / 5 + 1 / 4) / 4),
    # hypothesis longer than reference, BP = 1; "the" clipped to 1 of 4; no higher-order matches
    ("the the the the", "the cat", (1 / 4) / 4),
    # every n-gram matches, BP = e^(1 - 7/5)
    ("a b c d e", "a b c d e f g", math.exp(-0.4)),
    ("x y", "a b c", 0.0),
    # BP = e^(1 - 6/3); P1..P3 = 1; P4 = 0
    ("returns the label", "returns the label for the element", 3 * math.exp(-1) / 4),
    # BP = 1; P1 = 2/4 (a, b clipped to one each), P2 = 1/3 (one "a b" of three bigrams), P3 = P4 = 0
    ("a b a b", "a b", (2 / 4 + 1 / 3) / 4),
]

# METEOR with alpha=0.9, beta=3, gamma=0.5: F = PR/(0.9P + 0.1R), penalty = 0.5 (chunks/m)^3.
METEOR_CASES = [
    # m=3, P=1, R=3/4, one chunk
    ("the cat sat", "the cat sat down", (0.75 / 0.975) * (1 - 0.5 / 27)),
    # m=5 (sat/is unmatched), P=R=5/6, two chunks [the cat][on the mat]
    ("the cat sat on the mat", "the cat is on the mat", (5 / 6) * (1 - 0.5 * (2 / 5) ** 3)),
    # 'the' exact, returns/return and labels/label via the stemmer; one chunk
    ("returns the labels", "return the label", 1 - 0.5 / 27),
    ("x y", "a b c", 0.0),
    # both tokens matched but crossed: two chunks of one
    ("b a", "a b", 1 - 0.5),
    # second 'the' and 'cat' align to the reference; P=2/3, R=1, one chunk
    ("the the cat", "the cat", ((2 / 3) / (0.9 * 2 / 3 + 0.1)) * (1 - 0.5 / 8)),
]

ROUGE_CASES = [
    ("a c d", "a b c d", 6 / 7),
    ("the cat sat on the mat", "the cat is on the mat", 5 / 6),
    ("b a", "a b", 0.5),
    ("x y", "a b c", 0.0),
    ("a b c d e", "e d c b a", 0.2),
    ("a a b", "a b b", 2 / 3),
]


def test_tokenize_rules():
    assert tokenize("Returns the label-text.") == ["returns", "the", "label", "text"]
    assert tokenize("") == []
    assert tokenize("a  b") == ["a", "b"]
    assert tokenize("get_value()") == ["get", "value"]


@pytest.mark.parametrize("gen,ref,expected", BLEU_CASES)
def test_bleu_a_hand_values(gen, ref, expected):
    assert bleu_a(T(gen), T(ref)) == pytest.approx(expected, abs=1e-6)
    assert bleu_average(T(gen), T(ref)) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("gen,ref,expected", METEOR_CASES)
def test_meteor_hand_values(gen, ref, expected):
    assert meteor(T(gen), T(ref)) == pytest.approx(expected, abs=1e-9)


@pytest.mark.parametrize("gen,ref,expected", ROUGE_CASES)
def test_rouge_l_hand_values(gen, ref, expected):
    assert rouge_l(T(gen), T(ref)) == pytest.approx(expected, abs=1e-9)


def test_meteor_synonym_stage_only_with_table():
    table = SynonymTable([["gets", "returns", "fetches"]])
    # without the table: m=2, P=R=2/3, one chunk -> (2/3)(1 - 0.5/8)
    assert meteor(T("gets the value"), T("returns the value")) == pytest.approx(0.625, abs=1e-12)
    assert meteor(T("gets the value"), T("returns the value"), table) == pytest.approx(1 - 0.5 / 27, abs=1e-12)


def test_synonym_table_file(tmp_path):
    path = tmp_path / "syn.txt"
    path.write_text("# groups\ngets returns\nlist array\n", encoding="utf-8")
    table = SynonymTable.load(path)
    assert len(table) == 2
    assert table.synonymous("list", "array") and not table.synonymous("gets", "array")


def test_meteor_agrees_with_nltk():
    nltk_meteor = pytest.importorskip("nltk.translate.meteor_score").meteor_score

    class NoWordNet:
        def synsets(self, *args, **kwargs):
            return []

    for gen, ref, _ in METEOR_CASES:
        ours = meteor(T(gen), T(ref))
        theirs = nltk_meteor([T(ref)], T(gen), wordnet=NoWordNet())
        assert ours == pytest.approx(theirs, abs=1e-9)


def test_alignment_and_chunks():
    al = meteor_alignment(T("the cat sat on the mat"), T("the cat is on the mat"))
    assert al == [(0, 0), (1, 1), (3, 3), (4, 4), (5, 5)]
    assert count_chunks(al) == 2
    assert count_chunks([]) == 0


@pytest.mark.parametrize("fn", [bleu_a, meteor, rouge_l])
def test_empty_reference_is_an_error(fn):
    with pytest.raises(ValueError, match="reference"):
        fn(["a"], [])


@pytest.mark.parametrize("fn", [bleu_a, meteor, rouge_l])
def test_empty_generation_scores_zero(fn):
    assert fn([], ["a", "b"]) == 0.0


def test_score_text_dispatch():
    assert score_text("rouge-l", "A C d", "a b c d") == pytest.approx(6 / 7)
    with pytest.raises(ValueError, match="unknown n-gram metric"):
        score_text("cider", "a", "a")


def test_rouge_matches_exhaustive_lcs_random_pairs():
    rng = random.Random(7)
    for _ in range(1000):
        a = [rng.choice("abcde") for _ in range(rng.randint(1, 8))]
        b = [rng.choice("abcde") for _ in range(rng.randint(1, 8))]
        assert lcs_length(a, b) == lcs_exhaustive(a, b)
        assert rouge_l(a, b) == pytest.approx(rouge_l_f1(a, b), abs=1e-12)


words = st.lists(st.sampled_from(list("abcdefg")), min_size=1, max_size=12)


@given(words, words)
def test_scores_lie_in_unit_interval(gen, ref):
    for fn in (bleu_a, meteor, rouge_l):
        assert 0.0 <= fn(gen, ref) <= 1.0


@given(st.lists(st.sampled_from(list("abcdefghij")), min_size=4, max_size=12))
def test_identity_scores_one(x):
    # Length >= 4 so the 4-gram term exists; METEOR keeps its 0.5/m^3 penalty.
    assert bleu_a(x, x) == pytest.approx(1.0)
    assert rouge_l(x, x) == 1.0
    assert meteor(x, x) >= 0.99


@given(words, words, st.data())
def test_bleu_non_increasing_when_a_match_is_broken(gen, ref, data):
    matching = [i for i, tok in enumerate(gen) if tok in ref]
    if not matching:
        return
    i = data.draw(st.sampled_from(matching))
    broken = list(gen)
    broken[i] = "zzz"
    assert bleu_a(broken, ref) <= bleu_a(gen, ref) + 1e-12
