"""BLEU-A, METEOR and ROUGE-L over a shared tokenization.

All three operate on lowercase token lists produced by :func:`tokenize`.
Conventions:

* BLEU-A is the plain mean of BLEU-1..BLEU-4, each being the clipped n-gram
  precision times the brevity penalty. No smoothing; an order longer than the
  candidate scores 0.
* METEOR uses alpha=0.9, beta=3, gamma=0.5 and matches in three stages
  (exact, Porter stem, synonym table). Within each stage the alignment is
  greedy from the end of the candidate, which is what the common NLTK
  implementation does.
* ROUGE-L is the LCS F1.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from nltk.stem.porter import PorterStemmer

_TOKEN_RE = re.compile(r"[^\W_]+")

METEOR_ALPHA = 0.9
METEOR_BETA = 3.0
METEOR_GAMMA = 0.5


def tokenize(text: str) -> list[str]:
    """Lowercase and split on whitespace, punctuation and underscores."""
    return _TOKEN_RE.findall(text.lower())


def _check_reference(ref: Sequence[str]) -> None:
    if len(ref) == 0:
        raise ValueError("reference must not be empty")


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def brevity_penalty(gen_len: int, ref_len: int) -> float:
    if gen_len == 0:
        return 0.0
    if gen_len > ref_len:
        return 1.0
    return math.exp(1.0 - ref_len / gen_len)


def modified_precision(gen: Sequence[str], ref: Sequence[str], n: int) -> float:
    if len(gen) < n:
        return 0.0
    gen_counts = _ngrams(gen, n)
    ref_counts = _ngrams(ref, n)
    clipped = sum(min(c, ref_counts[g]) for g, c in gen_counts.items())
    return clipped / (len(gen) - n + 1)


def bleu_n(gen: Sequence[str], ref: Sequence[str], n: int) -> float:
    _check_reference(ref)
    return modified_precision(gen, ref, n) * brevity_penalty(len(gen), len(ref))


def bleu_a(gen: Sequence[str], ref: Sequence[str], max_order: int = 4) -> float:
    _check_reference(ref)
    if not gen:
        return 0.0
    bp = brevity_penalty(len(gen), len(ref))
    return math.fsum(modified_precision(gen, ref, n) * bp for n in range(1, max_order + 1)) / max_order


# --- METEOR ----------------------------------------------------------------

_stemmer = PorterStemmer()


@lru_cache(maxsize=65536)
def stem(word: str) -> str:
    return _stemmer.stem(word)


class SynonymTable:
    """Groups of interchangeable tokens, one group per line of a text file."""

    def __init__(self, groups: Iterable[Iterable[str]] = ()) -> None:
        self._group_of: dict[str, set[int]] = {}
        for gid, group in enumerate(groups):
            for word in group:
                self._group_of.setdefault(word.lower(), set()).add(gid)

    @classmethod
    def load(cls, path: str | Path) -> "SynonymTable":
        with open(path, encoding="utf-8") as fh:
            groups = [line.split() for line in fh if line.strip() and not line.lstrip().startswith("#")]
        return cls(groups)

    def synonymous(self, a: str, b: str) -> bool:
        return bool(self._group_of.get(a, set()) & self._group_of.get(b, set()))

    def __len__(self) -> int:
        return len({g for gs in self._group_of.values() for g in gs})


def _match_stage(gen_left: list[tuple[int, str]], ref_left: list[tuple[int, str]],
                 same) -> list[tuple[int, int]]:
    matches = []
    for i in range(len(gen_left) - 1, -1, -1):
        for j in range(len(ref_left) - 1, -1, -1):
            if same(gen_left[i][1], ref_left[j][1]):
                matches.append((gen_left[i][0], ref_left[j][0]))
                gen_left.pop(i)
                ref_left.pop(j)
                break
    return matches


def meteor_alignment(gen: Sequence[str], ref: Sequence[str],
                     synonyms: SynonymTable | None = None) -> list[tuple[int, int]]:
    """(gen index, ref index) pairs, sorted by generated position."""
    gen_left = list(enumerate(gen))
    ref_left = list(enumerate(ref))
    matches = _match_stage(gen_left, ref_left, lambda a, b: a == b)
    matches += _match_stage(gen_left, ref_left, lambda a, b: stem(a) == stem(b))
    if synonyms is not None:
        matches += _match_stage(gen_left, ref_left, synonyms.synonymous)
    return sorted(matches)


def count_chunks(alignment: Sequence[tuple[int, int]]) -> int:
    if not alignment:
        return 0
    chunks = 1
    for (g0, r0), (g1, r1) in zip(alignment, alignment[1:]):
        if not (g1 == g0 + 1 and r1 == r0 + 1):
            chunks += 1
    return chunks


def meteor(gen: Sequence[str], ref: Sequence[str], synonyms: SynonymTable | None = None, *,
           alpha: float = METEOR_ALPHA, beta: float = METEOR_BETA, gamma: float = METEOR_GAMMA) -> float:
    _check_reference(ref)
    if not gen:
        return 0.0
    alignment = meteor_alignment(gen, ref, synonyms)
    m = len(alignment)
    if m == 0:
        return 0.0
    precision = m / len(gen)
    recall = m / len(ref)
    fmean = precision * recall / (alpha * precision + (1 - alpha) * recall)
    penalty = gamma * (count_chunks(alignment) / m) ** beta
    return fmean * (1 - penalty)


# --- ROUGE-L ---------------------------------------------------------------


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(gen: Sequence[str], ref: Sequence[str]) -> float:
    _check_reference(ref)
    if not gen:
        return 0.0
    lcs = lcs_length(gen, ref)
    if lcs == 0:
        return 0.0
    p = lcs / len(gen)
    r = lcs / len(ref)
    return 2 * p * r / (p + r)


NGRAM_METRICS = {
    "bleu-a": bleu_a,
    "meteor": meteor,
    "rouge-l": rouge_l,
}


def score_text(metric_id: str, generated: str, reference: str,
               synonyms: SynonymTable | None = None) -> float:
    gen, ref = tokenize(generated), tokenize(reference)
    if metric_id == "meteor":
        return meteor(gen, ref, synonyms)
    try:
        fn = NGRAM_METRICS[metric_id]
    except KeyError:
        raise ValueError(f"unknown n-gram metric {metric_id!r}") from None
    return fn(gen, ref)


def corpus_scores(metric_id: str, pairs: Mapping[str, tuple[str, str]],
                  synonyms: SynonymTable | None = None) -> dict[str, float]:
    """Score every ``record_id -> (generated, reference)`` pair."""
    return {rid: score_text(metric_id, g, r, synonyms) for rid, (g, r) in pairs.items()}
