"""Regenerate the bundled offline fixtures under ``fixtures/``.

The fixture dataset is small and hand-written. Judge and QA responses come
from deterministic stand-in models (token-overlap heuristics), recorded
through the same capture path a live run would use, and embeddings are
hashed bag-of-words vectors. Nothing here touches the network.

    python3 scripts/make_fixtures.py            # dataset, responses, vectors, config
    python3 scripts/make_fixtures.py --golden   # also rebuild golden reports
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import re
import shutil
import subprocess
import sys
from pathlib import Path
from typing import Any

import numpy as np

from codesumeval.ask_llm import FINAL_SPEC, ask_llm_metric
from codesumeval.dataset import ingest_dataset
from codesumeval.embedding import Embedder, EmbeddingCache, embedding_metric
from codesumeval.ngram import tokenize
from codesumeval.providers import (
    EmbeddingProvider,
    FixtureStore,
    LLMProvider,
    ProviderConfig,
    RecordingLLM,
    write_vectors,
)
from codesumeval.qa import QA_VARIANTS, qa_metric

ROOT = Path(__file__).resolve().parent.parent / "fixtures"
EMBED_DIM = 32

# (code, reference, [system-a, system-b, system-c])
FUNCTIONS = [
    ("public String getLabel(Element e) { return labels.get(e.getId()); }",
     "returns the label text for the given element",
     ["returns the label for the given element", "gets the element label", "sets the label of the element"]),
    ("public void clearCache() { cache.clear(); hits = 0; }",
     "clears the cache and resets the hit counter",
     ["clears the cache and resets the hit count", "clears the cache", "adds a new entry to the cache"]),
    ("public boolean isEmpty() { return size == 0; }",
     "checks whether the list is empty",
     ["returns true if the list is empty", "checks if the list has no elements", "returns the size of the list"]),
    ("public int max(int[] xs) { int m = xs[0]; for (int x : xs) m = Math.max(m, x); return m; }",
     "returns the largest value in the array",
     ["returns the maximum value in the array", "finds the max of the values", "sorts the array"]),
    ("public void close() throws IOException { if (stream != null) stream.close(); }",
     "closes the underlying stream if it is open",
     ["closes the stream if it is open", "closes the underlying stream", "opens a new stream"]),
    ("public User findUser(String name) { return users.stream().filter(u -> u.name.equals(name)).findFirst().orElse(null); }",
     "finds the user with the given name",
     ["finds the user with the given name or returns null", "returns a user", "deletes the user with the name"]),
    ("public String toJson(Map<String, Object> m) { return mapper.writeValueAsString(m); }",
     "serializes the map to a json string",
     ["converts the map to a json string", "writes the map", "parses the json string into a map"]),
    ("public void addListener(Listener l) { listeners.add(l); }",
     "registers a listener for change events",
     ["adds a listener for change events", "adds the listener", "removes all listeners"]),
]

# Per record: accuracy, adequacy, conciseness, similarity for three raters (raw, source scale).
# Adequacy/conciseness are negatively phrased in the source survey, so low raw = good.
RATINGS = {
    "a": ([4, 4, 3], [1, 1, 2], [1, 2, 1], [4, 3, 4]),
    "b": ([3, 3, 3], [2, 2, 3], [1, 1, 1], [3, 3, 2]),
    "c": ([1, 2, 1], [3, 4, 3], [2, 2, 3], [1, 1, 2]),
}
# Small per-function perturbations so ties are not total.
JITTER = [0, 1, -1, 0, 1, 0, -1, 0]
REFERENCE_ACCURACY = [[4, 4], [4, 3], [3, 3], [4, 4], [2, 3], [4, 4], [3, 2], [2, 2]]


def _clip(v: int) -> int:
    return max(1, min(4, v))


def write_source(path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    cols = ["id", "system", "code", "reference", "generated", "accuracy", "adequacy", "conciseness",
            "similarity", "ref_accuracy"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for i, (code, ref, outputs) in enumerate(FUNCTIONS):
            for sys_id, gen in zip("abc", outputs):
                acc, ade, con, sim = RATINGS[sys_id]
                j = JITTER[i]
                row = [
                    f"fx-{i + 1}-{sys_id}", f"sys-{sys_id}", code, ref, gen,
                    json.dumps([_clip(v + j) for v in acc]),
                    json.dumps([_clip(v - j) for v in ade]),
                    json.dumps(con),
                    json.dumps([_clip(v + j) for v in sim]),
                    json.dumps(REFERENCE_ACCURACY[i]),
                ]
                w.writerow(row)


# --- stand-in models -------------------------------------------------------


def _overlap_f1(a: str, b: str) -> float:
    ta, tb = set(tokenize(a)), set(tokenize(b))
    if not ta or not tb:
        return 0.0
    common = len(ta & tb)
    if not common:
        return 0.0
    p, r = common / len(ta), common / len(tb)
    return 2 * p * r / (p + r)


class StandInJudge(LLMProvider):
    """Rates accuracy by token overlap between generated and reference summary."""

    def _request(self, prompt: str) -> tuple[str, dict[str, Any]]:
        if "Code Summary:" in prompt:
            return self._answer(prompt), {}
        gen = re.search(r"^Generated summary: (.*)$", prompt, re.M).group(1)
        ref = re.search(r"^Reference summary: (.*)$", prompt, re.M).group(1)
        if gen == "removes all listeners":  # one deliberately unusable reply
            return "The summary describes a different operation, so I cannot say.", {}
        f1 = _overlap_f1(gen, ref)
        label = ("Strongly agree" if f1 >= 0.75 else "Somewhat agree" if f1 >= 0.45
                 else "Somewhat disagree" if f1 >= 0.2 else "Strongly disagree")
        steps = (
            "1. Read the function and identify what it does.\n"
            "2. Compare the generated summary with the function and the reference summary.\n"
            f"3. The generated summary shares about {round(100 * f1)}% of its content words with the reference.\n"
        )
        return f"{steps}Evaluation: {label}", {}

    @staticmethod
    def _answer(prompt: str) -> str:
        summary = prompt.rsplit("Code Summary: ", 1)[1].split("\n", 1)[0]
        question = prompt.rsplit("Question: ", 1)[1].split("\n", 1)[0]
        qwords = set(tokenize(question))
        candidates = [w for w in summary.split() if w.lower() not in qwords]
        return " ".join(candidates[:3]) if candidates else "n.a."


class HashEmbedder(EmbeddingProvider):
    """Hashed bag-of-words vectors plus a small text-specific component."""

    seen: dict[str, list[float]]

    def __init__(self, config: ProviderConfig) -> None:
        super().__init__(config)
        self.seen = {}

    def _vec(self, key: str) -> np.ndarray:
        seed = int.from_bytes(hashlib.sha256(f"{self.model_name}\0{key}".encode()).digest()[:8], "big")
        return np.random.default_rng(seed).standard_normal(EMBED_DIM)

    def _request(self, texts: list[str]) -> list[list[float]]:
        out = []
        for text in texts:
            v = 0.15 * self._vec("text:" + text)
            for tok in tokenize(text):
                v = v + self._vec("tok:" + tok)
            vec = [round(float(x), 6) for x in v]
            self.seen[text] = vec
            out.append(vec)
        return out


# --- generation ------------------------------------------------------------


def build(root: Path) -> None:
    replay = root / "replay"
    if replay.exists():
        shutil.rmtree(replay)
    write_source(root / "source" / "haque_fixture.csv")
    dataset = ingest_dataset(root / "source" / "haque_fixture.csv", "haque2022", strict=True)
    dataset.write(root / "dataset.jsonl")

    store = FixtureStore(replay)
    judge = RecordingLLM(StandInJudge(ProviderConfig("llm", "anthropic", "claude-3-opus-20240229")), store)
    ask_llm_metric(judge, FINAL_SPEC, dataset, metric_id="ask-claude")
    qa_llm = RecordingLLM(StandInJudge(ProviderConfig("llm", "openai", "gpt-4o-2024-05-13")), store)

    vectors: dict[str, dict[str, list[float]]] = {}
    for model in ("voyage-code-3", "gte-base-en-v1.5"):
        emb = HashEmbedder(ProviderConfig("embedding", "voyage", model))
        embedder = Embedder(emb, EmbeddingCache())
        embedding_metric(embedder, dataset.records)
        if model == "gte-base-en-v1.5":
            for name in ("final", "na-counts-as-0", "na-not-counted"):
                qa_metric(qa_llm, embedder, dataset, QA_VARIANTS[name])
        vectors[model] = emb.seen
    path = replay / "embeddings.jsonl"
    for model, items in vectors.items():
        write_vectors(path, model, dict(sorted(items.items())))

    with open(root / "side.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["record_id", "score"])
        for r in dataset.records:
            h = int(hashlib.sha256(r.record_id.encode()).hexdigest()[:8], 16) / 0xFFFFFFFF
            w.writerow([r.record_id, f"{0.5 * h + 0.5 * _overlap_f1(r.generated_summary, r.reference_summary):.4f}"])


def golden(root: Path) -> None:
    work = root / "golden"
    cfg = root / "run.yaml"
    out = root / "out"
    if out.exists():
        shutil.rmtree(out)
    for cmd in ("score", "correlate", "compare", "ci", "analyze", "cost"):
        subprocess.run([sys.executable, "-m", "codesumeval.cli", cmd, "--config", str(cfg), "--offline"],
                       check=True, stdout=subprocess.DEVNULL)
    if work.exists():
        shutil.rmtree(work)
    shutil.copytree(out / "reports", work)
    shutil.copytree(out / "scores", work / "scores")
    shutil.rmtree(out)


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--golden", action="store_true", help="Also rebuild golden reports from the fixtures.")
    args = ap.parse_args()
    build(ROOT)
    if args.golden:
        golden(ROOT)
