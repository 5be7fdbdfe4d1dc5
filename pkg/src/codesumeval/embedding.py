"""Embedding vectors, the content-hash cache and the cosine-similarity metric."""

from __future__ import annotations

import json
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .dataset import SummaryRecord
from .providers import EmbeddingProvider, text_hash


class EmbeddingError(ValueError):
    pass


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if not self.values:
            raise EmbeddingError("embedding vector must have positive dimension")

    @property
    def dim(self) -> int:
        return len(self.values)

    @property
    def norm(self) -> float:
        return math.sqrt(math.fsum(v * v for v in self.values))


def cosine_similarity(a: EmbeddingVector, b: EmbeddingVector) -> float:
    if a.dim != b.dim:
        raise EmbeddingError(f"dimension mismatch: {a.dim} vs {b.dim}")
    na, nb = a.norm, b.norm
    if na == 0 or nb == 0:
        raise EmbeddingError("cosine similarity undefined for a zero-norm vector")
    dot = math.fsum(x * y for x, y in zip(a.values, b.values))
    return max(-1.0, min(1.0, dot / (na * nb)))


class EmbeddingCache:
    """Append-only JSONL cache keyed by (model_name, sha256 of text).

    Floats are stored via ``repr`` round-tripping, so hits are bit-identical
    to the original provider response.
    """

    def __init__(self, path: str | Path | None = None) -> None:
        self.path = Path(path) if path else None
        self._lock = threading.Lock()
        self._entries: dict[tuple[str, str], tuple[float, ...]] = {}
        if self.path and self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        e = json.loads(line)
                        self._entries[(e["model_name"], e["sha256"])] = tuple(e["vector"])

    def get(self, model_name: str, text: str) -> tuple[float, ...] | None:
        return self._entries.get((model_name, text_hash(text)))

    def put(self, model_name: str, text: str, vector: Sequence[float]) -> None:
        key = (model_name, text_hash(text))
        with self._lock:
            if key in self._entries:
                return
            self._entries[key] = tuple(vector)
            if self.path:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps({"model_name": model_name, "sha256": key[1],
                                         "vector": list(vector)}) + "\n")

    def __len__(self) -> int:
        return len(self._entries)


class Embedder:
    """Provider plus cache plus batching; the object the metrics talk to."""

    def __init__(self, provider: EmbeddingProvider, cache: EmbeddingCache | None = None,
                 batch_size: int = 64, parallelism: int | None = None) -> None:
        self.provider = provider
        self.cache = cache if cache is not None else EmbeddingCache(provider.config.cache_path)
        self.batch_size = batch_size
        self.parallelism = parallelism or provider.config.parallelism

    @property
    def model_name(self) -> str:
        return self.provider.model_name

    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        for t in texts:
            if not isinstance(t, str) or not t:
                raise EmbeddingError("texts to embed must be non-empty strings")
        todo = list(dict.fromkeys(t for t in texts if self.cache.get(self.model_name, t) is None))
        batches = [todo[i:i + self.batch_size] for i in range(0, len(todo), self.batch_size)]

        def run(batch: list[str]) -> None:
            vectors = self.provider.embed_batch(batch)
            if len(vectors) != len(batch):
                raise EmbeddingError(f"provider returned {len(vectors)} vectors for {len(batch)} texts")
            for text, vec in zip(batch, vectors):
                self.cache.put(self.model_name, text, vec)

        if self.parallelism > 1 and len(batches) > 1:
            with ThreadPoolExecutor(self.parallelism) as pool:
                list(pool.map(run, batches))
        else:
            for batch in batches:
                run(batch)

        out = [EmbeddingVector(self.cache.get(self.model_name, t)) for t in texts]
        dims = {v.dim for v in out}
        if len(dims) > 1:
            raise EmbeddingError(f"inconsistent embedding dimensions in batch: {sorted(dims)}")
        return out

    def similarity(self, a: str, b: str) -> float:
        va, vb = self.embed([a, b])
        return cosine_similarity(va, vb)


def embed(embedder: Embedder, texts: Sequence[str]) -> list[EmbeddingVector]:
    return embedder.embed(texts)


def embedding_metric_score(embedder: Embedder, record: SummaryRecord) -> float:
    """Cosine similarity between the generated and reference summary embeddings."""
    if not record.reference_summary:
        raise EmbeddingError(f"reference required: record {record.record_id} has no reference summary")
    return embedder.similarity(record.generated_summary, record.reference_summary)


def embedding_metric(embedder: Embedder, records: Iterable[SummaryRecord]) -> tuple[dict[str, float], dict[str, str]]:
    """Scores and per-record failures for a whole dataset (embeds everything in one pass)."""
    records = list(records)
    scorable = [r for r in records if r.reference_summary]
    failures = {r.record_id: "reference required" for r in records if not r.reference_summary}
    texts = [t for r in scorable for t in (r.generated_summary, r.reference_summary)]
    if texts:
        embedder.embed(texts)
    scores = {r.record_id: embedding_metric_score(embedder, r) for r in scorable}
    return scores, failures
