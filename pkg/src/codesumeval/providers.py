"""LLM and embedding backends, the replay fixture store and the cost ledger.

Adapters
--------
LLM (``kind: llm``):

* ``anthropic`` -- Messages API (``POST {endpoint}/v1/messages``), key in ``ANTHROPIC_API_KEY``.
* ``openai`` -- Chat Completions (``POST {endpoint}/v1/chat/completions``), key in
  ``OPENAI_API_KEY``. Works with any OpenAI-compatible server, e.g. a local
  vLLM instance serving OLMo.
* ``replay`` -- returns recorded responses from a fixtures directory.

Embedding (``kind: embedding``):

* ``voyage`` -- ``POST {endpoint}/v1/embeddings``, key in ``VOYAGE_API_KEY``.
* ``openai`` -- OpenAI-compatible ``/v1/embeddings`` (also text-embeddings-inference).
* ``precomputed`` -- vectors from a line-delimited file.
* ``replay`` -- ``embeddings.jsonl`` inside the fixtures directory.

Fixtures directory layout::

    fixtures/
      llm/<sha256 of prompt utf-8>.json   {"prompt_sha256", "prompt", "response", "model_name", "cost_usd"}
      embeddings.jsonl                    {"sha256", "model_name", "vector"} per line
"""

from __future__ import annotations

import contextlib
import hashlib
import json
import logging
import os
import socket
import threading
import time
from dataclasses import dataclass, field, fields
from decimal import Decimal
from pathlib import Path
from typing import Any, Callable, Iterator, Sequence, TypeVar

import httpx

logger = logging.getLogger(__name__)

T = TypeVar("T")


class ProviderError(Exception):
    pass


class TransientProviderError(ProviderError):
    """Transport failures, rate limits and 5xx responses; retried."""


class AuthenticationError(ProviderError):
    pass


class RetriesExhausted(ProviderError):
    def __init__(self, attempts: int, last: Exception) -> None:
        super().__init__(f"gave up after {attempts} attempts: {last}")
        self.attempts = attempts
        self.last = last


class FixtureMissing(ProviderError):
    pass


class FixtureCollision(ProviderError):
    pass


class MissingVector(ProviderError):
    pass


class NetworkForbidden(ProviderError):
    pass


class ConfigError(ValueError):
    """Invalid configuration; ``errors`` lists every violated field."""

    def __init__(self, errors: Sequence[str]) -> None:
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


# Seeded from published per-query costs; override in config as prices drift.
PRICE_PER_QUERY_USD: dict[str, Decimal] = {
    "voyage-code-3": Decimal("0.000002"),
    "OLMo-2-1124-13B-Instruct": Decimal("0.011"),
    "gpt-4o-2024-05-13": Decimal("0.012"),
    "claude-3-opus-20240229": Decimal("0.024"),
}

DEFAULT_ENDPOINTS = {
    ("llm", "anthropic"): "https://api.anthropic.com",
    ("llm", "openai"): "https://api.openai.com",
    ("embedding", "voyage"): "https://api.voyageai.com",
    ("embedding", "openai"): "https://api.openai.com",
}

DEFAULT_AUTH_ENV = {
    "anthropic": "ANTHROPIC_API_KEY",
    "openai": "OPENAI_API_KEY",
    "voyage": "VOYAGE_API_KEY",
}

LLM_ADAPTERS = ("anthropic", "openai", "replay")
EMBEDDING_ADAPTERS = ("voyage", "openai", "precomputed", "replay")
OFFLINE_ADAPTERS = ("replay", "precomputed")


def prompt_hash(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


text_hash = prompt_hash


# --- config ----------------------------------------------------------------


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 4
    backoff_seconds: float = 1.0
    backoff_factor: float = 2.0
    max_backoff_seconds: float = 30.0

    def delay(self, attempt: int) -> float:
        return min(self.backoff_seconds * self.backoff_factor ** attempt, self.max_backoff_seconds)


@dataclass(frozen=True)
class ProviderConfig:
    kind: str
    adapter_id: str
    model_name: str
    endpoint: str | None = None
    auth_env: str | None = None
    parallelism: int = 1
    retry: RetryPolicy = field(default_factory=RetryPolicy)
    price_per_query: Decimal | None = None
    price_per_input_token: Decimal | None = None
    price_per_output_token: Decimal | None = None
    fixtures_dir: str | None = None
    vectors_path: str | None = None
    cache_path: str | None = None
    temperature: float = 0.0
    max_tokens: int = 1024
    timeout_seconds: float = 120.0

    def problems(self) -> list[str]:
        errs = []
        if self.kind not in ("llm", "embedding"):
            errs.append(f"kind: must be 'llm' or 'embedding', got {self.kind!r}")
        allowed = LLM_ADAPTERS if self.kind == "llm" else EMBEDDING_ADAPTERS
        if self.adapter_id not in allowed:
            errs.append(f"adapter_id: {self.adapter_id!r} not one of {', '.join(allowed)}")
        if not self.model_name:
            errs.append("model_name: required")
        if self.parallelism < 1:
            errs.append(f"parallelism: must be >= 1, got {self.parallelism}")
        if self.retry.max_attempts < 1:
            errs.append(f"retry.max_attempts: must be >= 1, got {self.retry.max_attempts}")
        for name in ("price_per_query", "price_per_input_token", "price_per_output_token"):
            value = getattr(self, name)
            if value is not None and value < 0:
                errs.append(f"{name}: must be >= 0, got {value}")
        if self.adapter_id == "replay" and not self.fixtures_dir:
            errs.append("fixtures_dir: required for the replay adapter")
        if self.adapter_id == "precomputed" and not self.vectors_path:
            errs.append("vectors_path: required for the precomputed adapter")
        return errs

    def resolved_auth_env(self) -> str | None:
        if self.adapter_id in OFFLINE_ADAPTERS:
            return None
        return self.auth_env or DEFAULT_AUTH_ENV.get(self.adapter_id)

    def resolved_endpoint(self) -> str | None:
        return self.endpoint or DEFAULT_ENDPOINTS.get((self.kind, self.adapter_id))

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, RetryPolicy):
                value = {g.name: getattr(value, g.name) for g in fields(value)}
            elif isinstance(value, Decimal):
                value = str(value)
            out[f.name] = value
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ProviderConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError([f"{k}: unknown provider field" for k in unknown])
        kwargs = dict(data)
        if isinstance(kwargs.get("retry"), dict):
            kwargs["retry"] = RetryPolicy(**kwargs["retry"])
        for name in ("price_per_query", "price_per_input_token", "price_per_output_token"):
            if kwargs.get(name) is not None:
                kwargs[name] = Decimal(str(kwargs[name]))
        return cls(**kwargs)


# --- cost ledger -----------------------------------------------------------


class CostLedger:
    """Per-run query/token/USD totals. Thread-safe, exact decimal arithmetic."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.queries = 0
        self.input_tokens = 0
        self.output_tokens = 0
        self.total_usd = Decimal(0)

    def record(self, cost_usd: Decimal, input_tokens: int = 0, output_tokens: int = 0) -> None:
        if cost_usd < 0:
            raise ValueError("cost must be non-negative")
        with self._lock:
            self.queries += 1
            self.input_tokens += input_tokens
            self.output_tokens += output_tokens
            self.total_usd += cost_usd

    def merge(self, other: "CostLedger") -> "CostLedger":
        out = CostLedger()
        out.queries = self.queries + other.queries
        out.input_tokens = self.input_tokens + other.input_tokens
        out.output_tokens = self.output_tokens + other.output_tokens
        out.total_usd = self.total_usd + other.total_usd
        return out

    @property
    def cost_per_query(self) -> Decimal:
        return self.total_usd / self.queries if self.queries else Decimal(0)

    def to_dict(self) -> dict[str, Any]:
        return {
            "queries": self.queries,
            "input_tokens": self.input_tokens,
            "output_tokens": self.output_tokens,
            "total_usd": str(self.total_usd),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "CostLedger":
        out = cls()
        out.queries = int(data.get("queries", 0))
        out.input_tokens = int(data.get("input_tokens", 0))
        out.output_tokens = int(data.get("output_tokens", 0))
        out.total_usd = Decimal(str(data.get("total_usd", "0")))
        return out


def call_with_retries(fn: Callable[[], T], policy: RetryPolicy,
                      sleep: Callable[[float], None] = time.sleep) -> tuple[T, int]:
    """Run ``fn`` retrying transient failures; returns (result, number of retries)."""
    last: Exception | None = None
    for attempt in range(policy.max_attempts):
        try:
            return fn(), attempt
        except TransientProviderError as exc:
            last = exc
            logger.info("transient provider failure (attempt %d/%d): %s", attempt + 1, policy.max_attempts, exc)
            if attempt + 1 < policy.max_attempts:
                sleep(policy.delay(attempt))
    assert last is not None
    raise RetriesExhausted(policy.max_attempts, last) from last


@contextlib.contextmanager
def forbid_network() -> Iterator[None]:
    """Make any socket connection or DNS lookup raise :class:`NetworkForbidden`."""

    def refuse(*args: Any, **kwargs: Any) -> Any:
        raise NetworkForbidden(f"network access attempted in offline mode: {args[1:] if args else ''}")

    saved = (socket.socket.connect, socket.socket.connect_ex, socket.getaddrinfo, socket.create_connection)
    socket.socket.connect = refuse  # type: ignore[method-assign]
    socket.socket.connect_ex = refuse  # type: ignore[method-assign]
    socket.getaddrinfo = refuse  # type: ignore[assignment]
    socket.create_connection = refuse  # type: ignore[assignment]
    try:
        yield
    finally:
        (socket.socket.connect, socket.socket.connect_ex,
         socket.getaddrinfo, socket.create_connection) = saved  # type: ignore[method-assign]


# --- fixtures --------------------------------------------------------------


class FixtureStore:
    """Recorded LLM responses keyed by prompt hash."""

    def __init__(self, root: str | Path) -> None:
        self.root = Path(root)
        self._lock = threading.Lock()

    def path_for(self, prompt: str) -> Path:
        return self.root / "llm" / f"{prompt_hash(prompt)}.json"

    def get(self, prompt: str) -> dict[str, Any]:
        path = self.path_for(prompt)
        if not path.exists():
            raise FixtureMissing(f"fixture missing for prompt {prompt_hash(prompt)}")
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)

    def record(self, prompt: str, response: str, *, model_name: str | None = None,
               cost_usd: Decimal | None = None) -> str:
        key = prompt_hash(prompt)
        path = self.path_for(prompt)
        with self._lock:
            if path.exists():
                with open(path, encoding="utf-8") as fh:
                    existing = json.load(fh)
                if existing["response"] != response:
                    raise FixtureCollision(f"fixture {key} already holds a different response")
                return key
            path.parent.mkdir(parents=True, exist_ok=True)
            entry = {"prompt_sha256": key, "prompt": prompt, "response": response, "model_name": model_name}
            if cost_usd is not None:
                entry["cost_usd"] = str(cost_usd)
            tmp = path.with_suffix(".tmp")
            with open(tmp, "w", encoding="utf-8") as fh:
                json.dump(entry, fh, ensure_ascii=False, indent=1, sort_keys=True)
                fh.write("\n")
            tmp.replace(path)
        return key


# --- LLM providers ---------------------------------------------------------


@dataclass(frozen=True)
class Completion:
    text: str
    model_name: str
    cost_usd: Decimal
    input_tokens: int = 0
    output_tokens: int = 0
    retries: int = 0
    latency_seconds: float = 0.0


class LLMProvider:
    """Base class: subclasses implement ``_request`` returning (text, usage)."""

    def __init__(self, config: ProviderConfig, ledger: CostLedger | None = None,
                 sleep: Callable[[float], None] = time.sleep) -> None:
        self.config = config
        self.ledger = ledger if ledger is not None else CostLedger()
        self._sleep = sleep

    @property
    def model_name(self) -> str:
        return self.config.model_name

    def _request(self, prompt: str) -> tuple[str, dict[str, Any]]:
        raise NotImplementedError

    def price(self, usage: dict[str, Any]) -> Decimal:
        cfg = self.config
        if "cost_usd" in usage:
            return Decimal(str(usage["cost_usd"]))
        if cfg.price_per_input_token is not None or cfg.price_per_output_token is not None:
            return (Decimal(usage.get("input_tokens", 0)) * (cfg.price_per_input_token or 0)
                    + Decimal(usage.get("output_tokens", 0)) * (cfg.price_per_output_token or 0))
        if cfg.price_per_query is not None:
            return cfg.price_per_query
        return PRICE_PER_QUERY_USD.get(cfg.model_name, Decimal(0))

    def complete(self, prompt: str) -> Completion:
        start = time.perf_counter()
        (text, usage), retries = call_with_retries(lambda: self._request(prompt), self.config.retry, self._sleep)
        cost = self.price(usage)
        self.ledger.record(cost, usage.get("input_tokens", 0), usage.get("output_tokens", 0))
        return Completion(
            text=text, model_name=self.model_name, cost_usd=cost,
            input_tokens=usage.get("input_tokens", 0), output_tokens=usage.get("output_tokens", 0),
            retries=retries, latency_seconds=time.perf_counter() - start,
        )


def _raise_for_status(response: httpx.Response) -> None:
    if response.status_code in (401, 403):
        raise AuthenticationError(f"authentication failed ({response.status_code}): {response.text[:200]}")
    if response.status_code == 429 or response.status_code >= 500:
        raise TransientProviderError(f"HTTP {response.status_code}: {response.text[:200]}")
    if response.status_code >= 400:
        raise ProviderError(f"HTTP {response.status_code}: {response.text[:200]}")


class _HTTPMixin:
    config: ProviderConfig

    def _init_http(self, transport: httpx.BaseTransport | None, api_key: str | None) -> None:
        env = self.config.resolved_auth_env()
        if api_key is None and env:
            api_key = os.environ.get(env)
            if not api_key:
                raise ConfigError([f"auth_env: environment variable {env} is not set"])
        self._api_key = api_key
        self._client = httpx.Client(base_url=self.config.resolved_endpoint() or "", transport=transport,
                                    timeout=self.config.timeout_seconds)

    def _post(self, path: str, payload: dict[str, Any], headers: dict[str, str]) -> dict[str, Any]:
        try:
            response = self._client.post(path, json=payload, headers=headers)
        except httpx.TransportError as exc:
            raise TransientProviderError(f"transport error: {exc}") from exc
        _raise_for_status(response)
        return response.json()


class AnthropicProvider(_HTTPMixin, LLMProvider):
    def __init__(self, config: ProviderConfig, ledger: CostLedger | None = None, *,
                 transport: httpx.BaseTransport | None = None, api_key: str | None = None,
                 sleep: Callable[[float], None] = time.sleep) -> None:
        LLMProvider.__init__(self, config, ledger, sleep)
        self._init_http(transport, api_key)

    def _request(self, prompt: str) -> tuple[str, dict[str, Any]]:
        body = self._post(
            "/v1/messages",
            {
                "model": self.config.model_name,
                "max_tokens": self.config.max_tokens,
                "temperature": self.config.temperature,
                "messages": [{"role": "user", "content": prompt}],
            },
            {"x-api-key": self._api_key or "", "anthropic-version": "2023-06-01"},
        )
        text = "".join(block.get("text", "") for block in body.get("content", []) if block.get("type") == "text")
        usage = body.get("usage", {})
        return text, {"input_tokens": usage.get("input_tokens", 0), "output_tokens": usage.get("output_tokens", 0)}


class OpenAIChatProvider(_HTTPMixin, LLMProvider):
    def __init__(self, config: ProviderConfig, ledger: CostLedger | None = None, *,
                 transport: httpx.BaseTransport | None = None, api_key: str | None = None,
                 sleep: Callable[[float], None] = time.sleep) -> None:
        LLMProvider.__init__(self, config, ledger, sleep)
        self._init_http(transport, api_key)

    def _request(self, prompt: str) -> tuple[str, dict[str, Any]]:
        headers = {"Authorization": f"Bearer {self._api_key}"} if self._api_key else {}
        body = self._post(
            "/v1/chat/completions",
            {
                "model": self.config.model_name,
                "max_tokens": self.config.max_tokens,
                "temperature": self.config.temperature,
                "messages": [{"role": "user", "content": prompt}],
            },
            headers,
        )
        text = body["choices"][0]["message"]["content"] or ""
        usage = body.get("usage") or {}
        return text, {"input_tokens": usage.get("prompt_tokens", 0),
                      "output_tokens": usage.get("completion_tokens", 0)}


class ReplayLLM(LLMProvider):
    """Offline provider answering from a :class:`FixtureStore`.

    Each replayed query costs the fixture's recorded ``cost_usd`` when
    present, otherwise the configured price.
    """

    def __init__(self, config: ProviderConfig, ledger: CostLedger | None = None,
                 store: FixtureStore | None = None) -> None:
        super().__init__(config, ledger)
        self.store = store or FixtureStore(config.fixtures_dir or ".")

    def _request(self, prompt: str) -> tuple[str, dict[str, Any]]:
        entry = self.store.get(prompt)
        usage: dict[str, Any] = {}
        if entry.get("cost_usd") is not None:
            usage["cost_usd"] = entry["cost_usd"]
        return entry["response"], usage


class RecordingLLM(LLMProvider):
    """Capture mode: forwards to ``inner`` and stores every response as a fixture."""

    def __init__(self, inner: LLMProvider, store: FixtureStore) -> None:
        super().__init__(inner.config, inner.ledger)
        self.inner = inner
        self.store = store

    def complete(self, prompt: str) -> Completion:
        completion = self.inner.complete(prompt)
        self.store.record(prompt, completion.text, model_name=completion.model_name,
                          cost_usd=completion.cost_usd)
        return completion


def record_fixture(store: FixtureStore, prompt: str, response: str, **meta: Any) -> str:
    return store.record(prompt, response, **meta)


# --- embedding providers ---------------------------------------------------


class EmbeddingProvider:
    def __init__(self, config: ProviderConfig, ledger: CostLedger | None = None,
                 sleep: Callable[[float], None] = time.sleep) -> None:
        self.config = config
        self.ledger = ledger if ledger is not None else CostLedger()
        self._sleep = sleep

    @property
    def model_name(self) -> str:
        return self.config.model_name

    def _request(self, texts: list[str]) -> list[list[float]]:
        raise NotImplementedError

    def embed_batch(self, texts: Sequence[str]) -> list[list[float]]:
        vectors, _ = call_with_retries(lambda: self._request(list(texts)), self.config.retry, self._sleep)
        price = self.config.price_per_query
        if price is None:
            price = PRICE_PER_QUERY_USD.get(self.config.model_name, Decimal(0))
        for _ in texts:
            self.ledger.record(price)
        return vectors


class VoyageEmbedder(_HTTPMixin, EmbeddingProvider):
    def __init__(self, config: ProviderConfig, ledger: CostLedger | None = None, *,
                 transport: httpx.BaseTransport | None = None, api_key: str | None = None,
                 sleep: Callable[[float], None] = time.sleep) -> None:
        EmbeddingProvider.__init__(self, config, ledger, sleep)
        self._init_http(transport, api_key)

    def _request(self, texts: list[str]) -> list[list[float]]:
        body = self._post("/v1/embeddings", {"input": texts, "model": self.config.model_name},
                          {"Authorization": f"Bearer {self._api_key}"})
        data = sorted(body["data"], key=lambda d: d["index"])
        return [d["embedding"] for d in data]


class OpenAIEmbedder(VoyageEmbedder):
    """Same wire format as Voyage; kept separate for default endpoint and key."""


class PrecomputedEmbedder(EmbeddingProvider):
    """Vectors read from a line-delimited ``{"sha256", "model_name", "vector"}`` file."""

    def __init__(self, config: ProviderConfig, ledger: CostLedger | None = None,
                 path: str | Path | None = None) -> None:
        super().__init__(config, ledger)
        self.path = Path(path or config.vectors_path or "")
        self._vectors: dict[str, list[float]] = {}
        if not self.path.exists():
            raise ConfigError([f"vectors_path: {self.path} does not exist"])
        with open(self.path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                entry = json.loads(line)
                if entry["model_name"] == config.model_name:
                    self._vectors[entry["sha256"]] = entry["vector"]

    def _request(self, texts: list[str]) -> list[list[float]]:
        out = []
        for text in texts:
            key = text_hash(text)
            if key not in self._vectors:
                raise MissingVector(f"missing vector for text {key} under model {self.model_name}")
            out.append(list(self._vectors[key]))
        return out

    def embed_batch(self, texts: Sequence[str]) -> list[list[float]]:
        # Local lookups: no retries and no per-call cost.
        return self._request(list(texts))


def write_vectors(path: str | Path, model_name: str, items: dict[str, Sequence[float]]) -> None:
    """Append ``text -> vector`` entries to a precomputed-vector file."""
    with open(path, "a", encoding="utf-8") as fh:
        for text, vector in items.items():
            fh.write(json.dumps({"sha256": text_hash(text), "model_name": model_name,
                                 "vector": [float(v) for v in vector]}) + "\n")


def build_llm(config: ProviderConfig, ledger: CostLedger | None = None, *, offline: bool = False,
              fixtures_dir: str | None = None, capture: bool = False,
              transport: httpx.BaseTransport | None = None) -> LLMProvider:
    if config.adapter_id == "replay" and fixtures_dir and not config.fixtures_dir:
        config = ProviderConfig.from_dict({**config.to_dict(), "fixtures_dir": fixtures_dir})
    errs = config.problems()
    if config.kind != "llm":
        errs.append(f"kind: expected 'llm' for a judge provider, got {config.kind!r}")
    if offline and config.adapter_id not in OFFLINE_ADAPTERS:
        errs.append(f"adapter_id: {config.adapter_id!r} needs network access but --offline is set")
    if errs:
        raise ConfigError(errs)
    if config.adapter_id == "replay":
        return ReplayLLM(config, ledger, FixtureStore(fixtures_dir or config.fixtures_dir or "."))
    cls = AnthropicProvider if config.adapter_id == "anthropic" else OpenAIChatProvider
    provider: LLMProvider = cls(config, ledger, transport=transport)
    if capture:
        if not (fixtures_dir or config.fixtures_dir):
            raise ConfigError(["fixtures_dir: required in capture mode"])
        provider = RecordingLLM(provider, FixtureStore(fixtures_dir or config.fixtures_dir or "."))
    return provider


def build_embedder(config: ProviderConfig, ledger: CostLedger | None = None, *, offline: bool = False,
                   fixtures_dir: str | None = None,
                   transport: httpx.BaseTransport | None = None) -> EmbeddingProvider:
    if config.adapter_id == "replay" and fixtures_dir and not config.fixtures_dir:
        config = ProviderConfig.from_dict({**config.to_dict(), "fixtures_dir": fixtures_dir})
    errs = config.problems()
    if config.kind != "embedding":
        errs.append(f"kind: expected 'embedding', got {config.kind!r}")
    if offline and config.adapter_id not in OFFLINE_ADAPTERS:
        errs.append(f"adapter_id: {config.adapter_id!r} needs network access but --offline is set")
    if errs:
        raise ConfigError(errs)
    if config.adapter_id == "replay":
        root = Path(fixtures_dir or config.fixtures_dir or ".")
        return PrecomputedEmbedder(config, ledger, root / "embeddings.jsonl")
    if config.adapter_id == "precomputed":
        return PrecomputedEmbedder(config, ledger)
    cls = VoyageEmbedder if config.adapter_id == "voyage" else OpenAIEmbedder
    return cls(config, ledger, transport=transport)
