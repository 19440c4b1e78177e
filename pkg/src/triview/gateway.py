"""Provider contracts for chat and embedding models, plus test doubles.

Greedy decoding is enforced on every chat request. All usage accounting flows
through TokenUsage so per-question aggregates are exact sums of per-call
numbers.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Protocol, Sequence

import numpy as np
import requests

from .errors import (
    AuthError,
    DimensionMismatchError,
    ModelError,
    ProviderError,
    UnparseableOutputError,
)

logger = logging.getLogger(__name__)

RETRYABLE_STATUS = {429, 500, 502, 503, 504}


@dataclass(frozen=True)
class ChatRequest:
    """One chat completion request. Temperature is pinned to 0 (greedy)."""

    user: str
    system: str | None = None
    max_tokens: int | None = None

    @property
    def temperature(self) -> float:
        return 0.0

    def full_prompt(self) -> str:
        if self.system:
            return f"{self.system}\n{self.user}"
        return self.user


@dataclass(frozen=True)
class TokenUsage:
    prompt_tokens: int = 0
    completion_tokens: int = 0
    wall_clock_ms: float = 0.0
    approximate: bool = False

    @property
    def total_tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens


def combine_usage(usages: Sequence[TokenUsage]) -> TokenUsage:
    return TokenUsage(
        prompt_tokens=sum(u.prompt_tokens for u in usages),
        completion_tokens=sum(u.completion_tokens for u in usages),
        wall_clock_ms=sum(u.wall_clock_ms for u in usages),
        approximate=any(u.approximate for u in usages),
    )


@dataclass(frozen=True)
class QuestionUsage:
    question_id: str
    calls: int
    prompt_tokens: int
    completion_tokens: int
    total_tokens: int
    wall_clock_ms: float
    approximate: bool


def record_usage(question_id: str, usages: Sequence[TokenUsage]) -> QuestionUsage:
    total = combine_usage(usages)
    return QuestionUsage(
        question_id=question_id,
        calls=len(usages),
        prompt_tokens=total.prompt_tokens,
        completion_tokens=total.completion_tokens,
        total_tokens=total.total_tokens,
        wall_clock_ms=total.wall_clock_ms,
        approximate=total.approximate,
    )


class ChatProvider(Protocol):
    def complete(self, request: ChatRequest) -> tuple[str, TokenUsage]: ...


class EmbeddingProvider(Protocol):
    dimension: int
    provider_id: str

    def embed(self, texts: Sequence[str]) -> np.ndarray: ...


def complete(request: ChatRequest, provider: ChatProvider) -> tuple[str, TokenUsage]:
    return provider.complete(request)


def _approx_tokens(text: str) -> int:
    return math.ceil(len(text) / 4)


class ScriptedChatProvider:
    """Deterministic chat double driven by a script.

    Each entry is a dict with:
      - "match": substring, or list of substrings that must all occur
      - "ordinal": 1-based call index (alternative or additional condition)
      - "response": canned text
      - "usage": optional [prompt_tokens, completion_tokens]
    An entry with neither "match" nor "ordinal" is the default. First matching
    entry wins. An unmatched request without a default raises ModelError with
    the offending prompt.
    """

    def __init__(self, entries: Sequence[dict[str, Any]]):
        self.entries = list(entries)
        self.calls: list[str] = []
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedChatProvider":
        return cls(json.loads(Path(path).read_text(encoding="utf-8")))

    @staticmethod
    def _entry_matches(entry: dict[str, Any], prompt: str, call_index: int) -> bool:
        match = entry.get("match")
        ordinal = entry.get("ordinal")
        if match is None and ordinal is None:
            return False
        if ordinal is not None and ordinal != call_index:
            return False
        if match is not None:
            needles = [match] if isinstance(match, str) else list(match)
            if not all(needle in prompt for needle in needles):
                return False
        return True

    def complete(self, request: ChatRequest) -> tuple[str, TokenUsage]:
        prompt = request.full_prompt()
        with self._lock:
            self.calls.append(prompt)
            call_index = len(self.calls)
        chosen = None
        for entry in self.entries:
            if self._entry_matches(entry, prompt, call_index):
                chosen = entry
                break
        if chosen is None:
            chosen = next(
                (e for e in self.entries if e.get("match") is None and e.get("ordinal") is None),
                None,
            )
        if chosen is None:
            raise ModelError(f"no scripted entry matched the request:\n{prompt[:2000]}")
        usage = chosen.get("usage")
        p_tok, c_tok = (int(usage[0]), int(usage[1])) if usage else (0, 0)
        return str(chosen["response"]), TokenUsage(p_tok, c_tok, wall_clock_ms=0.0)


class HTTPChatProvider:
    """Chat completion over HTTP POST with retry on transient failures."""

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key: str | None = None,
        timeout: float = 60.0,
        max_retries: int = 3,
        post: Callable[..., requests.Response] = requests.post,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.endpoint = endpoint
        self.model = model
        self.api_key = api_key
        self.timeout = timeout
        self.max_retries = max_retries
        self._post = post
        self._sleep = sleep

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        return headers

    def complete(self, request: ChatRequest) -> tuple[str, TokenUsage]:
        messages = []
        if request.system:
            messages.append({"role": "system", "content": request.system})
        messages.append({"role": "user", "content": request.user})
        body: dict[str, Any] = {"model": self.model, "messages": messages, "temperature": 0.0}
        if request.max_tokens is not None:
            body["max_tokens"] = request.max_tokens

        start = time.monotonic()
        response = _post_with_retry(
            self._post, self.endpoint, body, self._headers(), self.timeout, self.max_retries, self._sleep, ModelError
        )
        elapsed_ms = (time.monotonic() - start) * 1000.0

        try:
            payload = response.json()
            if "text" in payload:
                text = payload["text"]
            else:
                text = payload["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise ModelError(f"chat endpoint returned an unexpected body: {exc}") from exc

        usage = payload.get("usage") or {}
        if "prompt_tokens" in usage and "completion_tokens" in usage:
            token_usage = TokenUsage(int(usage["prompt_tokens"]), int(usage["completion_tokens"]), elapsed_ms)
        else:
            token_usage = TokenUsage(_approx_tokens(request.full_prompt()), _approx_tokens(text), elapsed_ms, approximate=True)
        return str(text), token_usage


def _post_with_retry(
    post: Callable[..., requests.Response],
    endpoint: str,
    body: dict[str, Any],
    headers: dict[str, str],
    timeout: float,
    max_retries: int,
    sleep: Callable[[float], None],
    error_cls: type[ModelError],
) -> requests.Response:
    last_error: str = ""
    for attempt in range(max_retries + 1):
        try:
            response = post(endpoint, json=body, headers=headers, timeout=timeout)
        except requests.RequestException as exc:
            last_error = f"transport error: {exc}"
        else:
            if response.status_code in (401, 403):
                raise AuthError(f"{endpoint} rejected credentials (HTTP {response.status_code})")
            if response.status_code == 200:
                return response
            last_error = f"HTTP {response.status_code}"
            if response.status_code not in RETRYABLE_STATUS:
                break
        if attempt < max_retries:
            delay = 0.5 * (2**attempt)
            logger.warning("retrying %s after %s (attempt %d)", endpoint, last_error, attempt + 1)
            sleep(delay)
    raise error_cls(f"{endpoint} failed after {max_retries + 1} attempts: {last_error}")


_FENCE_RE = re.compile(r"```(?:[a-zA-Z0-9_-]+)?\s*(.*?)```", re.DOTALL)


def _first_balanced_block(text: str) -> str | None:
    """Extract the first balanced {...} block, respecting string literals."""
    start = text.find("{")
    if start < 0:
        return None
    depth = 0
    in_string = False
    escaped = False
    for i in range(start, len(text)):
        ch = text[i]
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
            continue
        if ch == '"':
            in_string = True
        elif ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return text[start : i + 1]
    return None


def parse_json_payload(text: str) -> Any:
    """Parse model output as JSON, tolerating prose and code fences."""
    candidates = [text]
    block = _first_balanced_block(text)
    if block is not None:
        candidates.append(block)
    fence = _FENCE_RE.search(text)
    if fence:
        candidates.append(fence.group(1))
        inner_block = _first_balanced_block(fence.group(1))
        if inner_block is not None:
            candidates.append(inner_block)
    for candidate in candidates:
        try:
            return json.loads(candidate)
        except json.JSONDecodeError:
            continue
    raise UnparseableOutputError(f"no JSON payload found in model output: {text[:500]!r}", raw=text)


REPAIR_REMINDER = (
    "Your previous output could not be parsed. Return valid JSON only, with the exact keys "
    "required by the task. Do not include markdown, explanations, or extra keys.\n\n"
    "<previous_output>\n{previous}\n</previous_output>"
)


def request_json(
    provider: ChatProvider,
    request: ChatRequest,
    usages: list[TokenUsage] | None = None,
    validate: Callable[[Any], Any] | None = None,
) -> Any:
    """complete → parse (→ validate), with one repair re-prompt on failure.

    The repair echoes the raw output back with a return-valid-JSON reminder.
    Raises UnparseableOutputError carrying the last raw text if both attempts
    fail; validation errors from the second attempt propagate as-is.
    """
    text, usage = provider.complete(request)
    if usages is not None:
        usages.append(usage)
    try:
        payload = parse_json_payload(text)
        return validate(payload) if validate else payload
    except Exception as first_error:
        repair = ChatRequest(user=REPAIR_REMINDER.replace("{previous}", text), system=request.system)
        repair_text, repair_usage = provider.complete(repair)
        if usages is not None:
            usages.append(repair_usage)
        try:
            payload = parse_json_payload(repair_text)
            return validate(payload) if validate else payload
        except UnparseableOutputError:
            raise UnparseableOutputError(
                f"model output unparseable after repair re-prompt (first error: {first_error})",
                raw=repair_text,
            ) from first_error


_TOKEN_RE = re.compile(r"[a-z0-9]+")


class HashEmbedder:
    """Deterministic test embedder: seeded hash-to-vector, fixed dimension.

    Each lowercase alphanumeric token maps to a fixed pseudo-random unit
    direction; a text embeds to the normalized sum of its token vectors, so
    lexical overlap produces cosine similarity without any network access.
    """

    def __init__(self, dimension: int = 64, seed: int = 0):
        self.dimension = dimension
        self.seed = seed
        self.provider_id = f"hash-{dimension}-seed{seed}"
        self._token_cache: dict[str, np.ndarray] = {}

    def _token_vector(self, token: str) -> np.ndarray:
        vec = self._token_cache.get(token)
        if vec is None:
            digest = hashlib.sha256(f"{self.seed}:{token}".encode("utf-8")).digest()
            rng = np.random.default_rng(int.from_bytes(digest[:8], "big"))
            vec = rng.standard_normal(self.dimension)
            self._token_cache[token] = vec
        return vec

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dimension), dtype=np.float64)
        for i, text in enumerate(texts):
            tokens = _TOKEN_RE.findall(text.lower())
            if not tokens:
                continue
            acc = np.zeros(self.dimension, dtype=np.float64)
            for token in tokens:
                acc += self._token_vector(token)
            norm = float(np.linalg.norm(acc))
            if norm > 0.0:
                acc /= norm
            out[i] = acc
        return out


class HTTPEmbeddingProvider:
    """Embedding service over HTTP POST accepting a JSON batch of strings."""

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key: str | None = None,
        timeout: float = 60.0,
        max_retries: int = 3,
        post: Callable[..., requests.Response] = requests.post,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.endpoint = endpoint
        self.model = model
        self.api_key = api_key
        self.timeout = timeout
        self.max_retries = max_retries
        self.dimension = -1
        self.provider_id = f"http:{model}"
        self._post = post
        self._sleep = sleep

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        if not texts:
            return np.zeros((0, max(self.dimension, 0)), dtype=np.float64)
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        body = {"model": self.model, "input": list(texts)}
        response = _post_with_retry(
            self._post, self.endpoint, body, headers, self.timeout, self.max_retries, self._sleep, ProviderError
        )
        try:
            payload = response.json()
            if "data" in payload:
                rows = [row["embedding"] for row in payload["data"]]
            else:
                rows = payload["embeddings"]
        except (ValueError, KeyError, TypeError) as exc:
            raise ProviderError(f"embedding endpoint returned an unexpected body: {exc}") from exc
        if len(rows) != len(texts):
            raise ProviderError(f"embedding endpoint returned {len(rows)} vectors for {len(texts)} inputs")
        lengths = {len(row) for row in rows}
        if len(lengths) != 1:
            raise DimensionMismatchError(f"embedding batch has mixed dimensions: {sorted(lengths)}")
        matrix = np.asarray(rows, dtype=np.float64)
        if self.dimension < 0:
            self.dimension = matrix.shape[1]
        elif matrix.shape[1] != self.dimension:
            raise DimensionMismatchError(f"embedding dimension changed from {self.dimension} to {matrix.shape[1]}")
        return matrix
