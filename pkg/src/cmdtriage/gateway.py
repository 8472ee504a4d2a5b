"""Generation backends: a deterministic scripted mock and an HTTP chat client.

Both expose a single ``complete(request)`` method; ``generate`` and
``generate_h`` are the uniform entry points the rest of the engine uses.
The mock backend replays canned responses from substring/regex rules so the
whole pipeline runs offline and bit-identically across runs.
"""

from __future__ import annotations

import json
import logging
import math
import os
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import httpx

logger = logging.getLogger(__name__)

_PROB_SUM_TOL = 1e-6


class GatewayError(Exception):
    """Base class for backend failures."""


class CapabilityError(GatewayError):
    """The backend cannot satisfy the request (e.g. token probabilities)."""


class RuleMissError(GatewayError):
    """No scripted rule matched the prompt; the fixture has a gap."""


class TransportError(GatewayError):
    """HTTP transport failed after all retry attempts."""

    def __init__(self, message: str, attempts: int):
        super().__init__(f"{message} (after {attempts} attempts)")
        self.attempts = attempts


class BatchGenerationError(GatewayError):
    """One request of a generate_h batch failed; identifies the index."""

    def __init__(self, index: int, cause: Exception):
        super().__init__(f"variant {index} failed: {cause}")
        self.index = index
        self.cause = cause


@dataclass(frozen=True)
class PromptRequest:
    text: str
    temperature: float = 0.0
    max_tokens: int = 64
    want_token_probs: bool = False
    stop_markers: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.text:
            raise ValueError("prompt text must be non-empty")
        if self.max_tokens < 1:
            raise ValueError(f"max_tokens must be >= 1, got {self.max_tokens}")
        if not math.isfinite(self.temperature) or self.temperature < 0:
            raise ValueError(f"temperature must be finite and >= 0, got {self.temperature}")


@dataclass(frozen=True)
class TokenProb:
    """Top-K probability distribution observed at one emitted position."""

    token: str
    top: tuple[tuple[str, float], ...]

    def __post_init__(self) -> None:
        total = 0.0
        for tok, p in self.top:
            if not (0.0 < p <= 1.0):
                raise ValueError(f"probability for {tok!r} outside (0, 1]: {p}")
            total += p
        if total > 1.0 + _PROB_SUM_TOL:
            raise ValueError(f"probabilities sum to {total}, exceeding 1")

    def chosen_prob(self) -> float:
        """Probability the distribution assigns to the emitted token."""
        for tok, p in self.top:
            if tok == self.token:
                return p
        raise ValueError(f"emitted token {self.token!r} missing from its top-K list")


@dataclass(frozen=True)
class GenerationSample:
    text: str
    backend_id: str
    latency_ms: float = 0.0
    token_probs: tuple[TokenProb, ...] | None = None


def _parse_canned_positions(raw: Sequence) -> tuple[TokenProb, ...]:
    positions = []
    for entry in raw:
        if isinstance(entry, dict):
            token, top = entry["token"], entry["top"]
        else:
            token, top = entry[0], entry[1]
        positions.append(TokenProb(token=token, top=tuple((t, float(p)) for t, p in top)))
    return tuple(positions)


@dataclass
class ScriptedRule:
    """Canned completions for prompts matching a pattern.

    ``match`` is a substring, a list of substrings that must all occur, or a
    regex when ``regex`` is true. ``responses`` are cycled in order across
    matches (per-rule counter). ``canned_probs`` optionally gives one
    token-probability table per response.
    """

    match: str | Sequence[str]
    responses: Sequence[str]
    canned_probs: Sequence[Sequence] | None = None
    regex: bool = False
    _compiled: object = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if not self.responses:
            raise ValueError("a scripted rule needs at least one response")
        if self.canned_probs is not None and len(self.canned_probs) != len(self.responses):
            raise ValueError("canned_probs must parallel responses")
        if self.regex:
            pattern = self.match if isinstance(self.match, str) else "".join(self.match)
            self._compiled = re.compile(pattern)

    def matches(self, text: str) -> bool:
        if self.regex:
            return bool(self._compiled.search(text))
        if isinstance(self.match, str):
            return self.match in text
        return all(part in text for part in self.match)


class Backend(Protocol):
    backend_id: str
    deterministic: bool
    supports_token_probs: bool

    def complete(self, request: PromptRequest) -> GenerationSample: ...


class MockBackend:
    """Replays scripted rules; first matching rule wins.

    Same (seed, request sequence) always reproduces the same outputs. The
    per-rule counters are lock-protected so the handle can be shared across
    threads.
    """

    deterministic = True

    def __init__(self, rules: Sequence[ScriptedRule], seed: int = 0):
        self.backend_id = f"mock:{seed}"
        self._rules = list(rules)
        self._counters = [0] * len(self._rules)
        self._lock = threading.Lock()

    @property
    def supports_token_probs(self) -> bool:
        return any(rule.canned_probs is not None for rule in self._rules)

    def complete(self, request: PromptRequest) -> GenerationSample:
        if request.want_token_probs and not self.supports_token_probs:
            raise CapabilityError("mock backend has no canned token probabilities")
        for i, rule in enumerate(self._rules):
            if rule.matches(request.text):
                with self._lock:
                    idx = self._counters[i] % len(rule.responses)
                    self._counters[i] += 1
                text = rule.responses[idx]
                probs = None
                if request.want_token_probs and rule.canned_probs is not None:
                    probs = _parse_canned_positions(rule.canned_probs[idx])
                return GenerationSample(
                    text=text,
                    backend_id=self.backend_id,
                    latency_ms=0.0,
                    token_probs=probs,
                )
        snippet = request.text[-120:].replace("\n", " | ")
        raise RuleMissError(f"no scripted rule matches prompt ending with: {snippet!r}")


def load_mock_rules(path: str | Path) -> list[ScriptedRule]:
    """Load [{match, responses, canned_probs?, regex?}] from a JSON fixture."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    rules = []
    for entry in raw:
        rules.append(
            ScriptedRule(
                match=entry["match"],
                responses=entry["responses"],
                canned_probs=entry.get("canned_probs"),
                regex=bool(entry.get("regex", False)),
            )
        )
    return rules


class HttpBackend:
    """Chat-completion-style JSON client.

    POSTs {model, messages, temperature, max_tokens, logprobs?, top_logprobs?}
    to ``<base_url>/chat/completions`` and reads choices[0]. Transient
    transport failures are retried (3 attempts, exponential backoff from
    250 ms); the final failure surfaces the attempt count.
    """

    deterministic = False

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key: str | None = None,
        timeout_ms: int = 30_000,
        top_k: int = 5,
        max_attempts: int = 3,
        backoff_s: float = 0.25,
        supports_token_probs: bool = True,
        transport: httpx.BaseTransport | None = None,
    ):
        self.backend_id = f"http:{model}"
        self.model = model
        self.top_k = top_k
        self.max_attempts = max_attempts
        self.backoff_s = backoff_s
        self.supports_token_probs = supports_token_probs
        headers = {}
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        self._client = httpx.Client(
            base_url=base_url.rstrip("/"),
            timeout=timeout_ms / 1000.0,
            headers=headers,
            transport=transport,
        )

    def complete(self, request: PromptRequest) -> GenerationSample:
        if request.want_token_probs and not self.supports_token_probs:
            raise CapabilityError(f"{self.backend_id} does not expose token probabilities")
        payload: dict = {
            "model": self.model,
            "messages": [{"role": "user", "content": request.text}],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        if request.stop_markers:
            payload["stop"] = list(request.stop_markers)
        if request.want_token_probs:
            payload["logprobs"] = True
            payload["top_logprobs"] = self.top_k

        last_error: Exception | None = None
        start = time.monotonic()
        for attempt in range(1, self.max_attempts + 1):
            try:
                response = self._client.post("/chat/completions", json=payload)
                response.raise_for_status()
                data = response.json()
                break
            except (httpx.TransportError, httpx.HTTPStatusError) as exc:
                last_error = exc
                logger.warning("attempt %d/%d failed: %s", attempt, self.max_attempts, exc)
                if attempt < self.max_attempts:
                    time.sleep(self.backoff_s * (2 ** (attempt - 1)))
        else:
            raise TransportError(str(last_error), attempts=self.max_attempts)
        latency_ms = (time.monotonic() - start) * 1000.0

        choices = data.get("choices")
        if not choices:
            raise GatewayError(f"response carries no choices: {data!r}")
        choice = choices[0]
        message = choice.get("message") or {}
        text = message.get("content")
        if text is None:
            text = choice.get("text")
        if text is None:
            raise GatewayError(f"choice carries no content: {choice!r}")

        token_probs = None
        if request.want_token_probs:
            token_probs = self._parse_logprobs(choice)
        return GenerationSample(
            text=text,
            backend_id=self.backend_id,
            latency_ms=latency_ms,
            token_probs=token_probs,
        )

    def _parse_logprobs(self, choice: dict) -> tuple[TokenProb, ...]:
        logprobs = choice.get("logprobs")
        content = (logprobs or {}).get("content")
        if not content:
            raise CapabilityError(
                f"{self.backend_id}: token probabilities requested but the "
                "response carries no logprobs"
            )
        positions = []
        for entry in content:
            token = entry["token"]
            top = [
                (alt["token"], math.exp(float(alt["logprob"])))
                for alt in entry.get("top_logprobs", [])
            ]
            if token not in [t for t, _ in top]:
                top.append((token, math.exp(float(entry["logprob"]))))
            positions.append(TokenProb(token=token, top=tuple(top)))
        return tuple(positions)

    def close(self) -> None:
        self._client.close()


def generate(request: PromptRequest, backend: Backend) -> GenerationSample:
    """One completion for one request."""
    return backend.complete(request)


def generate_h(
    variants: Sequence[PromptRequest],
    backend: Backend,
    max_workers: int | None = None,
) -> list[GenerationSample]:
    """Complete H >= 2 prompt variants, preserving input order.

    HTTP backends fan out over a thread pool; deterministic backends run
    sequentially so cycled scripted responses map onto variant indices
    reproducibly. Any single failure aborts the batch and names the index.
    """
    if len(variants) < 2:
        raise ValueError(f"generate_h needs at least 2 variants, got {len(variants)}")
    if getattr(backend, "deterministic", False):
        results = []
        for i, req in enumerate(variants):
            try:
                results.append(generate(req, backend))
            except Exception as exc:
                raise BatchGenerationError(i, exc) from exc
        return results

    with ThreadPoolExecutor(max_workers=max_workers or min(8, len(variants))) as pool:
        futures = [pool.submit(generate, req, backend) for req in variants]
        results = []
        for i, future in enumerate(futures):
            try:
                results.append(future.result())
            except Exception as exc:
                raise BatchGenerationError(i, exc) from exc
        return results


def build_backend(config: dict, base_dir: str | Path | None = None) -> Backend:
    """Instantiate a backend from its engine-config block.

    {kind: "mock"|"http", base_url, api_key_env_var, model_name, timeout_ms,
     rules_path, seed, top_k, supports_token_probs}
    Relative fixture paths resolve against ``base_dir``. The API key is read
    only from the named environment variable, never from config text.
    """
    kind = config.get("kind")
    base = Path(base_dir) if base_dir is not None else Path.cwd()
    if kind == "mock":
        rules_path = config.get("rules_path")
        if not rules_path:
            raise GatewayError("mock backend config needs rules_path")
        rules = load_mock_rules(base / rules_path)
        return MockBackend(rules, seed=int(config.get("seed", 0)))
    if kind == "http":
        base_url = config.get("base_url")
        model = config.get("model_name")
        if not base_url or not model:
            raise GatewayError("http backend config needs base_url and model_name")
        api_key = None
        env_var = config.get("api_key_env_var")
        if env_var:
            api_key = os.environ.get(env_var)
            if api_key is None:
                raise GatewayError(f"environment variable {env_var} is not set")
        return HttpBackend(
            base_url=base_url,
            model=model,
            api_key=api_key,
            timeout_ms=int(config.get("timeout_ms", 30_000)),
            top_k=int(config.get("top_k", 5)),
            supports_token_probs=bool(config.get("supports_token_probs", True)),
        )
    raise GatewayError(f"unknown backend kind {kind!r}")
