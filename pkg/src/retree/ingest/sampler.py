"""Branched rollout sampling against an OpenAI-compatible completions API.

Generation forks ``k`` ways at the start of the response and again every
``l`` completion tokens, down to ``d`` fork levels; the segment after the
last fork runs to completion. A rollout that stops before its next fork
becomes a shallow leaf. Siblings share their prefix by resending it as part
of the prompt.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import httpx

from retree.ingest.records import TrajectoryRecord
from retree.simulate import derive_seed

log = logging.getLogger(__name__)

RETRYABLE_STATUS = {408, 409, 425, 429, 500, 502, 503, 504}


class EndpointError(RuntimeError):
    """The completion endpoint kept failing; ``partial`` holds what was sampled."""

    def __init__(self, message: str, partial: Optional[list[TrajectoryRecord]] = None, failed_paths=()):
        super().__init__(message)
        self.partial = partial or []
        self.failed_paths = list(failed_paths)


@dataclass(frozen=True)
class SamplerConfig:
    endpoint_url: str
    model_name: str
    k: int = 4
    d: int = 4
    l: int = 200
    temperature: float = 1.0
    top_p: float = 1.0
    max_tokens_per_segment: int = 4096
    request_timeout: float = 120.0
    max_retries: int = 3
    concurrency: int = 8
    seed: int = 0
    backoff: float = 0.5

    def __post_init__(self) -> None:
        if self.k < 2:
            raise ValueError("k must be >= 2")
        if self.d < 0:
            raise ValueError("d must be >= 0")
        if self.l < 1:
            raise ValueError("l must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must lie in (0, 1]")
        if self.max_tokens_per_segment < 1 or self.max_retries < 0 or self.concurrency < 1:
            raise ValueError("max_tokens_per_segment, max_retries and concurrency out of range")


@dataclass
class Segment:
    text: str
    completion_tokens: int
    finish_reason: str


class CompletionClient:
    def __init__(self, config: SamplerConfig, transport: Optional[httpx.BaseTransport] = None):
        self.config = config
        url = config.endpoint_url.rstrip("/")
        self.url = url if url.endswith("/completions") else url + "/completions"
        self._http = httpx.Client(timeout=config.request_timeout, transport=transport)

    def close(self) -> None:
        self._http.close()

    def __enter__(self) -> "CompletionClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def complete(self, prompt: str, max_tokens: int, seed: int) -> Segment:
        body = {
            "model": self.config.model_name,
            "prompt": prompt,
            "max_tokens": max_tokens,
            "temperature": self.config.temperature,
            "top_p": self.config.top_p,
            "n": 1,
            "seed": seed,
        }
        last: Exception | None = None
        for attempt in range(self.config.max_retries + 1):
            if attempt:
                time.sleep(self.config.backoff * 2 ** (attempt - 1))
            try:
                resp = self._http.post(self.url, json=body)
            except httpx.HTTPError as exc:
                last = exc
                log.warning("request failed (attempt %d): %s", attempt + 1, exc)
                continue
            if resp.status_code in RETRYABLE_STATUS:
                last = EndpointError(f"HTTP {resp.status_code}")
                log.warning("HTTP %d from endpoint (attempt %d)", resp.status_code, attempt + 1)
                continue
            if resp.status_code >= 400:
                raise EndpointError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            return _parse_segment(resp.json())
        raise EndpointError(f"gave up after {self.config.max_retries + 1} attempts: {last}")


def _parse_segment(doc: dict) -> Segment:
    try:
        choice = doc["choices"][0]
        text = choice.get("text")
        if text is None:
            text = choice["message"]["content"]
        usage = doc.get("usage") or {}
        return Segment(
            text=text,
            completion_tokens=int(usage.get("completion_tokens", 0)),
            finish_reason=str(choice.get("finish_reason") or "stop"),
        )
    except (KeyError, IndexError, TypeError, ValueError) as exc:
        raise EndpointError(f"malformed completion response: {exc}") from None


@dataclass
class _Open:
    path: tuple[int, ...]
    prefix: str = ""
    tokens: int = 0


def sample_branched(
    config: SamplerConfig,
    prompt: str,
    verifier: Callable[[str], bool],
    query_id: str = "q",
    transport: Optional[httpx.BaseTransport] = None,
    client: Optional[CompletionClient] = None,
) -> list[TrajectoryRecord]:
    """Sample one query's branched rollouts; records come back sorted by path.

    Raises ``EndpointError`` (with the partial records attached) if any branch
    could not be generated.
    """
    own = client is None
    client = client or CompletionClient(config, transport)
    finished: list[_Open] = []
    failed: list[tuple[int, ...]] = []
    try:
        if config.d == 0:
            jobs = [(_Open(()), config.max_tokens_per_segment, False)]
        else:
            jobs = [(_Open((i,)), _budget(config, 1), 1 < config.d) for i in range(config.k)]
        with ThreadPoolExecutor(max_workers=config.concurrency) as pool:
            while jobs:
                outcomes = list(pool.map(lambda job: _run(client, config, prompt, query_id, job[0], job[1]), jobs))
                nxt = []
                for (node, _, may_fork), seg in zip(jobs, outcomes):
                    if seg is None:
                        failed.append(node.path)
                        continue
                    node = _Open(node.path, node.prefix + seg.text, node.tokens + seg.completion_tokens)
                    if may_fork and seg.finish_reason == "length":
                        level = len(node.path) + 1
                        for i in range(config.k):
                            nxt.append((_Open(node.path + (i,), node.prefix, node.tokens), _budget(config, level), level < config.d))
                    else:
                        finished.append(node)
                jobs = nxt
    finally:
        if own:
            client.close()

    records = sorted((_grade(query_id, node, verifier) for node in finished), key=lambda r: r.path)
    if failed:
        raise EndpointError(f"{query_id}: {len(failed)} branch request(s) failed", records, sorted(failed))
    return records


def _budget(config: SamplerConfig, level: int) -> int:
    # segments before the last fork stop after l tokens; the last one runs on
    return config.l if level < config.d else config.max_tokens_per_segment


def _run(client: CompletionClient, config: SamplerConfig, prompt: str, query_id: str, node: _Open, max_tokens: int):
    seed = derive_seed(config.seed, query_id, *node.path) % (2**31)
    try:
        return client.complete(prompt + node.prefix, max_tokens, seed)
    except EndpointError as exc:
        log.error("%s path %s: %s", query_id, list(node.path), exc)
        return None


def _grade(query_id: str, node: _Open, verifier: Callable[[str], bool]) -> TrajectoryRecord:
    try:
        ok, err = bool(verifier(node.prefix)), None
    except Exception as exc:  # a broken verifier must not sink the whole query
        ok, err = False, f"{type(exc).__name__}: {exc}"
    return TrajectoryRecord(query_id, node.path, ok, node.tokens, node.prefix, err)
