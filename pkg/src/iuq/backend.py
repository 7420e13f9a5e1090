"""Chat-completion back ends with caching, retries and token accounting.

Two concrete back ends are provided: :class:`HTTPBackend` for any
OpenAI-compatible ``/chat/completions`` endpoint, and :class:`ScriptedBackend`
which answers from a script of prompt matchers. The synthetic-world backend in
:mod:`iuq.synthworld` builds on the same base class.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

import httpx
import yaml

from .types import TokenLogprobs

log = logging.getLogger(__name__)

STAGE_TAGS = (
    "greedy_gen",
    "diverse_gen",
    "claim_extract",
    "correctness_eval",
    "entailment_eval",
    "question_gen",
    "answer_gen",
    "contradiction_eval",
)
STAGE_LABELS = {
    "greedy_gen": "Greedy Gen.",
    "diverse_gen": "Diverse Gen.",
    "claim_extract": "Claim Extraction",
    "correctness_eval": "Claim Correctness",
    "entailment_eval": "Claim Supportness",
    "question_gen": "Question Gen.",
    "answer_gen": "Answer Gen.",
    "contradiction_eval": "Contradiction Evaluation",
}
GREEDY_ONLY = ("claim_extract", "correctness_eval")


class BackendError(RuntimeError):
    pass


class ConfigurationError(BackendError):
    pass


class DecodeError(BackendError):
    pass


class ScriptError(BackendError):
    pass


class StageError(BackendError):
    """Transport failure that survived every retry."""

    def __init__(self, message: str, request: "CompletionRequest"):
        super().__init__(f"{message} [stage={request.stage_tag}, prompt={request.prompt[:60]!r}]")
        self.request = request


class TransientError(BackendError):
    """Raised by back ends for failures worth retrying."""


@dataclass(frozen=True)
class CompletionRequest:
    stage_tag: str
    prompt: str
    temperature: float = 0.0
    max_tokens: int = 1024
    want_logprobs: bool = False
    seed_hint: Optional[int] = None

    def __post_init__(self):
        if self.stage_tag not in STAGE_TAGS:
            raise ValueError(f"unknown stage tag {self.stage_tag!r}")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.stage_tag in GREEDY_ONLY and self.temperature != 0:
            raise ValueError(f"{self.stage_tag} must run at temperature 0")


@dataclass(frozen=True)
class CompletionResult:
    text: str
    token_logprobs: TokenLogprobs = None
    prompt_tokens: int = 0
    completion_tokens: int = 0
    cached: bool = False
    approximate: bool = False


def whitespace_tokens(text: str) -> int:
    return len(text.split())


class TokenLedger:
    """Per-stage token and request counters; safe to update from many threads."""

    FIELDS = ("prompt_tokens", "completion_tokens", "requests", "cached_requests", "approximate")

    def __init__(self, snapshot: Optional[dict[str, dict[str, int]]] = None):
        self._lock = threading.Lock()
        self._rows: dict[str, dict[str, int]] = {}
        for tag, row in (snapshot or {}).items():
            self._rows[tag] = {f: int(row.get(f, 0)) for f in self.FIELDS}

    def _row(self, tag: str) -> dict[str, int]:
        return self._rows.setdefault(tag, {f: 0 for f in self.FIELDS})

    def record(self, tag: str, result: CompletionResult) -> None:
        with self._lock:
            row = self._row(tag)
            if result.cached:
                row["cached_requests"] += 1
                return
            row["prompt_tokens"] += result.prompt_tokens
            row["completion_tokens"] += result.completion_tokens
            row["requests"] += 1
            row["approximate"] += int(result.approximate)

    def snapshot(self) -> dict[str, dict[str, int]]:
        with self._lock:
            return {tag: dict(row) for tag, row in sorted(self._rows.items())}

    def stage(self, tag: str) -> dict[str, int]:
        with self._lock:
            return dict(self._rows.get(tag, {f: 0 for f in self.FIELDS}))

    def total(self) -> int:
        with self._lock:
            return sum(r["prompt_tokens"] + r["completion_tokens"] for r in self._rows.values())


def ledger_report(ledger: TokenLedger | dict, n_topics: int = 0) -> list[dict[str, Any]]:
    """One row per stage tag, in pipeline order, plus a grand-total row."""
    snap = ledger.snapshot() if isinstance(ledger, TokenLedger) else ledger
    rows = []
    totals = {f: 0 for f in TokenLedger.FIELDS}
    for tag in STAGE_TAGS:
        row = {f: int(snap.get(tag, {}).get(f, 0)) for f in TokenLedger.FIELDS}
        for f in TokenLedger.FIELDS:
            totals[f] += row[f]
        total = row["prompt_tokens"] + row["completion_tokens"]
        rows.append({
            "stage": STAGE_LABELS[tag],
            "stage_tag": tag,
            **row,
            "total_tokens": total,
            "avg_tokens_per_topic": total / n_topics if n_topics else 0.0,
        })
    grand = totals["prompt_tokens"] + totals["completion_tokens"]
    rows.append({
        "stage": "Total",
        "stage_tag": "total",
        **totals,
        "total_tokens": grand,
        "avg_tokens_per_topic": grand / n_topics if n_topics else 0.0,
    })
    return rows


class CompletionCache:
    """Completion cache persisted as JSON lines; new entries are flushed sorted by key."""

    def __init__(self, path: Optional[Path] = None):
        self.path = Path(path) if path else None
        self._lock = threading.Lock()
        self._entries: dict[str, dict[str, Any]] = {}
        self._pending: dict[str, dict[str, Any]] = {}
        if self.path and self.path.exists():
            for line in self.path.read_text(encoding="utf-8").splitlines():
                try:
                    row = json.loads(line)
                except json.JSONDecodeError:
                    continue  # partial line from an interrupted flush
                self._entries[row["key"]] = row["result"]

    @staticmethod
    def key(backend_id: str, model: str, req: CompletionRequest) -> str:
        payload = json.dumps([backend_id, model, req.prompt, req.temperature, req.max_tokens,
                              req.want_logprobs, req.seed_hint])
        return hashlib.sha256(payload.encode()).hexdigest()

    def get(self, key: str) -> Optional[CompletionResult]:
        with self._lock:
            row = self._entries.get(key)
        if row is None:
            return None
        lp = row.get("token_logprobs")
        return CompletionResult(
            text=row["text"],
            token_logprobs=None if lp is None else tuple((t, float(p)) for t, p in lp),
            prompt_tokens=row["prompt_tokens"],
            completion_tokens=row["completion_tokens"],
            cached=True,
            approximate=row.get("approximate", False),
        )

    def put(self, key: str, result: CompletionResult) -> None:
        row = {
            "text": result.text,
            "token_logprobs": None if result.token_logprobs is None else [list(x) for x in result.token_logprobs],
            "prompt_tokens": result.prompt_tokens,
            "completion_tokens": result.completion_tokens,
            "approximate": result.approximate,
        }
        with self._lock:
            if key not in self._entries:
                self._entries[key] = row
                self._pending[key] = row

    def flush(self) -> None:
        with self._lock:
            if not self.path or not self._pending:
                self._pending.clear()
                return
            self.path.parent.mkdir(parents=True, exist_ok=True)
            lines = [json.dumps({"key": k, "result": self._pending[k]}, sort_keys=True)
                     for k in sorted(self._pending)]
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write("\n".join(lines) + "\n")
            self._pending.clear()

    def discard_pending(self) -> None:
        """Forget unflushed entries (used when a stage is abandoned)."""
        with self._lock:
            for k in self._pending:
                self._entries.pop(k, None)
            self._pending.clear()

    def __len__(self) -> int:
        return len(self._entries)


class Backend:
    """Shared request path: cache lookup, in-flight limit, retries, ledger."""

    backend_id = "base"
    model = "none"
    supports_logprobs = True

    def __init__(self, max_in_flight: int = 8, retries: int = 3, backoff: float = 0.5,
                 cache: Optional[CompletionCache] = None, ledger: Optional[TokenLedger] = None):
        self.max_in_flight = max_in_flight
        self.retries = retries
        self.backoff = backoff
        self.cache = cache if cache is not None else CompletionCache()
        self.ledger = ledger if ledger is not None else TokenLedger()
        self._sem = threading.BoundedSemaphore(max_in_flight)

    def _call(self, req: CompletionRequest) -> CompletionResult:
        raise NotImplementedError

    def cacheable(self, req: CompletionRequest) -> bool:
        return req.temperature == 0 or req.seed_hint is not None

    def complete(self, req: CompletionRequest, use_cache: bool = True) -> CompletionResult:
        key = CompletionCache.key(self.backend_id, self.model, req)
        if use_cache and self.cacheable(req):
            hit = self.cache.get(key)
            if hit is not None:
                self.ledger.record(req.stage_tag, hit)
                return hit
        attempt = 0
        while True:
            try:
                with self._sem:
                    result = self._call(req)
                break
            except TransientError as exc:
                attempt += 1
                if attempt > self.retries:
                    raise StageError(f"transport failure after {self.retries} retries: {exc}", req) from exc
                delay = self.backoff * (2 ** (attempt - 1))
                log.info("retrying %s in %.2fs (%s)", req.stage_tag, delay, exc)
                if delay:
                    time.sleep(delay)
        if self.cacheable(req):
            self.cache.put(key, result)
        self.ledger.record(req.stage_tag, result)
        return result


class HTTPBackend(Backend):
    """OpenAI-compatible chat-completion client."""

    backend_id = "http"

    def __init__(self, endpoint: str, model: str, api_key: Optional[str] = None,
                 timeout: float = 120.0, client: Optional[httpx.Client] = None, **kwargs):
        super().__init__(**kwargs)
        if not endpoint:
            raise ConfigurationError("HTTP backend needs an endpoint URL")
        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self.api_key = api_key if api_key is not None else (
            os.environ.get("IUQ_API_KEY") or os.environ.get("OPENAI_API_KEY"))
        self.client = client or httpx.Client(timeout=timeout)

    def payload(self, req: CompletionRequest) -> dict[str, Any]:
        body: dict[str, Any] = {
            "model": self.model,
            "messages": [{"role": "user", "content": req.prompt}],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
            "logprobs": req.want_logprobs,
        }
        if req.seed_hint is not None:
            body["seed"] = req.seed_hint
        return body

    def _call(self, req: CompletionRequest) -> CompletionResult:
        url = self.endpoint if self.endpoint.endswith("/chat/completions") else self.endpoint + "/chat/completions"
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        try:
            resp = self.client.post(url, json=self.payload(req), headers=headers)
        except httpx.TransportError as exc:
            raise TransientError(str(exc)) from exc
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransientError(f"HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise BackendError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            data = resp.json()
            choice = data["choices"][0]
            text = choice["message"]["content"]
            if not isinstance(text, str):
                raise TypeError("content is not a string")
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise DecodeError(f"malformed completion response: {exc}") from exc
        lp = None
        content = (choice.get("logprobs") or {}).get("content") if isinstance(choice.get("logprobs"), dict) else None
        if content:
            lp = tuple((str(t["token"]), float(t["logprob"])) for t in content)
        usage = data.get("usage") or {}
        if "prompt_tokens" in usage and "completion_tokens" in usage:
            return CompletionResult(text, lp, int(usage["prompt_tokens"]), int(usage["completion_tokens"]))
        return CompletionResult(text, lp, whitespace_tokens(req.prompt), whitespace_tokens(text),
                                approximate=True)


@dataclass
class ScriptEntry:
    match: str
    responses: list[str]
    stage: Optional[str] = None
    completion_tokens: Optional[int] = None
    logprobs: Optional[list[list[float]]] = None
    _pattern: re.Pattern = field(init=False, repr=False)

    def __post_init__(self):
        if not self.responses:
            raise ConfigurationError(f"script entry {self.match!r} has no responses")
        self._pattern = re.compile(self.match, re.DOTALL)

    def matches(self, req: CompletionRequest) -> bool:
        if self.stage and self.stage != req.stage_tag:
            return False
        return bool(self._pattern.search(req.prompt))


class ScriptedBackend(Backend):
    """Deterministic backend replying from an ordered list of prompt matchers.

    At temperature 0 the first response of the matching entry is returned. At
    t > 0 the variant is picked from ``seed_hint`` when given, otherwise
    variants cycle by call ordinal.
    """

    backend_id = "scripted"
    model = "script"

    def __init__(self, entries: Sequence[ScriptEntry], seed: int = 0, **kwargs):
        super().__init__(**kwargs)
        self.entries = list(entries)
        self.seed = seed
        self._ordinals: dict[int, int] = {}
        self._ord_lock = threading.Lock()

    def _variant(self, idx: int, entry: ScriptEntry, req: CompletionRequest) -> int:
        n = len(entry.responses)
        if req.temperature == 0:
            return 0
        if req.seed_hint is not None:
            h = hashlib.sha1(f"{self.seed}:{req.seed_hint}".encode()).digest()
            return int.from_bytes(h[:4], "big") % n
        with self._ord_lock:
            k = self._ordinals.get(idx, 0)
            self._ordinals[idx] = k + 1
        return k % n

    def _call(self, req: CompletionRequest) -> CompletionResult:
        for idx, entry in enumerate(self.entries):
            if entry.matches(req):
                v = self._variant(idx, entry, req)
                text = entry.responses[v]
                lp = None
                if req.want_logprobs and entry.logprobs:
                    values = entry.logprobs[v % len(entry.logprobs)]
                    lp = tuple(zip(text.split(), (float(x) for x in values)))
                n_out = entry.completion_tokens if entry.completion_tokens is not None else whitespace_tokens(text)
                return CompletionResult(text, lp, whitespace_tokens(req.prompt), n_out)
        raise ScriptError(f"no script entry matches prompt {req.prompt[:80]!r}")


def load_script(path: str | Path, **kwargs) -> ScriptedBackend:
    """Load a scripted backend from a YAML/JSON file with an ``entries`` list."""
    data = yaml.safe_load(Path(path).read_text())
    if not isinstance(data, dict) or "entries" not in data:
        raise ConfigurationError(f"{path}: script file needs an 'entries' list")
    entries = [ScriptEntry(**e) for e in data["entries"]]
    return ScriptedBackend(entries, seed=int(data.get("seed", 0)), **kwargs)
