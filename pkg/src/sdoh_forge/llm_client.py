"""Annotation backends (OpenAI-compatible endpoint or offline mock), usage ledger
and resumable batch annotation."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from collections import deque
from concurrent.futures import FIRST_EXCEPTION, ThreadPoolExecutor, wait
from dataclasses import asdict, dataclass, field
from decimal import ROUND_HALF_EVEN, Decimal
from pathlib import Path
from typing import Callable, Sequence

import httpx

from .corpus import CategoryConfig, Label
from .errors import (
    AuthFailure,
    ConfigError,
    CorruptCheckpoint,
    EndpointUnreachable,
    ParseFailure,
)
from .prompt import PromptSpec, RenderedPrompt, clarify, parse_response, render

log = logging.getLogger(__name__)

ABSTAIN = "ABSTAIN"
DEFAULT_KEY_ENV = "SDOH_FORGE_API_KEY"


@dataclass
class ClientConfig:
    base_url: str = "http://localhost:8000"
    model_name: str = "gpt-3.5-turbo"
    temperature: float = 0.0
    max_in_flight: int = 4
    requests_per_minute: int = 3000
    max_attempts: int = 5
    backoff_base: float = 1.0
    timeout: float = 60.0
    api_key_env: str = DEFAULT_KEY_ENV

    def __post_init__(self):
        if self.temperature != 0.0:
            raise ConfigError("temperature is pinned to 0.0 for reproducible annotation")
        if self.max_in_flight < 1:
            raise ConfigError("max_in_flight must be >= 1")
        if self.requests_per_minute < 1:
            raise ConfigError("requests_per_minute must be >= 1")
        if self.max_attempts < 1:
            raise ConfigError("max_attempts must be >= 1")


@dataclass
class MockAnnotatorConfig:
    keyword_rules: list[tuple[str, Label]]
    flip_probability: float = 0.0
    seed: int = 0
    default_label: Label = Label.NEGATIVE

    def __post_init__(self):
        if not 0.0 <= self.flip_probability <= 1.0:
            raise ConfigError("flip_probability must lie in [0, 1]")
        if not self.keyword_rules:
            raise ConfigError("mock annotator needs at least one keyword rule")
        self.keyword_rules = [(p, Label(l)) for p, l in self.keyword_rules]
        self.default_label = Label(self.default_label)
        try:
            self._compiled = [(re.compile(p, re.IGNORECASE), l) for p, l in self.keyword_rules]
        except re.error as exc:
            raise ConfigError(f"bad mock rule pattern: {exc}") from None


# --------------------------------------------------------------------------
# ledger

@dataclass
class Counters:
    prompt_tokens: int = 0
    completion_tokens: int = 0
    requests: int = 0
    annotations: int = 0


class UsageLedger:
    """Token, request and wall-time totals with a per-category breakdown."""

    def __init__(self):
        self._lock = threading.Lock()
        self.by_category: dict[str, Counters] = {}
        self.wall_seconds = 0.0

    def record(self, category, prompt_tokens=0, completion_tokens=0, requests=0, annotations=0):
        with self._lock:
            c = self.by_category.setdefault(category, Counters())
            c.prompt_tokens += prompt_tokens
            c.completion_tokens += completion_tokens
            c.requests += requests
            c.annotations += annotations

    def add_time(self, seconds):
        with self._lock:
            self.wall_seconds += max(0.0, seconds)

    def _total(self, name):
        return sum(getattr(c, name) for c in self.by_category.values())

    @property
    def prompt_tokens(self):
        return self._total("prompt_tokens")

    @property
    def completion_tokens(self):
        return self._total("completion_tokens")

    @property
    def requests(self):
        return self._total("requests")

    @property
    def annotations(self):
        return self._total("annotations")

    def merge(self, other: "UsageLedger") -> None:
        for cat, c in other.by_category.items():
            self.record(cat, c.prompt_tokens, c.completion_tokens, c.requests, c.annotations)
        self.add_time(other.wall_seconds)

    def to_json(self) -> dict:
        return {
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "requests": self.requests,
            "annotations": self.annotations,
            "wall_seconds": self.wall_seconds,
            "by_category": {k: asdict(v) for k, v in sorted(self.by_category.items())},
        }

    @classmethod
    def from_json(cls, obj: dict) -> "UsageLedger":
        led = cls()
        for cat, c in obj.get("by_category", {}).items():
            led.by_category[cat] = Counters(**c)
        led.wall_seconds = float(obj.get("wall_seconds", 0.0))
        return led


def estimate_cost(ledger, rates) -> float:
    """Dollar cost; ``rates`` are (prompt, completion) prices per 1M tokens."""
    rate_in, rate_out = rates
    if rate_in < 0 or rate_out < 0:
        raise ConfigError("token rates must be >= 0")
    return ledger.prompt_tokens * rate_in / 1e6 + ledger.completion_tokens * rate_out / 1e6


def format_dollars(amount: float) -> str:
    q = Decimal(repr(amount)).quantize(Decimal("0.0001"), rounding=ROUND_HALF_EVEN)
    return f"${q}"


# --------------------------------------------------------------------------
# annotations

@dataclass
class Annotation:
    note_id: str
    category: str
    label: str
    source: str
    prompt_fingerprint: str
    prompt_tokens: int = 0
    completion_tokens: int = 0
    latency_seconds: float = 0.0
    requests: int = 0
    reply: str = ""

    @property
    def binary(self) -> Label | None:
        return None if self.label == ABSTAIN else Label(self.label)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "Annotation":
        return cls(**obj)


@dataclass
class Reply:
    text: str
    prompt_tokens: int = 0
    completion_tokens: int = 0
    latency_seconds: float = 0.0
    requests: int = 1
    failed: bool = False


class MockBackend:
    """Keyword-rule annotator with hashed per-id label noise; never touches the network."""

    def __init__(self, cfg: MockAnnotatorConfig, category: CategoryConfig):
        self.cfg = cfg
        self.category = category

    def rule_label(self, text: str) -> Label:
        for pat, label in self.cfg._compiled:
            if pat.search(text):
                return label
        return self.cfg.default_label

    def flips(self, item_id: str) -> bool:
        digest = hashlib.sha256(f"{self.cfg.seed}:{item_id}".encode("utf-8")).digest()
        u = int.from_bytes(digest[:8], "big") / 2.0**64
        return u < self.cfg.flip_probability

    def label(self, item_id: str, text: str) -> Label:
        lab = self.rule_label(text)
        return lab.flipped() if self.flips(item_id) else lab

    def complete(self, prompt: RenderedPrompt, item_id: str, text: str) -> Reply:
        lab = self.label(item_id, text)
        answer = self.category.positive_answer if lab is Label.POSITIVE else self.category.negative_answer
        return Reply(answer, requests=0)


class RateLimiter:
    """Sliding 60-second window request cap."""

    def __init__(self, per_minute: int, clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep, window: float = 60.0):
        self.per_minute = per_minute
        self.clock = clock
        self.sleep = sleep
        self.window = window
        self.issued: deque[float] = deque()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        with self._lock:
            while True:
                now = self.clock()
                while self.issued and self.issued[0] <= now - self.window:
                    self.issued.popleft()
                if len(self.issued) < self.per_minute:
                    self.issued.append(now)
                    return
                self.sleep(self.issued[0] + self.window - now)


class RemoteBackend:
    """OpenAI-compatible chat-completions client.

    ``transport`` is forwarded to httpx; tests inject ``httpx.MockTransport``.
    """

    def __init__(self, cfg: ClientConfig, api_key: str | None = None,
                 transport: httpx.BaseTransport | None = None,
                 sleep: Callable[[float], None] = time.sleep,
                 limiter: RateLimiter | None = None):
        if api_key is None:
            api_key = os.environ.get(cfg.api_key_env)
            if not api_key:
                raise ConfigError(f"environment variable {cfg.api_key_env} is not set")
        self.cfg = cfg
        self.sleep = sleep
        self.limiter = limiter or RateLimiter(cfg.requests_per_minute)
        self.client = httpx.Client(
            base_url=cfg.base_url.rstrip("/"),
            headers={"Authorization": f"Bearer {api_key}"},
            timeout=cfg.timeout,
            transport=transport,
        )

    def close(self):
        self.client.close()

    def complete(self, prompt: RenderedPrompt, item_id: str, text: str) -> Reply:
        body = {
            "model": self.cfg.model_name,
            "messages": prompt.as_openai(),
            "temperature": 0,
        }
        attempts = 0
        last_error = None
        started = time.perf_counter()
        while attempts < self.cfg.max_attempts:
            if attempts:
                self.sleep(self.cfg.backoff_base * 2 ** (attempts - 1))
            self.limiter.acquire()
            attempts += 1
            try:
                resp = self.client.post("/v1/chat/completions", json=body)
            except httpx.TransportError as exc:
                last_error = f"{type(exc).__name__}: {exc}"
                continue
            if resp.status_code in (401, 403):
                raise AuthFailure(f"endpoint rejected credentials (HTTP {resp.status_code})")
            if resp.status_code == 429 or resp.status_code >= 500:
                last_error = f"HTTP {resp.status_code}"
                continue
            latency = time.perf_counter() - started
            if resp.status_code >= 400:
                log.warning("item %s: HTTP %s, abstaining", item_id, resp.status_code)
                return Reply("", latency_seconds=latency, requests=attempts, failed=True)
            try:
                payload = resp.json()
                content = payload["choices"][0]["message"]["content"] or ""
                usage = payload.get("usage") or {}
            except (ValueError, KeyError, IndexError, TypeError):
                log.warning("item %s: malformed completion payload, abstaining", item_id)
                return Reply("", latency_seconds=latency, requests=attempts, failed=True)
            return Reply(
                content,
                prompt_tokens=int(usage.get("prompt_tokens", 0)),
                completion_tokens=int(usage.get("completion_tokens", 0)),
                latency_seconds=latency,
                requests=attempts,
            )
        raise _Unreachable(f"{self.cfg.base_url} unreachable after {attempts} attempts ({last_error})", attempts)


class _Unreachable(Exception):
    def __init__(self, message, requests):
        super().__init__(message)
        self.requests = requests


# --------------------------------------------------------------------------
# checkpoints

def write_checkpoint(path, annotations: Sequence[Annotation]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [json.dumps(a.to_json(), sort_keys=True, ensure_ascii=False) for a in annotations]
    digest = hashlib.sha256("\n".join(lines).encode("utf-8")).hexdigest()
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(line + "\n")
        fh.write(json.dumps({"integrity": digest}) + "\n")
    os.replace(tmp, path)


def read_checkpoint(path) -> list[Annotation]:
    try:
        raw = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise CorruptCheckpoint(f"cannot read checkpoint {path}: {exc}") from None
    if not raw:
        raise CorruptCheckpoint(f"{path}: empty checkpoint")
    lines, trailer = raw[:-1], raw[-1]
    try:
        expected = json.loads(trailer)["integrity"]
    except (ValueError, KeyError, TypeError):
        raise CorruptCheckpoint(f"{path}: missing integrity line") from None
    if hashlib.sha256("\n".join(lines).encode("utf-8")).hexdigest() != expected:
        raise CorruptCheckpoint(f"{path}: content hash mismatch")
    try:
        return [Annotation.from_json(json.loads(line)) for line in lines]
    except (ValueError, TypeError) as exc:
        raise CorruptCheckpoint(f"{path}: bad record ({exc})") from None


def checkpoint_resume(checkpoint_path, items: Sequence[tuple[str, str]]) -> list[tuple[str, str]]:
    """Items of the batch that the checkpoint has not annotated yet."""
    done = {a.note_id for a in read_checkpoint(checkpoint_path)}
    return [it for it in items if it[0] not in done]


# --------------------------------------------------------------------------
# batch annotation

def _annotate_one(backend, spec: PromptSpec, item_id, text, category: CategoryConfig, source):
    prompt = render(spec)
    reply = backend.complete(prompt, item_id, text)
    replies = [reply]
    label = ABSTAIN
    if not reply.failed:
        try:
            label = parse_response(reply.text, category).value
        except ParseFailure:
            retry = backend.complete(clarify(prompt, category), item_id, text)
            replies.append(retry)
            if not retry.failed:
                try:
                    label = parse_response(retry.text, category).value
                except ParseFailure:
                    pass
    return Annotation(
        note_id=item_id,
        category=category.name,
        label=label,
        source=source,
        prompt_fingerprint=prompt.fingerprint,
        prompt_tokens=sum(r.prompt_tokens for r in replies),
        completion_tokens=sum(r.completion_tokens for r in replies),
        latency_seconds=sum(r.latency_seconds for r in replies),
        requests=sum(r.requests for r in replies),
        reply=replies[-1].text,
    )


def annotate_batch(
    items: Sequence[tuple[str, str]],
    spec_builder: Callable[[str, str], PromptSpec],
    backend,
    category: CategoryConfig,
    source: str,
    max_in_flight: int = 1,
    ledger: UsageLedger | None = None,
    checkpoint_path=None,
    checkpoint_every: int = 50,
):
    """Annotate ``(id, text)`` items; returns (annotations in input order, ledger).

    With ``checkpoint_path`` set, previously completed ids are loaded from the
    checkpoint and skipped, and the checkpoint is rewritten as work completes.
    """
    ledger = ledger if ledger is not None else UsageLedger()
    done: dict[str, Annotation] = {}
    wanted = {it[0] for it in items}
    if checkpoint_path is not None and Path(checkpoint_path).exists():
        for a in read_checkpoint(checkpoint_path):
            if a.note_id in wanted and a.category == category.name and a.source == source:
                done[a.note_id] = a
                ledger.record(category.name, a.prompt_tokens, a.completion_tokens, a.requests, 1)
    todo = [it for it in items if it[0] not in done]
    lock = threading.Lock()
    since_save = 0

    def save():
        if checkpoint_path is not None:
            ordered = [done[i] for i, _ in items if i in done]
            write_checkpoint(checkpoint_path, ordered)

    def work(item):
        nonlocal since_save
        item_id, text = item
        try:
            ann = _annotate_one(backend, spec_builder(item_id, text), item_id, text, category, source)
        except _Unreachable as exc:
            ledger.record(category.name, requests=exc.requests)
            raise
        ledger.record(category.name, ann.prompt_tokens, ann.completion_tokens, ann.requests, 1)
        with lock:
            done[item_id] = ann
            since_save += 1
            if since_save >= checkpoint_every:
                save()
                since_save = 0

    started = time.perf_counter()
    try:
        if max_in_flight <= 1:
            for it in todo:
                work(it)
        else:
            with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
                futures = [pool.submit(work, it) for it in todo]
                finished, _ = wait(futures, return_when=FIRST_EXCEPTION)
                for f in futures:
                    f.cancel()
                for f in futures:
                    if f.done() and not f.cancelled() and f.exception() is not None:
                        raise f.exception()
    except _Unreachable as exc:
        with lock:
            save()
        raise EndpointUnreachable(str(exc), checkpoint_path) from None
    except AuthFailure:
        with lock:
            save()
        raise
    finally:
        ledger.add_time(time.perf_counter() - started)
    with lock:
        save()
    return [done[i] for i, _ in items], ledger


def write_annotations(path, annotations: Sequence[Annotation]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for a in annotations:
            fh.write(json.dumps(a.to_json(), sort_keys=True, ensure_ascii=False) + "\n")


def read_annotations(path) -> list[Annotation]:
    with open(path, encoding="utf-8") as fh:
        return [Annotation.from_json(json.loads(line)) for line in fh if line.strip()]
