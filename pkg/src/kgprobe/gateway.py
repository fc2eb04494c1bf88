"""Black-box text interface over remote chat servers and the synthetic oracle.

Every framework call goes through :meth:`ModelEndpoint.complete`, which
handles caching (prompt + model id, greedy decoding only), call budgets,
bounded retries and a cap on concurrent requests.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from collections import Counter
from concurrent.futures import Future
from pathlib import Path
from typing import Callable
from urllib.parse import parse_qs, urlsplit

import requests

log = logging.getLogger(__name__)

API_KEY_ENV = "KGPROBE_API_KEY"


class BudgetExhausted(RuntimeError):
    pass


class TransportError(RuntimeError):
    def __init__(self, message: str, attempts: int = 1):
        super().__init__(message)
        self.attempts = attempts


class MalformedResponse(ValueError):
    pass


class CallBudget:
    """Counts successful model calls against an optional hard limit."""

    def __init__(self, limit: int | None = None):
        if limit is not None and limit < 0:
            raise ValueError("call budget must be non-negative")
        self.limit = limit
        self.used = 0
        self._reserved = 0
        self._lock = threading.Lock()

    @property
    def remaining(self) -> int | None:
        if self.limit is None:
            return None
        return self.limit - self.used - self._reserved

    def reserve(self) -> None:
        with self._lock:
            if self.limit is not None and self.used + self._reserved >= self.limit:
                raise BudgetExhausted(f"call budget of {self.limit} exhausted")
            self._reserved += 1

    def commit(self) -> None:
        with self._lock:
            self._reserved -= 1
            self.used += 1

    def release(self) -> None:
        with self._lock:
            self._reserved -= 1


def prompt_hash(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class ResponseCache:
    """In-memory completion cache, optionally mirrored to an append-only JSONL file."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path else None
        self._data: dict[tuple[str, str], str] = {}
        self._lock = threading.Lock()
        if self.path and self.path.exists():
            with self.path.open(encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        row = json.loads(line)
                        self._data[(row["prompt_hash"], row["model_id"])] = row["completion"]

    def __len__(self) -> int:
        return len(self._data)

    def get(self, prompt: str, model_id: str) -> str | None:
        return self._data.get((prompt_hash(prompt), model_id))

    def put(self, prompt: str, model_id: str, completion: str) -> None:
        key = (prompt_hash(prompt), model_id)
        with self._lock:
            if key in self._data:
                return
            self._data[key] = completion
            if self.path:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                row = {"prompt_hash": key[0], "model_id": model_id, "completion": completion}
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")


class ChatCompletionsTransport:
    """POSTs to ``{base_url}/chat/completions`` with temperature 0."""

    def __init__(self, base_url: str, model_id: str, api_key: str | None = None,
                 timeout: float = 120.0, session: requests.Session | None = None):
        self.base_url = base_url.rstrip("/")
        self.model_id = model_id
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        self.timeout = timeout
        self.session = session or requests.Session()

    def __call__(self, prompt: str) -> str:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        payload = {
            "model": self.model_id,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
        }
        try:
            resp = self.session.post(f"{self.base_url}/chat/completions", json=payload,
                                     headers=headers, timeout=self.timeout)
        except requests.RequestException as exc:
            raise TransportError(f"request failed: {exc}") from exc
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        if resp.status_code >= 400:
            raise MalformedResponse(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            content = resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise MalformedResponse(f"unexpected response body: {resp.text[:200]}") from exc
        if not isinstance(content, str):
            raise MalformedResponse("message content is not text")
        return content


class _Shared:
    def __init__(self, transport, max_in_flight: int, cache: ResponseCache):
        self.transport = transport
        self.cache = cache
        self.gate = threading.BoundedSemaphore(max_in_flight)
        self.lock = threading.Lock()
        self.pending: dict[str, Future] = {}
        self.in_flight = 0
        self.peak_in_flight = 0


class ModelEndpoint:
    def __init__(
        self,
        transport: Callable[[str], str],
        model_id: str,
        *,
        kind: str = "remote",
        base_url: str | None = None,
        max_in_flight: int = 4,
        call_budget: int | None = None,
        cache_path: str | Path | None = None,
        max_chars: int = 8000,
        retries: int = 3,
        backoff: float = 1.0,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if kind not in ("remote", "synthetic"):
            raise ValueError(f"unknown endpoint kind {kind!r}")
        if max_in_flight < 1:
            raise ValueError("max_in_flight must be positive")
        self.kind = kind
        self.model_id = model_id
        self.base_url = base_url
        self.max_in_flight = max_in_flight
        self.max_chars = max_chars
        self.retries = retries
        self.backoff = backoff
        self.sleep = sleep
        self.budget = CallBudget(call_budget)
        self.calls_by_class: Counter = Counter()
        self.transport_failures = 0
        self._shared = _Shared(transport, max_in_flight, ResponseCache(cache_path))

    @property
    def transport(self):
        return self._shared.transport

    @property
    def cache(self) -> ResponseCache:
        return self._shared.cache

    @property
    def calls_used(self) -> int:
        return self.budget.used

    @property
    def call_budget(self) -> int | None:
        return self.budget.limit

    @property
    def peak_in_flight(self) -> int:
        return self._shared.peak_in_flight

    def limited(self, budget: CallBudget | int | None) -> "ModelEndpoint":
        """A view sharing transport, cache and concurrency gate but with its own ledger."""
        view = object.__new__(ModelEndpoint)
        view.__dict__.update(self.__dict__)
        view.budget = budget if isinstance(budget, CallBudget) else CallBudget(budget)
        view.calls_by_class = Counter()
        view.transport_failures = 0
        return view

    def complete(self, prompt: str, call_class: str = "other") -> str:
        shared = self._shared
        while True:
            with shared.lock:
                hit = shared.cache.get(prompt, self.model_id)
                if hit is not None:
                    log.debug("event=model_call class=%s cache=hit model=%s", call_class, self.model_id)
                    return hit
                pending = shared.pending.get(prompt)
                if pending is None:
                    self.budget.reserve()
                    fut: Future = Future()
                    shared.pending[prompt] = fut
            if pending is None:
                break
            try:
                return pending.result()
            except Exception:
                continue  # the owner failed; try again under our own budget

        try:
            text = self._send(prompt)
        except BaseException as exc:
            with shared.lock:
                self.budget.release()
                shared.pending.pop(prompt, None)
            fut.set_exception(exc)
            raise
        with shared.lock:
            self.budget.commit()
            shared.cache.put(prompt, self.model_id, text)
            shared.pending.pop(prompt, None)
            self.calls_by_class[call_class] += 1
        fut.set_result(text)
        log.info("event=model_call class=%s cache=miss model=%s calls_used=%d",
                 call_class, self.model_id, self.budget.used)
        return text

    def _send(self, prompt: str) -> str:
        shared = self._shared
        last: Exception | None = None
        for attempt in range(1, self.retries + 1):
            with shared.gate:
                with shared.lock:
                    shared.in_flight += 1
                    shared.peak_in_flight = max(shared.peak_in_flight, shared.in_flight)
                try:
                    text = shared.transport(prompt)
                except TransportError as exc:
                    last = exc
                    self.transport_failures += 1
                    text = None
                finally:
                    with shared.lock:
                        shared.in_flight -= 1
            if text is not None:
                if not isinstance(text, str):
                    raise MalformedResponse(f"transport returned {type(text).__name__}")
                return text[: self.max_chars]
            if attempt < self.retries:
                self.sleep(self.backoff * 2 ** (attempt - 1))
        raise TransportError(f"gave up after {self.retries} attempts: {last}", attempts=self.retries)


def open_endpoint(spec: str, *, model: str | None = None, **kwargs) -> ModelEndpoint:
    """Build an endpoint from ``http(s)://...`` or ``synthetic:<world.json>[?profile=<p.json>]``."""
    if spec.startswith("synthetic:"):
        from .world import SyntheticModel

        rest = spec[len("synthetic:"):]
        parts = urlsplit("x://h/" + rest) if "?" in rest else None
        world_path = rest.split("?", 1)[0]
        profile_path = None
        if parts is not None:
            profile_path = parse_qs(parts.query).get("profile", [None])[0]
        oracle = SyntheticModel.from_files(world_path, profile_path)
        label = model or f"synthetic:{Path(world_path).name}" + (
            f"+{Path(profile_path).name}" if profile_path else "")
        return ModelEndpoint(oracle.answer, label, kind="synthetic", **kwargs)
    if spec.startswith(("http://", "https://")):
        if not model:
            raise ValueError("remote endpoints need a model id")
        transport = ChatCompletionsTransport(spec, model)
        return ModelEndpoint(transport, model, kind="remote", base_url=spec, **kwargs)
    raise ValueError(f"unrecognized endpoint spec {spec!r}")
