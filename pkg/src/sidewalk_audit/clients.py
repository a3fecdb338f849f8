"""Shared plumbing for provider clients: rate limiting, retries, bounded fan-out, HTTP."""

from __future__ import annotations

import json
import logging
import threading
import time
import urllib.error
import urllib.parse
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Iterable, TypeVar

from .errors import ClientError, QuotaExceededError, TransientClientError

log = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


class TokenBucket:
    """Thread-safe token bucket; ``acquire`` blocks until a token is free.

    ``rate`` is tokens per second.  ``rate=None`` disables limiting.
    """

    def __init__(self, rate: float | None, capacity: float = 1.0,
                 clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep) -> None:
        if rate is not None and rate <= 0:
            raise ValueError("rate must be positive")
        self.rate = rate
        self.capacity = max(1.0, capacity)
        self._tokens = self.capacity
        self._clock = clock
        self._sleep = sleep
        self._last = clock()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        if self.rate is None:
            return
        while True:
            with self._lock:
                now = self._clock()
                self._tokens = min(self.capacity, self._tokens + (now - self._last) * self.rate)
                self._last = now
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return
                wait = (1.0 - self._tokens) / self.rate
            self._sleep(wait)


def call_with_retries(fn: Callable[[], R], retries: int = 3, backoff: float = 0.5,
                      sleep: Callable[[float], None] = time.sleep) -> R:
    """Retry ``fn`` on TransientClientError with exponential backoff."""
    for attempt in range(retries + 1):
        try:
            return fn()
        except TransientClientError as exc:
            if attempt == retries:
                raise
            delay = backoff * 2 ** attempt
            log.warning("transient client error (%s); retry %d/%d in %.2fs", exc, attempt + 1, retries, delay)
            sleep(delay)
    raise AssertionError("unreachable")


def bounded_map(fn: Callable[[T], R], items: Iterable[T], workers: int = 1) -> list[R]:
    """``[fn(x) for x in items]`` on at most ``workers`` threads, results in input order."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def get_json(url: str, params: dict[str, Any] | None = None, timeout: float = 30.0,
             body: dict[str, Any] | None = None, headers: dict[str, str] | None = None) -> Any:
    """GET (or POST when ``body`` is given) a JSON document, mapping failures onto client errors."""
    if params:
        url = f"{url}?{urllib.parse.urlencode(params)}"
    data = None if body is None else json.dumps(body).encode("utf-8")
    req = urllib.request.Request(url, data=data, headers={"Content-Type": "application/json", **(headers or {})})
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            return json.loads(resp.read().decode("utf-8"))
    except urllib.error.HTTPError as exc:
        if exc.code == 429:
            raise QuotaExceededError(f"HTTP 429 from {url.split('?')[0]}") from exc
        if exc.code >= 500:
            raise TransientClientError(f"HTTP {exc.code} from {url.split('?')[0]}") from exc
        raise ClientError(f"HTTP {exc.code} from {url.split('?')[0]}") from exc
    except (urllib.error.URLError, TimeoutError, ConnectionError) as exc:
        raise TransientClientError(str(exc)) from exc
