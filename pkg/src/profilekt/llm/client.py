"""Minimal chat-completions client: retries with exponential backoff, bounded in-flight requests."""

from __future__ import annotations

import logging
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Sequence

import httpx

log = logging.getLogger(__name__)

RETRY_STATUS = {408, 409, 429, 500, 502, 503, 504}


class BackendError(RuntimeError):
    def __init__(self, message: str, attempts: int):
        super().__init__(message)
        self.attempts = attempts


@dataclass(frozen=True)
class BackendConfig:
    base_url: str = "http://127.0.0.1:8000/v1"
    model: str = "local-model"
    api_key_env: str = "OPENAI_API_KEY"
    temperature: float = 0.0
    top_p: float = 0.7
    max_in_flight: int = 4
    max_attempts: int = 3
    backoff_base: float = 0.5
    backoff_max: float = 8.0
    timeout: float = 60.0

    def __post_init__(self):
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")

    @classmethod
    def analyst(cls, **kw) -> "BackendConfig":
        return cls(**{"temperature": 0.95, **kw})

    @classmethod
    def predictor(cls, **kw) -> "BackendConfig":
        return cls(**{"temperature": 0.0, **kw})

    def with_(self, **kw) -> "BackendConfig":
        return replace(self, **kw)


@dataclass
class Completion:
    text: str
    attempts: int

    @property
    def retries(self) -> int:
        return self.attempts - 1


class ChatClient:
    """Thread-safe; every request goes through :meth:`complete`, which owns retry and the in-flight bound."""

    def __init__(self, config: BackendConfig, transport: httpx.BaseTransport | None = None):
        self.config = config
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(config.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self._http = httpx.Client(base_url=config.base_url.rstrip("/"), headers=headers,
                                  timeout=config.timeout, transport=transport)
        self._slots = threading.BoundedSemaphore(config.max_in_flight)
        self._count_lock = threading.Lock()
        self.requests = 0
        self.retries = 0

    def close(self) -> None:
        self._http.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _backoff(self, attempt: int) -> float:
        return min(self.config.backoff_max, self.config.backoff_base * 2 ** (attempt - 1))

    def complete(self, messages: list[dict]) -> Completion:
        body = {"model": self.config.model, "messages": messages,
                "temperature": self.config.temperature, "top_p": self.config.top_p}
        last_error = ""
        for attempt in range(1, self.config.max_attempts + 1):
            with self._count_lock:
                self.requests += 1
                self.retries += attempt > 1
            try:
                with self._slots:
                    resp = self._http.post("/chat/completions", json=body)
                if resp.status_code in RETRY_STATUS:
                    last_error = f"HTTP {resp.status_code}"
                else:
                    resp.raise_for_status()
                    return Completion(resp.json()["choices"][0]["message"]["content"], attempt)
            except (httpx.TransportError, httpx.TimeoutException) as exc:
                last_error = f"{type(exc).__name__}: {exc}"
            except httpx.HTTPStatusError as exc:
                raise BackendError(f"HTTP {exc.response.status_code} from backend", attempt) from exc
            if attempt < self.config.max_attempts:
                log.warning("attempt %d failed (%s); retrying", attempt, last_error)
                time.sleep(self._backoff(attempt))
        raise BackendError(f"gave up after {self.config.max_attempts} attempts: {last_error}",
                           self.config.max_attempts)

    def complete_many(self, batches: Sequence[list[dict]]) -> list[Completion]:
        """Issue requests concurrently; results come back in input order."""
        with ThreadPoolExecutor(max_workers=self.config.max_in_flight) as pool:
            return list(pool.map(self.complete, batches))
