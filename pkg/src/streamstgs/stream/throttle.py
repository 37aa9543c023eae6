"""Token-bucket rate limiter for simulating constrained links in tests."""
from __future__ import annotations

import threading
import time


class TokenBucket:
    """Classic token bucket; ``consume`` blocks until tokens are available."""

    def __init__(self, rate_bytes_per_sec: float, capacity: float | None = None):
        if rate_bytes_per_sec <= 0:
            raise ValueError("rate must be positive")
        self.rate = float(rate_bytes_per_sec)
        self.capacity = float(capacity if capacity is not None else rate_bytes_per_sec)
        self._tokens = self.capacity
        self._stamp = time.monotonic()
        self._lock = threading.Lock()

    def set_rate(self, rate_bytes_per_sec: float) -> None:
        with self._lock:
            self._refill()
            self.rate = float(rate_bytes_per_sec)
            self.capacity = max(self.rate, 1.0)
            self._tokens = min(self._tokens, self.capacity)

    def _refill(self) -> None:
        now = time.monotonic()
        self._tokens = min(self.capacity, self._tokens + (now - self._stamp) * self.rate)
        self._stamp = now

    def try_consume(self, n: float) -> bool:
        with self._lock:
            self._refill()
            if n <= self._tokens:
                self._tokens -= n
                return True
            return False

    def consume(self, n: float) -> None:
        """Block until n tokens are granted (waits in rate-sized slices)."""
        remaining = float(n)
        while remaining > 0:
            with self._lock:
                self._refill()
                grant = min(remaining, self._tokens)
                self._tokens -= grant
                remaining -= grant
                deficit = remaining
                rate = self.rate
            if deficit > 0:
                time.sleep(min(deficit / rate, 0.05))
