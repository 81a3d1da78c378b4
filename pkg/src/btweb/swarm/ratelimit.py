"""Upload/download pacing: a token bucket with one-second granularity.

Tokens are byte credits.  Refill happens in whole-second steps, so a
limit of N bytes/s admits at most N bytes in any wall-clock second
(plus the initial burst).  Capacity grows to the largest single grant
ever requested, so one oversized piece delays rather than deadlocks.
"""

from __future__ import annotations

import math

# slack when counting elapsed whole seconds, so a caller that waits
# exactly retry_after() is never betrayed by float rounding
STEP_SLACK = 1e-9


class TokenBucket:
    def __init__(self, rate: int | None, capacity: int | None = None):
        """rate is bytes per second; None means unlimited."""
        if rate is not None and rate <= 0:
            raise ValueError("rate must be positive or None")
        self.rate = rate
        self.capacity = capacity if capacity is not None else (rate or 0)
        self.tokens = self.capacity
        self._mark = 0.0  # time of the last whole-second accounting
        self._primed = False

    def _refill(self, now: float) -> None:
        if not self._primed:
            self._mark = now
            self._primed = True
            return
        steps = int(now - self._mark + STEP_SLACK)
        if steps > 0:
            self.tokens = min(self.capacity, self.tokens + steps * self.rate)
            self._mark += steps

    def ensure_capacity(self, n: int) -> None:
        if n > self.capacity:
            self.capacity = n

    def try_take(self, n: int, now: float) -> bool:
        if self.rate is None:
            return True
        self.ensure_capacity(n)
        self._refill(now)
        if self.tokens >= n:
            self.tokens -= n
            return True
        return False

    def retry_after(self, n: int, now: float) -> float:
        """Seconds until a take of n could succeed (0 when it already can)."""
        if self.rate is None:
            return 0.0
        self.ensure_capacity(n)
        self._refill(now)
        deficit = n - self.tokens
        if deficit <= 0:
            return 0.0
        seconds = math.ceil(deficit / self.rate)
        return max(0.0, self._mark + seconds - now)
