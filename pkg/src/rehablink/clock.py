"""Injectable time source so retry/backoff logic is testable in virtual time."""

from __future__ import annotations

import heapq
import time
from datetime import datetime, timezone


class SystemClock:
    def now(self) -> float:
        return time.time()

    def now_dt(self) -> datetime:
        return datetime.now(timezone.utc)

    def sleep(self, seconds: float) -> None:
        time.sleep(seconds)


class VirtualClock:
    """Deterministic clock: sleep() advances time instantly."""

    def __init__(self, start: float = 1_735_689_600.0):  # 2025-01-01T00:00Z
        self._now = start
        self.sleeps: list[float] = []

    def now(self) -> float:
        return self._now

    def now_dt(self) -> datetime:
        return datetime.fromtimestamp(self._now, tz=timezone.utc)

    def sleep(self, seconds: float) -> None:
        self.sleeps.append(seconds)
        self._now += max(0.0, seconds)

    def advance_to(self, t: float) -> None:
        self._now = max(self._now, t)


def next_due(times: list[float]) -> float | None:
    return heapq.nsmallest(1, times)[0] if times else None
