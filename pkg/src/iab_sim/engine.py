"""Discrete-event core with integer microsecond time."""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field
from typing import Any, Callable

US_PER_MS = 1_000
US_PER_S = 1_000_000


def seconds(value: float) -> int:
    """Convert seconds to simulation ticks (rounded to the nearest microsecond)."""
    return int(round(value * US_PER_S))


def to_seconds(ticks: float) -> float:
    return ticks / US_PER_S


class SchedulingError(RuntimeError):
    """Raised when an event is scheduled before the current time."""


@dataclass(slots=True)
class Event:
    fire_at: int
    seq: int
    action: Callable[..., Any] = field(compare=False)
    payload: tuple = field(default=(), compare=False)
    cancelled: bool = field(default=False, compare=False)

    def cancel(self) -> None:
        self.cancelled = True


@dataclass(frozen=True)
class RunStats:
    events: int
    final_time: int


class Engine:
    """Single-threaded event loop ordered by ``(fire_at, seq)``."""

    def __init__(self) -> None:
        self._heap: list[tuple[int, int, Event]] = []
        self._seq = itertools.count()
        self._now = 0
        self.processed = 0

    def now(self) -> int:
        return self._now

    def schedule(self, fire_at: int, action: Callable[..., Any], *payload: Any) -> Event:
        fire_at = int(fire_at)
        if fire_at < self._now:
            raise SchedulingError(f"event at t={fire_at} us is before now={self._now} us")
        ev = Event(fire_at, next(self._seq), action, payload)
        heapq.heappush(self._heap, (fire_at, ev.seq, ev))
        return ev

    def schedule_in(self, delay: int, action: Callable[..., Any], *payload: Any) -> Event:
        return self.schedule(self._now + int(delay), action, *payload)

    def pending(self) -> int:
        return len(self._heap)

    def run_until(self, t_end: int) -> RunStats:
        t_end = int(t_end)
        heap = self._heap
        count = 0
        while heap and heap[0][0] <= t_end:
            fire_at, _, ev = heapq.heappop(heap)
            if ev.cancelled:
                continue
            self._now = fire_at
            ev.action(*ev.payload)
            count += 1
        if t_end > self._now:
            self._now = t_end
        self.processed += count
        return RunStats(events=count, final_time=self._now)
