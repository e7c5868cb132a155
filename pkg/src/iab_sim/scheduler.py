"""Centralized per-tree TDM frame scheduler (weighted round robin, half-duplex)."""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

FRAME_US = 10_000
SLOT_US = 125
N_SLOTS = FRAME_US // SLOT_US


class BearerKind(enum.Enum):
    ACCESS = "access"
    BACKHAUL = "backhaul"


def ue_key(ue_id: int) -> int:
    """Node key of a UE; gNBs use their own (non-negative) id."""
    return -1 - ue_id


@dataclass(slots=True)
class Bearer:
    id: int
    tx: int
    rx: int
    kind: BearerKind
    weight: int = 1
    capacity_bps: float = 0.0
    deficit: float = 0.0

    @property
    def rx_key(self) -> int:
        return self.rx if self.kind is BearerKind.BACKHAUL else ue_key(self.rx)

    def label(self) -> str:
        rx = f"g{self.rx}" if self.kind is BearerKind.BACKHAUL else f"u{self.rx}"
        return f"g{self.tx}->{rx}"


@dataclass
class FrameAllocation:
    slots: list[tuple[int, ...]]
    slot_us: int = SLOT_US

    @property
    def frame_us(self) -> int:
        return self.slot_us * len(self.slots)

    def slot_counts(self) -> dict[int, int]:
        counts: dict[int, int] = {}
        for active in self.slots:
            for b in active:
                counts[b] = counts.get(b, 0) + 1
        return counts

    def trace(self, bearers: Mapping[int, Bearer]) -> str:
        lines = []
        for i, active in enumerate(self.slots):
            links = " ".join(bearers[b].label() for b in active) or "-"
            lines.append(f"{i} {links}")
        return "\n".join(lines) + "\n"


@dataclass
class Pipeline:
    """Per-bearer FIFO of ``[ue_id, bytes]`` segments used to carry notional backlog downstream.

    ``next_bearer(bearer, ue)`` returns the bearer at the receiving node that carries ``ue``.
    """

    segments: dict[int, deque] = field(default_factory=dict)
    next_bearer: Callable[[Bearer, int], int] | None = None


def frame_quotas(bearers: list[Bearer], n_slots: int) -> dict[int, int]:
    """Integer slot quotas proportional to weight, rounded by largest remainder.

    ``Bearer.deficit`` holds each bearer's carried rounding residue, so a bearer that was
    rounded down in one frame is first in line to be rounded up in the next.
    """
    if not bearers:
        return {}
    total_w = sum(b.weight for b in bearers)
    exact = {b.id: n_slots * b.weight / total_w for b in bearers}
    quota = {k: math.floor(v) for k, v in exact.items()}
    spare = n_slots - sum(quota.values())
    # the carried residue only decides who is rounded up
    by_need = sorted(bearers, key=lambda b: (-(exact[b.id] - quota[b.id] + b.deficit), b.id))
    for b in by_need[:spare]:
        quota[b.id] += 1
    for b in bearers:
        b.deficit += exact[b.id] - quota[b.id]
    return quota


def build_frame(bearers: Iterable[Bearer], backlog_bytes: Mapping[int, float], n_slots: int = N_SLOTS,
                slot_us: int = SLOT_US, pipeline: Pipeline | None = None,
                memo: dict | None = None) -> FrameAllocation:
    """Allocate ``n_slots`` slots greedily in deficit order under the half-duplex constraint.

    Slot by slot, backlogged bearers are visited in descending deficit order (ties by id)
    and added when both endpoints are still idle. A served bearer pays one slot; after the
    slot every backlogged bearer is credited its share of the backlogged quota total. The
    quotas come from ``frame_quotas`` over the bearers backlogged at frame start; bearers
    idle at frame start drop their carried residue, as in deficit round robin.

    When a ``pipeline`` is given, bytes notionally sent on a backhaul bearer become backlog
    of the next bearer at the child node from the following slot on.

    ``memo`` (any dict owned by the caller) caches allocations of frames in which the
    backlogged set never changes, which is the common case under saturation.
    """
    blist = sorted(bearers, key=lambda b: b.id)
    backlog = {b.id: float(backlog_bytes.get(b.id, 0)) for b in blist}
    per_slot = {b.id: b.capacity_bps * slot_us * 1e-6 / 8.0 for b in blist}
    for b in blist:
        if backlog[b.id] <= 0:
            b.deficit = 0.0
    quota = frame_quotas([b for b in blist if backlog[b.id] > 0], n_slots)
    live = tuple(b.id for b in blist if backlog[b.id] > 0 and per_slot[b.id] > 0)
    key = None
    if memo is not None:
        key = (n_slots, live, tuple(quota.get(bid, 0) for bid in live))
        hit = memo.get(key)
        if hit is not None and _memo_valid(hit, backlog, per_slot, live, blist, pipeline):
            return FrameAllocation(list(hit), slot_us)

    n = len(blist)
    ids = [b.id for b in blist]
    pos = {bid: i for i, bid in enumerate(ids)}
    tx = [b.tx for b in blist]
    rx = [b.rx_key for b in blist]
    rate = [per_slot[bid] for bid in ids]
    left = [backlog[bid] for bid in ids]
    segments = {}
    if pipeline is not None:
        segments = {k: deque([list(s) for s in v]) for k, v in pipeline.segments.items()}
    relay = [pipeline is not None and b.kind is BearerKind.BACKHAUL for b in blist]
    # bearers without a quota (zero share, or backlog arriving mid-frame through the
    # pipeline) form a second tier that only fills endpoints left idle by the first
    tier = [0 if quota.get(bid, 0) > 0 else 1 for bid in ids]
    share = [float(quota[bid]) if tier[i] == 0 else float(blist[i].weight) for i, bid in enumerate(ids)]
    deficit = [0.0] * n
    live_idx = [pos[bid] for bid in live]
    stable = True

    slots: list[tuple[int, ...]] = []
    for _ in range(n_slots):
        waiting = [i for i in range(n) if left[i] > 0 and rate[i] > 0]
        if stable and waiting != live_idx:
            stable = False
        waiting.sort(key=lambda i: (tier[i], -deficit[i], i))
        busy: set[int] = set()
        active: list[int] = []
        for i in waiting:
            a, b = tx[i], rx[i]
            if a in busy or b in busy:
                continue
            busy.add(a)
            busy.add(b)
            active.append(i)
        moves = []
        for i in active:
            sent = left[i] if left[i] < rate[i] else rate[i]
            left[i] -= sent
            deficit[i] -= 1.0
            if relay[i]:
                moves.extend(_advance(segments.get(ids[i]), sent, blist[i], pipeline))
        for dest, ue, nbytes in moves:
            j = pos.get(dest)
            if j is not None:
                left[j] += nbytes
                segments.setdefault(dest, deque()).append([ue, nbytes])
        tot = [0.0, 0.0]
        for i in waiting:
            if left[i] > 0:
                tot[tier[i]] += share[i]
        for i in waiting:
            if left[i] > 0:
                deficit[i] += share[i] / tot[tier[i]]
        active.sort()
        slots.append(tuple(ids[i] for i in active))
    backlog = dict(zip(ids, left))
    if key is not None and stable and all(backlog[bid] > 0 for bid in live):
        if len(memo) > 4096:
            memo.clear()
        memo[key] = tuple(slots)
    return FrameAllocation(slots, slot_us)


def _memo_valid(slots, backlog, per_slot, live, blist, pipeline) -> bool:
    # the cached frame applies if no live bearer can run dry and no idle bearer can
    # receive pipeline backlog during the frame
    counts: dict[int, int] = {}
    for active in slots:
        for bid in active:
            counts[bid] = counts.get(bid, 0) + 1
    for bid in live:
        if backlog[bid] <= counts.get(bid, 0) * per_slot[bid]:
            return False
    if pipeline is not None:
        live_set = set(live)
        for b in blist:
            if b.kind is BearerKind.BACKHAUL and b.id in live_set:
                for ue, _ in pipeline.segments.get(b.id, ()):
                    if pipeline.next_bearer(b, ue) not in live_set:
                        return False
    return True


def _advance(segs: deque | None, nbytes: float, bearer: Bearer, pipeline: Pipeline):
    out = []
    while segs and nbytes > 0:
        seg = segs[0]
        take = min(seg[1], nbytes)
        out.append((pipeline.next_bearer(bearer, seg[0]), seg[0], take))
        seg[1] -= take
        nbytes -= take
        if seg[1] <= 0:
            segs.popleft()
    return out


def validate_half_duplex(frame: FrameAllocation, bearers: Mapping[int, Bearer]) -> list[tuple[int, str]]:
    """Return ``(slot, node)`` for every node that appears in more than one active link of a slot."""
    violations = []
    for i, active in enumerate(frame.slots):
        seen: dict[str, int] = {}
        for bid in active:
            b = bearers[bid]
            rx = f"g{b.rx}" if b.kind is BearerKind.BACKHAUL else f"u{b.rx}"
            for node in (f"g{b.tx}", rx):
                seen[node] = seen.get(node, 0) + 1
        violations.extend((i, node) for node, n in sorted(seen.items()) if n > 1)
    return violations
