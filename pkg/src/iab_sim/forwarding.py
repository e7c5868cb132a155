"""Downlink data plane: per-bearer queues, slot service, tree routing."""

from __future__ import annotations

import enum
import itertools
from collections import deque
from dataclasses import dataclass
from typing import Callable, Hashable, Iterable

import numpy as np

from .scheduler import Bearer, BearerKind
from .topology import IabTree, UeAssociation

PACKET_BYTES = 1400
QUEUE_CAPACITY_BYTES = 5_000_000
CORE_DELAY_US = 10_000
REQUEST_DELAY_US = 2_000


class RoutingError(LookupError):
    """Destination is not reachable downstream of the queried node."""


class Admission(enum.Enum):
    ACCEPTED = "accepted"
    DROPPED = "dropped"


@dataclass(slots=True)
class PacketTrain:
    """Consecutive equal-size packets of one flow with evenly spaced timestamps.

    A single packet is a train of length one. ``sent`` counts bytes of the head packet
    already on the air. Times are float microseconds.
    """

    flow_id: int
    first_seq: int
    count: int
    size: int
    created_us: float
    ingress_us: float
    spacing_us: float = 0.0
    sent: int = 0
    hops: int = 0
    order: int = 0

    @property
    def nbytes(self) -> int:
        return self.count * self.size - self.sent

    @property
    def last_seq(self) -> int:
        return self.first_seq + self.count - 1

    def take(self, k: int) -> "PacketTrain":
        """Detach the first ``k`` packets as a new train."""
        head = PacketTrain(self.flow_id, self.first_seq, k, self.size, self.created_us, self.ingress_us,
                           self.spacing_us, 0, self.hops, self.order)
        self.first_seq += k
        self.count -= k
        self.created_us += k * self.spacing_us
        self.ingress_us += k * self.spacing_us
        self.sent = 0
        return head


def make_packet(flow_id: int, seq: int, created_us: float, ingress_us: float | None = None,
                size: int = PACKET_BYTES) -> PacketTrain:
    return PacketTrain(flow_id, seq, 1, size, created_us, created_us if ingress_us is None else ingress_us)


@dataclass(slots=True)
class Completion:
    """Packets of ``train`` finished at ``first_us + i * spacing_us``."""

    train: PacketTrain
    first_us: float
    spacing_us: float

    def times(self) -> np.ndarray:
        return self.first_us + self.spacing_us * np.arange(self.train.count)


class BearerQueue:
    """Drop-tail FIFO for one bearer, split into lanes by next-hop bearer.

    Lanes keep per-destination FIFO order while letting a backhaul link skip traffic
    whose downstream queue is full; across lanes, service follows arrival order.
    """

    _orders = itertools.count()

    def __init__(self, capacity_bytes: int = QUEUE_CAPACITY_BYTES):
        self.capacity_bytes = capacity_bytes
        self.bytes_queued = 0
        self.lanes: dict[Hashable, deque[PacketTrain]] = {}
        self.lane_bytes: dict[Hashable, int] = {}

    def __len__(self) -> int:
        return sum(t.count for lane in self.lanes.values() for t in lane)

    @property
    def free_bytes(self) -> int:
        return self.capacity_bytes - self.bytes_queued

    def admit_count(self, train: PacketTrain) -> int:
        return max(0, min(train.count, self.free_bytes // train.size))

    def enqueue(self, train: PacketTrain, lane: Hashable = None) -> int:
        """Accept the longest prefix of ``train`` that fits; returns the accepted count.

        The rejected tail stays in ``train`` (count reduced accordingly is the caller's
        drop tally: ``original_count - accepted``).
        """
        k = self.admit_count(train)
        if k == 0:
            return 0
        part = train if k == train.count else train.take(k)
        part.order = next(self._orders)
        part.sent = 0
        self.lanes.setdefault(lane, deque()).append(part)
        self.lane_bytes[lane] = self.lane_bytes.get(lane, 0) + part.nbytes
        self.bytes_queued += part.nbytes
        return k

    def enqueue_packet(self, packet: PacketTrain, lane: Hashable = None) -> Admission:
        count = packet.count
        return Admission.ACCEPTED if self.enqueue(packet, lane) == count else Admission.DROPPED

    def fifo(self) -> Iterable[PacketTrain]:
        trains = [t for lane in self.lanes.values() for t in lane]
        return sorted(trains, key=lambda t: t.order)

    def serve(self, budget: int, t_start_us: float, bytes_per_us: float,
              room: Callable[[Hashable], float] | None = None,
              sink: Callable[[Hashable, Completion], None] | None = None) -> list[Completion]:
        """Transmit up to ``budget`` bytes as one byte stream starting at ``t_start_us``.

        A packet is only started when ``room(lane)`` can hold all of it; a partly sent
        packet always resumes, since its downstream space was checked when it started.
        Completed packets are handed to ``sink`` as they finish, so ``room`` stays current.
        """
        done: list[Completion] = []
        cursor = t_start_us
        blocked: set = set()
        while budget > 0:
            lane, train = None, None
            for key, trains in self.lanes.items():
                if key not in blocked and (train is None or trains[0].order < train.order):
                    lane, train = key, trains[0]
            if train is None:
                break
            limit = train.count
            if room is not None:
                fit = int(max(0.0, room(lane)) // train.size)
                limit = min(train.count, max(fit, 1 if train.sent else 0))
                if limit == 0:
                    blocked.add(lane)
                    continue
            first_need = train.size - train.sent
            if budget < first_need:
                train.sent += budget
                self._account(lane, budget)
                budget = 0
                break
            k = min(limit, 1 + (budget - first_need) // train.size)
            nbytes = first_need + (k - 1) * train.size
            comp = Completion(None, cursor + first_need / bytes_per_us, train.size / bytes_per_us)
            cursor += nbytes / bytes_per_us
            budget -= nbytes
            self._account(lane, nbytes)
            lane_q = self.lanes[lane]
            if k == train.count:
                lane_q.popleft()
                train.sent = 0
                comp.train = train
            else:
                comp.train = train.take(k)
                if k == limit:
                    blocked.add(lane)
            if not lane_q:
                del self.lanes[lane]
                del self.lane_bytes[lane]
            done.append(comp)
            if sink is not None:
                sink(lane, comp)
        return done

    def _account(self, lane, nbytes: int) -> None:
        self.bytes_queued -= nbytes
        self.lane_bytes[lane] -= nbytes


class RouteTable:
    """Per-gNB map from destination UE to the outgoing bearer, derived from the tree."""

    def __init__(self, tree: IabTree, assoc: UeAssociation, bearers: Iterable[Bearer]):
        self.table: dict[int, dict[int, int]] = {}
        access: dict[int, int] = {}
        backhaul: dict[tuple[int, int], int] = {}
        for b in bearers:
            if b.kind is BearerKind.ACCESS:
                access[b.rx] = b.id
            else:
                backhaul[(b.tx, b.rx)] = b.id
        for ue, g in sorted(assoc.serving.items()):
            if ue not in access:
                continue
            path = tree.path_to_donor(g)
            self.table.setdefault(g, {})[ue] = access[ue]
            for child, parent in zip(path, path[1:]):
                self.table.setdefault(parent, {})[ue] = backhaul[(parent, child)]

    def route_next_hop(self, at: int, dst: int) -> int:
        try:
            return self.table[at][dst]
        except KeyError:
            raise RoutingError(f"UE {dst} is not downstream of gNB {at}") from None
