"""Downlink application models: CBR/UDP, DASH client, 3GPP-style HTTP pages, windowed transport."""

from __future__ import annotations

import bisect
import enum
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .forwarding import CORE_DELAY_US, PACKET_BYTES, REQUEST_DELAY_US, Completion, PacketTrain

WINDOW_BYTES = 256 * 1024
DEFAULT_LADDER_BPS = (1e6, 2.5e6, 5e6, 8e6, 16e6, 35e6)


# --- constant bitrate -------------------------------------------------------------

@dataclass
class CbrFlow:
    ue_id: int
    rate_bps: float = 220e6
    packet_bytes: int = PACKET_BYTES
    start_us: float = 0.0
    emitted: int = 0

    @property
    def interval_us(self) -> float:
        return self.packet_bytes * 8 / self.rate_bps * 1e6 if self.rate_bps > 0 else math.inf

    def take_until(self, created_by_us: float, core_delay_us: float = CORE_DELAY_US) -> PacketTrain | None:
        """All packets created in ``(last emitted, created_by_us]`` as one train.

        Packet ``k`` (1-based) is created at ``start_us + k * interval``: a packet leaves
        once a full packet's worth of bits has accumulated at the source.
        """
        if self.rate_bps <= 0:
            return None
        gap = self.interval_us
        total = int(math.floor((created_by_us - self.start_us) / gap + 1e-9))
        n = total - self.emitted
        if n <= 0:
            return None
        first = self.start_us + (self.emitted + 1) * gap
        train = PacketTrain(self.ue_id, self.emitted, n, self.packet_bytes, first, first + core_delay_us, gap)
        self.emitted = total
        return train


def cbr_tick(flow: CbrFlow, now_us: float) -> tuple[PacketTrain | None, float]:
    """Emit one packet at ``now_us``; returns it with the next arrival time."""
    if flow.rate_bps <= 0:
        return None, math.inf
    pkt = PacketTrain(flow.ue_id, flow.emitted, 1, flow.packet_bytes, now_us, now_us + CORE_DELAY_US)
    flow.emitted += 1
    return pkt, now_us + flow.interval_us


# --- windowed transport -----------------------------------------------------------

@dataclass
class Transfer:
    ue_id: int
    nbytes: int
    first_seq: int
    last_seq: int
    started_us: float
    on_done: Callable[[float], None] | None = None
    finished_us: float | None = None
    failed: bool = False


class WindowedTransport:
    """Reliable stand-in for TCP: packets leave the server while in-flight bytes fit a fixed window.

    The window refills as packets reach the UE. Released trains are handed to ``inject``,
    which models the wired path to the donor.
    """

    def __init__(self, ue_id: int, inject: Callable[[PacketTrain], None] | None,
                 window_bytes: int = WINDOW_BYTES, packet_bytes: int = PACKET_BYTES,
                 core_delay_us: float = CORE_DELAY_US):
        self.ue_id = ue_id
        self.inject = inject
        self.window_bytes = window_bytes
        self.packet_bytes = packet_bytes
        self.core_delay_us = core_delay_us
        self.next_seq = 0
        self.released_seq = 0
        self.in_flight = 0
        self.max_in_flight = 0
        self.delivered_bytes = 0
        self._sizes: list[tuple[int, int, int]] = []  # (first_seq, last_seq, tail size) per object
        self._open: deque[Transfer] = deque()
        self._last_ends: list[int] = []
        # when set, refills are batched: on_delivered calls this and the owner pumps later
        self.on_credit: Callable[["WindowedTransport"], None] | None = None
        self.credit_at = -1.0

    @property
    def reachable(self) -> bool:
        return self.inject is not None

    def send(self, nbytes: int, now_us: float, on_done: Callable[[float], None] | None = None) -> Transfer:
        n = max(1, math.ceil(nbytes / self.packet_bytes))
        xfer = Transfer(self.ue_id, nbytes, self.next_seq, self.next_seq + n - 1, now_us, on_done)
        if not self.reachable:
            xfer.failed = True
            return xfer
        tail = nbytes - (n - 1) * self.packet_bytes
        self._sizes.append((xfer.first_seq, xfer.last_seq, tail))
        self._last_ends.append(xfer.last_seq)
        self.next_seq += n
        self._open.append(xfer)
        self.pump(now_us)
        return xfer

    def _size_of(self, seq: int) -> tuple[int, int]:
        """(packet size, number of following packets sharing that size within the object)."""
        i = bisect.bisect_left(self._last_ends, seq)
        first, last, tail = self._sizes[i]
        if seq == last:
            return tail, 1
        return self.packet_bytes, last - seq

    def pump(self, now_us: float) -> None:
        while self.released_seq < self.next_seq:
            size, run = self._size_of(self.released_seq)
            k = min(run, (self.window_bytes - self.in_flight) // size)
            if k <= 0:
                break
            train = PacketTrain(self.ue_id, self.released_seq, k, size, now_us, now_us + self.core_delay_us)
            self.released_seq += k
            self.in_flight += k * size
            self.max_in_flight = max(self.max_in_flight, self.in_flight)
            self.inject(train)

    def on_delivered(self, comp: Completion) -> None:
        train = comp.train
        nbytes = train.count * train.size
        self.in_flight -= nbytes
        self.delivered_bytes += nbytes
        last_time = comp.first_us + comp.spacing_us * (train.count - 1)
        while self._open and self._open[0].last_seq <= train.last_seq:
            xfer = self._open.popleft()
            xfer.finished_us = comp.first_us + comp.spacing_us * (xfer.last_seq - train.first_seq)
            self._sizes.pop(0)
            self._last_ends.pop(0)
            if xfer.on_done is not None:
                xfer.on_done(xfer.finished_us)
        if self.on_credit is None:
            self.pump(last_time)
            return
        if self.credit_at < 0:
            self.on_credit(self)
        self.credit_at = max(self.credit_at, last_time)

    def flush(self) -> None:
        """Release what the window allows as of the latest batched delivery."""
        if self.credit_at >= 0:
            t, self.credit_at = self.credit_at, -1.0
            self.pump(t)


def idealized_transport_send(transport: WindowedTransport | None, nbytes: int, now_us: float,
                             on_done: Callable[[float], None] | None = None) -> Transfer:
    """Send one object; a UE in outage (no transport route) gets a failed transfer."""
    if transport is None:
        return Transfer(-1, nbytes, 0, 0, now_us, on_done, failed=True)
    return transport.send(nbytes, now_us, on_done)


# --- DASH -------------------------------------------------------------------------

class PlayerState(enum.Enum):
    BUFFERING = "buffering"
    PLAYING = "playing"
    STALLED = "stalled"


@dataclass
class DashClient:
    representations_bps: tuple[float, ...] = DEFAULT_LADDER_BPS
    segment_duration_s: float = 2.0
    startup_buffer_s: float = 4.0
    max_buffer_s: float = 30.0
    ewma_alpha: float = 0.5
    safety_margin: float = 0.8
    buffer_s: float = 0.0
    state: PlayerState = PlayerState.BUFFERING
    throughput_estimate_bps: float | None = None
    stall_events: list[float] = field(default_factory=list)
    stall_started_s: float | None = None
    last_update_s: float = 0.0
    segments: int = 0
    chosen_bps: list[float] = field(default_factory=list)

    def __post_init__(self):
        self.representations_bps = tuple(sorted(self.representations_bps))

    def advance(self, now_s: float) -> None:
        """Drain the playback buffer up to ``now_s``; may enter STALLED."""
        dt = now_s - self.last_update_s
        if dt > 0 and self.state is PlayerState.PLAYING:
            if self.buffer_s > dt:
                self.buffer_s -= dt
            else:
                self.stall_started_s = self.last_update_s + self.buffer_s
                self.buffer_s = 0.0
                self.state = PlayerState.STALLED
        self.last_update_s = max(self.last_update_s, now_s)

    def finish(self, now_s: float) -> None:
        """Close an open stall at the end of the run (duration truncated at ``now_s``)."""
        self.advance(now_s)
        if self.state is PlayerState.STALLED and now_s > self.stall_started_s:
            self.stall_events.append(now_s - self.stall_started_s)
            self.stall_started_s = now_s

    @property
    def total_stall_s(self) -> float:
        return sum(self.stall_events)


def dash_select_representation(client: DashClient) -> float:
    ladder = client.representations_bps
    est = client.throughput_estimate_bps
    if est is None:
        return ladder[0]
    budget = client.safety_margin * est
    ok = [r for r in ladder if r <= budget * (1 + 1e-12)]
    return ok[-1] if ok else ladder[0]


def dash_on_segment(client: DashClient, now_s: float, download_s: float | None = None,
                    segment_bits: float | None = None) -> float | None:
    """Book a finished segment download; returns the stall just closed, if any."""
    client.advance(now_s)
    closed = None
    if client.state is PlayerState.STALLED:
        closed = now_s - client.stall_started_s
        if closed > 0:
            client.stall_events.append(closed)
        else:
            closed = None
        client.stall_started_s = None
        client.state = PlayerState.PLAYING
    client.buffer_s += client.segment_duration_s
    client.segments += 1
    if client.state is PlayerState.BUFFERING and client.buffer_s >= client.startup_buffer_s - 1e-9:
        client.state = PlayerState.PLAYING
    if download_s is not None and segment_bits is not None and download_s > 0:
        sample = segment_bits / download_s
        if client.throughput_estimate_bps is None:
            client.throughput_estimate_bps = sample
        else:
            a = client.ewma_alpha
            client.throughput_estimate_bps = a * sample + (1 - a) * client.throughput_estimate_bps
    return closed


# --- HTTP -------------------------------------------------------------------------

@dataclass(frozen=True)
class HttpPageModel:
    main_mean_bytes: float = 10_710.0
    main_sigma: float = 1.37
    main_min: float = 100.0
    main_max: float = 2e6
    embedded_mean_bytes: float = 7_758.0
    embedded_sigma: float = 2.36
    embedded_min: float = 50.0
    embedded_max: float = 2e6
    count_alpha: float = 1.1
    count_k: float = 2.0
    count_m: float = 55.0
    reading_mean_s: float = 30.0


def _truncated_lognormal(rng: np.random.Generator, mean: float, sigma: float, lo: float, hi: float,
                         size: int) -> np.ndarray:
    # location from the untruncated mean; out-of-range draws are redrawn
    mu = math.log(mean) - sigma ** 2 / 2
    out = rng.lognormal(mu, sigma, size)
    bad = (out < lo) | (out > hi)
    while bad.any():
        out[bad] = rng.lognormal(mu, sigma, int(bad.sum()))
        bad = (out < lo) | (out > hi)
    return out


def embedded_object_count(rng: np.random.Generator, model: HttpPageModel = HttpPageModel(),
                          size: int | None = None):
    """Pareto(alpha, k) capped at m, minus k, rounded to the nearest integer (range 0..m-k)."""
    u = rng.uniform(size=size)
    x = np.minimum(model.count_k * (1.0 - u) ** (-1.0 / model.count_alpha), model.count_m)
    n = np.floor(x - model.count_k + 0.5).astype(int)
    return int(n) if size is None else n


def http_generate_page(rng: np.random.Generator, model: HttpPageModel = HttpPageModel()) -> list[int]:
    """Object sizes of one page: the main object first, then the embedded objects."""
    main = _truncated_lognormal(rng, model.main_mean_bytes, model.main_sigma, model.main_min, model.main_max, 1)
    n = embedded_object_count(rng, model)
    emb = _truncated_lognormal(rng, model.embedded_mean_bytes, model.embedded_sigma,
                               model.embedded_min, model.embedded_max, n)
    return [int(round(main[0]))] + [int(round(x)) for x in emb]


def reading_time_s(rng: np.random.Generator, model: HttpPageModel = HttpPageModel()) -> float:
    return float(rng.exponential(model.reading_mean_s))


@dataclass
class HttpSession:
    ue_id: int
    model: HttpPageModel = HttpPageModel()
    page_times_s: list[float] = field(default_factory=list)
    first_request_us: float | None = None
    last_object_us: float | None = None
    failed_pages: int = 0


# --- application drivers ----------------------------------------------------------

class DashApp:
    """Segment request loop of one DASH client over a windowed transport."""

    def __init__(self, engine, client: DashClient, transport: WindowedTransport, start_us: int,
                 request_delay_us: int = REQUEST_DELAY_US):
        self.engine = engine
        self.client = client
        self.transport = transport
        self.request_delay_us = request_delay_us
        self._requested_at = 0
        self._bits = 0.0
        engine.schedule(start_us, self._request)

    def _request(self) -> None:
        now = self.engine.now()
        self.client.advance(now / 1e6)
        rate = dash_select_representation(self.client)
        self.client.chosen_bps.append(rate)
        self._requested_at = now
        self._bits = rate * self.client.segment_duration_s
        self.engine.schedule_in(self.request_delay_us, self._serve, int(math.ceil(self._bits / 8)))

    def _serve(self, nbytes: int) -> None:
        self.transport.send(nbytes, self.engine.now(), self._done)

    def _done(self, t_us: float) -> None:
        c = self.client
        dash_on_segment(c, t_us / 1e6, (t_us - self._requested_at) / 1e6, self._bits)
        wait_s = max(0.0, c.buffer_s - (c.max_buffer_s - c.segment_duration_s))
        self.engine.schedule(int(math.ceil(t_us + wait_s * 1e6)), self._request)


class HttpApp:
    """Page loop: main object, then all embedded objects pipelined, then reading time."""

    def __init__(self, engine, session: HttpSession, transport: WindowedTransport,
                 rng: np.random.Generator, start_us: int, request_delay_us: int = REQUEST_DELAY_US):
        self.engine = engine
        self.session = session
        self.transport = transport
        self.rng = rng
        self.request_delay_us = request_delay_us
        self._embedded: list[int] = []
        self._remaining = 0
        engine.schedule(start_us, self._page)

    def _page(self) -> None:
        sizes = http_generate_page(self.rng, self.session.model)
        self._embedded = sizes[1:]
        self.session.first_request_us = self.engine.now()
        self.engine.schedule_in(self.request_delay_us, self._serve_main, sizes[0])

    def _serve_main(self, nbytes: int) -> None:
        xfer = idealized_transport_send(self.transport, nbytes, self.engine.now(), self._main_done)
        if xfer.failed:
            self.session.failed_pages += 1

    def _main_done(self, t_us: float) -> None:
        if not self._embedded:
            self._page_done(t_us)
            return
        self.engine.schedule(int(math.ceil(t_us)) + self.request_delay_us, self._serve_embedded)

    def _serve_embedded(self) -> None:
        self._remaining = len(self._embedded)
        now = self.engine.now()
        for size in self._embedded:
            self.transport.send(size, now, self._object_done)

    def _object_done(self, t_us: float) -> None:
        self._remaining -= 1
        if self._remaining == 0:
            self._page_done(t_us)

    def _page_done(self, t_us: float) -> None:
        s = self.session
        s.last_object_us = t_us
        s.page_times_s.append((t_us - s.first_request_us) / 1e6)
        pause = reading_time_s(self.rng, s.model)
        self.engine.schedule(int(math.ceil(t_us + pause * 1e6)), self._page)
