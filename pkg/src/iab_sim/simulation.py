"""One simulation run: wires deployment, topology, scheduler, data plane and applications."""

from __future__ import annotations

import enum
import heapq
import itertools
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .channel import LinkTable, RadioConfig
from .deployment import (DeploymentKind, InvalidRunError, Scenario, build_scenario, draw_base,
                         select_target_cell)
from .engine import US_PER_S, Engine
from .forwarding import (CORE_DELAY_US, PACKET_BYTES, QUEUE_CAPACITY_BYTES, REQUEST_DELAY_US, BearerQueue,
                         Completion, PacketTrain, RouteTable)
from .metrics import RunMetrics, UeRecord, expand_latency_runs
from .scheduler import N_SLOTS, SLOT_US, Bearer, BearerKind, FrameAllocation, Pipeline, build_frame
from .topology import (IabTree, PolicyConfig, UeAssociation, associate_ues, downstream_ue_count,
                       form_topology)
from .traffic import (DEFAULT_LADDER_BPS, WINDOW_BYTES, CbrFlow, DashApp, DashClient, HttpApp, HttpPageModel,
                      HttpSession, WindowedTransport)


class TrafficKind(enum.Enum):
    CBR = "cbr"
    DASH = "dash"
    HTTP = "http"


@dataclass
class ExperimentConfig:
    density_gnb_km2: float = 45.0
    donor_fraction: float = 0.5
    area_km2: float = 1.0
    ue_density_factor: float = 10.0
    scenario: DeploymentKind = DeploymentKind.IAB
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    traffic: TrafficKind = TrafficKind.CBR
    radio: RadioConfig = field(default_factory=RadioConfig)
    sim_duration_s: float = 10.0
    warmup_s: float = 1.0
    runs: int = 1
    base_seed: int = 1
    out_dir: str = "results"
    scope: str = "tree"
    cbr_rate_bps: float = 220e6
    packet_bytes: int = PACKET_BYTES
    queue_bytes: int = QUEUE_CAPACITY_BYTES
    window_bytes: int = WINDOW_BYTES
    core_delay_us: int = CORE_DELAY_US
    request_delay_us: int = REQUEST_DELAY_US
    app_start_spread_s: float = 1.0
    dash_ladder_bps: tuple = DEFAULT_LADDER_BPS
    dash_ewma_alpha: float = 0.5
    dash_safety_margin: float = 0.8
    http_reading_mean_s: float = 30.0

    def check(self) -> None:
        from .deployment import ConfigError
        if self.density_gnb_km2 <= 0 or self.area_km2 <= 0 or self.ue_density_factor < 0:
            raise ConfigError("densities and area must be positive")
        if not 0 < self.donor_fraction <= 1:
            raise ConfigError("donor fraction p must lie in (0, 1]")
        if self.sim_duration_s <= self.warmup_s or self.warmup_s < 0:
            raise ConfigError("duration must exceed the warm-up")
        if self.runs < 1:
            raise ConfigError("runs must be at least 1")
        if self.scope not in ("tree", "network"):
            raise ConfigError("scope must be 'tree' or 'network'")
        if self.cbr_rate_bps < 0 or self.packet_bytes <= 0 or self.queue_bytes < self.packet_bytes:
            raise ConfigError("invalid traffic or queue parameters")
        if self.window_bytes < self.packet_bytes:
            raise ConfigError("window must hold at least one packet")


@dataclass
class Network:
    """Static part of a run: deployment, links, tree, association and target cell."""

    scenario: Scenario
    links: LinkTable
    tree: IabTree
    assoc: UeAssociation
    target_cell: int


def build_network(cfg: ExperimentConfig, seed: int, kind: DeploymentKind | None = None) -> Network:
    kind = cfg.scenario if kind is None else kind
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    base = draw_base(cfg.density_gnb_km2, cfg.ue_density_factor, cfg.area_km2, cfg.donor_fraction, rng, seed)
    scenario = build_scenario(base, kind)
    links = LinkTable(scenario, cfg.radio, seed)
    tree = form_topology(scenario, links, cfg.policy)
    assoc = associate_ues(scenario, tree, links, cfg.policy.min_snr_db)
    target = select_target_cell(scenario, tree, kind)
    if not assoc.ues_of(target):
        raise InvalidRunError(f"target cell {target} serves no UE")
    return Network(scenario, links, tree, assoc, target)


@dataclass
class FlowStats:
    generated: int = 0
    delivered: int = 0
    dropped: int = 0
    window_bytes: int = 0
    latency_runs: list = field(default_factory=list)


class TreePlane:
    """Bearers, queues and routes of one donor tree, served slot by slot."""

    def __init__(self, donor: int, tree: IabTree, assoc: UeAssociation, links, queue_bytes: int,
                 bearer_ids: itertools.count):
        self.donor = donor
        self.gnbs = tree.subtree(donor)
        self.bearers: dict[int, Bearer] = {}
        for g in self.gnbs:
            for c in tree.children.get(g, []):
                w = downstream_ue_count(tree, assoc, c)
                if w > 0:
                    b = Bearer(next(bearer_ids), g, c, BearerKind.BACKHAUL, w, links.gnb_capacity(g, c))
                    self.bearers[b.id] = b
            for ue in assoc.ues_of(g):
                b = Bearer(next(bearer_ids), g, ue, BearerKind.ACCESS, 1, links.ue_capacity(ue, g))
                self.bearers[b.id] = b
        self.ues = sorted(b.rx for b in self.bearers.values() if b.kind is BearerKind.ACCESS)
        self.queues = {bid: BearerQueue(queue_bytes) for bid in self.bearers}
        self.routes = RouteTable(tree, assoc, self.bearers.values())
        self.bytes_per_slot = {bid: b.capacity_bps * SLOT_US / 8e6 for bid, b in self.bearers.items()}
        self.bytes_per_us = {bid: b.capacity_bps / 8e6 for bid, b in self.bearers.items()}
        self.carry = {bid: 0.0 for bid in self.bearers}
        self.frame: FrameAllocation | None = None
        self.deliver = None  # set by the run: callable(Completion)
        self._memo: dict = {}
        self._lanes: dict[tuple[int, int], object] = {}

    def next_bearer(self, bearer: Bearer, ue: int) -> int:
        return self.routes.route_next_hop(bearer.rx, ue)

    def lane_for(self, bid: int, ue: int):
        try:
            return self._lanes[(bid, ue)]
        except KeyError:
            b = self.bearers[bid]
            lane = self.routes.route_next_hop(b.rx, ue) if b.kind is BearerKind.BACKHAUL else None
            self._lanes[(bid, ue)] = lane
            return lane

    def ingress(self, ue: int) -> tuple[int, object]:
        bid = self.routes.route_next_hop(self.donor, ue)
        return bid, self.lane_for(bid, ue)

    def room(self, lane) -> int:
        return self.queues[lane].free_bytes

    def start_frame(self) -> FrameAllocation:
        backlog: dict[int, float] = {}
        segments: dict[int, deque] = {}
        for bid, q in self.queues.items():
            if q.bytes_queued <= 0:
                continue
            b = self.bearers[bid]
            if b.kind is BearerKind.ACCESS:
                backlog[bid] = q.bytes_queued
                continue
            # backhaul backlog is capped by what the next hops can currently absorb
            caps = {lane: min(nb, self.queues[lane].free_bytes) for lane, nb in q.lane_bytes.items()}
            total = sum(caps.values())
            if total <= 0:
                continue
            backlog[bid] = total
            # only what the bearer could send this frame is propagated downstream
            horizon = self.bytes_per_slot[bid] * N_SLOTS
            segs: deque = deque()
            for train in heapq.merge(*q.lanes.values(), key=_train_order):
                lane = self.lane_for(bid, train.flow_id)
                take = min(train.nbytes, caps[lane], horizon)
                if take <= 0:
                    continue
                caps[lane] -= take
                horizon -= take
                if segs and segs[-1][0] == train.flow_id:
                    segs[-1][1] += take
                else:
                    segs.append([train.flow_id, take])
                if horizon <= 0:
                    break
            segments[bid] = segs
        self.frame = build_frame(self.bearers.values(), backlog, N_SLOTS, SLOT_US,
                                 Pipeline(segments, self.next_bearer), self._memo)
        return self.frame

    def serve_slot(self, index: int, t_us: int) -> None:
        for bid in self.frame.slots[index]:
            q = self.queues[bid]
            avail = self.carry[bid] + self.bytes_per_slot[bid]
            budget = int(avail)
            self.carry[bid] = avail - budget
            if q.bytes_queued <= 0:
                self.carry[bid] = 0.0
                continue
            b = self.bearers[bid]
            if b.kind is BearerKind.ACCESS:
                q.serve(budget, t_us, self.bytes_per_us[bid], None, self._access_sink)
            else:
                q.serve(budget, t_us, self.bytes_per_us[bid], self.room, self._relay_sink)

    def _access_sink(self, lane, comp: Completion) -> None:
        comp.train.hops += 1
        self.deliver(comp)

    def _relay_sink(self, lane, comp: Completion) -> None:
        train = comp.train
        train.hops += 1
        count = train.count
        accepted = self.queues[lane].enqueue(train, self.lane_for(lane, train.flow_id))
        if accepted != count:
            raise RuntimeError("relay queue overflow despite the room check")

    def queued_by_flow(self) -> dict[int, int]:
        out: dict[int, int] = {}
        for q in self.queues.values():
            for lane in q.lanes.values():
                for t in lane:
                    out[t.flow_id] = out.get(t.flow_id, 0) + t.count
        return out


class Simulation:
    """Discrete-event run of one configuration and seed."""

    def __init__(self, cfg: ExperimentConfig, seed: int, run_index: int = 0, network: Network | None = None):
        cfg.check()
        self.cfg = cfg
        self.seed = seed
        self.run_index = run_index
        self.net = network or build_network(cfg, seed)
        self.engine = Engine()
        self.t_end = int(round(cfg.sim_duration_s * US_PER_S))
        self.t_warm = int(round(cfg.warmup_s * US_PER_S))
        tree, assoc = self.net.tree, self.net.assoc
        target_donor = tree.donor_of(self.net.target_cell)
        donors = [target_donor] if cfg.scope == "tree" else sorted(tree.donors)
        ids = itertools.count()
        self.planes = [TreePlane(d, tree, assoc, self.net.links, cfg.queue_bytes, ids) for d in donors]
        self.plane_of: dict[int, TreePlane] = {}
        for plane in self.planes:
            plane.deliver = self._deliver
            for ue in plane.ues:
                self.plane_of[ue] = plane
        self.target_ues = set(assoc.ues_of(self.net.target_cell))
        self.flows = {ue: FlowStats() for ue in sorted(self.plane_of)}
        self._pipe: list = []
        self._pipe_seq = itertools.count()
        self.held: dict[int, deque] = {}
        self.cbr: dict[int, CbrFlow] = {}
        self.transports: dict[int, WindowedTransport] = {}
        self.dash: dict[int, DashClient] = {}
        self.http: dict[int, HttpSession] = {}
        self._slot = 0
        self._credit: list[WindowedTransport] = []
        self._start_apps()
        self.engine.schedule(0, self._tick)

    # --- applications -----------------------------------------------------------

    def _ue_rng(self, ue: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence([self.seed, 2, ue]))

    def _start_apps(self) -> None:
        cfg = self.cfg
        for ue in self.flows:
            rng = self._ue_rng(ue)
            if cfg.traffic is TrafficKind.CBR:
                flow = CbrFlow(ue, cfg.cbr_rate_bps, cfg.packet_bytes)
                flow.start_us = float(rng.uniform(0.0, flow.interval_us)) if cfg.cbr_rate_bps > 0 else 0.0
                self.cbr[ue] = flow
                continue
            tp = WindowedTransport(ue, self._inject, cfg.window_bytes, cfg.packet_bytes, cfg.core_delay_us)
            tp.on_credit = self._on_credit
            self.transports[ue] = tp
            start = int(rng.uniform(0.0, cfg.app_start_spread_s) * US_PER_S)
            if cfg.traffic is TrafficKind.DASH:
                client = DashClient(tuple(cfg.dash_ladder_bps), ewma_alpha=cfg.dash_ewma_alpha,
                                    safety_margin=cfg.dash_safety_margin)
                client.last_update_s = start / US_PER_S
                self.dash[ue] = client
                DashApp(self.engine, client, tp, start, cfg.request_delay_us)
            else:
                session = HttpSession(ue, HttpPageModel(reading_mean_s=cfg.http_reading_mean_s))
                self.http[ue] = session
                HttpApp(self.engine, session, tp, rng, start, cfg.request_delay_us)

    def _on_credit(self, tp: WindowedTransport) -> None:
        self._credit.append(tp)

    def _inject(self, train: PacketTrain) -> None:
        self.flows[train.flow_id].generated += train.count
        heapq.heappush(self._pipe, (train.ingress_us, next(self._pipe_seq), train))

    # --- data plane ---------------------------------------------------------------

    def _admit_windowed(self, now: int) -> None:
        pipe = self._pipe
        while pipe and pipe[0][0] <= now:
            train = heapq.heappop(pipe)[2]
            plane = self.plane_of[train.flow_id]
            bid, _ = plane.ingress(train.flow_id)
            self.held.setdefault(bid, deque()).append(train)
        for bid, waiting in self.held.items():
            if not waiting:
                continue
            plane = self.plane_of[waiting[0].flow_id]
            q = plane.queues[bid]
            while waiting:
                train = waiting[0]
                lane = plane.lane_for(bid, train.flow_id)
                count = train.count
                k = q.enqueue(train, lane)
                if k < count:
                    break  # backpressure: the rest waits at the donor ingress
                waiting.popleft()

    def _admit_cbr(self, now: int) -> None:
        per_bearer: dict[int, list[PacketTrain]] = {}
        for ue, flow in self.cbr.items():
            train = flow.take_until(now - self.cfg.core_delay_us, self.cfg.core_delay_us)
            if train is None:
                continue
            self.flows[ue].generated += train.count
            bid, _ = self.plane_of[ue].ingress(ue)
            per_bearer.setdefault(bid, []).append(train)
        for bid, trains in per_bearer.items():
            plane = self.plane_of[trains[0].flow_id]
            q = plane.queues[bid]
            total = sum(t.count for t in trains)
            room = q.free_bytes // self.cfg.packet_bytes
            if room < total:
                admit = _earliest_counts(trains, max(0, room))
            else:
                admit = [t.count for t in trains]
            order = sorted(range(len(trains)), key=lambda i: (trains[i].created_us, trains[i].flow_id))
            for i in order:
                train, k = trains[i], admit[i]
                dropped = train.count - k
                if k > 0:
                    part = train if k == train.count else train.take(k)
                    if q.enqueue(part, plane.lane_for(bid, train.flow_id)) != k:
                        raise RuntimeError("CBR admission exceeded queue room")
                self.flows[train.flow_id].dropped += dropped

    def _tick(self) -> None:
        now = self.engine.now()
        slot = self._slot
        if self._pipe or self.held:
            self._admit_windowed(now)
        if slot == 0:
            if self.cbr:
                self._admit_cbr(now)
            for plane in self.planes:
                plane.start_frame()
        for plane in self.planes:
            plane.serve_slot(slot, now)
        if self._credit:
            # window refills are batched per slot
            credit, self._credit = self._credit, []
            for tp in credit:
                tp.flush()
        self._slot = (slot + 1) % N_SLOTS
        nxt = now + SLOT_US
        if nxt < self.t_end:
            self.engine.schedule(nxt, self._tick)

    def _deliver(self, comp: Completion) -> None:
        train = comp.train
        ue = train.flow_id
        st = self.flows[ue]
        st.delivered += train.count
        last = comp.first_us + comp.spacing_us * (train.count - 1)
        if last >= self.t_warm:
            skip = 0
            if comp.first_us < self.t_warm:
                skip = int(math.ceil((self.t_warm - comp.first_us) / comp.spacing_us - 1e-9))
            n = train.count - skip
            st.window_bytes += n * train.size
            st.latency_runs.append((comp.first_us + skip * comp.spacing_us - (train.ingress_us + skip * train.spacing_us),
                                    comp.spacing_us - train.spacing_us, n))
        tp = self.transports.get(ue)
        if tp is not None:
            tp.on_delivered(comp)

    # --- run ----------------------------------------------------------------------

    def run(self) -> RunMetrics:
        self.engine.run_until(self.t_end)
        return self.collect()

    def in_flight(self) -> dict[int, int]:
        out: dict[int, int] = {}
        for plane in self.planes:
            for ue, n in plane.queued_by_flow().items():
                out[ue] = out.get(ue, 0) + n
        for _, _, t in self._pipe:
            out[t.flow_id] = out.get(t.flow_id, 0) + t.count
        for waiting in self.held.values():
            for t in waiting:
                out[t.flow_id] = out.get(t.flow_id, 0) + t.count
        return out

    def conservation(self) -> dict[int, tuple[int, int, int, int]]:
        """Per flow: ``(generated, delivered, dropped, in_flight)``."""
        inflight = self.in_flight()
        return {ue: (st.generated, st.delivered, st.dropped, inflight.get(ue, 0)) for ue, st in self.flows.items()}

    def collect(self) -> RunMetrics:
        cfg, net = self.cfg, self.net
        t_end_s = self.engine.now() / US_PER_S
        window_s = (self.t_end - self.t_warm) / US_PER_S
        for c in self.dash.values():
            c.finish(t_end_s)
        target_hops = net.tree.hop_count[net.target_cell]
        # relays exist only in the IAB deployment, so only there the policy matters
        policy = cfg.policy.label if cfg.scenario is DeploymentKind.IAB else "-"
        m = RunMetrics(self.run_index, self.seed, cfg.scenario.value, policy, cfg.donor_fraction,
                       cfg.density_gnb_km2, cfg.traffic.value, cfg.scope, net.target_cell, target_hops,
                       net.tree.mean_iab_hops(), outage_ues=len(net.assoc.outage), events=self.engine.processed)
        lat_target, lat_all = [], []
        for ue, st in self.flows.items():
            g = net.assoc.serving[ue]
            rec = UeRecord(ue, g, net.tree.hop_count[g] + 1, ue in self.target_ues,
                           throughput_bps=st.window_bytes * 8 / window_s, drops=st.dropped,
                           delivered_packets=st.delivered)
            if ue in self.dash:
                rec.stall_events = list(self.dash[ue].stall_events)
            if ue in self.http:
                rec.page_times_s = list(self.http[ue].page_times_s)
            m.ues.append(rec)
            lat_all.extend(st.latency_runs)
            if rec.in_target:
                lat_target.extend(st.latency_runs)
        m.target_latency_us = expand_latency_runs(lat_target)
        m.all_latency_us = expand_latency_runs(lat_all)
        return m


def _train_order(train: PacketTrain) -> int:
    return train.order


def _earliest_counts(trains: list[PacketTrain], m: int) -> list[int]:
    """How many leading packets of each train are among the ``m`` earliest-created overall."""
    if m <= 0:
        return [0] * len(trains)
    if len(trains) == 1:
        return [min(m, trains[0].count)]
    t0 = np.array([t.created_us for t in trains])
    gap = np.array([t.spacing_us if t.count > 1 else 1.0 for t in trains])
    cnt = np.array([t.count for t in trains])

    def upto(tau: float) -> np.ndarray:
        return np.clip(np.floor((tau - t0) / gap + 1e-9).astype(np.int64) + 1, 0, cnt)

    total = int(cnt.sum())
    if m >= total:
        return cnt.tolist()
    first = np.cumsum(cnt) - cnt
    times = np.repeat(t0, cnt) + np.repeat(gap, cnt) * (np.arange(total) - np.repeat(first, cnt))
    tau = float(np.partition(times, m - 1)[m - 1])
    out = upto(tau)
    extra = int(out.sum()) - m
    # equal creation times: the later flows in train order give way
    for i in range(len(trains) - 1, -1, -1):
        if extra <= 0:
            break
        cut = min(extra, int(out[i]))
        out[i] -= cut
        extra -= cut
    return out.tolist()


def simulate(cfg: ExperimentConfig, seed: int, run_index: int = 0) -> RunMetrics:
    """Build the network for ``seed`` and run it; raises InvalidRunError for unusable draws."""
    return Simulation(cfg, seed, run_index).run()
