"""Per-run statistics, percentiles/CDFs, Monte Carlo aggregation and CSV output."""

from __future__ import annotations

import csv
import io
import math
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

PER_UE_HEADER = ["run", "seed", "scenario", "policy", "p", "density", "ue_id", "target_cell", "attached_gnb",
                 "hops", "throughput_bps", "drops"]
LATENCY_HEADER = ["run", "scenario", "policy", "p", "pctl50_us", "pctl95_us", "mean_us"]
DASH_HEADER = ["run", "scenario", "p", "ue_id", "stall_count", "mean_stall_s", "total_stall_s"]
HTTP_HEADER = ["run", "scenario", "p", "ue_id", "pages", "mean_page_time_s"]
SUMMARY_HEADER = ["scenario", "policy", "p", "metric", "mean", "ci95"]
Z95 = 1.959963984540054


def percentile(samples: Sequence[float], q: float) -> float:
    """Nearest-rank percentile of an ascending sequence."""
    n = len(samples)
    if n == 0:
        raise ValueError("percentile of an empty sample")
    if not 0 <= q <= 100:
        raise ValueError("q must lie in [0, 100]")
    idx = min(n - 1, max(0, math.ceil(q / 100.0 * n) - 1))
    return samples[idx]


def cdf_points(samples: Iterable[float]) -> list[tuple[float, float]]:
    values, counts = np.unique(np.asarray(list(samples), dtype=float), return_counts=True)
    frac = np.cumsum(counts) / counts.sum()
    frac[-1] = 1.0
    return [(float(v), float(f)) for v, f in zip(values, frac)]


@dataclass(frozen=True)
class Summary:
    mean: float
    ci95: float
    n: int


def aggregate_runs(runs: Sequence, statistic: Callable | str = lambda x: x) -> Summary:
    """Mean and 95% normal-approximation half-width of a per-run statistic.

    ``statistic`` is a callable on each run, or the name of a key in ``RunMetrics.headline()``.
    Runs where the statistic is undefined (NaN) are skipped.
    """
    if not runs:
        raise ValueError("aggregate_runs needs at least one run")
    if isinstance(statistic, str):
        name = statistic
        statistic = lambda r: r.headline()[name]  # noqa: E731
    vals = np.array([statistic(r) for r in runs], dtype=float)
    vals = vals[~np.isnan(vals)]
    if vals.size == 0:
        return Summary(math.nan, math.nan, 0)
    half = Z95 * vals.std(ddof=1) / math.sqrt(vals.size) if vals.size > 1 else 0.0
    return Summary(float(vals.mean()), float(half), int(vals.size))


@dataclass
class UeRecord:
    ue_id: int
    attached_gnb: int
    hops: int
    in_target: bool
    throughput_bps: float = 0.0
    drops: int = 0
    delivered_packets: int = 0
    stall_events: list[float] = field(default_factory=list)
    page_times_s: list[float] = field(default_factory=list)


@dataclass
class RunMetrics:
    run: int
    seed: int
    scenario: str
    policy: str
    p: float
    density: float
    traffic: str
    scope: str
    target_cell: int
    target_hops: int
    mean_iab_hops: float
    ues: list[UeRecord] = field(default_factory=list)
    target_latency_us: np.ndarray = field(default_factory=lambda: np.empty(0))
    all_latency_us: np.ndarray = field(default_factory=lambda: np.empty(0))
    outage_ues: int = 0
    events: int = 0

    @property
    def target_ues(self) -> list[UeRecord]:
        return [u for u in self.ues if u.in_target]

    def headline(self) -> dict[str, float]:
        """Per-run statistics; target-cell values unless the name says otherwise."""
        tgt = self.target_ues
        thr = sorted(u.throughput_bps for u in tgt)
        nan = math.nan
        out = {
            "throughput_p5_bps": percentile(thr, 5) if thr else nan,
            "throughput_p50_bps": percentile(thr, 50) if thr else nan,
            "throughput_p95_bps": percentile(thr, 95) if thr else nan,
            "throughput_total_target_bps": float(sum(thr)) if thr else nan,
            f"throughput_total_{self.scope}_bps": float(sum(u.throughput_bps for u in self.ues)),
            "latency_mean_us": _mean(self.target_latency_us),
            "latency_p50_us": _pct(self.target_latency_us, 50),
            "latency_p95_us": _pct(self.target_latency_us, 95),
            f"latency_mean_{self.scope}_us": _mean(self.all_latency_us),
            "hops_mean": self.mean_iab_hops,
            "target_hops": float(self.target_hops),
            "target_ues": float(len(tgt)),
            "drops_target": float(sum(u.drops for u in tgt)),
        }
        if self.traffic == "dash":
            events = [s for u in tgt for s in u.stall_events]
            out["rebuffer_event_mean_s"] = float(np.mean(events)) if events else 0.0
            out["rebuffer_time_per_ue_s"] = float(np.mean([sum(u.stall_events) for u in tgt])) if tgt else nan
            out["stall_count_per_ue"] = float(np.mean([len(u.stall_events) for u in tgt])) if tgt else nan
        if self.traffic == "http":
            pages = [t for u in tgt for t in u.page_times_s]
            out["page_time_mean_s"] = float(np.mean(pages)) if pages else nan
            out["pages_target"] = float(len(pages))
        return out


def _mean(x: np.ndarray) -> float:
    return float(x.mean()) if x.size else math.nan


def _pct(x: np.ndarray, q: float) -> float:
    return float(percentile(np.sort(x), q)) if x.size else math.nan


def expand_latency_runs(runs: Iterable[tuple[float, float, int]]) -> np.ndarray:
    """Expand ``(first, step, count)`` arithmetic runs into individual samples."""
    runs = list(runs)
    if not runs:
        return np.empty(0)
    first = np.array([r[0] for r in runs])
    step = np.array([r[1] for r in runs])
    count = np.array([r[2] for r in runs], dtype=np.int64)
    starts = np.repeat(first, count)
    steps = np.repeat(step, count)
    offsets = np.arange(count.sum()) - np.repeat(np.cumsum(count) - count, count)
    return starts + steps * offsets


def fmt(x) -> str:
    if isinstance(x, bool):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, float) and math.isnan(x):
        return "nan"
    return format(float(x), ".10g")


def per_ue_rows(m: RunMetrics) -> list[list]:
    return [[m.run, m.seed, m.scenario, m.policy, m.p, m.density, u.ue_id, u.in_target, u.attached_gnb, u.hops,
             u.throughput_bps, u.drops] for u in sorted(m.ues, key=lambda u: u.ue_id)]


def latency_rows(m: RunMetrics) -> list[list]:
    h = m.headline()
    return [[m.run, m.scenario, m.policy, m.p, h["latency_p50_us"], h["latency_p95_us"], h["latency_mean_us"]]]


def dash_rows(m: RunMetrics) -> list[list]:
    rows = []
    for u in sorted(m.target_ues, key=lambda u: u.ue_id):
        ev = u.stall_events
        rows.append([m.run, m.scenario, m.p, u.ue_id, len(ev), float(np.mean(ev)) if ev else 0.0, float(sum(ev))])
    return rows


def http_rows(m: RunMetrics) -> list[list]:
    rows = []
    for u in sorted(m.target_ues, key=lambda u: u.ue_id):
        pt = u.page_times_s
        rows.append([m.run, m.scenario, m.p, u.ue_id, len(pt), float(np.mean(pt)) if pt else math.nan])
    return rows


class ResultSink:
    """Collects finished runs from any thread; output order is fixed by ``(run, scenario, p)``."""

    def __init__(self):
        self._lock = threading.Lock()
        self.runs: list[RunMetrics] = []

    def append(self, m: RunMetrics) -> None:
        with self._lock:
            self.runs.append(m)

    def ordered(self) -> list[RunMetrics]:
        with self._lock:
            return sorted(self.runs, key=lambda m: (m.run, m.scenario, m.p, m.policy))


def write_csv(path: Path, header: list[str], rows: Iterable[list]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(x) if not isinstance(x, str) else x for x in row])
    Path(path).write_text(buf.getvalue())


def summary_rows(groups: dict[tuple[str, str, float], list[RunMetrics]]) -> list[list]:
    rows = []
    for (scenario, policy, p), runs in groups.items():
        names = sorted(set().union(*(r.headline().keys() for r in runs)))
        for name in names:
            s = aggregate_runs(runs, lambda r, n=name: r.headline().get(n, math.nan))
            rows.append([scenario, policy, p, name, s.mean, s.ci95])
    return rows


def write_all(out_dir: Path, runs: Sequence[RunMetrics], traffic: str) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_csv(out_dir / "per_ue.csv", PER_UE_HEADER, (row for m in runs for row in per_ue_rows(m)))
    write_csv(out_dir / "latency.csv", LATENCY_HEADER, (row for m in runs for row in latency_rows(m)))
    if traffic == "dash":
        write_csv(out_dir / "dash.csv", DASH_HEADER, (row for m in runs for row in dash_rows(m)))
    if traffic == "http":
        write_csv(out_dir / "http.csv", HTTP_HEADER, (row for m in runs for row in http_rows(m)))
    groups: dict[tuple[str, str, float], list[RunMetrics]] = {}
    for m in runs:
        groups.setdefault((m.scenario, m.policy, m.p), []).append(m)
    write_csv(out_dir / "summary.csv", SUMMARY_HEADER, summary_rows(groups))
