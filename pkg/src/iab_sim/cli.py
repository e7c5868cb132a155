"""Command-line experiment runner: ``iab-sim run|sweep|compare``."""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Sequence

from .channel import RadioConfig
from .deployment import ConfigError, DeploymentKind, InvalidRunError, dump_scenario
from .metrics import RunMetrics, ResultSink, fmt, write_all, write_csv
from .simulation import ExperimentConfig, Simulation, TrafficKind, build_network
from .topology import PolicyConfig, PolicyKind

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NO_RUNS = 3
MAX_ATTEMPTS = 20
PAIRED_HEADER = ["scenario_a", "scenario_b", "p", "metric", "mean_diff", "ci95"]

# further config keys and their parsers, accepted in config files and through --set
_RADIO_KEYS = {"carrier_ghz": float, "bandwidth_hz": float, "tx_power_dbm": float, "noise_figure_db": float,
               "gnb_elements": int, "ue_elements": int, "se_cap_bps_hz": float}
_PLAIN_KEYS = {"area_km2": float, "ue_density_factor": float, "warmup_s": float, "scope": str,
               "cbr_rate_bps": float, "packet_bytes": int, "queue_bytes": int, "window_bytes": int,
               "core_delay_us": int, "request_delay_us": int, "app_start_spread_s": float,
               "dash_ewma_alpha": float, "dash_safety_margin": float, "http_reading_mean_s": float}


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.replace(";", ",").split(",") if x.strip()]


def parse_policy(text: str, beta: float = 0.0, min_snr_db: float = -5.0) -> PolicyConfig:
    """``hqf``, ``wf``, ``biased`` or ``biased:<beta>``."""
    name, _, arg = text.strip().lower().partition(":")
    try:
        kind = PolicyKind(name)
    except ValueError:
        raise ConfigError(f"unknown policy {text!r} (expected hqf, wf or biased)") from None
    if arg:
        if kind is not PolicyKind.HQF_BIASED:
            raise ConfigError(f"only the biased policy takes a slope: {text!r}")
        beta = float(arg)
    if beta < 0:
        raise ConfigError("bias slope must be non-negative")
    return PolicyConfig(kind, beta if kind is PolicyKind.HQF_BIASED else 0.0, min_snr_db)


def read_config_file(path: str | Path) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out: dict[str, str] = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{n}: expected key = value")
        out[key.strip().replace("-", "_")] = value.strip()
    return out


@dataclasses.dataclass
class Plan:
    base: ExperimentConfig
    p_values: list[float]
    policies: list[PolicyConfig]
    dump: bool = False


def build_plan(settings: dict[str, str]) -> Plan:
    """Turn merged file/flag settings into a validated plan."""
    s = dict(settings)
    try:
        min_snr = float(s.pop("min_snr_db", -5.0))
        beta = float(s.pop("beta", 0.0))
        policy_text = s.pop("policy", "wf")
        policies_text = s.pop("policies", None)
        p_text = s.pop("p", None)
        p_values_text = s.pop("p_values", None)
        radio_kw = {k: t(s.pop(k)) for k, t in _RADIO_KEYS.items() if k in s}
        cfg = ExperimentConfig(radio=RadioConfig(**radio_kw) if radio_kw else RadioConfig())
        if "density" in s:
            cfg.density_gnb_km2 = float(s.pop("density"))
        if "scenario" in s:
            cfg.scenario = DeploymentKind(s.pop("scenario").lower())
        if "traffic" in s:
            cfg.traffic = TrafficKind(s.pop("traffic").lower())
        if "runs" in s:
            cfg.runs = int(s.pop("runs"))
        if "seed" in s:
            cfg.base_seed = int(s.pop("seed"))
        if "duration" in s:
            cfg.sim_duration_s = float(s.pop("duration"))
        if "out" in s:
            cfg.out_dir = s.pop("out")
        if "dash_ladder_mbps" in s:
            cfg.dash_ladder_bps = tuple(x * 1e6 for x in _floats(s.pop("dash_ladder_mbps")))
        for key, typ in _PLAIN_KEYS.items():
            if key in s:
                setattr(cfg, key, typ(s.pop(key)))
        dump = s.pop("dump", "0").lower() in ("1", "true", "yes")
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if s:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(s))}")
    if policies_text is not None:
        policies = [parse_policy(x, beta, min_snr) for x in policies_text.split(",") if x.strip()]
    else:
        policies = [parse_policy(policy_text, beta, min_snr)]
    if p_values_text is not None:
        p_values = _floats(p_values_text)
    else:
        p_values = [float(p_text)] if p_text is not None else [cfg.donor_fraction]
    if not policies:
        raise ConfigError("policy list is empty")
    if not p_values:
        raise ConfigError("p list is empty")
    cfg.policy = policies[0]
    cfg.donor_fraction = p_values[0]
    for p in p_values:
        dataclasses.replace(cfg, donor_fraction=p).check()
    if cfg.dash_ladder_bps and min(cfg.dash_ladder_bps) <= 0:
        raise ConfigError("DASH representations must be positive")
    return Plan(cfg, p_values, policies, dump)


def _job(args: tuple[ExperimentConfig, int, int, bool]) -> RunMetrics:
    cfg, seed, run_index, dump = args
    sim = Simulation(cfg, seed, run_index)
    m = sim.run()
    if dump:
        _dump_run(sim, cfg, run_index)
    return m


def _dump_run(sim: Simulation, cfg: ExperimentConfig, run_index: int) -> None:
    tag = f"{cfg.scenario.value}_{cfg.policy.label}_p{fmt(cfg.donor_fraction)}_run{run_index}"
    out = Path(cfg.out_dir) / "debug"
    out.mkdir(parents=True, exist_ok=True)
    (out / f"scenario_{tag}.txt").write_text(dump_scenario(sim.net.scenario))
    (out / f"tree_{tag}.txt").write_text(sim.net.tree.dump())
    plane = sim.planes[0]
    if plane.frame is not None:
        (out / f"last_frame_{tag}.txt").write_text(plane.frame.trace(plane.bearers))


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("IAB_SIM_THREADS", "1")))
    except ValueError:
        raise ConfigError("IAB_SIM_THREADS must be an integer") from None


def pick_seeds(cells: Sequence[ExperimentConfig], runs: int, base_seed: int) -> list[tuple[int, int]]:
    """``(run_index, seed)`` pairs valid for every cell; invalid draws are resampled deterministically."""
    chosen = []
    for i in range(runs):
        for attempt in range(MAX_ATTEMPTS):
            seed = base_seed + i + runs * attempt
            try:
                for cell in cells:
                    build_network(cell, seed)
            except InvalidRunError:
                continue
            chosen.append((i, seed))
            break
    return chosen


def execute(cells: Sequence[ExperimentConfig], dump: bool = False) -> list[RunMetrics]:
    """Run every cell on a shared seed list (common random numbers)."""
    base = cells[0]
    seeds = pick_seeds(cells, base.runs, base.base_seed)
    jobs = [(cell, seed, i, dump) for i, seed in seeds for cell in cells]
    sink = ResultSink()
    threads = _threads()
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            for m in pool.map(_job, jobs):
                sink.append(m)
    else:
        for job in jobs:
            sink.append(_job(job))
    return sink.ordered()


def paired_rows(runs: Sequence[RunMetrics]) -> list[list]:
    """Per-seed differences between scenarios, with a 95% half-width."""
    from .metrics import aggregate_runs
    by_key: dict[tuple[str, int], RunMetrics] = {(m.scenario, m.run): m for m in runs}
    p = runs[0].p
    rows = []
    pairs = [("all-wired", "iab"), ("iab", "only-donors"), ("all-wired", "only-donors")]
    for a, b in pairs:
        idx = sorted(r for (s, r) in by_key if s == a and (b, r) in by_key)
        if not idx:
            continue
        names = sorted(set(by_key[(a, idx[0])].headline()) & set(by_key[(b, idx[0])].headline()))
        for name in names:
            diffs = [by_key[(a, r)].headline()[name] - by_key[(b, r)].headline()[name] for r in idx]
            s = aggregate_runs(diffs)
            rows.append([a, b, p, name, s.mean, s.ci95])
    return rows


_SHOWN = ("throughput_p5_bps", "throughput_p50_bps", "latency_mean_us", "hops_mean",
          "rebuffer_event_mean_s", "page_time_mean_s")


def _print_summary(out_dir: Path, runs: Sequence[RunMetrics]) -> None:
    from .metrics import aggregate_runs
    groups: dict[tuple, list[RunMetrics]] = {}
    for m in runs:
        groups.setdefault((m.scenario, m.policy, m.p), []).append(m)
    for (scenario, policy, p), group in groups.items():
        parts = []
        for name in _SHOWN:
            if name in group[0].headline():
                s = aggregate_runs(group, name)
                parts.append(f"{name}={fmt(s.mean)}+-{fmt(s.ci95)}")
        print(f"{scenario} {policy} p={fmt(p)} runs={len(group)} " + " ".join(parts))
    print(f"results written to {out_dir}")


def cmd_run(plan: Plan) -> int:
    cfg = plan.base
    if len(plan.p_values) > 1 or len(plan.policies) > 1:
        raise ConfigError("run takes a single p and policy; use sweep for lists")
    runs = execute([cfg], plan.dump)
    if not runs:
        print("no valid runs", file=sys.stderr)
        return EXIT_NO_RUNS
    write_all(Path(cfg.out_dir), runs, cfg.traffic.value)
    _print_summary(Path(cfg.out_dir), runs)
    return EXIT_OK


def cmd_sweep(plan: Plan) -> int:
    cells = [dataclasses.replace(plan.base, donor_fraction=p, policy=pol)
             for p in plan.p_values for pol in plan.policies]
    runs = execute(cells, plan.dump)
    if not runs:
        print("no valid runs", file=sys.stderr)
        return EXIT_NO_RUNS
    write_all(Path(plan.base.out_dir), runs, plan.base.traffic.value)
    _print_summary(Path(plan.base.out_dir), runs)
    return EXIT_OK


def cmd_compare(plan: Plan) -> int:
    if len(plan.p_values) > 1 or len(plan.policies) > 1:
        raise ConfigError("compare takes a single p and policy")
    cells = [dataclasses.replace(plan.base, scenario=k) for k in DeploymentKind]
    runs = execute(cells, plan.dump)
    if not runs:
        print("no valid runs", file=sys.stderr)
        return EXIT_NO_RUNS
    out = Path(plan.base.out_dir)
    write_all(out, runs, plan.base.traffic.value)
    write_csv(out / "paired.csv", PAIRED_HEADER, paired_rows(runs))
    _print_summary(out, runs)
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="iab-sim", description="mmWave integrated access and backhaul simulator")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (("run", "independent runs of one configuration"),
                       ("sweep", "cartesian product over p values and policies"),
                       ("compare", "all-wired vs IAB vs only-donors on paired deployments")):
        sp = sub.add_parser(name, help=text)
        sp.add_argument("--config", help="flat key = value file; flags override it")
        sp.add_argument("--density", type=float, help="gNB density per km2")
        sp.add_argument("--p", help="donor fraction (sweep: comma-separated list)")
        sp.add_argument("--policy", help="hqf, wf or biased[:beta] (sweep: comma-separated list)")
        sp.add_argument("--beta", type=float, help="bias slope in dB per hop")
        sp.add_argument("--traffic", choices=[t.value for t in TrafficKind])
        sp.add_argument("--scenario", choices=[k.value for k in DeploymentKind])
        sp.add_argument("--runs", type=int)
        sp.add_argument("--seed", type=int, help="base seed; run i uses seed + i")
        sp.add_argument("--duration", type=float, help="simulated seconds per run")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="any config-file key (repeatable)")
        sp.add_argument("--dump", action="store_true", help="write scenario, tree and first-frame traces")
    return parser


def settings_from_args(args: argparse.Namespace) -> dict[str, str]:
    settings = read_config_file(args.config) if args.config else {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        settings[key.strip().replace("-", "_")] = value.strip()
    for key in ("density", "beta", "traffic", "scenario", "runs", "seed", "duration", "out"):
        value = getattr(args, key)
        if value is not None:
            settings[key] = str(value)
    if args.dump:
        settings["dump"] = "1"
    if args.command == "sweep":
        if args.p is not None:
            settings["p_values"] = args.p
        if args.policy is not None:
            settings["policies"] = args.policy
        if "p" in settings and "p_values" not in settings:
            settings["p_values"] = settings.pop("p")
        if "policy" in settings and "policies" not in settings:
            settings["policies"] = settings.pop("policy")
    else:
        if args.p is not None:
            settings["p"] = args.p
        if args.policy is not None:
            settings["policy"] = args.policy
    return settings


def main(argv: Sequence[str] | None = None) -> int:
    args = make_parser().parse_args(argv)
    try:
        plan = build_plan(settings_from_args(args))
        handler = {"run": cmd_run, "sweep": cmd_sweep, "compare": cmd_compare}[args.command]
        return handler(plan)
    except ConfigError as exc:
        print(f"iab-sim: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
