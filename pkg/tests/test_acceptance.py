"""End-to-end acceptance checks, one test per criterion.

Each test appends a PASS/FAIL line to ``REPORT``; the lines are echoed at the end of the
pytest session. Long criteria drive the ``iab-sim`` CLI and read its CSV output.
Set IAB_SIM_THREADS to spread runs over several processes.
"""

import csv
import itertools
import random

import numpy as np

from conftest import chain_config, chain_network
from iab_sim import cli
from iab_sim.deployment import DeploymentKind, InvalidRunError, sample_ppp
from iab_sim.scheduler import Bearer, build_frame, validate_half_duplex
from iab_sim.simulation import ExperimentConfig, Simulation, TrafficKind
from iab_sim.topology import Candidate, PolicyConfig, PolicyKind, select_parent
from iab_sim.traffic import embedded_object_count, http_generate_page

REPORT: list[str] = []
SEEDS = 20
AW, IAB, OD = "all-wired", "iab", "only-donors"


def report(name, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} {name}: {detail}"
    REPORT.append(line)
    print(line)
    assert ok, line


def summary(out):
    """{(scenario, policy, p, metric): (mean, ci95)} from summary.csv."""
    with open(out / "summary.csv", newline="") as fh:
        return {(r["scenario"], r["policy"], float(r["p"]), r["metric"]): (float(r["mean"]), float(r["ci95"]))
                for r in csv.DictReader(fh)}


def run_cli(out, *args):
    code = cli.main([*args, "--out", str(out)])
    assert code == cli.EXIT_OK
    return summary(out)


def by_scenario(s, p, metric, policy="wf"):
    return {sc: s[(sc, policy if sc == IAB else "-", p, metric)] for sc in (AW, IAB, OD)}


def gap_ok(hi, lo):
    """Mean ordering with a gap wider than both 95% half-widths."""
    return hi[0] - lo[0] > max(hi[1], lo[1])


# --- 1: 5th-percentile throughput ordering -----------------------------------------

def test_c1_fifth_percentile_throughput_ordering(tmp_path):
    parts, ok = [], True
    for p in (0.3, 0.5):
        s = run_cli(tmp_path / f"p{p}", "compare", "--density", "45", "--p", str(p), "--traffic", "cbr",
                    "--runs", str(SEEDS), "--duration", "10", "--seed", "1")
        v = by_scenario(s, p, "throughput_p5_bps")
        ok &= gap_ok(v[AW], v[IAB]) and gap_ok(v[IAB], v[OD])
        parts.append(f"p={p} " + " ".join(f"{k}={m / 1e6:.1f}+-{c / 1e6:.1f}Mbps" for k, (m, c) in v.items()))
        if p == 0.5:
            ratio = v[IAB][0] / v[AW][0]
            ok &= 0.5 <= ratio <= 1.0
            parts.append(f"IAB/AW={ratio:.3f}")
    report("C1 5th-pct throughput AW>=IAB>=OD, IAB/AW in [0.5,1]", ok, "; ".join(parts))


# --- 2: policy trends ------------------------------------------------------------

P_SWEEP = (0.2, 0.3, 0.4, 0.5)


def test_c2_wired_first_vs_highest_quality(tmp_path):
    s = run_cli(tmp_path / "sweep", "sweep", "--density", "45", "--p", ",".join(map(str, P_SWEEP)),
                "--policy", "hqf,wf", "--traffic", "cbr", "--runs", str(SEEDS), "--duration", "10", "--seed", "1")
    parts, ok = [], True
    for p in P_SWEEP:
        lat = {pol: s[(IAB, pol, p, "latency_mean_us")][0] for pol in ("wf", "hqf")}
        thr = {pol: s[(IAB, pol, p, "throughput_total_target_bps")][0] for pol in ("wf", "hqf")}
        ok &= lat["wf"] <= lat["hqf"] and thr["wf"] >= thr["hqf"]
        parts.append(f"p={p} lat wf/hqf={lat['wf'] / 1e3:.1f}/{lat['hqf'] / 1e3:.1f}ms "
                     f"thr wf/hqf={thr['wf'] / 1e6:.0f}/{thr['hqf'] / 1e6:.0f}Mbps")
    # hop counts do not depend on the run length
    h = run_cli(tmp_path / "hops", "sweep", "--density", "45", "--p", ",".join(map(str, P_SWEEP)),
                "--policy", "wf,hqf,biased:0", "--runs", str(SEEDS), "--duration", "0.2",
                "--set", "warmup_s=0.1", "--seed", "1")
    for p in P_SWEEP:
        hops = [h[(IAB, pol, p, "hops_mean")][0] for pol in ("wf", "hqf", "biased0")]
        ok &= hops[0] <= hops[1] <= hops[2]
        parts.append(f"p={p} hops wf/hqf/b0={hops[0]:.2f}/{hops[1]:.2f}/{hops[2]:.2f}")
    report("C2 WF latency<=HQF, WF throughput>=HQF, hops WF<=HQF<=beta0", ok, "; ".join(parts))


# --- 3, 4: DASH and HTTP orderings -------------------------------------------------

def test_c3_dash_rebuffering_ordering(tmp_path):
    parts, ok = [], True
    for p in (0.3, 0.5):
        s = run_cli(tmp_path / f"p{p}", "compare", "--density", "30", "--p", str(p), "--traffic", "dash",
                    "--runs", str(SEEDS), "--duration", "20", "--seed", "1")
        v = {k: m for k, (m, _) in by_scenario(s, p, "rebuffer_event_mean_s").items()}
        ok &= v[OD] > v[IAB] >= v[AW]
        # ratios in multiplied form, so an all-wired mean of zero stays well defined
        ok &= v[IAB] <= 2 * v[AW]
        if p == 0.3:
            ok &= v[OD] >= 2 * v[AW]
        parts.append(f"p={p} " + " ".join(f"{k}={m:.3f}s" for k, m in v.items()))
    report("C3 DASH rebuffering OD>IAB>=AW, OD>=2AW (p=0.3), IAB<=2AW", ok, "; ".join(parts))


def test_c4_http_page_time_ordering(tmp_path):
    p = 0.3
    s = run_cli(tmp_path / "http", "compare", "--density", "30", "--p", str(p), "--traffic", "http",
                "--runs", str(SEEDS), "--duration", "20", "--seed", "1")
    v = {k: m for k, (m, _) in by_scenario(s, p, "page_time_mean_s").items()}
    ok = v[OD] > v[IAB] >= v[AW]
    report("C4 HTTP page time OD>IAB>=AW at p=0.3", ok, " ".join(f"{k}={m * 1e3:.2f}ms" for k, m in v.items()))


# --- 5: chain oracle -------------------------------------------------------------

def test_c5_two_hop_chain_goodput():
    c = 1e9
    m = Simulation(chain_config(cbr_rate_bps=2 * c, sim_duration_s=2.0), 1, network=chain_network(c)).run()
    got = m.ues[0].throughput_bps
    report("C5 chain goodput C/2 within 5%", abs(got - c / 2) <= 0.05 * c / 2,
           f"goodput={got / 1e6:.1f}Mbps expected={c / 2e6:.0f}Mbps")


# --- 6: invariants over randomized runs ------------------------------------------

def _forest_ok(sim):
    tree, scenario = sim.net.tree, sim.net.scenario
    for n in tree.attached:
        path = tree.path_to_donor(n)
        if not scenario.gnbs[path[-1]].is_donor or len(set(path)) != len(path):
            return False
        if len(path) - 1 != tree.hop_count[n]:
            return False
    return True


def _wrr_ok(sim):
    # bearers at each donor, all saturated at once
    for plane in sim.planes:
        mine = [Bearer(b.id, b.tx, b.rx, b.kind, b.weight, b.capacity_bps)
                for b in plane.bearers.values() if b.tx == plane.donor and b.capacity_bps > 0]
        if not mine:
            continue
        total = sum(b.weight for b in mine)
        for _ in range(3):
            counts = build_frame(mine, {b.id: 1e12 for b in mine}).slot_counts()
            if any(abs(counts.get(b.id, 0) - 80 * b.weight / total) > 1 + 1e-9 for b in mine):
                return False
    return True


def test_c6_invariants_over_random_runs():
    rnd = random.Random(2024)
    done = violations = 0
    failures = {"half-duplex": 0, "conservation": 0, "forest": 0, "wrr": 0, "windowed drops": 0}
    while done < 100:
        cfg = ExperimentConfig(density_gnb_km2=rnd.choice([15, 30, 45]), donor_fraction=rnd.choice([0.2, 0.3, 0.5, 1.0]),
                               scenario=rnd.choice(list(DeploymentKind)), traffic=rnd.choice(list(TrafficKind)),
                               policy=rnd.choice([PolicyConfig(PolicyKind.HQF), PolicyConfig(PolicyKind.WF),
                                                  PolicyConfig(PolicyKind.HQF_BIASED, 3.0)]),
                               sim_duration_s=0.3, warmup_s=0.1, scope="network", app_start_spread_s=0.05)
        try:
            sim = Simulation(cfg, rnd.randrange(1 << 30))
        except InvalidRunError:
            continue
        bad_frames = []
        for plane in sim.planes:
            def wrapped(plane=plane, orig=plane.start_frame):
                f = orig()
                bad_frames.extend(validate_half_duplex(f, plane.bearers))
                return f
            plane.start_frame = wrapped
        m = sim.run()
        checks = {
            "half-duplex": not bad_frames,
            "conservation": all(g == d + x + f for g, d, x, f in sim.conservation().values()),
            "forest": _forest_ok(sim),
            "wrr": _wrr_ok(sim),
            "windowed drops": cfg.traffic is TrafficKind.CBR or all(u.drops == 0 for u in m.ues),
        }
        for k, v in checks.items():
            failures[k] += not v
        violations += not all(checks.values())
        done += 1
    report("C6 invariants over 100 randomized runs", violations == 0,
           f"runs={done} " + " ".join(f"{k}={v}" for k, v in failures.items()))


# --- 7: policy oracle ------------------------------------------------------------

def _argmax_reference(cands, policy):
    def metric(c):
        if policy.kind is PolicyKind.HQF:
            return c.snr_db
        if policy.kind is PolicyKind.WF:
            return c.snr_db + (1e6 if c.is_donor else 0.0)
        return c.snr_db - policy.beta_db_per_hop * c.hop_count
    top = max(metric(c) for c in cands)
    return min(c.gnb_id for c in cands if metric(c) == top)


def test_c7_policy_oracle():
    snrs, hops = (-5.0, 0.0, 4.0, 12.5, 30.0), (0, 1, 2, 3)
    policies = [PolicyConfig(PolicyKind.HQF), PolicyConfig(PolicyKind.WF)]
    policies += [PolicyConfig(PolicyKind.HQF_BIASED, b) for b in (0, 3, 10, 20)]
    n = mismatches = 0
    for s3 in itertools.product(snrs, repeat=3):
        for h3 in itertools.product(hops, repeat=3):
            cands = [Candidate(i, s, h, h == 0) for i, (s, h) in enumerate(zip(s3, h3))]
            for pol in policies:
                mismatches += select_parent(cands, pol) != _argmax_reference(cands, pol)
            mismatches += select_parent(cands, policies[2]) != select_parent(cands, policies[0])
            n += 1
    report("C7 select_parent matches exhaustive argmax", mismatches == 0, f"instances={n} mismatches={mismatches}")


# --- 8: statistical oracles ------------------------------------------------------

def test_c8_statistical_oracles():
    g = np.random.default_rng(8)
    c45 = np.array([len(sample_ppp(45, 1, g)) for _ in range(10_000)])
    c30 = np.array([len(sample_ppp(30, 1, g)) for _ in range(10_000)])
    k = embedded_object_count(g, size=100_000)
    main = np.array([http_generate_page(g)[0] for _ in range(100_000)])
    checks = {
        "ppp_mean45": (c45.mean(), 44.5 <= c45.mean() <= 45.5),
        "ppp_var30": (c30.var(ddof=1), abs(c30.var(ddof=1) - 30) <= 1.5),
        "embedded_count": (k.mean(), abs(k.mean() - 5.64) <= 0.03 * 5.64),
        "main_object_B": (main.mean(), abs(main.mean() - 10_710) <= 0.05 * 10_710),
    }
    report("C8 PPP and HTTP statistical oracles", all(ok for _, ok in checks.values()),
           " ".join(f"{k}={v:.4g}" for k, (v, _) in checks.items()))


# --- 9: determinism --------------------------------------------------------------

def test_c9_byte_identical_reruns(tmp_path):
    same = True
    for traffic in ("cbr", "dash", "http"):
        outs = []
        for tag in "ab":
            out = tmp_path / f"{traffic}_{tag}"
            assert cli.main(["compare", "--density", "30", "--p", "0.4", "--traffic", traffic, "--runs", "2",
                             "--duration", "1.5", "--seed", "11", "--out", str(out)]) == cli.EXIT_OK
            outs.append({f.name: f.read_bytes() for f in sorted(out.glob("*.csv"))})
        same &= outs[0] == outs[1]
    report("C9 reruns produce byte-identical CSVs", same, "traffic=cbr,dash,http")
