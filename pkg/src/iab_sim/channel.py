"""Static mmWave link budget: UMi street-canyon pathloss, LOS draw, lognormal shadowing."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .deployment import Scenario

THERMAL_NOISE_DBM_HZ = -174.0
SHADOW_SIGMA_LOS_DB = 4.0
SHADOW_SIGMA_NLOS_DB = 7.82
MIN_DISTANCE_M = 1.0


@dataclass(frozen=True)
class RadioConfig:
    carrier_ghz: float = 28.0
    bandwidth_hz: float = 400e6
    tx_power_dbm: float = 30.0
    noise_figure_db: float = 5.0
    gnb_elements: int = 64
    ue_elements: int = 16
    se_cap_bps_hz: float = 7.406

    def __post_init__(self):
        for name in ("carrier_ghz", "bandwidth_hz", "noise_figure_db", "gnb_elements", "ue_elements",
                     "se_cap_bps_hz"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @property
    def noise_floor_dbm(self) -> float:
        return THERMAL_NOISE_DBM_HZ + 10.0 * math.log10(self.bandwidth_hz) + self.noise_figure_db


@dataclass(frozen=True, slots=True)
class LinkState:
    distance_m: float
    los: bool
    shadowing_db: float
    pathloss_db: float
    snr_db: float
    capacity_bps: float


def _scalar_or_array(x, like):
    return float(x) if np.ndim(like) == 0 else x


def los_probability(d_m):
    """UMi LOS probability as a function of 2D distance."""
    d = np.asarray(d_m, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        far = (18.0 / d) * (1.0 - np.exp(-d / 36.0)) + np.exp(-d / 36.0)
    p = np.where(d <= 18.0, 1.0, far)
    return _scalar_or_array(p, d_m)


def pathloss_db(d_m, los, f_ghz: float = 28.0):
    d = np.maximum(np.asarray(d_m, dtype=float), MIN_DISTANCE_M)
    pl_los = 32.4 + 21.0 * np.log10(d) + 20.0 * math.log10(f_ghz)
    pl_nlos = np.maximum(pl_los, 22.4 + 35.3 * np.log10(d) + 21.3 * math.log10(f_ghz))
    pl = np.where(np.asarray(los, dtype=bool), pl_los, pl_nlos)
    return _scalar_or_array(pl, d_m)


def beamforming_gain_db(n_elements: int) -> float:
    if n_elements < 1:
        raise ValueError("array needs at least one element")
    return 10.0 * math.log10(n_elements)


def snr_db(cfg: RadioConfig, pl_db, shadow_db, g_tx_db: float, g_rx_db: float):
    return cfg.tx_power_dbm - pl_db - shadow_db + g_tx_db + g_rx_db - cfg.noise_floor_dbm


def capacity_bps(snr, bandwidth_hz: float, se_cap: float):
    """Shannon rate with a spectral-efficiency ceiling."""
    s = np.asarray(snr, dtype=float)
    se = np.minimum(np.log2(1.0 + np.power(10.0, s / 10.0)), se_cap)
    return _scalar_or_array(bandwidth_hz * se, snr)


class LinkTable:
    """Per-run link states for gNB-gNB and UE-gNB pairs, frozen after construction.

    Randomness (LOS uniforms, unit normals for shadowing) is drawn over the base
    deployment indices so that a link keeps its state across deployment kinds.
    """

    def __init__(self, scenario: Scenario, radio: RadioConfig, seed: int | None = None):
        self.radio = radio
        seed = scenario.rng_seed if seed is None else seed
        rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
        n_base = scenario.origin_count
        n_ue = len(scenario.ues)
        u_gg = rng.uniform(size=(n_base, n_base))
        z_gg = rng.standard_normal(size=(n_base, n_base))
        u_ug = rng.uniform(size=(n_ue, n_base))
        z_ug = rng.standard_normal(size=(n_ue, n_base))
        # backhaul links are reciprocal
        u_gg = np.triu(u_gg) + np.triu(u_gg, 1).T
        z_gg = np.triu(z_gg) + np.triu(z_gg, 1).T

        origin = np.array([g.origin_id for g in scenario.gnbs], dtype=int)
        g_xyz = scenario.gnb_xyz()
        u_xyz = scenario.ue_xyz()
        g_gain = beamforming_gain_db(radio.gnb_elements)
        u_gain = beamforming_gain_db(radio.ue_elements)

        self.gg = self._build(g_xyz, g_xyz, u_gg[np.ix_(origin, origin)], z_gg[np.ix_(origin, origin)],
                              g_gain, g_gain)
        self.ug = self._build(u_xyz, g_xyz, u_ug[:, origin], z_ug[:, origin], u_gain, g_gain)
        np.fill_diagonal(self.gg["snr"], -np.inf)
        np.fill_diagonal(self.gg["cap"], 0.0)

    def _build(self, a_xyz, b_xyz, uni, z, g_a, g_b) -> dict[str, np.ndarray]:
        radio = self.radio
        diff = a_xyz[:, None, :] - b_xyz[None, :, :]
        d2 = np.hypot(diff[..., 0], diff[..., 1])
        d3 = np.sqrt(d2 ** 2 + diff[..., 2] ** 2)
        los = uni < np.asarray(los_probability(d2))
        sigma = np.where(los, SHADOW_SIGMA_LOS_DB, SHADOW_SIGMA_NLOS_DB)
        shadow = z * sigma
        pl = np.asarray(pathloss_db(d3, los, radio.carrier_ghz))
        snr = np.asarray(snr_db(radio, pl, shadow, g_a, g_b))
        cap = np.asarray(capacity_bps(snr, radio.bandwidth_hz, radio.se_cap_bps_hz))
        return {"dist": d3, "los": los, "shadow": shadow, "pl": pl, "snr": snr, "cap": cap}

    @staticmethod
    def _state(m: dict[str, np.ndarray], i: int, j: int) -> LinkState:
        return LinkState(float(m["dist"][i, j]), bool(m["los"][i, j]), float(m["shadow"][i, j]),
                         float(m["pl"][i, j]), float(m["snr"][i, j]), float(m["cap"][i, j]))

    def gnb_link(self, a: int, b: int) -> LinkState:
        return self._state(self.gg, a, b)

    def ue_link(self, ue: int, gnb: int) -> LinkState:
        return self._state(self.ug, ue, gnb)

    def gnb_snr(self, a: int, b: int) -> float:
        return float(self.gg["snr"][a, b])

    def ue_snr(self, ue: int, gnb: int) -> float:
        return float(self.ug["snr"][ue, gnb])

    def gnb_capacity(self, a: int, b: int) -> float:
        return float(self.gg["cap"][a, b])

    def ue_capacity(self, ue: int, gnb: int) -> float:
        return float(self.ug["cap"][ue, gnb])


class ManualLinks:
    """Hand-specified link table for fixtures and oracles; missing links are unusable."""

    def __init__(self, gnb_snr: dict[tuple[int, int], float] | None = None,
                 ue_snr: dict[tuple[int, int], float] | None = None,
                 radio: RadioConfig | None = None, capacity: dict | None = None):
        self.radio = radio or RadioConfig()
        self._gg = {}
        for (a, b), s in (gnb_snr or {}).items():
            self._gg[(a, b)] = self._gg[(b, a)] = s
        self._ug = dict(ue_snr or {})
        self._cap = dict(capacity or {})

    def gnb_snr(self, a: int, b: int) -> float:
        return self._gg.get((a, b), -math.inf)

    def ue_snr(self, ue: int, gnb: int) -> float:
        return self._ug.get((ue, gnb), -math.inf)

    def gnb_capacity(self, a: int, b: int) -> float:
        if ("g", a, b) in self._cap:
            return self._cap[("g", a, b)]
        return capacity_bps(self.gnb_snr(a, b), self.radio.bandwidth_hz, self.radio.se_cap_bps_hz)

    def ue_capacity(self, ue: int, gnb: int) -> float:
        if ("u", ue, gnb) in self._cap:
            return self._cap[("u", ue, gnb)]
        return capacity_bps(self.ue_snr(ue, gnb), self.radio.bandwidth_hz, self.radio.se_cap_bps_hz)
