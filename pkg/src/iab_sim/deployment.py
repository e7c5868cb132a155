"""Random deployments: PPP placement of gNBs and UEs, donor designation, target cell."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Iterable

import numpy as np

if TYPE_CHECKING:
    from .topology import IabTree

GNB_HEIGHT_M = 10.0
UE_HEIGHT_M = 1.5
SCENARIO_FORMAT = "iab-sim-scenario v1"


class ConfigError(ValueError):
    """Invalid experiment or model configuration."""


class InvalidRunError(RuntimeError):
    """The sampled deployment cannot produce the requested statistics."""


class DeploymentKind(enum.Enum):
    ALL_WIRED = "all-wired"
    IAB = "iab"
    ONLY_DONORS = "only-donors"


@dataclass(slots=True)
class GnbSite:
    id: int
    pos: tuple[float, float]
    height: float = GNB_HEIGHT_M
    is_donor: bool = False
    # index in the base draw; differs from ``id`` once non-donors are pruned
    origin_id: int = -1

    def __post_init__(self):
        if self.origin_id < 0:
            self.origin_id = self.id


@dataclass(slots=True)
class UeSite:
    id: int
    pos: tuple[float, float]
    height: float = UE_HEIGHT_M


@dataclass
class Scenario:
    area_km2: float
    gnbs: list[GnbSite]
    ues: list[UeSite]
    rng_seed: int
    kind: DeploymentKind = DeploymentKind.IAB
    # size of the base draw; keeps per-link randomness aligned across deployment kinds
    origin_count: int = -1

    def __post_init__(self):
        if self.origin_count < 0:
            self.origin_count = max((g.origin_id for g in self.gnbs), default=-1) + 1

    @property
    def side_m(self) -> float:
        return math.sqrt(self.area_km2) * 1000.0

    @property
    def donors(self) -> list[int]:
        return [g.id for g in self.gnbs if g.is_donor]

    @property
    def iab_nodes(self) -> list[int]:
        return [g.id for g in self.gnbs if not g.is_donor]

    def gnb_xyz(self) -> np.ndarray:
        return np.array([(g.pos[0], g.pos[1], g.height) for g in self.gnbs], dtype=float).reshape(-1, 3)

    def ue_xyz(self) -> np.ndarray:
        return np.array([(u.pos[0], u.pos[1], u.height) for u in self.ues], dtype=float).reshape(-1, 3)

    def check(self) -> None:
        side = self.side_m
        for site in [*self.gnbs, *self.ues]:
            x, y = site.pos
            if not (0.0 <= x <= side and 0.0 <= y <= side):
                raise ConfigError(f"site {site.id} at {site.pos} lies outside the {side:.1f} m square")
        if [g.id for g in self.gnbs] != list(range(len(self.gnbs))):
            raise ConfigError("gNB ids must be dense and in deployment order")
        if self.kind is not DeploymentKind.ALL_WIRED and self.gnbs and not self.donors:
            raise ConfigError("at least one donor is required")


def sample_ppp(density_per_km2: float, area_km2: float, rng: np.random.Generator) -> np.ndarray:
    """Homogeneous PPP on a square of ``area_km2``; returns an ``(n, 2)`` array in meters."""
    if density_per_km2 < 0:
        raise ConfigError("density must be non-negative")
    if area_km2 <= 0:
        raise ConfigError("area must be positive")
    n = int(rng.poisson(density_per_km2 * area_km2))
    side = math.sqrt(area_km2) * 1000.0
    return rng.uniform(0.0, side, size=(n, 2))


def donor_count(n: int, p: float) -> int:
    # round half away from zero; Python's round() is banker's rounding
    return max(1, int(math.floor(p * n + 0.5)))


def designate_donors(gnbs: list[GnbSite], p: float, rng: np.random.Generator) -> list[GnbSite]:
    """Mark ``max(1, round(p*N))`` gNBs as donors, uniformly without replacement."""
    if not (0.0 < p <= 1.0):
        raise ConfigError(f"donor fraction p must lie in (0, 1], got {p}")
    if not gnbs:
        raise ConfigError("cannot designate donors without gNBs")
    k = donor_count(len(gnbs), p)
    chosen = set(rng.choice(len(gnbs), size=k, replace=False).tolist())
    for g in gnbs:
        g.is_donor = g.id in chosen
    return gnbs


@dataclass(frozen=True)
class BaseDraw:
    """Positions and donor flags shared by every deployment kind of one seed."""

    area_km2: float
    gnb_pos: np.ndarray
    ue_pos: np.ndarray
    donor_flags: np.ndarray
    seed: int
    p: float = field(default=1.0)


def draw_base(density_gnb_km2: float, ue_density_factor: float, area_km2: float, p: float,
              rng: np.random.Generator, seed: int = 0) -> BaseDraw:
    gnb_pos = sample_ppp(density_gnb_km2, area_km2, rng)
    ue_pos = sample_ppp(ue_density_factor * density_gnb_km2, area_km2, rng)
    sites = [GnbSite(i, (float(x), float(y))) for i, (x, y) in enumerate(gnb_pos)]
    if sites:
        designate_donors(sites, p, rng)
    flags = np.array([g.is_donor for g in sites], dtype=bool)
    return BaseDraw(area_km2, gnb_pos, ue_pos, flags, seed, p)


def build_scenario(base: BaseDraw, kind: DeploymentKind) -> Scenario:
    """Realize one deployment kind from a shared draw (paired comparisons)."""
    ues = [UeSite(i, (float(x), float(y))) for i, (x, y) in enumerate(base.ue_pos)]
    gnbs: list[GnbSite] = []
    for i, (x, y) in enumerate(base.gnb_pos):
        donor = bool(base.donor_flags[i])
        if kind is DeploymentKind.ALL_WIRED:
            donor = True
        elif kind is DeploymentKind.ONLY_DONORS and not donor:
            continue
        gnbs.append(GnbSite(len(gnbs), (float(x), float(y)), is_donor=donor, origin_id=i))
    return Scenario(base.area_km2, gnbs, ues, base.seed, kind, origin_count=len(base.gnb_pos))


def generate_scenario(density_gnb_km2: float, p: float, kind: DeploymentKind, seed: int,
                      area_km2: float = 1.0, ue_density_factor: float = 10.0) -> Scenario:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    base = draw_base(density_gnb_km2, ue_density_factor, area_km2, p, rng, seed)
    return build_scenario(base, kind)


def select_target_cell(scenario: Scenario, tree: "IabTree", kind: DeploymentKind) -> int:
    """Cell whose UEs form the headline population of a run."""
    if kind is DeploymentKind.ALL_WIRED:
        if not scenario.gnbs:
            raise InvalidRunError("no gNB deployed")
        return 0
    if kind is DeploymentKind.IAB:
        if not tree.attach_order:
            raise InvalidRunError("no IAB-node attached to the network")
        return tree.attach_order[0]
    donors = scenario.donors
    if not donors:
        raise InvalidRunError("no donor deployed")
    return min(donors)


def dump_scenario(scenario: Scenario) -> str:
    lines = [
        f"# {SCENARIO_FORMAT}",
        f"area_km2 {scenario.area_km2!r}",
        f"seed {scenario.rng_seed}",
        f"kind {scenario.kind.value}",
        f"origin_count {scenario.origin_count}",
    ]
    for g in scenario.gnbs:
        flags = ("D" if g.is_donor else "-") + f",o{g.origin_id},h{g.height!r}"
        lines.append(f"gnb {g.id} {g.pos[0]!r} {g.pos[1]!r} {flags}")
    for u in scenario.ues:
        lines.append(f"ue {u.id} {u.pos[0]!r} {u.pos[1]!r} h{u.height!r}")
    return "\n".join(lines) + "\n"


def load_scenario(text: str | Iterable[str]) -> Scenario:
    lines = text.splitlines() if isinstance(text, str) else list(text)
    if not lines or lines[0].strip() != f"# {SCENARIO_FORMAT}":
        raise ConfigError("unsupported scenario record (bad header)")
    header: dict[str, str] = {}
    gnbs: list[GnbSite] = []
    ues: list[UeSite] = []
    for raw in lines[1:]:
        parts = raw.split()
        if not parts or parts[0].startswith("#"):
            continue
        if parts[0] in ("area_km2", "seed", "kind", "origin_count"):
            header[parts[0]] = parts[1]
        elif parts[0] == "gnb":
            flag, origin, height = parts[4].split(",")
            gnbs.append(GnbSite(int(parts[1]), (float(parts[2]), float(parts[3])), float(height[1:]),
                                flag == "D", int(origin[1:])))
        elif parts[0] == "ue":
            ues.append(UeSite(int(parts[1]), (float(parts[2]), float(parts[3])), float(parts[4][1:])))
        else:
            raise ConfigError(f"unknown record kind {parts[0]!r}")
    scenario = Scenario(float(header["area_km2"]), gnbs, ues, int(header["seed"]),
                        DeploymentKind(header.get("kind", "iab")), int(header.get("origin_count", -1)))
    scenario.check()
    return scenario


def save_scenario(scenario: Scenario, path: str | Path) -> None:
    Path(path).write_text(dump_scenario(scenario))
