"""IAB network formation and UE association."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import NamedTuple, Protocol

from .deployment import Scenario

DEFAULT_MIN_SNR_DB = -5.0
CONSERVATIVE_BETA_DB = 3.0
AGGRESSIVE_BETA_DB = 10.0


class PolicyKind(enum.Enum):
    HQF = "hqf"
    WF = "wf"
    HQF_BIASED = "biased"


@dataclass(frozen=True)
class PolicyConfig:
    kind: PolicyKind = PolicyKind.WF
    beta_db_per_hop: float = 0.0
    min_snr_db: float = DEFAULT_MIN_SNR_DB

    def __post_init__(self):
        if self.beta_db_per_hop < 0:
            raise ValueError("bias slope must be non-negative")

    @property
    def label(self) -> str:
        if self.kind is PolicyKind.HQF_BIASED:
            return f"biased{self.beta_db_per_hop:g}"
        return self.kind.value


class Candidate(NamedTuple):
    gnb_id: int
    snr_db: float
    hop_count: int
    is_donor: bool = False


class Links(Protocol):
    def gnb_snr(self, a: int, b: int) -> float: ...
    def ue_snr(self, ue: int, gnb: int) -> float: ...


def _argmax(cands, key) -> int:
    # ties go to the lowest gNB id
    return min(cands, key=lambda c: (-key(c), c.gnb_id)).gnb_id


def select_parent(candidates: list[Candidate], policy: PolicyConfig) -> int:
    if not candidates:
        raise ValueError("select_parent needs at least one candidate")
    if policy.kind is PolicyKind.HQF:
        return _argmax(candidates, lambda c: c.snr_db)
    if policy.kind is PolicyKind.WF:
        donors = [c for c in candidates if c.is_donor]
        return _argmax(donors or candidates, lambda c: c.snr_db)
    beta = policy.beta_db_per_hop
    return _argmax(candidates, lambda c: c.snr_db - beta * c.hop_count)


@dataclass
class IabTree:
    donors: list[int]
    parent: dict[int, int] = field(default_factory=dict)
    children: dict[int, list[int]] = field(default_factory=dict)
    hop_count: dict[int, int] = field(default_factory=dict)
    attach_order: list[int] = field(default_factory=list)
    detached: set[int] = field(default_factory=set)
    link_snr: dict[int, float] = field(default_factory=dict)

    def __post_init__(self):
        for d in self.donors:
            self.hop_count.setdefault(d, 0)
            self.children.setdefault(d, [])

    def attach(self, node: int, parent: int, snr: float = float("nan")) -> None:
        self.parent[node] = parent
        self.children.setdefault(parent, []).append(node)
        self.children.setdefault(node, [])
        self.hop_count[node] = self.hop_count[parent] + 1
        self.link_snr[node] = snr
        self.attach_order.append(node)
        self.detached.discard(node)

    def is_attached(self, node: int) -> bool:
        return node in self.hop_count

    @property
    def attached(self) -> list[int]:
        return sorted(self.hop_count)

    def path_to_donor(self, node: int) -> list[int]:
        """``[node, parent, ..., donor]``."""
        path = [node]
        while path[-1] in self.parent:
            path.append(self.parent[path[-1]])
            if len(path) > len(self.hop_count) + 1:
                raise RuntimeError("cycle in IAB tree")
        return path

    def donor_of(self, node: int) -> int:
        return self.path_to_donor(node)[-1]

    def subtree(self, node: int) -> list[int]:
        out, stack = [], [node]
        while stack:
            n = stack.pop()
            out.append(n)
            stack.extend(reversed(self.children.get(n, [])))
        return out

    def mean_iab_hops(self) -> float:
        hops = [self.hop_count[n] for n in self.attach_order]
        return sum(hops) / len(hops) if hops else 0.0

    def dump(self) -> str:
        """Edge list: ``child parent hop snr_db``, one attached IAB-node per line."""
        lines = ["# child parent hop snr_db"]
        for n in sorted(self.parent):
            lines.append(f"{n} {self.parent[n]} {self.hop_count[n]} {self.link_snr.get(n, float('nan')):.3f}")
        for n in sorted(self.detached):
            lines.append(f"{n} - - detached")
        return "\n".join(lines) + "\n"


def form_topology(scenario: Scenario, links: Links, policy: PolicyConfig) -> IabTree:
    """Attach IAB-nodes in ascending id; one retry pass for nodes left detached."""
    tree = IabTree(donors=scenario.donors)
    pending = scenario.iab_nodes

    def try_attach(node: int) -> bool:
        cands = []
        for g in tree.hop_count:
            s = links.gnb_snr(node, g)
            if s >= policy.min_snr_db:
                cands.append(Candidate(g, s, tree.hop_count[g], g not in tree.parent))
        if not cands:
            return False
        parent = select_parent(cands, policy)
        tree.attach(node, parent, links.gnb_snr(node, parent))
        return True

    for node in pending:
        if not try_attach(node):
            tree.detached.add(node)
    for node in sorted(tree.detached):
        try_attach(node)
    return tree


@dataclass
class UeAssociation:
    serving: dict[int, int] = field(default_factory=dict)
    outage: set[int] = field(default_factory=set)

    def ues_of(self, gnb: int) -> list[int]:
        return sorted(u for u, g in self.serving.items() if g == gnb)


def associate_ues(scenario: Scenario, tree: IabTree, links: Links,
                  min_snr_db: float = DEFAULT_MIN_SNR_DB) -> UeAssociation:
    """Strongest-SNR association to attached gNBs; ties go to the lowest id."""
    assoc = UeAssociation()
    attached = tree.attached
    for ue in scenario.ues:
        best, best_snr = None, min_snr_db
        for g in attached:
            s = links.ue_snr(ue.id, g)
            if s > best_snr or (s == best_snr and best is None):
                best, best_snr = g, s
        if best is None:
            assoc.outage.add(ue.id)
        else:
            assoc.serving[ue.id] = best
    return assoc


def downstream_ue_count(tree: IabTree, assoc: UeAssociation, gnb: int) -> int:
    members = set(tree.subtree(gnb))
    return sum(1 for g in assoc.serving.values() if g in members)
