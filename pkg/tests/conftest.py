import pytest

from iab_sim.channel import ManualLinks
from iab_sim.deployment import DeploymentKind, GnbSite, Scenario, UeSite
from iab_sim.simulation import ExperimentConfig, Network, TrafficKind
from iab_sim.topology import PolicyConfig, PolicyKind, associate_ues, form_topology


def chain_network(capacity=1e9, kind=DeploymentKind.IAB):
    """Donor 0 -> relay 1 -> UE 0, both links of equal capacity."""
    gnbs = [GnbSite(0, (10.0, 10.0), is_donor=True), GnbSite(1, (60.0, 10.0))]
    scenario = Scenario(1.0, gnbs, [UeSite(0, (90.0, 10.0))], 0, kind)
    links = ManualLinks({(0, 1): 30.0}, {(0, 1): 30.0, (0, 0): -20.0},
                        capacity={("g", 0, 1): capacity, ("u", 0, 1): capacity})
    policy = PolicyConfig(PolicyKind.HQF)
    tree = form_topology(scenario, links, policy)
    assoc = associate_ues(scenario, tree, links)
    return Network(scenario, links, tree, assoc, target_cell=1)


@pytest.fixture
def chain():
    return chain_network


def chain_config(**kw):
    base = dict(traffic=TrafficKind.CBR, sim_duration_s=1.0, warmup_s=0.2, policy=PolicyConfig(PolicyKind.HQF))
    base.update(kw)
    return ExperimentConfig(**base)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.REPORT:
        terminalreporter.section("acceptance criteria")
        for line in mod.REPORT:
            terminalreporter.write_line(line)
