# Long Monte Carlo checks carry the ``slow`` marker; deselect them with -m "not slow".
import pytest

from pilotgeom.coverage_se import NetworkConfig
from pilotgeom.numerics import RngStream
from pilotgeom.pilots import PilotPlan
from pilotgeom.simulate import FPR, REUSE1, SimulationSettings, run_experiment


def _se_runs(kappa, seed, n=60):
    """FPR and reuse-1 runs with the B_C/B = 1 - exp(-kappa^2) partition."""
    config = NetworkConfig(kappa=kappa, plan=PilotPlan.from_rule(kappa), group_inclusion=1.0 / 3.0)
    settings = SimulationSettings(tagging="interior")
    fpr = run_experiment(config, FPR, n, RngStream(seed), settings)
    reuse = run_experiment(config, REUSE1, n, RngStream(seed + 1), settings)
    return config, fpr, reuse


@pytest.fixture(scope="session")
def se_08():
    return _se_runs(0.8, 21)


@pytest.fixture(scope="session")
def se_10():
    return _se_runs(1.0, 23)
