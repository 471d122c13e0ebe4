import numpy as np
import pytest

from nomabeam.ber import ModulationSpec
from nomabeam.beamformer import BeamParams, ConstraintContext
from nomabeam.channel import BasisProjections, LinkBudget, sample_scenario, scenario_projections


@pytest.fixture(scope="session")
def mods():
    return ModulationSpec(4, 4)


@pytest.fixture(scope="session")
def n0():
    return LinkBudget().effective_noise_watt


@pytest.fixture(scope="session")
def ctx(mods):
    return ConstraintContext.from_modulation(mods)


def random_params(rng, scale_to_power=True):
    amps = rng.uniform(0.0, 1.0, 4)
    if scale_to_power:
        amps /= max(1.0, float(np.linalg.norm(amps)))
    return BeamParams(*amps, *rng.uniform(0.0, 2 * np.pi, 3))


def random_projection(rng) -> BasisProjections:
    sc = sample_scenario(int(rng.integers(2, 6)), seed=int(rng.integers(2**32)))
    return scenario_projections(sc)[1]


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE_RESULTS: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_RESULTS):
        passed, detail = ACCEPTANCE_RESULTS[key]
        terminalreporter.write_line(f"criterion {key:>2}: {'PASS' if passed else 'FAIL'}  {detail}")
