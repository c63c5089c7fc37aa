from __future__ import annotations

import numpy as np
import pytest

from agingecm.datasets import synthetic_ocv
from agingecm.ecm import CellConfig, linear_ocv
from agingecm.params import HyperParams


@pytest.fixture(scope="session")
def ocv():
    return synthetic_ocv()


@pytest.fixture(scope="session")
def lin_ocv():
    return linear_ocv(3.0, 4.2)


@pytest.fixture
def cell():
    # cell-A-like priors on a coarse grid so unit tests stay fast
    return CellConfig(inv_capacity_prior=1 / 0.28, resistance_prior=0.13, n_soc=9, current_range=(0.0, 0.28))


@pytest.fixture
def hp():
    return HyperParams(wv_variance=1e-6, matern_variance=0.25, lengthscale_soc=0.2,
                       lengthscale_current=1.0, noise_var=0.005**2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_synth():
    """Four coarse-sampled linear-fade discharges; cheap enough for unit tests."""
    from agingecm.datasets import SynthSpec, linear_fade, synth_generate

    spec = SynthSpec(capacity=linear_fade(), resistance=lambda z, i, a: 0.13, ocv=synthetic_ocv(),
                     ages=[5.0, 15.0, 25.0, 35.0], sample_period=120.0)
    return synth_generate(spec, seed=7)


_REPORT = pytest.StashKey[dict]()


@pytest.fixture(scope="session")
def acceptance_report(request):
    """Criterion number -> one-line verdict, printed in the terminal summary."""
    return request.config.stash.setdefault(_REPORT, {})


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_REPORT, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for key in sorted(lines):
            terminalreporter.write_line(lines[key])
