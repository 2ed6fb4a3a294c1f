import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mvrhdg.channels import analytic_channels, build_test_cache, hdg_channels, measure_timings  # noqa: E402
from mvrhdg.hdg import DiscreteSpaces, Mesh1D, assemble_affine  # noqa: E402
from mvrhdg.rb import greedy_build  # noqa: E402
from mvrhdg.stochastic import ParameterDomain, SampleStream, draw_samples, piecewise_constant_expansion  # noqa: E402

TRAINING_TAG, TEST_TAG = 1000, 1001
SEED = 1


@pytest.fixture(scope="session")
def domain():
    return ParameterDomain.uniform(10, 0.1, 1.0)


@pytest.fixture(scope="session")
def system(domain):
    """Q = 10 heat benchmark, h = 1/10, p = 2, compliant output."""
    spaces = DiscreteSpaces(Mesh1D.uniform(10), 2)
    return assemble_affine(spaces, piecewise_constant_expansion(10), domain=domain, compliant=True)


@pytest.fixture(scope="session")
def training(domain):
    return draw_samples(SampleStream(SEED, TRAINING_TAG), domain, 1000)


@pytest.fixture(scope="session")
def test_points(domain):
    return draw_samples(SampleStream(SEED, TEST_TAG), domain, 1000)


@pytest.fixture(scope="session")
def built(system, training):
    return greedy_build(system, training, 10)


@pytest.fixture(scope="session")
def model(built):
    return built[0]


@pytest.fixture(scope="session")
def channels(model, system):
    return analytic_channels(model, timing_system=system)


@pytest.fixture(scope="session")
def hdg_ch(model, system):
    return hdg_channels(system, model)


@pytest.fixture(scope="session")
def timings(channels, domain):
    y = 0.5 * (domain.lower + domain.upper)
    return measure_timings(channels, y, 10)


@pytest.fixture(scope="session")
def cache(channels, test_points, timings):
    return build_test_cache(channels, test_points, 10, timings)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
