"""
Shared fixtures for the test suite.
"""
import numpy as np
import pytest

from geoequiv.core.logging import configure_logging
from geoequiv.services import catalog
from geoequiv.services.equivalence_tensors import MetricPair
from geoequiv.services.metric_core import Chart, MetricField


@pytest.fixture(autouse=True)
def reset_logging():
    """Rebind the log stream after tests that capture stderr."""
    yield
    configure_logging()


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture(scope="session")
def beltrami_pair() -> MetricPair:
    return catalog.beltrami_pair([1.0, 2.0, 3.0])


@pytest.fixture(scope="session")
def control_pair() -> MetricPair:
    return catalog.control_pair_nonequivalent()


@pytest.fixture(scope="session")
def flat_pair() -> MetricPair:
    return catalog.flat_pair(1.0, 2)


@pytest.fixture(scope="session")
def plane_chart() -> Chart:
    return Chart(names=("x1", "x2"), lower=(-5.0, -5.0), upper=(5.0, 5.0), periodic=(False, False))


@pytest.fixture(scope="session")
def constant_pair(plane_chart) -> MetricPair:
    """g = E and gbar = diag(2, 3) on a box: constant, non-proportional, geodesically equivalent."""
    g = MetricField.from_expressions(plane_chart, [["1", "0"], ["0", "1"]], label="g")
    gbar = MetricField.from_expressions(plane_chart, [["2", "0"], ["0", "3"]], label="gbar")
    return MetricPair(g=g, gbar=gbar, name="constant", sample_box=((-1.0, 1.0), (-1.0, 1.0)))
