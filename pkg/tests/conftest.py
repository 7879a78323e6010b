"""
Shared fixtures and the --runslow switch.
"""

import numpy as np
import pytest

from src.utilities.network import GraphConfig, init_params
from src.utilities.projection import ProjectionConfig
from src.utilities.synthetic import synthetic_frame

COMPACT_PROJECTION = ProjectionConfig(height=8, width=32)


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run tests marked slow")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running training checks, enabled with --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    """Seeded generator for reproducibility."""
    return np.random.default_rng(1234)


@pytest.fixture
def compact_graph():
    return GraphConfig.compact()


@pytest.fixture
def compact_params(compact_graph):
    return init_params(7, compact_graph)


@pytest.fixture
def compact_frames():
    """Two labelled synthetic 8 x 32 frames."""
    return [synthetic_frame(seed, COMPACT_PROJECTION) for seed in (0, 1)]
