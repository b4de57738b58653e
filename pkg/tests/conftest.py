"""
Shared fixtures and test profiles
"""

import os
import sys

import hypothesis
import numpy as np
import pytest

# Add repository root to path for imports
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from tdoaspace.geometry import SensorArray
from tdoaspace.simharness import ArrayPreset, preset_array

np.seterr(all="warn")

hypothesis.settings.register_profile("default", max_examples=100, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=10, deadline=None)
hypothesis.settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="Run the Monte-Carlo acceptance tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long Monte-Carlo run, needs --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def linear7() -> SensorArray:
    return preset_array(ArrayPreset.LINEAR7)


@pytest.fixture
def cross7() -> SensorArray:
    return preset_array(ArrayPreset.CROSS7)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240607)


@pytest.fixture
def random_array():
    """Factory for arrays of n+1 sensors drawn in the unit cube"""
    def make(n: int, seed: int = 0) -> SensorArray:
        return SensorArray(np.random.default_rng(seed).random((n + 1, 3)))
    return make
