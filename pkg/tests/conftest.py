import numpy as np
import pytest

from pairsense.geometry import build_layout
from pairsense.optics import OpticalTracer, RayBudget

TINY_BUDGET = RayBudget(rays_per_emitter=1000, max_bounces=4, march_step=0.2)


@pytest.fixture(scope="session")
def tht_config():
    return build_layout("tht")


@pytest.fixture(scope="session")
def tht_tracer(tht_config):
    return OpticalTracer(tht_config, TINY_BUDGET)


@pytest.fixture(scope="session")
def smt_config():
    return build_layout("smt")


@pytest.fixture(scope="session")
def resistive_config():
    return build_layout("resistive")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
