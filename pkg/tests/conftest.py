import os
import tempfile

# The database engine and output root are read at import time
_SANDBOX = tempfile.mkdtemp(prefix="risknet-tests-")
os.environ.setdefault("DATABASE_URL", f"sqlite:///{_SANDBOX}/risknet.db")
os.environ.setdefault("RISKNET_OUTPUT_DIR", os.path.join(_SANDBOX, "runs"))

import numpy as np
import pytest

from app.models.scenario_config import DAConfig, NetworkConfig, ScenarioConfig
from app.services.network import generate_static_network, network_from_edges
from app.utils.rng import make_rng


def pytest_collection_modifyitems(config, items):
    skip_slow = pytest.mark.skip(reason="set RISKNET_SLOW=1 to run")
    skip_full = pytest.mark.skip(reason="set RISKNET_FULL_SCALE=1 to run")
    for item in items:
        if "slow" in item.keywords and os.getenv("RISKNET_SLOW") != "1":
            item.add_marker(skip_slow)
        if "full_scale" in item.keywords and os.getenv("RISKNET_FULL_SCALE") != "1":
            item.add_marker(skip_full)


@pytest.fixture
def rng():
    return make_rng(1234, "tests")


@pytest.fixture
def small_network():
    return generate_static_network(NetworkConfig(n_total=300, seed=7))


@pytest.fixture
def pair_network():
    return network_from_edges(2, [(0, 1)])


@pytest.fixture
def path_network():
    return network_from_edges(6, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)])


def tiny_scenario(**overrides) -> ScenarioConfig:
    base = {
        "name": "tiny",
        "seed": 11,
        "days": 10,
        "initial_infectious_fraction": 0.02,
        "network": NetworkConfig(n_total=200, seed=3),
        "da": DAConfig(ensemble_size=6, spin_up_days=3),
        "roc_dates": ["2020-03-12"],
    }
    base.update(overrides)
    return ScenarioConfig.model_validate(base)


@pytest.fixture
def scenario_factory():
    return tiny_scenario


@pytest.fixture
def output_dir(tmp_path):
    path = tmp_path / "out"
    path.mkdir()
    return path
