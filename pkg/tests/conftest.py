"""Fixtures compartidas y marcador ``slow`` para las reproducciones pesadas."""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from dkf.model_core import build_random_model, example_five_state_model  # noqa: E402


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="Ejecuta las pruebas lentas")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: reproducciones a escala de escritorio (requieren --runslow)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="necesita --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture
def five_state_model():
    return example_five_state_model()


@pytest.fixture
def small_random_model():
    """n=10, N=3, F tridiagonal completa y ventanas de 4 estados."""

    return build_random_model(10, 3, 1, 1.0, 4, np.random.default_rng(11), r=0.5)


@pytest.fixture
def medium_random_model():
    return build_random_model(24, 4, 2, 0.6, 8, np.random.default_rng(5))
