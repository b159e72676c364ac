from __future__ import annotations

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import numpy as np
import pytest

from xselector.datagen import generate_price_series


@pytest.fixture(scope="session")
def synthetic_series():
    return generate_price_series(code="SYN1", n_days=400, seed=7)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
