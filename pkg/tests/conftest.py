import numpy as np
import pytest

from aeromtl import BurgersConfig, generate_burgers, normalize_and_split

# A 6x6x6 grid keeps pipeline-level tests fast while preserving the
# generator's structure (uniform axes, wave targets, imbalance shape).
TINY_RANGE = (0.2, 4.8, 0.92)


@pytest.fixture(scope="session")
def tiny_burgers_raw():
    cfg = BurgersConfig(t_range=TINY_RANGE, x_range=TINY_RANGE, v_range=TINY_RANGE)
    return generate_burgers(cfg)


@pytest.fixture()
def tiny_burgers(tiny_burgers_raw):
    return normalize_and_split(tiny_burgers_raw, seed=42)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)
