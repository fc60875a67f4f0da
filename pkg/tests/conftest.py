import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def random_spd(gen: np.random.Generator, d: int) -> np.ndarray:
    m = gen.standard_normal((d, d))
    return m @ m.T + np.eye(d)
