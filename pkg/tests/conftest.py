import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def random_psd(d, rng, scale=1.0):
    a = rng.standard_normal((d, d))
    return a @ a.T / d * scale
