import numpy as np
import pytest

from odsep.stft import StftConfig


@pytest.fixture(scope="session")
def stft_cfg():
    return StftConfig()


def random_signal(seed, n):
    return np.random.default_rng(seed).standard_normal(n)
