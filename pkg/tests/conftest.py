import numpy as np
import pytest

from tenfact.synth import GenParams, generate_filtered_demo


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def gen_params():
    return GenParams(s=4, f_max=2, seed=0)


@pytest.fixture
def demo(gen_params, rng):
    return generate_filtered_demo(gen_params, rng)
