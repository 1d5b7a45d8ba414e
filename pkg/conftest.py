import os

for _var in ("OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "OMP_NUM_THREADS", "VECLIB_MAXIMUM_THREADS"):
    os.environ.setdefault(_var, "1")

import numpy as np
import pytest

from datasets import XorSpec, sphere_dataset, xor_sample
from network import NetworkConfig, init_symmetric


@pytest.fixture
def small_net():
    return init_symmetric(NetworkConfig(L=3, m=16, d=5, seed=7))


@pytest.fixture
def sphere_data():
    return sphere_dataset(5, 12, seed=3)


@pytest.fixture
def xor_data():
    return xor_sample(XorSpec(d=6, seed=1), 20)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
