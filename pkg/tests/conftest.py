import numpy as np
import pytest

from noisyjoint.datagen import DatasetSpec, make_dataset
from noisyjoint.noise import NoiseConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_dataset():
    spec = DatasetSpec(n_train=64, n_test=80, seed=5)
    return make_dataset(spec, NoiseConfig([0.4, 0.4, 0.4], [0.4]))
