import os

os.environ.setdefault("JAX_COMPILATION_CACHE_DIR", "/tmp/qhcorr-jax-cache")

import numpy as np
import pytest

from qhcorr import checks, models
from qhcorr.quat import rotation_from_quaternion
from qhcorr.swann import BundlePoint


@pytest.fixture(scope="session")
def model():
    cache = {}

    def get(name):
        if name not in cache:
            cache[name] = models.build(name)
        return cache[name]
    return get


@pytest.fixture(scope="session")
def bundle(model):
    return lambda name: checks._bundle(model(name))


def philox(seed=0):
    return np.random.Generator(np.random.Philox(seed))


def bundle_points(model, count, seed=0):
    gen = philox(seed)
    xs = model.sample(gen, count)
    out = []
    for x in xs:
        g = rotation_from_quaternion(gen.normal(size=4))
        out.append(BundlePoint(x, g, gen.uniform(np.log(0.5), np.log(2.0))))
    return out


@pytest.fixture
def rng():
    return philox(1234)
