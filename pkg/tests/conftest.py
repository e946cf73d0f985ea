import numpy as np
import pytest
from hypothesis import settings

from pcfc.microgen import MicrostructureSpec, generate
from pcfc.surface import LoadGrid, build_surface

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


@pytest.fixture(scope="session")
def rve60():
    return generate(MicrostructureSpec(200, 0.6, rng_seed=7))


@pytest.fixture(scope="session")
def surface_m5():
    rves = [(generate(MicrostructureSpec(200, 0.6, rng_seed=s)), 100) for s in (139, 176)]
    return build_surface(rves, LoadGrid(5), workers=4)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
