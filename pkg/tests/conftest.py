import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from displift.synth import SceneSpec, make_synthetic_scene
from displift.geometry import ProjectionParams

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def sphere_scene():
    return make_synthetic_scene(SceneSpec(shape="sphere", samples=3000, seed=1))


@pytest.fixture(scope="session")
def stool_scene():
    spec = SceneSpec(
        shape="stool",
        samples=6000,
        params=ProjectionParams(1.0, 0.0, math.radians(55.0), -1.5),
        resolution=(48, 48),
        seed=2,
    )
    return make_synthetic_scene(spec)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
