import numpy as np
import pytest

from app.ct.phantoms import make_phantom
from app.diffusion.oracle import default_world, single_gaussian_world, symmetric_two_class_world
from app.diffusion.schedule import NoiseSchedule, ScheduleSpec, make_schedule


@pytest.fixture
def world():
    return default_world()


@pytest.fixture
def two_class_world():
    return symmetric_two_class_world()


@pytest.fixture
def gaussian_world():
    return single_gaussian_world()


@pytest.fixture
def cosine_schedule():
    return make_schedule("cosine", 50, 1e-4, 0.02)


@pytest.fixture
def fine_schedule():
    return make_schedule("cosine", 200, 1e-4, 0.02)


@pytest.fixture
def default_schedule():
    return NoiseSchedule.from_spec(ScheduleSpec())


@pytest.fixture
def linear_schedule():
    return make_schedule("linear", 100, 1e-4, 0.02)


@pytest.fixture
def rng():
    return np.random.Generator(np.random.Philox(1234))


@pytest.fixture
def disk_phantom():
    return make_phantom("disk", 64, radius=16.0)
