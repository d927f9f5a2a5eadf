from .schedule import NoiseSchedule, ScheduleSpec, make_schedule
from .oracle import GaussianMixtureOracle, default_world
from .models import ModelFactory
from .sampler import GuidanceSpec, run_ums_stages, ums_generate

__all__ = [
    "NoiseSchedule",
    "ScheduleSpec",
    "make_schedule",
    "GaussianMixtureOracle",
    "default_world",
    "ModelFactory",
    "GuidanceSpec",
    "run_ums_stages",
    "ums_generate",
]
