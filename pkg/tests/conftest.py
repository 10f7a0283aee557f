from fractions import Fraction

import pytest

from solarsched.instance import Instance, Job, SpeedProfile


@pytest.fixture
def two_speed_profile():
    return SpeedProfile([1, 2], [1, 4])


@pytest.fixture
def two_job_instance(two_speed_profile):
    """Two jobs where the energy-optimal schedule is not rate-optimal:
    a long job around a short urgent one."""
    return Instance(
        two_speed_profile,
        [Job(1, 0, 4, 3), Job(2, 1, 2, 2)],
    )


F = Fraction
