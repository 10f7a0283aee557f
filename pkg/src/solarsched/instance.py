"""Problem data model: speed/power profiles, jobs and the convex power envelope.

A processor offers discrete speeds 0 = s_0 < s_1 < ... < s_k with power draws
0 = P_0 < P_1 < ... < P_k.  Jobs carry a release time, a deadline and a work
volume.  Everything is an exact rational: the solver stops at exact equalities
(battery empty, speed hitting a discrete value), so floats never enter the
core and comparisons need no tolerances.

The marginal power slopes ``delta_i = (P_i - P_{i-1}) / (s_i - s_{i-1})`` must
be strictly increasing (convexity).  A profile is *well separated* when the
slopes form an exact geometric progression ``delta_{i+1} = c * delta_i`` with
a single rational ratio c > 1; the solver requires this.
"""

from __future__ import annotations

import decimal
import json
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence, Union

Rational = Fraction
RationalLike = Union[int, str, Fraction]


class SpeedOutOfRange(ValueError):
    """Requested average speed exceeds the fastest discrete speed."""


class NotWellSeparated(ValueError):
    """Slope ratios of the profile are not a single constant."""


def to_rational(value: RationalLike) -> Fraction:
    """Coerce an int, Fraction, or string like ``"5"`` / ``"3/4"`` to Fraction."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise TypeError("bool is not a rational")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, str):
        return Fraction(value.strip())
    raise TypeError(f"cannot interpret {value!r} as an exact rational")


def rational_str(q: Fraction) -> str:
    """Serialize exactly: integers bare, otherwise ``p/q``."""
    q = Fraction(q)
    if q.denominator == 1:
        return str(q.numerator)
    return f"{q.numerator}/{q.denominator}"


def decimal_str(q: Fraction, significant: int = 12) -> str:
    """Cosmetic decimal rendering at a fixed number of significant digits."""
    q = Fraction(q)
    with decimal.localcontext() as ctx:
        ctx.prec = significant
        d = decimal.Decimal(q.numerator) / decimal.Decimal(q.denominator)
    return format(d.normalize(), "f")


@dataclass(frozen=True)
class SpeedProfile:
    """Discrete speeds s_1..s_k and powers P_1..P_k; s_0 = P_0 = 0 implicit."""

    speeds: tuple[Fraction, ...]
    powers: tuple[Fraction, ...]

    def __init__(self, speeds: Iterable[RationalLike], powers: Iterable[RationalLike]):
        object.__setattr__(self, "speeds", tuple(to_rational(s) for s in speeds))
        object.__setattr__(self, "powers", tuple(to_rational(p) for p in powers))
        if not self.speeds:
            raise ValueError("profile needs at least one speed")
        if len(self.speeds) != len(self.powers):
            raise ValueError("speeds and powers must have equal length")

    @property
    def k(self) -> int:
        return len(self.speeds)

    def speed(self, index: int) -> Fraction:
        """s_index with the s_0 = 0 convention."""
        return Fraction(0) if index == 0 else self.speeds[index - 1]

    def power(self, index: int) -> Fraction:
        """P_index with the P_0 = 0 convention."""
        return Fraction(0) if index == 0 else self.powers[index - 1]

    @property
    def max_speed(self) -> Fraction:
        return self.speeds[-1]


@dataclass(frozen=True)
class Job:
    """One job: processed only inside [release, deadline), total volume ``work``.

    ``work <= s_k * (deadline - release)`` is deliberately not required here:
    infeasible instances must be representable so they can be reported.
    """

    id: int
    release: Fraction
    deadline: Fraction
    work: Fraction

    def __init__(self, id: int, release: RationalLike, deadline: RationalLike, work: RationalLike):
        object.__setattr__(self, "id", int(id))
        object.__setattr__(self, "release", to_rational(release))
        object.__setattr__(self, "deadline", to_rational(deadline))
        object.__setattr__(self, "work", to_rational(work))

    @property
    def window(self) -> tuple[Fraction, Fraction]:
        return (self.release, self.deadline)


@dataclass(frozen=True)
class Instance:
    profile: SpeedProfile
    jobs: tuple[Job, ...]

    def __init__(self, profile: SpeedProfile, jobs: Iterable[Job]):
        object.__setattr__(self, "profile", profile)
        object.__setattr__(self, "jobs", tuple(jobs))

    @property
    def horizon(self) -> Fraction:
        """Latest deadline; the battery trace after it is irrelevant."""
        if not self.jobs:
            return Fraction(0)
        return max(j.deadline for j in self.jobs)

    def job(self, job_id: int) -> Job:
        for j in self.jobs:
            if j.id == job_id:
                return j
        raise KeyError(job_id)


def delta_slopes(profile: SpeedProfile) -> tuple[Fraction, ...]:
    """Marginal power per unit of speed on each envelope segment."""
    out = []
    prev_s, prev_p = Fraction(0), Fraction(0)
    for s, p in zip(profile.speeds, profile.powers):
        out.append((p - prev_p) / (s - prev_s))
        prev_s, prev_p = s, p
    return tuple(out)


def well_separation_constant(profile: SpeedProfile) -> Fraction | None:
    """The unique ratio c with delta_{i+1} = c * delta_i, exact equality.

    Returns None for single-speed profiles (the condition is vacuous there).
    Raises NotWellSeparated when the slope ratios differ.
    """
    slopes = delta_slopes(profile)
    if len(slopes) == 1:
        return None
    c = slopes[1] / slopes[0]
    for i in range(1, len(slopes) - 1):
        if slopes[i + 1] / slopes[i] != c:
            raise NotWellSeparated(
                f"slope ratio at segment {i + 1} is {slopes[i + 1] / slopes[i]}, expected {c}"
            )
    return c


def validate(instance: Instance) -> list[str]:
    """Report every violated structural invariant; empty list means ok."""
    problems: list[str] = []
    prof = instance.profile
    prev = Fraction(0)
    for i, s in enumerate(prof.speeds):
        if s <= prev:
            problems.append(f"speeds not increasing at index {i + 1}")
        prev = s
    prev = Fraction(0)
    for i, p in enumerate(prof.powers):
        if p <= prev:
            problems.append(f"powers not increasing at index {i + 1}")
        prev = p
    if not problems:
        slopes = delta_slopes(prof)
        for i in range(len(slopes) - 1):
            if slopes[i + 1] <= slopes[i]:
                problems.append(f"slopes not strictly increasing at index {i + 2}")
        if not any("slopes" in p for p in problems):
            try:
                well_separation_constant(prof)
            except NotWellSeparated as exc:
                problems.append(f"not well-separated: {exc}")
    seen: set[int] = set()
    for j in instance.jobs:
        if j.id in seen:
            problems.append(f"duplicate job id {j.id}")
        seen.add(j.id)
        if j.release >= j.deadline:
            problems.append(f"job {j.id}: release not before deadline")
        if j.work <= 0:
            problems.append(f"job {j.id}: work not positive")
        if j.release < 0:
            problems.append(f"job {j.id}: negative release")
    return problems


def envelope_power(profile: SpeedProfile, s: RationalLike) -> Fraction:
    """Piecewise-linear convex envelope through (s_i, P_i): the cheapest power
    at which an average speed ``s`` can be realized with the discrete speeds."""
    s = to_rational(s)
    if s < 0:
        raise SpeedOutOfRange(f"negative speed {s}")
    if s > profile.max_speed:
        raise SpeedOutOfRange(f"speed {s} above maximum {profile.max_speed}")
    if s == 0:
        return Fraction(0)
    slopes = delta_slopes(profile)
    for i in range(profile.k):
        lo, hi = profile.speed(i), profile.speed(i + 1)
        if s <= hi:
            return profile.power(i) + slopes[i] * (s - lo)
    raise AssertionError("unreachable")


def interpolate(
    profile: SpeedProfile, s: RationalLike, duration: RationalLike
) -> list[tuple[int, Fraction]]:
    """Realize average speed ``s`` over ``duration`` with at most two discrete
    speeds, slower one first.  Returns (speed index, duration) pairs whose
    total energy is exactly ``duration * envelope_power(s)``.

    Running the slower speed first matters: the battery level of the two-piece
    schedule then dominates the constant-average-power level pointwise.
    """
    s = to_rational(s)
    duration = to_rational(duration)
    if duration <= 0:
        raise ValueError("duration must be positive")
    if s < 0 or s > profile.max_speed:
        raise SpeedOutOfRange(f"speed {s} outside [0, {profile.max_speed}]")
    for i in range(profile.k + 1):
        if s == profile.speed(i):
            return [(i, duration)]
    for i in range(1, profile.k + 1):
        lo, hi = profile.speed(i - 1), profile.speed(i)
        if lo < s < hi:
            t_low = (hi - s) / (hi - lo) * duration
            return [(i - 1, t_low), (i, duration - t_low)]
    raise AssertionError("unreachable")


# ---------------------------------------------------------------------------
# Serialization.  Rationals travel as strings to preserve exactness.
# ---------------------------------------------------------------------------

def instance_to_dict(instance: Instance) -> dict:
    return {
        "speeds": [rational_str(s) for s in instance.profile.speeds],
        "powers": [rational_str(p) for p in instance.profile.powers],
        "jobs": [
            {
                "id": j.id,
                "release": rational_str(j.release),
                "deadline": rational_str(j.deadline),
                "work": rational_str(j.work),
            }
            for j in instance.jobs
        ],
    }


def instance_from_dict(data: dict) -> Instance:
    profile = SpeedProfile(data["speeds"], data["powers"])
    jobs = [
        Job(item["id"], item["release"], item["deadline"], item["work"])
        for item in data.get("jobs", [])
    ]
    return Instance(profile, jobs)


def dump_instance(instance: Instance) -> str:
    return json.dumps(instance_to_dict(instance), indent=2) + "\n"


def load_instance(text: str) -> Instance:
    return instance_from_dict(json.loads(text))
