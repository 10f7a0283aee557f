"""Schedule representation, battery trace, feasibility and depletion points.

A schedule is a time-ordered list of non-overlapping segments, each running
one job at one discrete speed (speed index 0 = idle).  The battery starts
empty, charges at the constant recharge rate R and drains at the running
speed's power, so the remaining energy is

    E(t) = R*t - (energy consumed before t),

a piecewise-linear function whose slope on a segment is exactly R - P_i.
Feasibility means E never goes negative; times where E(t) = 0 are depletion
points and partition the horizon into depletion intervals.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Optional, Sequence

from .instance import (
    Instance,
    SpeedProfile,
    rational_str,
    to_rational,
)

ZERO = Fraction(0)


@dataclass(frozen=True)
class Segment:
    """One schedule segment; ``job`` is None exactly when ``speed_index`` is 0."""

    start: Fraction
    end: Fraction
    job: Optional[int]
    speed_index: int

    def __init__(self, start, end, job, speed_index):
        object.__setattr__(self, "start", to_rational(start))
        object.__setattr__(self, "end", to_rational(end))
        object.__setattr__(self, "job", None if job is None else int(job))
        object.__setattr__(self, "speed_index", int(speed_index))
        if self.start >= self.end:
            raise ValueError("segment must have positive length")
        if (self.job is None) != (self.speed_index == 0):
            raise ValueError("idle iff speed index 0")


@dataclass(frozen=True)
class Schedule:
    """Sorted, disjoint segments; gaps between segments are implicit idling."""

    segments: tuple[Segment, ...]

    def __init__(self, segments: Iterable[Segment]):
        segs = tuple(sorted(segments, key=lambda s: s.start))
        for a, b in zip(segs, segs[1:]):
            if a.end > b.start:
                raise ValueError(f"segments overlap at {b.start}")
        object.__setattr__(self, "segments", segs)

    @property
    def end_time(self) -> Fraction:
        return self.segments[-1].end if self.segments else ZERO

    def busy_segments(self) -> list[Segment]:
        return [s for s in self.segments if s.speed_index != 0]


@dataclass(frozen=True)
class EnergyTrace:
    """Battery level at every segment breakpoint for a fixed recharge rate."""

    rate: Fraction
    breakpoints: tuple[tuple[Fraction, Fraction], ...]  # (time, energy)

    def minimum(self) -> Fraction:
        return min((e for _, e in self.breakpoints), default=ZERO)

    def at(self, t: Fraction) -> Fraction:
        """Linear interpolation between breakpoints (exact)."""
        pts = self.breakpoints
        if not pts or t <= pts[0][0]:
            return self.rate * t
        for (t0, e0), (t1, e1) in zip(pts, pts[1:]):
            if t0 <= t <= t1:
                return e0 + (e1 - e0) * (t - t0) / (t1 - t0)
        t_last, e_last = pts[-1]
        return e_last + self.rate * (t - t_last)


@dataclass(frozen=True)
class DepletionStructure:
    """Algorithm-labeled depletion points and the intervals they induce."""

    points: tuple[Fraction, ...]
    horizon: Fraction

    @property
    def interval_count(self) -> int:
        return len(self.points) + 1

    def bounds(self, idx: int) -> tuple[Fraction, Optional[Fraction]]:
        """Half-open bounds of interval ``idx`` (0-based); the last one is open-ended."""
        lo = self.points[idx - 1] if idx > 0 else ZERO
        hi = self.points[idx] if idx < len(self.points) else None
        return lo, hi

    def locate(self, t: Fraction) -> int:
        for i, p in enumerate(self.points):
            if t < p:
                return i
        return len(self.points)


def _consumption_breakpoints(schedule: Schedule, profile: SpeedProfile):
    """Yield (time, cumulative energy) at 0 and at every segment boundary."""
    t, used = ZERO, ZERO
    yield t, used
    for seg in schedule.segments:
        if seg.start > t:
            t = seg.start
            yield t, used
        used += profile.power(seg.speed_index) * (seg.end - seg.start)
        t = seg.end
        yield t, used


def energy_trace(schedule: Schedule, profile: SpeedProfile, rate) -> EnergyTrace:
    rate = to_rational(rate)
    pts = [(t, rate * t - used) for t, used in _consumption_breakpoints(schedule, profile)]
    return EnergyTrace(rate, tuple(pts))


def min_feasible_rate(schedule: Schedule, profile: SpeedProfile) -> Fraction:
    """Least R keeping the battery non-negative: max of used(t)/t over breakpoints."""
    best = ZERO
    for t, used in _consumption_breakpoints(schedule, profile):
        if t > 0 and used > 0:
            best = max(best, used / t)
    return best


def feasibility_check(schedule: Schedule, instance: Instance, rate) -> list[str]:
    """Report-style check: work completion, window containment, battery >= 0."""
    problems: list[str] = []
    prof = instance.profile
    done: dict[int, Fraction] = {}
    for seg in schedule.busy_segments():
        try:
            job = instance.job(seg.job)
        except KeyError:
            problems.append(f"segment at {seg.start} references unknown job {seg.job}")
            continue
        if seg.speed_index > prof.k:
            problems.append(f"segment at {seg.start} uses invalid speed index {seg.speed_index}")
            continue
        if seg.start < job.release or seg.end > job.deadline:
            problems.append(
                f"job {job.id} runs on [{seg.start}, {seg.end}) outside its window"
            )
        done[job.id] = done.get(job.id, ZERO) + prof.speed(seg.speed_index) * (seg.end - seg.start)
    for job in instance.jobs:
        got = done.get(job.id, ZERO)
        if got != job.work:
            problems.append(f"work deficit for job {job.id}: {got} of {job.work}")
    trace = energy_trace(schedule, prof, rate)
    for t, e in trace.breakpoints:
        if e < 0:
            problems.append(f"battery negative at t = {t}")
    return problems


def depletion_points(schedule: Schedule, profile: SpeedProfile, rate) -> tuple[Fraction, ...]:
    """All t > 0 with E(t) = 0 for a feasible schedule.

    With E piecewise linear and non-negative, zeros sit at breakpoints; a flat
    zero stretch contributes every breakpoint it contains, in particular its
    endpoints.
    """
    trace = energy_trace(schedule, profile, rate)
    return tuple(t for t, e in trace.breakpoints if t > 0 and e == 0)


# ---------------------------------------------------------------------------
# Weak EDF: earliest-deadline-first at the granularity of depletion intervals.
# ---------------------------------------------------------------------------

def first_run_sequence(
    runs: Sequence[tuple[Fraction, int]], structure: DepletionStructure
) -> list[int]:
    """Concatenate, per depletion interval, the jobs in order of first processing.

    ``runs`` is any iterable of (start time, job id) processing atoms.
    """
    per_interval: dict[int, dict[int, Fraction]] = {}
    for start, job in runs:
        idx = structure.locate(start)
        firsts = per_interval.setdefault(idx, {})
        if job not in firsts or start < firsts[job]:
            firsts[job] = start
    seq: list[int] = []
    for idx in sorted(per_interval):
        ordered = sorted(per_interval[idx].items(), key=lambda kv: (kv[1], kv[0]))
        seq.extend(job for job, _ in ordered)
    return seq


def weak_edf_violation(
    sequence: Sequence[int], deadline_rank: dict[int, int]
) -> Optional[tuple[int, int, int]]:
    """Check the first-run sequence for an out-of-order revisit.

    Between the first and last appearance of a job, only jobs that preempt it
    under EDF (strictly earlier deadline rank) may appear.  Returns the
    offending (job, position, intruder) or None.
    """
    positions: dict[int, list[int]] = {}
    for pos, job in enumerate(sequence):
        positions.setdefault(job, []).append(pos)
    for job, pos_list in positions.items():
        first, last = pos_list[0], pos_list[-1]
        for i in range(first + 1, last):
            other = sequence[i]
            if other != job and deadline_rank[other] >= deadline_rank[job]:
                return (job, i, other)
    return None


def weak_edf_check(
    schedule: Schedule, instance: Instance, structure: DepletionStructure
) -> Optional[tuple[int, int, int]]:
    """Weak-EDF check on a discrete schedule; None when it passes."""
    rank = deadline_ranks(instance)
    runs = [(seg.start, seg.job) for seg in schedule.busy_segments()]
    seq = first_run_sequence(runs, structure)
    return weak_edf_violation(seq, rank)


def deadline_ranks(instance: Instance) -> dict[int, int]:
    ordered = sorted(instance.jobs, key=lambda j: (j.deadline, j.id))
    return {job.id: i for i, job in enumerate(ordered)}


class NonConstantSpeed(ValueError):
    """A job mixes non-adjacent discrete speeds inside one depletion interval."""


def avg_speeds(
    schedule: Schedule, instance: Instance, structure: DepletionStructure
) -> dict[tuple[int, int], Fraction]:
    """Average speed of each job inside each depletion interval.

    Averaging is over the job's processing time there, which for a schedule in
    two-speed interpolated form equals its critical interval's speed.  Raises
    NonConstantSpeed when a job's segments in one interval use more than one
    adjacent speed pair (no single average is meaningful then).
    """
    prof = instance.profile
    acc: dict[tuple[int, int], tuple[Fraction, Fraction, set[int]]] = {}
    for seg in schedule.busy_segments():
        parts = _split_by_structure(seg, structure)
        for idx, lo, hi in parts:
            key = (seg.job, idx)
            work, time, indices = acc.get(key, (ZERO, ZERO, set()))
            work += prof.speed(seg.speed_index) * (hi - lo)
            time += hi - lo
            indices = indices | {seg.speed_index}
            acc[key] = (work, time, indices)
    out: dict[tuple[int, int], Fraction] = {}
    for (job, idx), (work, time, indices) in acc.items():
        busy = sorted(i for i in indices if i != 0)
        if busy and busy[-1] - busy[0] > 1:
            raise NonConstantSpeed(
                f"job {job} uses speed indices {busy} in depletion interval {idx}"
            )
        out[(job, idx)] = work / time
    return out


def _split_by_structure(seg: Segment, structure: DepletionStructure):
    cuts = [p for p in structure.points if seg.start < p < seg.end]
    bounds = [seg.start, *cuts, seg.end]
    for lo, hi in zip(bounds, bounds[1:]):
        yield structure.locate(lo), lo, hi


# ---------------------------------------------------------------------------
# Serialization, mirroring the instance format.
# ---------------------------------------------------------------------------

def schedule_to_dict(schedule: Schedule, rate=None) -> dict:
    data = {
        "segments": [
            {
                "start": rational_str(s.start),
                "end": rational_str(s.end),
                "job": s.job,
                "speed_index": s.speed_index,
            }
            for s in schedule.segments
        ]
    }
    if rate is not None:
        data["recharge_rate"] = rational_str(to_rational(rate))
    return data


def schedule_from_dict(data: dict) -> tuple[Schedule, Optional[Fraction]]:
    segs = [
        Segment(item["start"], item["end"], item.get("job"), item["speed_index"])
        for item in data.get("segments", [])
    ]
    rate = data.get("recharge_rate")
    return Schedule(segs), (to_rational(rate) if rate is not None else None)


def dump_schedule(schedule: Schedule, rate=None) -> str:
    return json.dumps(schedule_to_dict(schedule, rate), indent=2) + "\n"


def load_schedule(text: str) -> tuple[Schedule, Optional[Fraction]]:
    return schedule_from_dict(json.loads(text))
