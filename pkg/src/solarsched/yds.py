"""Energy-optimal scheduling of a job subset inside a time window.

Classic critical-interval peeling at discrete speeds: repeatedly extract the
window of maximum density (total contained work / available length), schedule
its jobs EDF at that average speed, excise the window from the timeline, and
recurse.  Ties go to the leftmost, then longest window so traces are
reproducible.

The peel runs over *parametric* works ``a + b*x`` (see :class:`Lin`).  The
homotopy engine moves workload at constant rates between battery-depletion
intervals, so feeding the peel linear works yields, in one pass, the critical
structure at the current point, every density as a linear function of the
parameter, and the largest parameter value for which the structure stays
combinatorially valid.  Plain scheduling is the b = 0 special case.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

from .instance import SpeedProfile, delta_slopes

ZERO = Fraction(0)


class InfeasibleDensity(ValueError):
    """Some window demands more speed than the processor's maximum."""


class EmptyWindow(ValueError):
    """A job with remaining work has no available time left in its window."""


@dataclass(frozen=True)
class Lin:
    """Exact linear function ``a + b*x`` of one homotopy parameter."""

    a: Fraction
    b: Fraction = ZERO

    def __call__(self, x: Fraction) -> Fraction:
        return self.a + self.b * x

    def __add__(self, other: "Lin") -> "Lin":
        return Lin(self.a + other.a, self.b + other.b)

    def __sub__(self, other: "Lin") -> "Lin":
        return Lin(self.a - other.a, self.b - other.b)

    def scale(self, factor: Fraction) -> "Lin":
        return Lin(self.a * factor, self.b * factor)

    def shift(self, constant: Fraction) -> "Lin":
        return Lin(self.a + constant, self.b)

    @property
    def is_constant(self) -> bool:
        return self.b == 0

    def first_zero(self) -> Fraction | None:
        """Smallest x > 0 with value 0, assuming the current value is >= 0."""
        if self.b >= 0:
            return None
        return -self.a / self.b


def lin(value, slope=0) -> Lin:
    return Lin(Fraction(value), Fraction(slope))


# ---------------------------------------------------------------------------
# Span arithmetic: a "span set" is a sorted tuple of disjoint (lo, hi) pairs.
# ---------------------------------------------------------------------------

Span = tuple[Fraction, Fraction]
SpanSet = tuple[Span, ...]


def spans_measure(spans: SpanSet) -> Fraction:
    return sum((hi - lo for lo, hi in spans), ZERO)


def spans_clip(spans: SpanSet, a: Fraction, b: Fraction) -> SpanSet:
    out = []
    for lo, hi in spans:
        lo2, hi2 = max(lo, a), min(hi, b)
        if lo2 < hi2:
            out.append((lo2, hi2))
    return tuple(out)


def spans_subtract(spans: SpanSet, a: Fraction, b: Fraction) -> SpanSet:
    out = []
    for lo, hi in spans:
        if hi <= a or lo >= b:
            out.append((lo, hi))
            continue
        if lo < a:
            out.append((lo, a))
        if hi > b:
            out.append((b, hi))
    return tuple(out)


def spans_contain(spans: SpanSet, t: Fraction) -> bool:
    return any(lo <= t < hi for lo, hi in spans)


@dataclass(frozen=True)
class DerivedJob:
    """A job's workload clipped to one scheduling window.

    ``edf_key`` carries the original deadline (plus id) so that preemption
    order inside critical intervals matches the unclipped EDF order.
    """

    id: int
    lo: Fraction
    hi: Fraction
    work: Lin
    edf_key: tuple[Fraction, int]


def derived(job_id, lo, hi, work, deadline=None) -> DerivedJob:
    w = work if isinstance(work, Lin) else Lin(Fraction(work))
    lo, hi = Fraction(lo), Fraction(hi)
    dl = Fraction(deadline) if deadline is not None else hi
    return DerivedJob(job_id, lo, hi, w, (dl, job_id))


@dataclass(frozen=True)
class CriticalInterval:
    """One extracted max-density window.

    ``pieces`` is the available time the window occupied at extraction (a
    span set: earlier, denser extractions may have punched holes into it).
    All member jobs run at the common average speed ``density``.
    """

    pieces: SpanSet
    jobs: tuple[int, ...]
    length: Fraction
    density: Lin

    @property
    def span(self) -> Span:
        return (self.pieces[0][0], self.pieces[-1][1])


@dataclass(frozen=True)
class Run:
    start: Fraction
    end: Fraction
    job: int


def peel(jobs: Sequence[DerivedJob], window_lo, window_hi) -> tuple[list[CriticalInterval], Fraction | None]:
    """Extract critical intervals from ``jobs`` inside [window_lo, window_hi).

    Returns the critical intervals in extraction order together with the
    structure horizon: the largest parameter value x for which every round's
    chosen window keeps (weakly) maximal density.  None means unbounded.
    Jobs with identically-zero work are ignored; zero-valued works with a
    positive slope survive as zero-density intervals (they mark where inflowing
    work will land).

    Ties at the current point are broken by density slope, so the returned
    structure is the one valid for a small positive parameter; value-and-slope
    ties fall back to leftmost-then-longest.
    """
    window_lo, window_hi = Fraction(window_lo), Fraction(window_hi)
    active = [j for j in jobs if not (j.work.a == 0 and j.work.b == 0)]
    for j in active:
        if j.work.a < 0:
            raise ValueError(f"negative work for job {j.id}")
    free: SpanSet = ((window_lo, window_hi),) if window_lo < window_hi else ()
    result: list[CriticalInterval] = []
    horizon: Fraction | None = None

    while active:
        reach: dict[int, tuple[Fraction, Fraction]] = {}
        for idx, j in enumerate(active):
            avail = spans_clip(free, j.lo, j.hi)
            if not avail:
                raise EmptyWindow(f"job {j.id} has work but no available time")
            reach[idx] = (avail[0][0], avail[-1][1])
        los = sorted({r[0] for r in reach.values()})
        his = sorted({r[1] for r in reach.values()})

        best = None  # (density, a, b, members, elen)
        candidates = []
        for a in los:
            for b in his:
                if b <= a:
                    continue
                members = [idx for idx in reach if a <= reach[idx][0] and reach[idx][1] <= b]
                if not members:
                    continue
                elen = spans_measure(spans_clip(free, a, b))
                if elen == 0:
                    raise EmptyWindow("candidate window fully excised")
                total = Lin(ZERO)
                for idx in members:
                    total = total + active[idx].work
                dens = total.scale(Fraction(1, 1) / elen)
                candidates.append((dens, a, b))
                if best is None or _better(dens, a, b, *best[:3]):
                    best = (dens, a, b, members, elen)
        assert best is not None
        dens, a, b, members, elen = best
        # Horizon: first x > 0 where a competitor's density overtakes the choice.
        for other, oa, ob in candidates:
            if other.b > dens.b and other.a <= dens.a:
                if other.a == dens.a:
                    continue  # tie already resolved toward the higher slope
                cross = (dens.a - other.a) / (other.b - dens.b)
                if cross > 0 and (horizon is None or cross < horizon):
                    horizon = cross
        pieces = spans_clip(free, a, b)
        ids = tuple(sorted(active[idx].id for idx in members))
        result.append(CriticalInterval(pieces, ids, elen, dens))
        free = spans_subtract(free, a, b)
        member_set = set(members)
        active = [j for idx, j in enumerate(active) if idx not in member_set]
    return result, horizon


def _better(d1: Lin, a1, b1, d2: Lin, a2, b2) -> bool:
    """Does (d1, a1, b1) beat (d2, a2, b2) under value/slope/leftmost/longest?"""
    if d1.a != d2.a:
        return d1.a > d2.a
    if d1.b != d2.b:
        return d1.b > d2.b
    if a1 != a2:
        return a1 < a2
    return (b1 - a1) > (b2 - a2)


def edf_runs(ci: CriticalInterval, jobs: Sequence[DerivedJob]) -> list[Run]:
    """Lay out one critical interval's jobs EDF at the common speed.

    Works and speed are evaluated at parameter 0.  Zero-density intervals
    produce no runs.
    """
    g = ci.density.a
    if g == 0:
        return []
    by_id = {j.id: j for j in jobs}
    members = [by_id[i] for i in ci.jobs]
    remaining = {j.id: j.work.a for j in members}
    runs: list[Run] = []
    for lo, hi in ci.pieces:
        t = lo
        while t < hi:
            ready = [j for j in members if j.lo <= t and remaining[j.id] > 0]
            if not ready:
                future = [j.lo for j in members if j.lo > t and remaining[j.id] > 0]
                if not future:
                    break
                t = min(future)
                continue
            job = min(ready, key=lambda j: j.edf_key)
            finish = t + remaining[job.id] / g
            nxt = min((j.lo for j in members if j.lo > t and remaining[j.id] > 0), default=hi)
            end = min(finish, nxt, hi)
            if end > t:
                runs.append(Run(t, end, job.id))
                remaining[job.id] -= (end - t) * g
            t = end
    leftover = {j: w for j, w in remaining.items() if w != 0}
    assert not leftover, f"EDF layout failed to place work: {leftover}"
    merged: list[Run] = []
    for r in sorted(runs, key=lambda r: r.start):
        if merged and merged[-1].job == r.job and merged[-1].end == r.start:
            merged[-1] = Run(merged[-1].start, r.end, r.job)
        else:
            merged.append(r)
    return merged


def check_density_cap(criticals: Iterable[CriticalInterval], profile: SpeedProfile) -> None:
    for ci in criticals:
        if ci.density.a > profile.max_speed:
            raise InfeasibleDensity(
                f"critical interval {ci.span} needs speed {ci.density.a} > {profile.max_speed}"
            )


def yds_window(profile: SpeedProfile, jobs: Sequence[DerivedJob], window) -> tuple[list[Run], list[CriticalInterval]]:
    """Energy-optimal fragment for ``jobs`` inside ``window``.

    Returns the EDF runs (time-sorted, each at its critical interval's average
    speed) and the critical intervals in extraction order.  Densities of
    successive extractions are non-increasing.
    """
    lo, hi = window
    criticals, _ = peel(jobs, lo, hi)
    check_density_cap(criticals, profile)
    runs: list[Run] = []
    for ci in criticals:
        runs.extend(edf_runs(ci, jobs))
    runs.sort(key=lambda r: r.start)
    return runs, criticals


def envelope_power_lin(profile: SpeedProfile, g: Lin) -> Lin:
    """Envelope power along a moving speed, valid for small parameters.

    Picks the envelope segment at the current value; a value sitting exactly
    on a discrete speed takes the segment in the direction of motion.
    """
    slopes = delta_slopes(profile)
    val = g.a
    if val < 0 or val > profile.max_speed:
        raise InfeasibleDensity(f"speed {val} outside envelope")
    if val == profile.max_speed and g.b > 0:
        raise InfeasibleDensity("speed would exceed the maximum")
    if val == 0:
        if g.b <= 0:
            return Lin(ZERO)
        seg = 1
    else:
        seg = None
        for i in range(1, profile.k + 1):
            if profile.speed(i - 1) < val < profile.speed(i):
                seg = i
                break
            if val == profile.speed(i):
                seg = i + 1 if g.b > 0 else i
                break
        assert seg is not None and seg <= profile.k
    base = profile.power(seg - 1)
    lo = profile.speed(seg - 1)
    return Lin(base + slopes[seg - 1] * (val - lo), slopes[seg - 1] * g.b)


def ci_energy_lin(profile: SpeedProfile, ci: CriticalInterval) -> Lin:
    return envelope_power_lin(profile, ci.density).scale(ci.length)


def yds_energy(profile: SpeedProfile, jobs: Sequence[DerivedJob], window) -> Fraction:
    """Minimum energy needed to finish ``jobs`` inside ``window``."""
    lo, hi = window
    criticals, _ = peel(jobs, lo, hi)
    check_density_cap(criticals, profile)
    total = ZERO
    for ci in criticals:
        total += ci_energy_lin(profile, ci).a
    return total
