"""Homotopy solver for the minimum recharge rate.

Start from the energy-optimal schedule and the least rate that keeps its
battery non-negative, then lower the rate continuously.  Every labeled
depletion point must keep battery level exactly zero, so each depletion
interval has to shed energy at a rate equal to its length; workload is moved
along a tree of epsilon transfers toward the rightmost interval, at rates
solved leaf-to-root from the envelope slopes at each transfer's endpoints.

Movement continues until a structural event: a new depletion point appears,
a moving job runs out of work in an interval, a critical interval's speed
reaches a discrete speed, or the critical-interval structure itself changes.
Events are exact rationals (everything between events is linear in the
homotopy parameter), so the trace replays deterministically.

When path finding cannot reach every interval, the cut is repaired by a
depletion point removal or a speed-level adjustment; when no transfer at all
leaves the cut component, the current solution is optimal and the dual
certificate is built and verified before returning.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from . import certificate as cert
from . import transfer as tr
from .instance import Instance, NotWellSeparated, interpolate, validate
from .schedule import DepletionStructure, Schedule, Segment
from .yds import (
    CriticalInterval,
    DerivedJob,
    EmptyWindow,
    InfeasibleDensity,
    Lin,
    Run,
    ci_energy_lin,
    derived,
    edf_runs,
    peel,
)

logger = logging.getLogger(__name__)

ZERO = Fraction(0)
ONE = Fraction(1)


class InvalidInstance(ValueError):
    def __init__(self, problems):
        super().__init__("; ".join(problems))
        self.problems = problems


class InfeasibleInstance(ValueError):
    """Some window demands more than the maximum speed."""


class EngineError(RuntimeError):
    """An internal invariant broke; the message carries diagnostics."""


class EventBudgetExceeded(EngineError):
    pass


class SingularSystem(EngineError):
    pass


class CertificationError(EngineError):
    """The final result failed its own optimality or duality check."""


class MergeRejected(Exception):
    """Removing a depletion point would violate feasibility; caller must skip."""


class RepairBlocked(Exception):
    """Speed level repair cannot proceed; try a depletion point removal."""


EVENT_RANK = {"depletion": 0, "edge_inactive": 1, "edge_removal": 2, "merge": 3}


@dataclass
class Event:
    kind: str
    delta: Fraction
    time: Optional[Fraction]
    interval: Optional[int]
    job: Optional[int]
    note: str

    def sort_key(self):
        return (self.delta, EVENT_RANK[self.kind], self.time or ZERO, self.job or 0, self.note)


@dataclass
class RateAssignment:
    """Work-movement rates for one homotopy step, rate decreasing at 1."""

    tree: dict[int, tr.EpsilonTransfer]
    rho: dict[int, Fraction]                      # vertex -> rate on its tree edge
    wdot: dict[tuple[int, int], Fraction]         # (job, interval) -> work rate
    delta: dict[tuple[int, int], Fraction]        # (job, interval) -> speed rate
    structures: list                              # per interval: (criticals, horizon)


class WorkingState:
    """Current homotopy state: labels, per-interval workloads, speed levels.

    The schedule itself is always the canonical one: each depletion interval
    runs the energy-optimal layout of its assigned workload, so the state is
    fully determined by (rate, points, works, table).
    """

    def __init__(self, instance: Instance, rate: Fraction, points, works, table: cert.SpeedLevelTable):
        self.instance = instance
        self.rate = Fraction(rate)
        self.points: list[Fraction] = list(points)
        self.works: list[dict[int, Fraction]] = [dict(w) for w in works]
        self.table = table
        self.direction_memory: dict[int, set] = {}
        self.event_count = 0
        self.cut_fixes = 0
        self.trace: list[dict] = []
        self.invariant_log: list[dict] = []
        self._cache: dict = {}
        self.criticals: list[list[CriticalInterval]] = []
        self.runs: list[list[Run]] = []
        self.speeds: list[dict[int, Fraction]] = []
        self.energies: list[Fraction] = []
        self.refresh()

    # -- geometry ----------------------------------------------------------

    @property
    def horizon(self) -> Fraction:
        return self.instance.horizon

    @property
    def interval_count(self) -> int:
        return len(self.points) + 1

    def bounds(self, idx: int) -> tuple[Fraction, Optional[Fraction]]:
        lo = self.points[idx - 1] if idx > 0 else ZERO
        hi = self.points[idx] if idx < len(self.points) else None
        return lo, hi

    def window(self, idx: int) -> tuple[Fraction, Fraction]:
        lo, hi = self.bounds(idx)
        return lo, (hi if hi is not None else max(self.horizon, lo))

    def locate(self, t: Fraction) -> int:
        for i, p in enumerate(self.points):
            if t < p:
                return i
        return len(self.points)

    def structure(self) -> DepletionStructure:
        return DepletionStructure(tuple(self.points), self.horizon)

    def job_active_in(self, job_id: int, idx: int) -> bool:
        job = self.instance.job(job_id)
        lo, hi = self.bounds(idx)
        if job.deadline <= lo:
            return False
        return hi is None or job.release < hi

    # -- per-interval scheduling -------------------------------------------

    def derived_jobs(self, idx: int, works: Optional[dict] = None, extra_slopes: Optional[dict] = None):
        lo, hi = self.bounds(idx)
        works = self.works[idx] if works is None else works
        slopes = extra_slopes or {}
        out = []
        for job_id in sorted(set(works) | set(slopes)):
            base = works.get(job_id, ZERO)
            slope = slopes.get(job_id, ZERO)
            if base == 0 and slope == 0:
                continue
            job = self.instance.job(job_id)
            assert self.job_active_in(job_id, idx), (job_id, idx)
            clip_lo = max(job.release, lo)
            clip_hi = job.deadline if hi is None else min(job.deadline, hi)
            out.append(derived(job_id, clip_lo, clip_hi, Lin(base, slope), job.deadline))
        return out

    def solve_interval(self, idx: int, works: Optional[dict] = None):
        """(criticals, runs, speeds, energy) for one interval's workload."""
        works = self.works[idx] if works is None else works
        lo, hi = self.window(idx)
        key = (lo, hi, tuple(sorted(works.items())))
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        djs = self.derived_jobs(idx, works)
        criticals, _ = peel(djs, lo, hi)
        prof = self.instance.profile
        for ci in criticals:
            if ci.density.a > prof.max_speed:
                raise InfeasibleDensity(
                    f"interval {idx}: window {ci.span} needs speed {ci.density.a}"
                )
        runs: list[Run] = []
        speeds: dict[int, Fraction] = {}
        energy = ZERO
        for ci in criticals:
            runs.extend(edf_runs(ci, djs))
            energy += ci_energy_lin(prof, ci).a
            for job_id in ci.jobs:
                speeds[job_id] = ci.density.a
        runs.sort(key=lambda r: r.start)
        result = (criticals, runs, speeds, energy)
        if len(self._cache) > 4096:
            self._cache.clear()
        self._cache[key] = result
        return result

    def refresh(self) -> None:
        self.criticals, self.runs, self.speeds, self.energies = [], [], [], []
        for idx in range(self.interval_count):
            for job_id, w in self.works[idx].items():
                if w < 0:
                    raise EngineError(f"negative work {w} for job {job_id} in interval {idx}")
            criticals, runs, speeds, energy = self.solve_interval(idx)
            self.criticals.append(criticals)
            self.runs.append(runs)
            self.speeds.append(speeds)
            self.energies.append(energy)

    # -- energy trace (average-speed view) ----------------------------------

    def power_pieces(self, structures=None):
        """Time-sorted (start, end, power Lin) busy pieces over the horizon."""
        from .yds import envelope_power_lin

        prof = self.instance.profile
        pieces = []
        source = structures if structures is not None else [(c, None) for c in self.criticals]
        for criticals, _ in source:
            for ci in criticals:
                power = envelope_power_lin(prof, ci.density)
                for lo, hi in ci.pieces:
                    pieces.append((lo, hi, power))
        pieces.sort(key=lambda p: (p[0], p[1]))
        return pieces

    def energy_lins(self, structures=None):
        """(time, battery Lin) at every breakpoint; the rate falls at 1 in the
        parameter when ``structures`` carry moving densities."""
        cuts = {ZERO, self.horizon}
        cuts.update(self.points)
        pieces = self.power_pieces(structures)
        for lo, hi, _ in pieces:
            cuts.add(lo)
            cuts.add(hi)
        ordered = sorted(cuts)
        rate_slope = Fraction(-1) if structures is not None else ZERO
        used = Lin(ZERO)
        out = []
        for i, t0 in enumerate(ordered):
            out.append((t0, Lin(self.rate * t0 - used.a, rate_slope * t0 - used.b)))
            if i + 1 == len(ordered):
                break
            t1 = ordered[i + 1]
            for lo, hi, power in pieces:
                overlap = min(hi, t1) - max(lo, t0)
                if overlap > 0:
                    used = used + power.scale(overlap)
        return out

    def energy_breakpoints(self):
        return [(t, e.a) for t, e in self.energy_lins()]

    # -- export --------------------------------------------------------------

    def to_schedule(self) -> Schedule:
        segments = []
        for idx in range(self.interval_count):
            for run in self.runs[idx]:
                t = run.start
                for speed_index, dur in interpolate(
                    self.instance.profile, self.speeds[idx][run.job], run.end - run.start
                ):
                    if speed_index != 0:
                        segments.append(Segment(t, t + dur, run.job, speed_index))
                    t += dur
        return Schedule(segments)

    def snapshot(self):
        return (
            self.rate,
            list(self.points),
            [dict(w) for w in self.works],
            self.table.copy(),
        )

    def restore(self, snap) -> None:
        self.rate, points, works, table = snap
        self.points = list(points)
        self.works = [dict(w) for w in works]
        self.table = table
        self.refresh()


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------

def lowest_admissible(profile, speed: Fraction) -> int:
    for i in range(1, profile.k + 1):
        if speed <= profile.speed(i):
            return i
    raise InfeasibleDensity(f"speed {speed} above maximum")


def initialize(instance: Instance) -> WorkingState:
    problems = validate(instance)
    if problems:
        raise InvalidInstance(problems)
    djs = [derived(j.id, j.release, j.deadline, j.work, j.deadline) for j in instance.jobs]
    try:
        criticals, _ = peel(djs, ZERO, instance.horizon)
    except EmptyWindow as exc:
        raise InfeasibleInstance(str(exc)) from exc
    prof = instance.profile
    for ci in criticals:
        if ci.density.a > prof.max_speed:
            raise InfeasibleInstance(
                f"window {ci.span} needs speed {ci.density.a} > {prof.max_speed}"
            )

    from .yds import envelope_power_lin

    pieces = []
    speed_of: dict[int, Fraction] = {}
    for ci in criticals:
        power = envelope_power_lin(prof, Lin(ci.density.a)).a
        for lo, hi in ci.pieces:
            pieces.append((lo, hi, power))
        for job_id in ci.jobs:
            speed_of[job_id] = ci.density.a
    pieces.sort()

    # least feasible rate of the energy-optimal schedule, in the averaged view
    cuts = sorted({ZERO, instance.horizon} | {p[0] for p in pieces} | {p[1] for p in pieces})
    used = ZERO
    trace_pts = []
    rate = ZERO
    for t0, t1 in zip(cuts, cuts[1:]):
        trace_pts.append((t0, used))
        for lo, hi, power in pieces:
            overlap = min(hi, t1) - max(lo, t0)
            if overlap > 0:
                used += power * overlap
    trace_pts.append((cuts[-1], used))
    for t, u in trace_pts:
        if t > 0 and u > 0:
            rate = max(rate, u / t)
    points = [t for t, u in trace_pts if t > 0 and u == rate * t]

    # split each job's workload at the labeled points
    all_runs = []
    for ci in criticals:
        all_runs.extend(edf_runs(ci, djs))
    n_intervals = len(points) + 1
    works: list[dict[int, Fraction]] = [dict() for _ in range(n_intervals)]
    boundaries = [ZERO, *points, None]
    for run in all_runs:
        g = speed_of[run.job]
        for idx in range(n_intervals):
            lo = boundaries[idx]
            hi = boundaries[idx + 1]
            a = max(run.start, lo)
            b = run.end if hi is None else min(run.end, hi)
            if a < b:
                works[idx][run.job] = works[idx].get(run.job, ZERO) + g * (b - a)

    table = cert.SpeedLevelTable()
    state = WorkingState(instance, rate, points, works, table)
    for job in instance.jobs:
        level = lowest_admissible(prof, speed_of[job.id])
        for idx in range(state.interval_count):
            if state.job_active_in(job.id, idx):
                table.levels[(job.id, idx)] = level

    if sum(state.energies, ZERO) != used:
        raise EngineError("per-interval optimality broke at initialization")
    if cert.check_speed_levels(state, state.table):
        inferred = cert.infer_speed_levels(state)
        if inferred is None:
            raise EngineError("no consistent initial speed levels")
        state.table = inferred
    _assert_invariants(state)
    return state


# ---------------------------------------------------------------------------
# Rates
# ---------------------------------------------------------------------------

def _marginal(state: WorkingState, idx: int, job: int, slope: Fraction) -> Fraction:
    """d(interval energy)/d(parameter) when ``job``'s work there moves at ``slope``."""
    djs = state.derived_jobs(idx, extra_slopes={job: slope})
    lo, hi = state.window(idx)
    criticals, _ = peel(djs, lo, hi)
    prof = state.instance.profile
    total = Lin(ZERO)
    for ci in criticals:
        total = total + ci_energy_lin(prof, ci)
    return total.b


def calculate_rates(state: WorkingState, tree: dict[int, tr.EpsilonTransfer]) -> RateAssignment:
    """Solve leaf-to-root for the work rates that keep every labeled battery
    level at zero while the rate falls at 1."""
    children: dict[int, list[int]] = {}
    for v, edge in tree.items():
        children.setdefault(edge.destination, []).append(v)

    rho: dict[int, Fraction] = {}

    def compute(v: int) -> Fraction:
        if v in rho:
            return rho[v]
        inflow = ZERO
        for c in children.get(v, ()):
            inflow += _marginal(state, v, tree[c].destination_job, ONE) * compute(c)
        lo, hi = state.bounds(v)
        assert hi is not None, "root interval has no outgoing edge"
        length = hi - lo
        out = -_marginal(state, v, tree[v].source_job, Fraction(-1))
        if out <= 0:
            raise SingularSystem(f"non-positive marginal {out} at interval {v}")
        rho[v] = (length + inflow) / out
        return rho[v]

    for v in tree:
        compute(v)

    wdot: dict[tuple[int, int], Fraction] = {}
    for v, edge in tree.items():
        r = rho[v]
        for job, u, w in edge.hops:
            wdot[(job, u)] = wdot.get((job, u), ZERO) - r
            wdot[(job, w)] = wdot.get((job, w), ZERO) + r

    structures = []
    deltas: dict[tuple[int, int], Fraction] = {}
    for idx in range(state.interval_count):
        slopes = {job: rate for (job, i), rate in wdot.items() if i == idx and rate != 0}
        djs = state.derived_jobs(idx, extra_slopes=slopes)
        lo, hi = state.window(idx)
        criticals, horizon = peel(djs, lo, hi)
        structures.append((criticals, horizon))
        for ci in criticals:
            for job in ci.jobs:
                deltas[(job, idx)] = ci.density.b

    rates = RateAssignment(tree, rho, wdot, deltas, structures)
    for t, lin in _moving_energy(state, rates):
        if t in state.points and (lin.a != 0 or lin.b != 0):
            raise SingularSystem(
                f"battery at labeled point {t} drifts: value {lin.a}, rate {lin.b}"
            )
    return rates


def _moving_energy(state: WorkingState, rates: RateAssignment):
    return state.energy_lins(rates.structures)


# ---------------------------------------------------------------------------
# Events
# ---------------------------------------------------------------------------

def next_event(state: WorkingState, rates: RateAssignment) -> Event:
    prof = state.instance.profile
    speeds = [prof.speed(i) for i in range(prof.k + 1)]
    candidates: list[Event] = []

    for idx, (criticals, horizon) in enumerate(rates.structures):
        if horizon is not None and horizon > 0:
            candidates.append(
                Event("merge", horizon, state.window(idx)[0], idx, None, "critical structure change")
            )
        for ci in criticals:
            g, slope = ci.density.a, ci.density.b
            if slope == 0:
                continue
            if slope < 0:
                below = [s for s in speeds if s < g]
                if not below:
                    continue
                target = max(below)
            else:
                above = [s for s in speeds if s > g]
                if not above:
                    raise EngineError(f"speed {g} rising past the maximum in interval {idx}")
                target = min(above)
            delta = (target - g) / slope
            assert delta > 0
            candidates.append(
                Event(
                    "edge_inactive",
                    delta,
                    ci.span[0],
                    idx,
                    min(ci.jobs),
                    f"speed {g} -> {target}",
                )
            )

    for (job, idx), rate_w in rates.wdot.items():
        if rate_w < 0:
            w0 = state.works[idx].get(job, ZERO)
            delta = w0 / (-rate_w)
            assert delta > 0, f"job {job} already exhausted in interval {idx}"
            candidates.append(
                Event("edge_removal", delta, state.window(idx)[0], idx, job, "work exhausted")
            )

    labeled = set(state.points)
    for t, lin in _moving_energy(state, rates):
        if t == 0 or t in labeled:
            continue
        if lin.a < 0:
            raise EngineError(f"battery negative at {t} before any movement")
        if lin.a == 0:
            # an unlabeled zero is fine while its level does not sink (a just-
            # removed depletion point sits here until movement lifts it)
            if lin.b < 0:
                raise EngineError(f"battery sinking at unlabeled zero breakpoint {t}")
            continue
        z = lin.first_zero()
        if z is not None:
            candidates.append(Event("depletion", z, t, state.locate(t), None, "battery empties"))

    if not candidates:
        raise EngineError("no structural event ahead; rate would fall forever")
    best = min(candidates, key=Event.sort_key)
    if best.delta <= 0:
        raise EngineError(f"non-progressing event {best}")
    return best


def apply_event(state: WorkingState, rates: RateAssignment, event: Event, budget: int) -> None:
    d = event.delta
    for (job, idx), rate_w in rates.wdot.items():
        if rate_w == 0:
            continue
        w = state.works[idx].get(job, ZERO) + rate_w * d
        if w < 0:
            raise EngineError(f"work of job {job} in interval {idx} went negative")
        if w == 0:
            state.works[idx].pop(job, None)
        else:
            state.works[idx][job] = w
    state.rate -= d
    for v, edge in rates.tree.items():
        if rates.rho[v] > 0:
            for job, u, w in edge.hops:
                state.direction_memory.setdefault(job, set()).add(1 if w > u else -1)
    if event.kind == "edge_inactive":
        state.direction_memory.clear()
    state.refresh()
    _autolabel(state)
    _assert_invariants(state)
    state.event_count += 1
    if state.event_count + state.cut_fixes > budget:
        raise EventBudgetExceeded(f"{state.event_count} events exceed the budget {budget}")
    state.trace.append(
        {
            "step": state.event_count,
            "kind": event.kind,
            "delta": d,
            "rate": state.rate,
            "rate_before": state.rate + d,
            "time": event.time,
            "interval": event.interval,
            "job": event.job,
            "note": event.note,
            "touched": sorted(k for k, v in rates.wdot.items() if v != 0),
            "tree": sorted((e.source, e.destination) for e in rates.tree.values()),
        }
    )
    state.invariant_log.append(
        {
            "rate": state.rate,
            "rate_decreased": d > 0,
            "labels_zero": True,
            "local_energy_optimal": True,
            "levels_ok": True,
        }
    )


def _autolabel(state: WorkingState, skip: frozenset = frozenset()) -> None:
    """Label every zero-battery breakpoint, splitting works at new labels."""
    while True:
        fresh = None
        for t, e in state.energy_breakpoints():
            if e < 0:
                raise EngineError(f"battery negative at {t}")
            if e == 0 and t > 0 and t not in state.points and t not in skip:
                fresh = t
                break
        if fresh is None:
            return
        _split_at(state, fresh)


def _split_at(state: WorkingState, t: Fraction) -> None:
    idx = state.locate(t)
    lo, hi = state.bounds(idx)
    assert lo < t and (hi is None or t < hi), (t, lo, hi)
    left: dict[int, Fraction] = {}
    right: dict[int, Fraction] = {}
    for run in state.runs[idx]:
        g = state.speeds[idx][run.job]
        if run.end <= t:
            left[run.job] = left.get(run.job, ZERO) + g * (run.end - run.start)
        elif run.start >= t:
            right[run.job] = right.get(run.job, ZERO) + g * (run.end - run.start)
        else:
            raise EngineError(f"run {run} straddles new depletion point {t}")
    state.points.insert(idx, t)
    state.works[idx : idx + 1] = [left, right]
    new_levels = {}
    for (job, i), level in state.table.levels.items():
        if i < idx:
            new_levels[(job, i)] = level
        elif i > idx:
            new_levels[(job, i + 1)] = level
        else:
            if state.job_active_in(job, idx):
                new_levels[(job, idx)] = level
            if state.job_active_in(job, idx + 1):
                new_levels[(job, idx + 1)] = level
    state.table.levels = new_levels
    state.refresh()


def _assert_invariants(state: WorkingState) -> None:
    for t, e in state.energy_breakpoints():
        if e < 0:
            raise EngineError(f"battery negative at {t}")
        if t in state.points and e != 0:
            raise EngineError(f"labeled point {t} has battery {e}")
    for idx in range(state.interval_count):
        total = sum(state.works[idx].values(), ZERO)
        if total < 0:
            raise EngineError("negative interval workload")
    for job in state.instance.jobs:
        total = sum(state.works[idx].get(job.id, ZERO) for idx in range(state.interval_count))
        if total != job.work:
            raise EngineError(f"work of job {job.id} not conserved: {total} != {job.work}")
    problems = cert.check_speed_levels(state, state.table)
    if problems:
        raise EngineError("speed level relation broke: " + "; ".join(problems))


# ---------------------------------------------------------------------------
# Cut fixing
# ---------------------------------------------------------------------------

def _merge_at(state: WorkingState, point_pos: int) -> None:
    """Remove label points[point_pos], merging the two adjacent intervals.

    Raises MergeRejected when the re-optimized merged interval would violate
    feasibility or leave a labeled point with positive battery that cannot be
    cascaded away.
    """
    snap = state.snapshot()
    try:
        removed = _merge_cascade(state, point_pos)
        _autolabel(state, skip=frozenset(removed))
    except MergeRejected:
        state.restore(snap)
        raise


def _merge_cascade(state: WorkingState, point_pos: int) -> set:
    removed = set()
    pending = [state.points[point_pos]]
    for _ in range(len(state.points) + 4):
        while pending:
            t = pending.pop()
            if t in state.points:
                removed.add(t)
                _merge_once(state, state.points.index(t))
        point_set = set(state.points)
        for t, e in state.energy_breakpoints():
            if e < 0:
                raise MergeRejected(f"battery would go negative at {t}")
            if e != 0 and t in point_set:
                pending.append(t)
        if not pending:
            return removed
    raise MergeRejected("merge cascade did not settle")


def _merge_once(state: WorkingState, point_pos: int) -> None:
    a, b = point_pos, point_pos + 1
    merged: dict[int, Fraction] = dict(state.works[a])
    for job, w in state.works[b].items():
        merged[job] = merged.get(job, ZERO) + w
    old_levels = dict(state.table.levels)
    state.points.pop(point_pos)
    state.works[a : b + 1] = [merged]
    new_levels = {}
    for (job, i), level in old_levels.items():
        if i < a:
            new_levels[(job, i)] = level
        elif i > b:
            new_levels[(job, i - 1)] = level
    state.table.levels = new_levels
    try:
        state.refresh()
    except (InfeasibleDensity, EmptyWindow) as exc:
        raise MergeRejected(str(exc))
    _rederive_levels(state, a, old_levels, a, b)


def _rederive_levels(state: WorkingState, idx: int, old_levels: dict, a: int, b: int) -> None:
    """Levels for the merged interval: keep the old ones where still
    admissible, else take the lowest admissible; fall back to a full search."""
    prof = state.instance.profile
    for job in state.instance.jobs:
        if not state.job_active_in(job.id, idx):
            continue
        speed = state.speeds[idx].get(job.id)
        olds = [old_levels.get((job.id, i)) for i in (a, b)]
        olds = [o for o in olds if o is not None]
        if speed is not None:
            allowed = cert.admissible_levels(prof, speed)
            keep = next((o for o in olds if o in allowed), None)
            state.table.levels[(job.id, idx)] = keep if keep is not None else allowed[0]
        else:
            state.table.levels[(job.id, idx)] = min(olds) if olds else 1
    if cert.check_speed_levels(state, state.table):
        inferred = cert.infer_speed_levels(state)
        if inferred is None:
            raise MergeRejected("no consistent speed levels after merge")
        state.table = inferred


def fix_cut(state: WorkingState, graph: tr.DistributionGraph, selection: tr.PathSelection) -> str:
    """Repair a disconnected distribution graph; 'optimal' ends the solve."""
    unreached = [v for v in range(state.interval_count) if v not in selection.reached]
    assert unreached
    l0 = max(unreached)
    closure = {l0}
    frontier = [l0]
    while frontier:
        v = frontier.pop()
        for (src, dst), t in graph.edges.items():
            if src == v and dst not in closure:
                closure.add(dst)
                frontier.append(dst)
    u_set = set(range(min(closure), max(closure) + 1))
    exits = [t for t in graph.transfers if t.source in u_set and t.destination not in u_set]
    if not exits:
        return "optimal"
    try:
        return _repair_levels(state, graph, u_set, exits)
    except RepairBlocked as exc:
        logger.debug("level repair blocked (%s); trying depletion point removal", exc)

    # Depletion point removal: an interval in the component with no active way
    # out at all merges into its left neighbour, freeing that neighbour's exits.
    for m in sorted(u_set):
        if m == 0:
            continue
        if any(src == m for (src, _), t in graph.edges.items()):
            continue
        try:
            _merge_at(state, m - 1)
        except MergeRejected as exc:
            logger.debug("removal of point before interval %s rejected: %s", m, exc)
            continue
        state.direction_memory.clear()
        _assert_invariants(state)
        state.trace.append({"kind": "fix", "action": "depletion_removal", "interval": m, "rate": state.rate})
        return "fixed"
    raise EngineError("cut is neither repairable nor removable, yet transfers leave it")


def _repair_levels(state: WorkingState, graph: tr.DistributionGraph, u_set: set, exits: list) -> str:
    """Speed level repair along an inactive exit."""
    exits = sorted(exits, key=lambda t: (t.source, t.destination, t.pairs))
    exit_t = exits[0]
    boundary_job = next(job for job, u, v in exit_t.hops if u in u_set and v not in u_set)
    family = {boundary_job}
    for t in graph.transfers:
        if boundary_job in t.job_sequence:
            family.update(t.job_sequence)

    prof = state.instance.profile
    straddlers = {
        j.id
        for j in state.instance.jobs
        if any(state.job_active_in(j.id, l) for l in u_set)
        and any(state.job_active_in(j.id, l) for l in range(state.interval_count) if l not in u_set)
    }
    for _ in range(4 * prof.k * max(1, len(state.instance.jobs)) ** 2 + 8):
        if any(tr.is_active(state, t) for t in exits):
            state.direction_memory.clear()
            _assert_invariants(state)
            state.trace.append({"kind": "fix", "action": "level_repair", "rate": state.rate})
            return "fixed"
        lower_inside = all(
            state.speeds[idx][j] == prof.speed(state.table[(j, idx)] - 1)
            for j in family
            for idx in u_set
            if j in state.speeds[idx]
        )
        upper_outside = all(
            state.speeds[idx][j] == prof.speed(state.table[(j, idx)])
            for j in family
            for idx in range(state.interval_count)
            if idx not in u_set and j in state.speeds[idx]
        )
        left_border = min(u_set) - 1  # label index left of the component
        border = _border_jump(state, straddlers, left_border) if left_border >= 0 else None
        if lower_inside:
            # a zero jump into the component would go negative: merge instead
            if border == 0:
                try:
                    _merge_at(state, left_border)
                except MergeRejected as exc:
                    raise RepairBlocked(f"border merge rejected: {exc}")
                state.direction_memory.clear()
                _assert_invariants(state)
                state.trace.append({"kind": "fix", "action": "border_merge", "rate": state.rate})
                return "fixed"
            pins = {
                (j, idx): state.table[(j, idx)] - 1
                for j in sorted(family)
                for idx in sorted(u_set)
                if (j, idx) in state.table
            }
            if any(v < 1 for v in pins.values()):
                raise RepairBlocked("cannot lower a speed level below 1")
        elif upper_outside:
            if border == 0 and any(state.job_active_in(j, left_border) for j in family):
                try:
                    _merge_at(state, left_border)
                except MergeRejected as exc:
                    raise RepairBlocked(f"border merge rejected: {exc}")
                state.direction_memory.clear()
                _assert_invariants(state)
                state.trace.append({"kind": "fix", "action": "border_merge", "rate": state.rate})
                return "fixed"
            pins = {
                (j, idx): state.table[(j, idx)] + 1
                for j in sorted(family)
                for idx in range(state.interval_count)
                if idx not in u_set and (j, idx) in state.table
            }
            if any(v > prof.k for v in pins.values()):
                raise RepairBlocked("cannot raise a speed level beyond the maximum")
        else:
            raise RepairBlocked(
                "neither all-lower inside nor all-upper outside"
            )
        # Complete the bumped assignment into a full table; boundary-speed jobs
        # sharing the touched critical intervals are pulled along as needed.
        repaired = cert.infer_speed_levels(state, pin=pins, prefer=state.table)
        if repaired is None:
            raise RepairBlocked(f"no consistent speed levels for pins {pins}")
        state.table = repaired
    raise RepairBlocked("level repair did not converge")


def _border_jump(state: WorkingState, family, point_pos: int) -> Optional[int]:
    """Level jump across one depletion point, anchored at jobs processed on
    both sides (bookkeeping entries of unprocessed pairs do not count)."""
    jumps = set()
    for j in family:
        if j in state.speeds[point_pos] and j in state.speeds[point_pos + 1]:
            l1 = state.table.get((j, point_pos))
            l2 = state.table.get((j, point_pos + 1))
            if l1 is not None and l2 is not None:
                jumps.add(l2 - l1)
    if not jumps:
        return None
    assert len(jumps) == 1, f"non-uniform border jump {jumps}"
    return jumps.pop()


# ---------------------------------------------------------------------------
# The main loop
# ---------------------------------------------------------------------------

@dataclass
class SolveResult:
    rate: Fraction
    yds_rate: Fraction
    schedule: Schedule
    state: Optional[WorkingState]
    table: cert.SpeedLevelTable
    certificate: Optional[cert.DualCertificate]
    trace: list
    events: int
    cut_fixes: int


def event_budget(instance: Instance) -> int:
    n = max(1, len(instance.jobs))
    return 64 * instance.profile.k * n**6 + 64


def solve(instance: Instance) -> SolveResult:
    """Minimum recharge rate, schedule, speed levels and dual certificate."""
    problems = validate(instance)
    if problems:
        raise InvalidInstance(problems)
    if not instance.jobs:
        return SolveResult(ZERO, ZERO, Schedule(()), None, cert.SpeedLevelTable(), None, [], 0, 0)

    state = initialize(instance)
    yds_rate = state.rate
    budget = event_budget(instance)

    while True:
        if state.event_count + state.cut_fixes > budget:
            raise EventBudgetExceeded(f"budget {budget} exhausted")
        if not state.points:
            _relabel(state)
            if not state.points:
                break
        graph = tr.build_graph(state)
        selection = tr.path_finding(graph)
        if len(selection.reached) < state.interval_count:
            outcome = fix_cut(state, graph, selection)
            state.cut_fixes += 1
            if outcome == "optimal":
                break
            continue
        rates = calculate_rates(state, selection.tree)
        event = next_event(state, rates)
        apply_event(state, rates, event, budget)

    schedule = state.to_schedule()
    report = cert.check_optimality(state, schedule, state.table)
    if not report.ok:
        raise CertificationError("; ".join(report.violations))
    dual = cert.build_dual_certificate(state, state.table)
    violations = cert.verify_duality(state, dual)
    if violations:
        raise CertificationError("; ".join(violations))
    return SolveResult(
        state.rate,
        yds_rate,
        schedule,
        state,
        state.table,
        dual,
        state.trace,
        state.event_count,
        state.cut_fixes,
    )


def _relabel(state: WorkingState) -> None:
    """Re-pin the rate to the current schedule's minimum and label its zeros."""
    best = ZERO
    for t, e in state.energy_breakpoints():
        used = state.rate * t - e
        if t > 0 and used > 0:
            best = max(best, used / t)
    state.rate = best
    if best > 0:
        _autolabel(state)


# ---------------------------------------------------------------------------
# Verification-state construction (for externally supplied schedules)
# ---------------------------------------------------------------------------

def state_from_schedule(instance: Instance, schedule: Schedule, rate) -> WorkingState:
    """Canonical state whose labels are the schedule's depletion points and
    whose workloads are read off the schedule."""
    from .schedule import depletion_points

    rate = Fraction(rate)
    prof = instance.profile
    points = list(depletion_points(schedule, prof, rate))
    boundaries = [ZERO, *points, None]
    works = [dict() for _ in range(len(points) + 1)]
    for seg in schedule.busy_segments():
        for idx in range(len(points) + 1):
            lo = boundaries[idx]
            hi = boundaries[idx + 1]
            a = max(seg.start, lo)
            b = seg.end if hi is None else min(seg.end, hi)
            if a < b:
                works[idx][seg.job] = works[idx].get(seg.job, ZERO) + prof.speed(seg.speed_index) * (b - a)
    state = WorkingState(instance, rate, points, works, cert.SpeedLevelTable())
    inferred = cert.infer_speed_levels(state)
    state.table = inferred if inferred is not None else cert.SpeedLevelTable()
    return state


def perturb_split(state: WorkingState, job: int, src: int, dst: int, amount) -> WorkingState:
    """Move ``amount`` of a job's workload between two intervals, keeping the
    labels; used by the mutation tests.  No invariants are enforced."""
    amount = Fraction(amount)
    works = [dict(w) for w in state.works]
    works[src][job] = works[src].get(job, ZERO) - amount
    if works[src][job] == 0:
        del works[src][job]
    works[dst][job] = works[dst].get(job, ZERO) + amount
    return WorkingState(state.instance, state.rate, state.points, works, state.table.copy())
