"""Optimality conditions and the primal-dual witness.

A schedule/rate pair is optimal when (1) it is feasible, (2) the work inside
every depletion interval is scheduled energy-optimally, (3) a consistent
speed-level assignment exists (the speed level relation), and (4) some
depletion point splits the schedule: no job due after it runs before it.

From a state satisfying these conditions we can solve a small triangular
system for multipliers on the depletion points and derive per-job and
per-slot multipliers whose objective equals the claimed rate exactly; dual
feasibility of that assignment certifies optimality against the slotted LP
relaxation without trusting the solver that produced the schedule.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

from .instance import Instance, rational_str, delta_slopes
from .schedule import (
    DepletionStructure,
    Schedule,
    feasibility_check,
)
from .yds import derived, yds_energy

ZERO = Fraction(0)


class NoSplitPoint(ValueError):
    """Every depletion point has a later-deadline job processed before it."""


class PreconditionFailed(ValueError):
    """Dual construction requires the structural optimality conditions."""


@dataclass
class SpeedLevelTable:
    """Map (job id, depletion interval index) -> speed level in 1..k.

    Defined for every pair whose interval intersects the job's window; if the
    job is processed there, its average speed must lie inside the level's
    bracket [s_{level-1}, s_level].
    """

    levels: dict[tuple[int, int], int] = field(default_factory=dict)

    def get(self, key, default=None):
        return self.levels.get(key, default)

    def __getitem__(self, key):
        return self.levels[key]

    def __contains__(self, key):
        return key in self.levels

    def items(self):
        return self.levels.items()

    def copy(self) -> "SpeedLevelTable":
        return SpeedLevelTable(dict(self.levels))


@dataclass
class DualCertificate:
    beta: dict[Fraction, Fraction]            # depletion point -> multiplier
    alpha: dict[int, Fraction]                # job -> multiplier
    gamma: list[tuple[Fraction, Fraction, Fraction]]  # (start, end, density)
    jumps: dict[Fraction, int]                # depletion point -> level jump
    objective: Fraction
    rate: Fraction

    def to_dict(self) -> dict:
        return {
            "beta": {rational_str(t): rational_str(v) for t, v in sorted(self.beta.items())},
            "alpha": {str(j): rational_str(v) for j, v in sorted(self.alpha.items())},
            "gamma": [
                {"start": rational_str(a), "end": rational_str(b), "density": rational_str(g)}
                for a, b, g in self.gamma
            ],
            "jumps": {rational_str(t): j for t, j in sorted(self.jumps.items())},
            "objective": rational_str(self.objective),
            "rate": rational_str(self.rate),
        }


# ---------------------------------------------------------------------------
# Speed level relation
# ---------------------------------------------------------------------------

def admissible_levels(profile, speed: Fraction) -> list[int]:
    """Levels compatible with a processed average speed, lowest first."""
    if speed <= 0 or speed > profile.max_speed:
        return []
    for i in range(1, profile.k + 1):
        if speed < profile.speed(i):
            return [i]
        if speed == profile.speed(i):
            return [i, i + 1] if i + 1 <= profile.k else [i]
    return []


def check_speed_levels(state, table: SpeedLevelTable, strict: bool = False) -> list[str]:
    """All four clauses of the speed level relation; empty list when satisfied.

    The processed-vs-active dominance clause is checked pointwise by default
    (competitors must be active at the instant of processing); ``strict``
    quantifies them over the whole window overlap within the interval.
    """
    prof = state.instance.profile
    problems: list[str] = []
    for idx in range(state.interval_count):
        for job, speed in state.speeds[idx].items():
            level = table.get((job, idx))
            if level is None:
                problems.append(f"missing level for processed job {job} in interval {idx}")
                continue
            allowed = admissible_levels(prof, speed)
            if level not in allowed:
                problems.append(
                    f"job {job} in interval {idx}: speed {speed} admits levels {allowed}, has {level}"
                )
    # Jump uniformity: one per-depletion-point jump vector must explain every
    # job's level differences across the intervals where it is processed.
    # (Anchoring at processed occurrences, rather than all active ones, is the
    # reading under which optimal schedules remain expressible; entries for
    # active-but-unprocessed pairs are solver bookkeeping and stay free.)
    jobs = [j.id for j in state.instance.jobs]
    for job in jobs:
        processed = [idx for idx in range(state.interval_count) if job in state.speeds[idx]]
        for i1, i2 in zip(processed, processed[1:]):
            l1, l2 = table.get((job, i1)), table.get((job, i2))
            if l1 is not None and l2 is not None and l2 < l1:
                problems.append(
                    f"job {job}: speed level decreases from interval {i1} to {i2}"
                )
    if solve_level_jumps(state, table) is None:
        problems.append("no per-point jump vector explains the processed levels")
    # dominance of the processed job
    for idx in range(state.interval_count):
        lo, hi = state.window(idx)
        for run in state.runs[idx]:
            pj = run.job
            for job in jobs:
                if job == pj:
                    continue
                r, d = state.instance.job(job).window
                if strict:
                    wj = state.instance.job(pj).window
                    span = (max(lo, wj[0]), min(hi, wj[1]))
                    overlap = r < span[1] and d > span[0]
                else:
                    overlap = r < run.end and d > run.start
                if overlap and table.get((job, idx), 0) > table.get((pj, idx), 0):
                    problems.append(
                        f"job {pj} processed in interval {idx} while active job {job} "
                        f"has higher level"
                    )
    return problems


def infer_speed_levels(
    state,
    strict: bool = False,
    pin: Optional[dict] = None,
    prefer: Optional[SpeedLevelTable] = None,
) -> Optional[SpeedLevelTable]:
    """Search for a table satisfying the speed level relation.

    Processed pairs are forced (or a binary boundary choice); unprocessed but
    active pairs range over 1..k.  Values are tried lowest-first, so the
    returned table uses the smallest possible levels.  ``pin`` fixes chosen
    entries, ``prefer`` reorders each domain to try a known value first (used
    to complete a repaired table with minimal disturbance).  Returns None when
    no assignment satisfies the relation.
    """
    prof = state.instance.profile
    pin = pin or {}
    variables: list[tuple[int, int]] = []
    domains: dict[tuple[int, int], list[int]] = {}
    for idx in range(state.interval_count):
        for job in [j.id for j in state.instance.jobs]:
            if not state.job_active_in(job, idx):
                continue
            key = (job, idx)
            speed = state.speeds[idx].get(job)
            if speed is not None:
                dom = admissible_levels(prof, speed)
                if not dom:
                    return None
            else:
                dom = list(range(1, prof.k + 1))
            if key in pin:
                if pin[key] not in dom:
                    return None
                dom = [pin[key]]
            elif prefer is not None and prefer.get(key) in dom:
                dom = [prefer.get(key)] + [v for v in dom if v != prefer.get(key)]
            variables.append(key)
            domains[key] = dom
    variables.sort(key=lambda key: (len(domains[key]), key[1], key[0]))

    assignment: dict[tuple[int, int], int] = {}

    def consistent(key) -> bool:
        job, idx = key
        table = SpeedLevelTable(assignment)
        # monotone levels over the job's processed intervals, and one jump
        # vector explaining every pair of jobs processed across a point
        processed = [i for i in range(state.interval_count) if job in state.speeds[i]]
        if idx in processed:
            for i1, i2 in zip(processed, processed[1:]):
                l1, l2 = table.get((job, i1)), table.get((job, i2))
                if l1 is not None and l2 is not None and l2 < l1:
                    return False
            for job2 in [j.id for j in state.instance.jobs]:
                if job2 == job:
                    continue
                shared = [
                    i
                    for i in range(state.interval_count)
                    if job in state.speeds[i] and job2 in state.speeds[i]
                ]
                for i1, i2 in zip(shared, shared[1:]):
                    a1, a2 = table.get((job, i1)), table.get((job, i2))
                    b1, b2 = table.get((job2, i1)), table.get((job2, i2))
                    if None in (a1, a2, b1, b2):
                        continue
                    if a2 - a1 != b2 - b1:
                        return False
        # dominance at processing times in this interval
        for run in state.runs[idx]:
            lvl_p = assignment.get((run.job, idx))
            if lvl_p is None:
                continue
            for job2 in [j.id for j in state.instance.jobs]:
                lvl_a = assignment.get((job2, idx))
                if lvl_a is None or job2 == run.job:
                    continue
                r, d = state.instance.job(job2).window
                if strict:
                    wj = state.instance.job(run.job).window
                    lo, hi = state.window(idx)
                    span = (max(lo, wj[0]), min(hi, wj[1]))
                    overlap = r < span[1] and d > span[0]
                else:
                    overlap = r < run.end and d > run.start
                if overlap and lvl_a > lvl_p:
                    return False
        return True

    def search(pos: int) -> bool:
        if pos == len(variables):
            return solve_level_jumps(state, SpeedLevelTable(assignment)) is not None
        key = variables[pos]
        for value in domains[key]:
            assignment[key] = value
            if consistent(key) and search(pos + 1):
                return True
            del assignment[key]
        return False

    if not search(0):
        return None
    return SpeedLevelTable(dict(assignment))


# ---------------------------------------------------------------------------
# Split depletion point and local energy optimality
# ---------------------------------------------------------------------------

def solve_level_jumps(state, table: SpeedLevelTable, upto: Optional[int] = None):
    """Non-negative per-depletion-point jumps consistent with the table.

    Each job whose processed intervals are l' < l'' pins the cumulative jump
    between them to its level difference; free points get jump 0.  Returns the
    jump list (length = number of points, or ``upto``) or None when the pinned
    prefix sums conflict.
    """
    n_pts = len(state.points) if upto is None else upto
    n_nodes = n_pts + 1  # cumulative jump before each interval 0..n_pts
    constraints = []  # A[i2] - A[i1] == diff
    for job in [j.id for j in state.instance.jobs]:
        processed = [
            idx
            for idx in range(state.interval_count)
            if job in state.speeds[idx] and idx < n_nodes
        ]
        for i1, i2 in zip(processed, processed[1:]):
            l1, l2 = table.get((job, i1)), table.get((job, i2))
            if l1 is None or l2 is None:
                return None
            constraints.append((i1, i2, l2 - l1))
    # Pointwise-minimal non-decreasing cumulative vector (keeps the beta tails
    # in the dual as large as possible): longest-path relaxation over
    # A[m+1] >= A[m] and both directions of each equality.
    lower = [(m, m + 1, 0) for m in range(n_nodes - 1)]
    for i1, i2, diff in constraints:
        lower.append((i1, i2, diff))
        lower.append((i2, i1, -diff))
    values = [0] * n_nodes
    for _ in range(n_nodes * max(1, len(lower)) + 1):
        changed = False
        for a, b, w in lower:
            if values[a] + w > values[b]:
                values[b] = values[a] + w
                changed = True
        if not changed:
            break
    else:
        return None
    for i1, i2, diff in constraints:
        if values[i2] - values[i1] != diff:
            return None
    return [values[m + 1] - values[m] for m in range(n_nodes - 1)]


def find_split_point(state) -> Fraction:
    """Leftmost depletion point that no later-deadline job precedes."""
    for tau in state.points:
        ok = True
        for idx in range(state.interval_count):
            for run in state.runs[idx]:
                if run.start < tau and state.instance.job(run.job).deadline > tau:
                    ok = False
                    break
            if not ok:
                break
        if ok:
            return tau
    raise NoSplitPoint("no depletion point splits the schedule")


def check_local_energy_optimality(
    schedule: Schedule, instance: Instance, structure: DepletionStructure
) -> list[str]:
    """Per depletion interval: schedule energy == optimal energy of its workload."""
    prof = instance.profile
    problems = []
    for idx in range(structure.interval_count):
        lo, hi = structure.bounds(idx)
        hi_eff = hi if hi is not None else max(structure.horizon, lo)
        used = ZERO
        works: dict[int, Fraction] = {}
        for seg in schedule.busy_segments():
            a, b = max(seg.start, lo), min(seg.end, hi_eff)
            if a >= b:
                continue
            used += prof.power(seg.speed_index) * (b - a)
            works[seg.job] = works.get(seg.job, ZERO) + prof.speed(seg.speed_index) * (b - a)
        if not works:
            continue
        djs = []
        for job_id, w in works.items():
            job = instance.job(job_id)
            djs.append(
                derived(job_id, max(job.release, lo), min(job.deadline, hi_eff), w, job.deadline)
            )
        optimal = yds_energy(prof, djs, (lo, hi_eff))
        if used != optimal:
            problems.append(
                f"interval {idx} uses energy {used}, optimal is {optimal} (gap {used - optimal})"
            )
    return problems


@dataclass
class OptimalityReport:
    ok: bool
    violations: list[str]
    split_point: Optional[Fraction] = None


def check_optimality(state, schedule: Schedule, table: SpeedLevelTable, strict: bool = False) -> OptimalityReport:
    """Feasibility + per-interval energy optimality + speed levels + split point."""
    violations = list(feasibility_check(schedule, state.instance, state.rate))
    violations += check_local_energy_optimality(schedule, state.instance, state.structure())
    violations += [f"levels: {v}" for v in check_speed_levels(state, table, strict)]
    split = None
    try:
        split = find_split_point(state)
    except NoSplitPoint as exc:
        violations.append(str(exc))
    return OptimalityReport(not violations, violations, split)


# ---------------------------------------------------------------------------
# Dual certificate
# ---------------------------------------------------------------------------

def build_dual_certificate(state, table: SpeedLevelTable) -> DualCertificate:
    """Multipliers witnessing optimality, from the structural conditions.

    Beta lives on the depletion points up to the leftmost split point; its
    tail sums scale by the well-separation constant to the power of the level
    jump at each point, pinned by sum(point * beta) = 1.  Alpha follows from
    the envelope slope of each job's level in its first processed interval,
    and gamma makes the busy slots tight.
    """
    prof = state.instance.profile
    slopes = delta_slopes(prof)
    try:
        split = find_split_point(state)
    except NoSplitPoint as exc:
        raise PreconditionFailed(str(exc)) from exc
    sigma = state.points.index(split)
    jumps = solve_level_jumps(state, table, upto=sigma)
    if jumps is None:
        raise PreconditionFailed("no per-point jump vector explains the processed levels")

    from .instance import well_separation_constant

    c = well_separation_constant(prof) or Fraction(1)
    # tails[m] = sum of beta at points m..sigma, as multiples of beta[sigma]
    factor = Fraction(1)
    factors = [Fraction(1)] * (sigma + 1)
    for m in range(sigma - 1, -1, -1):
        factor *= c ** jumps[m]
        factors[m] = factor
    betas_rel = [
        factors[m] - (factors[m + 1] if m < sigma else ZERO) for m in range(sigma + 1)
    ]
    norm = sum(state.points[m] * betas_rel[m] for m in range(sigma + 1))
    if norm <= 0:
        raise PreconditionFailed("degenerate normalization")
    base = Fraction(1) / norm
    beta = {state.points[m]: betas_rel[m] * base for m in range(sigma + 1)}
    tails = [factors[m] * base for m in range(sigma + 1)]

    def tail(idx: int) -> Fraction:
        return tails[idx] if idx <= sigma else ZERO

    alpha: dict[int, Fraction] = {}
    for job in state.instance.jobs:
        first = next(
            (idx for idx in range(state.interval_count) if state.works[idx].get(job.id, ZERO) > 0),
            None,
        )
        if first is None:
            alpha[job.id] = ZERO
            continue
        level = table[(job.id, first)]
        alpha[job.id] = slopes[level - 1] * tail(first)

    gamma: list[tuple[Fraction, Fraction, Fraction]] = []
    for idx in range(state.interval_count):
        for run in state.runs[idx]:
            level = table[(run.job, idx)]
            density = alpha[run.job] * prof.speed(level) - tail(idx) * prof.power(level)
            gamma.append((run.start, run.end, density))
    gamma.sort()

    objective = sum(
        (alpha[j.id] * j.work for j in state.instance.jobs), ZERO
    ) - sum(((b - a) * g for a, b, g in gamma), ZERO)
    point_jumps = {state.points[m]: jumps[m] for m in range(sigma)}
    return DualCertificate(beta, alpha, gamma, point_jumps, objective, state.rate)


def verify_duality(state, certificate: DualCertificate) -> list[str]:
    """Exact dual feasibility, normalization and strong duality.

    Slots are the common refinement of all run boundaries and depletion
    points; every multiplier and constraint is piecewise constant on them, so
    checking there is equivalent to checking everywhere.
    """
    prof = state.instance.profile
    problems: list[str] = []
    for t, v in certificate.beta.items():
        if v < 0:
            problems.append(f"beta negative at {t}")
    for j, v in certificate.alpha.items():
        if v < 0:
            problems.append(f"alpha negative for job {j}")
    for a, b, g in certificate.gamma:
        if g < 0:
            problems.append(f"gamma negative on [{a}, {b})")
    norm = sum((t * v for t, v in certificate.beta.items()), ZERO)
    if norm != 1:
        problems.append(f"beta normalization is {norm}, not 1")
    if certificate.objective != state.rate:
        problems.append(
            f"dual objective {certificate.objective} differs from rate {state.rate}"
        )

    cuts = {ZERO, state.horizon}
    cuts.update(state.points)
    for idx in range(state.interval_count):
        for run in state.runs[idx]:
            cuts.add(run.start)
            cuts.add(run.end)
    ordered = sorted(c for c in cuts if c <= state.horizon)

    def gamma_at(a: Fraction, b: Fraction) -> Fraction:
        for g0, g1, g in certificate.gamma:
            if g0 <= a and b <= g1:
                return g
        return ZERO

    for a, b in zip(ordered, ordered[1:]):
        if a >= b:
            continue
        tail = sum((v for t, v in certificate.beta.items() if t >= b), ZERO)
        g = gamma_at(a, b)
        for job in state.instance.jobs:
            if job.release >= b or job.deadline <= a:
                continue
            for i in range(1, prof.k + 1):
                lhs = certificate.alpha[job.id] * prof.speed(i) - tail * prof.power(i) - g
                if lhs > 0:
                    problems.append(
                        f"dual constraint violated for job {job.id}, speed {i}, "
                        f"slot [{a}, {b}): slack {lhs}"
                    )
    return problems
