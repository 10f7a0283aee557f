"""Independent ground truth: a time-slotted LP for the minimum recharge rate.

Discretize time into equal slots of length h (h must divide every release and
deadline).  Indicator-style variables x[j,i,t] say how much of slot t job j
spends at speed s_i; together with the rate variable R the LP is

    min R
    s.t.  sum_{t in window(j)} sum_i x[j,i,t] * s_i * h  >=  p_j      (work)
          sum_{t'<=t} sum_{j,i} x[j,i,t'] * P_i * h  <=  R*(t+1)*h    (battery)
          sum_{j,i} x[j,i,t]  <=  1                                   (capacity)
          x >= 0, R >= 0.

Power is constant inside a slot, so checking the battery at slot boundaries
suffices; a fractional slot is realized slower-speed-first, which keeps the
battery above the boundary interpolation.  The solver is a self-contained
exact-rational two-phase simplex (dense tableau, Dantzig pricing with a Bland
fallback against cycling), so optima come out as exact fractions and the
acceptance suite can assert equality with the combinatorial engine.

Refining the slots can only lower the optimum (a coarse schedule is feasible
on any finer grid); ``refine_until_stable`` halves h until two consecutive
optima agree exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

from .instance import Instance

try:  # exact rationals with C arithmetic; plain Fraction works too, just slower
    from gmpy2 import mpq as _Q
except ImportError:  # pragma: no cover
    _Q = Fraction

ZERO = Fraction(0)


class IncompatibleSlot(ValueError):
    """Slot length does not divide every release and deadline."""


class Infeasible(ValueError):
    """No schedule finishes all jobs, at any recharge rate."""


class Unbounded(RuntimeError):
    pass


class RefinementBudgetExceeded(RuntimeError):
    def __init__(self, last_two):
        super().__init__(f"no stable optimum after 8 refinements; last values {last_two}")
        self.last_two = last_two


@dataclass
class SlotLP:
    """The slotted LP: variable layout plus the exact constraint system."""

    instance: Instance
    h: Fraction
    slots: int
    var_index: dict  # (job id, speed index, slot) -> column, plus "R"
    columns: int
    c: list
    rows: list  # list of (coefs list, sense str, rhs)

    @property
    def variable_count(self) -> int:
        """Count of the full x grid plus R (structurally-zero columns included)."""
        n = len(self.instance.jobs)
        return n * self.instance.profile.k * self.slots + 1


def discretize(instance: Instance, h) -> SlotLP:
    """Build the slotted LP; raises IncompatibleSlot unless h divides all r, d."""
    h = Fraction(h)
    if h <= 0:
        raise ValueError("slot length must be positive")
    for job in instance.jobs:
        for value in (job.release, job.deadline):
            if value / h != int(value / h):
                raise IncompatibleSlot(f"slot {h} does not divide {value}")
    horizon = instance.horizon
    slots = int(horizon / h) if horizon > 0 else 0
    prof = instance.profile

    # Columns: only x variables that can contribute work (slot inside the job's
    # window); everything else is 0 in some optimal solution and is reported
    # as 0 in the primal assignment.  R is the last column.
    var_index: dict = {}
    for job in instance.jobs:
        t0 = int(job.release / h)
        t1 = int(job.deadline / h)
        for t in range(t0, t1):
            for i in range(1, prof.k + 1):
                var_index[(job.id, i, t)] = len(var_index)
    r_col = len(var_index)
    var_index["R"] = r_col
    columns = r_col + 1

    c = [ZERO] * columns
    c[r_col] = Fraction(1)

    rows: list[tuple[list, str, Fraction]] = []
    for job in instance.jobs:
        coefs = [ZERO] * columns
        t0, t1 = int(job.release / h), int(job.deadline / h)
        for t in range(t0, t1):
            for i in range(1, prof.k + 1):
                coefs[var_index[(job.id, i, t)]] = prof.speed(i) * h
        rows.append((coefs, ">=", job.work))
    for t in range(slots):
        coefs = [ZERO] * columns
        for key, col in var_index.items():
            if key == "R":
                continue
            _, i, t2 = key
            if t2 <= t:
                coefs[col] = prof.power(i) * h
        coefs[r_col] = -(Fraction(t + 1) * h)
        rows.append((coefs, "<=", ZERO))
    for t in range(slots):
        coefs = [ZERO] * columns
        for key, col in var_index.items():
            if key == "R":
                continue
            _, _, t2 = key
            if t2 == t:
                coefs[col] = Fraction(1)
        rows.append((coefs, "<=", Fraction(1)))
    return SlotLP(instance, h, slots, var_index, columns, c, rows)


def lp_min_rate(slot_lp: SlotLP) -> tuple[Fraction, dict]:
    """Exact optimum of the slotted LP and one optimal primal assignment."""
    if not slot_lp.instance.jobs:
        return ZERO, {}
    value, solution = _simplex(slot_lp.c, slot_lp.rows)
    assignment = {}
    for key, col in slot_lp.var_index.items():
        if key == "R":
            continue
        if solution[col] != 0:
            assignment[key] = solution[col]
    return value, assignment


def refine_until_stable(instance: Instance, h0) -> Fraction:
    """Halve the slot length until two consecutive optima agree exactly.

    Gives up after 8 halvings, reporting the last two (still disagreeing)
    values; the optimum is non-increasing along the way.
    """
    h = Fraction(h0)
    previous = None
    latest, _ = lp_min_rate(discretize(instance, h))
    for _ in range(8):
        h = h / 2
        value, _ = lp_min_rate(discretize(instance, h))
        if value == latest:
            return value
        previous, latest = latest, value
    raise RefinementBudgetExceeded((previous, latest))


# ---------------------------------------------------------------------------
# Self-contained exact simplex (dense tableau, two phases).
# ---------------------------------------------------------------------------

_BLAND_TRIGGER = 40  # pivots without objective progress before switching rules


def _simplex(c: Sequence[Fraction], rows) -> tuple[Fraction, list[Fraction]]:
    """min c.x s.t. rows (coefs, sense, rhs), x >= 0.  Exact arithmetic."""
    n = len(c)
    m = len(rows)
    q0 = _Q(0)
    q1 = _Q(1)

    # Normalize to equalities with non-negative rhs; remember slack/artificial layout.
    tableau: list[list] = []
    basis: list[int] = []
    slack_cols = 0
    art_cols = 0
    specs = []
    for coefs, sense, rhs in rows:
        coefs = list(coefs)
        if rhs < 0:
            coefs = [-v for v in coefs]
            rhs = -rhs
            sense = {"<=": ">=", ">=": "<=", "=": "="}[sense]
        specs.append((coefs, sense, rhs))
        if sense in ("<=", ">="):
            slack_cols += 1
        if sense in (">=", "="):
            art_cols += 1

    total = n + slack_cols + art_cols
    slack_at = n
    art_at = n + slack_cols
    art_start = art_at
    for coefs, sense, rhs in specs:
        row = [q0] * (total + 1)
        for j, v in enumerate(coefs):
            if v:
                row[j] = _Q(v)
        if sense == "<=":
            row[slack_at] = q1
            basis.append(slack_at)
            slack_at += 1
        elif sense == ">=":
            row[slack_at] = -q1
            slack_at += 1
            row[art_at] = q1
            basis.append(art_at)
            art_at += 1
        else:
            row[art_at] = q1
            basis.append(art_at)
            art_at += 1
        row[total] = _Q(rhs)
        tableau.append(row)

    def run_phase(cost: list) -> None:
        # Reduced-cost row for the current basis.
        z = [q0] * (total + 1)
        for j in range(total + 1):
            z[j] = -cost[j] if j < total else q0
        for r, b in enumerate(basis):
            cb = cost[b]
            if cb:
                row = tableau[r]
                for j in range(total + 1):
                    if row[j]:
                        z[j] += cb * row[j]
        stall = 0
        last_obj = z[total]
        while True:
            entering = -1
            if stall < _BLAND_TRIGGER:
                best = q0
                for j in range(total):
                    if z[j] > best:
                        best = z[j]
                        entering = j
            else:  # Bland: first improving column
                for j in range(total):
                    if z[j] > 0:
                        entering = j
                        break
            if entering < 0:
                return
            leaving = -1
            best_ratio = None
            for r in range(m):
                a = tableau[r][entering]
                if a > 0:
                    ratio = tableau[r][total] / a
                    if (
                        best_ratio is None
                        or ratio < best_ratio
                        or (ratio == best_ratio and basis[r] < basis[leaving])
                    ):
                        best_ratio = ratio
                        leaving = r
            if leaving < 0:
                raise Unbounded("LP unbounded")
            _pivot(tableau, z, basis, leaving, entering, total)
            if z[total] != last_obj:
                last_obj = z[total]
                stall = 0
            else:
                stall += 1

    # Phase 1: drive artificials to zero.
    if art_cols:
        cost1 = [q0] * (total + 1)
        for j in range(art_start, total):
            cost1[j] = q1
        run_phase(cost1)
        infeas = q0
        for r, b in enumerate(basis):
            if b >= art_start:
                infeas += tableau[r][total]
        if infeas != 0:
            raise Infeasible("no feasible schedule at any recharge rate")
        # Pivot lingering zero-valued artificials out of the basis when possible.
        for r in range(m):
            if basis[r] >= art_start:
                for j in range(art_start):
                    if tableau[r][j] != 0:
                        _pivot(tableau, None, basis, r, j, total)
                        break

    cost2 = [q0] * (total + 1)
    for j in range(n):
        if c[j]:
            cost2[j] = _Q(c[j])
    huge = _Q(10) ** 9  # block re-entry of artificial columns in phase 2
    for j in range(art_start, total):
        cost2[j] = huge
    run_phase(cost2)

    solution = [ZERO] * n
    for r, b in enumerate(basis):
        if b < n:
            solution[b] = _to_fraction(tableau[r][total])
    value = ZERO
    for j in range(n):
        if c[j] and solution[j]:
            value += Fraction(c[j]) * solution[j]
    return value, solution


def _pivot(tableau, z, basis, leaving, entering, total) -> None:
    row = tableau[leaving]
    inv = 1 / row[entering]
    for j in range(total + 1):
        if row[j]:
            row[j] = row[j] * inv
    for r, other in enumerate(tableau):
        if r == leaving:
            continue
        factor = other[entering]
        if factor:
            for j in range(total + 1):
                if row[j]:
                    other[j] = other[j] - factor * row[j]
    if z is not None:
        factor = z[entering]
        if factor:
            for j in range(total + 1):
                if row[j]:
                    z[j] = z[j] - factor * row[j]
    basis[leaving] = entering


def _to_fraction(q) -> Fraction:
    if isinstance(q, Fraction):
        return q
    return Fraction(int(q.numerator), int(q.denominator))


# ---------------------------------------------------------------------------
# Exhaustive baseline for very small instances (independent of the LP path).
# ---------------------------------------------------------------------------

def brute_force_min_rate(instance: Instance, h) -> Fraction:
    """Minimum rate over slot-discretized schedules, by exhaustive DP.

    Each slot idles or runs one job at one discrete speed for the whole slot.
    Kept for at most two jobs; the state space explodes beyond that.
    """
    if len(instance.jobs) > 2:
        raise ValueError("brute force is limited to two jobs")
    if not instance.jobs:
        return ZERO
    h = Fraction(h)
    prof = instance.profile
    horizon = instance.horizon
    if horizon / h != int(horizon / h):
        raise IncompatibleSlot(f"slot {h} does not divide horizon {horizon}")
    slots = int(horizon / h)
    jobs = list(instance.jobs)

    def feasible(rate: Fraction) -> bool:
        # state: remaining works; value: minimum energy used so far
        states = {tuple(j.work for j in jobs): ZERO}
        for t in range(slots):
            t_end = Fraction(t + 1) * h
            nxt: dict = {}
            for rem, used in states.items():
                actions = [(None, 0)]
                for ji, job in enumerate(jobs):
                    if rem[ji] > 0 and job.release <= Fraction(t) * h and t_end <= job.deadline:
                        for i in range(1, prof.k + 1):
                            actions.append((ji, i))
                for ji, i in actions:
                    used2 = used + prof.power(i) * h
                    if used2 > rate * t_end:
                        continue
                    if ji is None:
                        rem2 = rem
                    else:
                        lst = list(rem)
                        lst[ji] = max(ZERO, lst[ji] - prof.speed(i) * h)
                        rem2 = tuple(lst)
                    if rem2 not in nxt or used2 < nxt[rem2]:
                        nxt[rem2] = used2
            states = nxt
            if not states:
                return False
        zero = tuple(ZERO for _ in jobs)
        return zero in states

    # Candidate rates: any achievable used-energy total divided by a slot end.
    quanta = sorted({prof.power(i) * h for i in range(1, prof.k + 1)})
    max_used = prof.power(prof.k) * h * slots
    candidates = set()
    for t in range(1, slots + 1):
        t_end = Fraction(t) * h
        used = ZERO
        combos = {ZERO}
        for _ in range(t):
            combos = {u + q for u in combos for q in [ZERO] + quanta if u + q <= max_used}
            if len(combos) > 20000:
                break
        for u in combos:
            candidates.add(u / t_end)
    ordered = sorted(candidates)
    lo, hi = 0, len(ordered) - 1
    if not feasible(ordered[-1]):
        raise Infeasible("brute force: no schedule fits the windows")
    best = ordered[-1]
    while lo <= hi:
        mid = (lo + hi) // 2
        if feasible(ordered[mid]):
            best = ordered[mid]
            hi = mid - 1
        else:
            lo = mid + 1
    return best
