"""Workload-movement channels between depletion intervals.

An epsilon transfer is a chain (interval, job) pairs: simultaneously, for each
hop, a small amount of the hop's job moves from the previous interval to the
hop's interval.  Inside every intermediate interval the arriving and departing
jobs trade places within one critical interval, so no speed there changes;
only the chain's source and destination critical intervals slow down / speed
up.  A transfer is *valid* when such a move keeps the schedule nice (windows
respected, per-interval energy optimality re-establishable, weak EDF), and
*active* when it also respects the speed-level brackets at both ends, i.e.
moving along it preserves the speed level relation.

Enumeration generates structurally-plausible simple chains by depth-first
search and confirms each candidate by actually moving a small probe amount
and re-checking niceness; the probe shrinks until the verdict stabilizes,
which makes the test agree with the infinitesimal definition on exact
rational data.

The distribution graph keeps, per ordered interval pair, only the
highest-priority active transfer.  Path finding grows a set S from the
rightmost interval by repeatedly attaching the source of the best edge into S
(shortest right-going edge first, otherwise longest left-going edge),
yielding an in-tree along which workload can be shed rightward.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Optional, Sequence

from .schedule import deadline_ranks, first_run_sequence, weak_edf_violation
from .yds import EmptyWindow, InfeasibleDensity, Lin, peel

logger = logging.getLogger(__name__)

ZERO = Fraction(0)
DEFAULT_PROBE = Fraction(1, 64)


class IncomparableInputs(ValueError):
    """Priority is defined only between distinct transfers with equal endpoints."""


@dataclass(frozen=True)
class EpsilonTransfer:
    """Sequence (interval, job) pairs; pairs[0] is the source interval with the
    first moving job, pairs[-1] the destination with the last moving job."""

    pairs: tuple[tuple[int, int], ...]

    @property
    def source(self) -> int:
        return self.pairs[0][0]

    @property
    def destination(self) -> int:
        return self.pairs[-1][0]

    @property
    def source_job(self) -> int:
        return self.pairs[1][1]

    @property
    def destination_job(self) -> int:
        return self.pairs[-1][1]

    @property
    def hops(self) -> tuple[tuple[int, int, int], ...]:
        """(job, from interval, to interval) per chain edge."""
        return tuple(
            (self.pairs[a][1], self.pairs[a - 1][0], self.pairs[a][0])
            for a in range(1, len(self.pairs))
        )

    @property
    def directions(self) -> tuple[int, ...]:
        """+1 for a right-going edge, -1 for a left-going one."""
        return tuple(1 if v > u else -1 for _, u, v in self.hops)

    @property
    def interval_sequence(self) -> tuple[int, ...]:
        return tuple(iv for iv, _ in self.pairs)

    @property
    def job_sequence(self) -> tuple[int, ...]:
        return tuple(j for _, j in self.pairs)

    def describe(self) -> str:
        inner = " -> ".join(f"I{iv}:j{j}" for iv, j in self.pairs)
        return f"[{inner}]"


@dataclass
class DistributionGraph:
    """Best active transfer per ordered interval pair, plus the raw pool."""

    vertices: int
    edges: dict[tuple[int, int], EpsilonTransfer]
    best_valid: dict[tuple[int, int], EpsilonTransfer]
    transfers: list[EpsilonTransfer]           # every valid transfer found
    active: dict[EpsilonTransfer, bool]

    def active_edges_from(self, src: int) -> list[EpsilonTransfer]:
        return [t for (s, _), t in self.edges.items() if s == src]


@dataclass
class PathSelection:
    tree: dict[int, EpsilonTransfer]  # vertex -> chosen outgoing edge
    reached: frozenset


# ---------------------------------------------------------------------------
# Candidate generation
# ---------------------------------------------------------------------------

def _chain_candidates(state, source: int):
    """Structurally-plausible simple chains out of ``source``.

    Pruned during the search: repeated jobs, repeated intervals, hops whose
    job has no work to give, right hops of jobs that already moved left (the
    engine's direction memory), right hops fully inside an earlier left hop,
    and hops whose arriving job cannot slice into any processing time of the
    departing job.
    """
    n = state.interval_count
    memory = getattr(state, "direction_memory", {})

    def moved_left(job):
        return -1 in memory.get(job, ())

    def runs_overlap(job_out, interval, job_in):
        window = state.instance.job(job_in).window
        for run in state.runs[interval]:
            if run.job == job_out and run.start < window[1] and run.end > window[0]:
                return True
        return False

    out: list[tuple[tuple[int, int], ...]] = []

    def extend(here, pairs, used_jobs, used_intervals, left_hops, arriving):
        for job in sorted(state.works[here]):
            if job in used_jobs or state.works[here][job] <= 0:
                continue
            if arriving is not None and not runs_overlap(job, here, arriving):
                continue
            for nxt in range(n):
                if nxt == here or nxt in used_intervals:
                    continue
                if not state.job_active_in(job, nxt):
                    continue
                going_right = nxt > here
                if going_right and moved_left(job):
                    continue
                if going_right and any(b <= here and nxt <= a for a, b in left_hops):
                    continue
                chain = pairs + ((nxt, job),)
                out.append(chain)
                hops = left_hops if going_right else left_hops + [(here, nxt)]
                extend(nxt, chain, used_jobs | {job}, used_intervals | {nxt}, hops, job)

    extend(source, ((source, 0),), set(), {source}, [], None)
    # pairs[0] carries the source job once the first hop is known
    return [((c[0][0], c[1][1]),) + c[1:] for c in out]


# ---------------------------------------------------------------------------
# Validity: move a probe amount and re-check niceness.
# ---------------------------------------------------------------------------

def transfer_is_valid(state, transfer: EpsilonTransfer, probe: Fraction = DEFAULT_PROBE) -> bool:
    avail = min(
        (state.works[u].get(job, ZERO) for job, u, _ in transfer.hops),
        default=ZERO,
    )
    if avail <= 0:
        return False
    delta = min(probe, avail)
    verdicts = []
    for _ in range(4):
        verdicts.append(_valid_at(state, transfer, delta))
        if len(verdicts) >= 2 and verdicts[-1] == verdicts[-2]:
            return verdicts[-1]
        delta = delta / 4
    return verdicts[-1]


def _valid_at(state, transfer: EpsilonTransfer, delta: Fraction) -> bool:
    moved: dict[int, dict] = {}
    for job, u, v in transfer.hops:
        moved.setdefault(u, dict(state.works[u]))
        moved.setdefault(v, dict(state.works[v]))
    for job, u, v in transfer.hops:
        moved[u][job] = moved[u].get(job, ZERO) - delta
        if moved[u][job] < 0:
            return False
        if moved[u][job] == 0:
            del moved[u][job]
        moved[v][job] = moved[v].get(job, ZERO) + delta

    intermediates = {iv for iv, _ in transfer.pairs[1:-1]}
    new_runs: dict[int, list] = {}
    for idx, works in moved.items():
        try:
            criticals, runs, speeds, _ = state.solve_interval(idx, works)
        except (EmptyWindow, InfeasibleDensity):
            return False
        new_runs[idx] = runs
        if idx in intermediates and speeds != state.speeds[idx]:
            return False

    atoms = []
    for idx in range(state.interval_count):
        for run in new_runs.get(idx, state.runs[idx]):
            atoms.append((run.start, run.job))
    seq = first_run_sequence(atoms, state.structure())
    return weak_edf_violation(seq, deadline_ranks(state.instance)) is None


# ---------------------------------------------------------------------------
# Activity: does an infinitesimal move along the transfer keep the levels?
# ---------------------------------------------------------------------------

def is_active(state, transfer: EpsilonTransfer) -> bool:
    """Source must be strictly decreasable and destination strictly increasable
    within the speed-level brackets of every job sharing the touched critical
    intervals; intermediate intervals keep their speeds and need no check."""
    prof = state.instance.profile
    src, src_job = transfer.source, transfer.source_job
    block = _moving_block(state, src, src_job, Fraction(-1))
    if block is None:
        return False
    g = block.density.a
    for member in block.jobs:
        level = state.table.get((member, src))
        if level is None or g <= prof.speed(level - 1):
            return False

    dst, dst_job = transfer.destination, transfer.destination_job
    block = _moving_block(state, dst, dst_job, Fraction(1))
    if block is None:
        return False
    g = block.density.a
    level = state.table.get((dst_job, dst))
    if level is None or g >= prof.speed(level):
        return False
    for member in block.jobs:
        if member == dst_job:
            continue
        level = state.table.get((member, dst))
        if level is None or g >= prof.speed(level):
            return False
    return True


def _moving_block(state, interval: int, job: int, slope: Fraction):
    """The critical interval ``job`` belongs to when its work moves at ``slope``."""
    jobs = state.derived_jobs(interval, extra_slopes={job: slope})
    try:
        criticals, _ = peel(jobs, *state.window(interval))
    except (EmptyWindow, InfeasibleDensity):
        return None
    for ci in criticals:
        if job in ci.jobs:
            return ci
    return None


# ---------------------------------------------------------------------------
# Priority (source and destination fixed)
# ---------------------------------------------------------------------------

def compare_priority(t1: EpsilonTransfer, t2: EpsilonTransfer, deadlines: dict) -> int:
    """+1 when t1 has higher priority, -1 when t2 does.

    Implements the published clauses on the first differing interval /
    first differing job; pairs the clauses do not order fall back to a
    deterministic lexicographic order (logged, so traces stay auditable).
    """
    if t1 == t2:
        raise IncomparableInputs("identical transfers")
    if t1.source != t2.source or t1.destination != t2.destination:
        raise IncomparableInputs("transfers with different endpoints")
    s1, s2 = t1.interval_sequence, t2.interval_sequence
    j1, j2 = t1.job_sequence, t2.job_sequence

    a1 = next((a for a in range(min(len(s1), len(s2))) if s1[a] != s2[a]), None)
    if a1 is not None:
        if _clause_higher(s1, s2, a1):
            return 1
        if _clause_higher(s2, s1, a1):
            return -1
    elif len(s1) == len(s2):
        a2 = next((a for a in range(len(j1)) if j1[a] != j2[a]), None)
        if a2 is not None:
            d1, d2 = deadlines[j1[a2]], deadlines[j2[a2]]
            if d1 != d2:
                return 1 if d1 < d2 else -1
    key1 = (len(t1.pairs), s1, j1)
    key2 = (len(t2.pairs), s2, j2)
    logger.debug("priority fallback between %s and %s", t1.describe(), t2.describe())
    return 1 if key1 < key2 else -1


def _clause_higher(sa, sb, a1) -> bool:
    prev = sa[a1 - 1]
    if sb[a1] < prev < sa[a1]:
        return True
    if sa[a1] < sb[a1] and (sb[a1] < prev or prev < sa[a1]):
        return True
    return False


# ---------------------------------------------------------------------------
# Enumeration, graph assembly, path finding
# ---------------------------------------------------------------------------

def enumerate_all_transfers(state, source: int, probe: Fraction = DEFAULT_PROBE) -> list[EpsilonTransfer]:
    """Every valid transfer out of ``source`` surviving the pruning rules."""
    found = []
    for chain in _chain_candidates(state, source):
        t = EpsilonTransfer(chain)
        if transfer_is_valid(state, t, probe):
            found.append(t)
    return found

def enumerate_transfers(state, source: int, probe: Fraction = DEFAULT_PROBE) -> list[EpsilonTransfer]:
    """Best valid transfer per reachable destination, by priority."""
    deadlines = {j.id: j.deadline for j in state.instance.jobs}
    best: dict[int, EpsilonTransfer] = {}
    for t in enumerate_all_transfers(state, source, probe):
        cur = best.get(t.destination)
        if cur is None or compare_priority(t, cur, deadlines) > 0:
            best[t.destination] = t
    return [best[d] for d in sorted(best)]


def build_graph(state, probe: Fraction = DEFAULT_PROBE) -> DistributionGraph:
    deadlines = {j.id: j.deadline for j in state.instance.jobs}
    transfers: list[EpsilonTransfer] = []
    active: dict[EpsilonTransfer, bool] = {}
    edges: dict[tuple[int, int], EpsilonTransfer] = {}
    best_valid: dict[tuple[int, int], EpsilonTransfer] = {}
    for src in range(state.interval_count):
        for t in enumerate_all_transfers(state, src, probe):
            transfers.append(t)
            active[t] = is_active(state, t)
            key = (t.source, t.destination)
            cur = best_valid.get(key)
            if cur is None or compare_priority(t, cur, deadlines) > 0:
                best_valid[key] = t
            if active[t]:
                cur = edges.get(key)
                if cur is None or compare_priority(t, cur, deadlines) > 0:
                    edges[key] = t
    return DistributionGraph(state.interval_count, edges, best_valid, transfers, active)


def path_finding(graph: DistributionGraph) -> PathSelection:
    """Grow S from the rightmost vertex; record one outgoing edge per vertex.

    Edge preference into S: the shortest right-going edge, otherwise the
    longest left-going edge; remaining ties go to the smallest source index.
    """
    root = graph.vertices - 1
    reached = {root}
    tree: dict[int, EpsilonTransfer] = {}
    while True:
        candidates = [
            (src, dst, t)
            for (src, dst), t in graph.edges.items()
            if dst in reached and src not in reached
        ]
        if not candidates:
            break
        right = [c for c in candidates if c[1] > c[0]]
        if right:
            src, dst, t = min(right, key=lambda c: (c[1] - c[0], c[0], c[1]))
        else:
            src, dst, t = min(candidates, key=lambda c: (c[1] - c[0], c[0], c[1]))
        reached.add(src)
        tree[src] = t
    return PathSelection(tree, frozenset(reached))


def crossing(t1: EpsilonTransfer, t2: EpsilonTransfer, span_of) -> bool:
    """Span-overlap test between two transfers with four distinct end blocks.

    ``span_of`` maps (interval, job) to the time span of that job's critical
    interval.  Used to audit that chosen tree edges stay laminar.
    """
    ends1 = {(t1.source, t1.source_job), (t1.destination, t1.destination_job)}
    ends2 = {(t2.source, t2.source_job), (t2.destination, t2.destination_job)}
    blocks1 = {span_of(*e) for e in ends1}
    blocks2 = {span_of(*e) for e in ends2}
    if blocks1 & blocks2:
        return False
    lo1 = min(s[0] for s in blocks1)
    hi1 = max(s[1] for s in blocks1)
    lo2 = min(s[0] for s in blocks2)
    hi2 = max(s[1] for s in blocks2)
    return lo1 < hi2 and lo2 < hi1
