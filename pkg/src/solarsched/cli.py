"""Command line interface: solving, verifying, generating and plotting.

Subcommands
-----------
solve     compute the minimum recharge rate of an instance file
oracle    slotted-LP reference value for the same objective
verify    check a schedule file against the optimality conditions
gen       write deterministic random instance files
compare   batch engine-vs-LP comparison (non-zero exit on any mismatch)
plot      static SVG of the energy trace and speed blocks

Exit codes: 0 success, 1 verification/comparison failure, 2 invalid input,
3 infeasible instance, 4 internal assertion failure.  All artifacts are
byte-deterministic for fixed inputs; wall-clock times go to the console only.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import random
import sys
import time
from fractions import Fraction
from pathlib import Path

from . import certificate as cert
from . import engine, oracle
from .instance import (
    Instance,
    Job,
    SpeedProfile,
    decimal_str,
    dump_instance,
    instance_to_dict,
    load_instance,
    rational_str,
    validate,
)
from .schedule import Schedule, dump_schedule, load_schedule

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_INVALID = 2
EXIT_INFEASIBLE = 3
EXIT_INTERNAL = 4


def _fmt(q: Fraction) -> str:
    return f"{rational_str(q)} ({decimal_str(q)})"


def _read_instance(path: str) -> Instance:
    inst = load_instance(Path(path).read_text())
    problems = validate(inst)
    if problems:
        raise ValueError("; ".join(problems))
    return inst


# ---------------------------------------------------------------------------
# Instance generation
# ---------------------------------------------------------------------------

def generate_instance(rng: random.Random, infeasible: bool = False) -> Instance:
    """Small random instance: at most 4 jobs, 3 speeds, integer times <= 8,
    works with denominator <= 4, slope ratio drawn from {2, 3}.

    Feasible mode rescales works until no window demands more than the top
    speed; infeasible mode instead inflates one job beyond its window.
    """
    k = rng.randint(1, 3)
    ratio = rng.choice([2, 3])
    slope = Fraction(rng.randint(1, 3))
    speeds: list[Fraction] = []
    s = 0
    for _ in range(k):
        s += rng.randint(1, 3)
        speeds.append(Fraction(s))
    powers: list[Fraction] = []
    power = Fraction(0)
    prev = Fraction(0)
    for i in range(k):
        power += slope * (speeds[i] - prev)
        powers.append(power)
        prev = speeds[i]
        slope *= ratio
    profile = SpeedProfile(speeds, powers)

    n = rng.randint(1, 4)
    jobs = []
    for j in range(n):
        release = rng.randint(0, 7)
        deadline = rng.randint(release + 1, 8)
        work = Fraction(rng.randint(1, 4 * (deadline - release) * int(profile.max_speed)), 4)
        jobs.append(Job(j + 1, release, deadline, work))

    if infeasible:
        victim = jobs[rng.randrange(len(jobs))]
        span = victim.deadline - victim.release
        jobs[victim.id - 1] = Job(
            victim.id, victim.release, victim.deadline, profile.max_speed * span + 1
        )
        return Instance(profile, jobs)

    smax = profile.max_speed
    for _ in range(40):
        worst = Fraction(1)
        times = sorted({x for jb in jobs for x in (jb.release, jb.deadline)})
        for a in times:
            for b in times:
                if b <= a:
                    continue
                total = sum(
                    (jb.work for jb in jobs if a <= jb.release and jb.deadline <= b),
                    Fraction(0),
                )
                if total > smax * (b - a):
                    worst = max(worst, total / (smax * (b - a)))
        if worst == 1:
            break
        jobs = [
            Job(
                jb.id,
                jb.release,
                jb.deadline,
                max(Fraction(int(jb.work / worst * 4), 1), Fraction(1)) / 4,
            )
            for jb in jobs
        ]
    return Instance(profile, jobs)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_solve(args) -> int:
    try:
        inst = _read_instance(args.instance)
    except Exception as exc:
        print(f"invalid instance: {exc}", file=sys.stderr)
        return EXIT_INVALID
    started = time.perf_counter()
    try:
        result = engine.solve(inst)
    except engine.InfeasibleInstance as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except engine.EngineError as exc:
        print(f"internal failure: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    elapsed = time.perf_counter() - started
    if args.trace:
        for entry in result.trace:
            print(_trace_line(entry))
    print(f"R* = {_fmt(result.rate)}")
    print(f"energy-optimal schedule needs R = {_fmt(result.yds_rate)}")
    print(f"{result.events} events, {result.cut_fixes} cut fixes, {elapsed:.3f}s")
    if args.emit_schedule:
        Path(args.emit_schedule).write_text(dump_schedule(result.schedule, result.rate))
        print(f"schedule written to {args.emit_schedule}")
    if args.emit_certificate:
        Path(args.emit_certificate).write_text(
            json.dumps(result.certificate.to_dict(), indent=2) + "\n"
        )
        print(f"certificate written to {args.emit_certificate}")
    return EXIT_OK


def _trace_line(entry: dict) -> str:
    if "step" in entry:
        parts = [
            f"event {entry['step']}: {entry['kind']}",
            f"delta {rational_str(entry['delta'])}",
            f"rate {rational_str(entry['rate'])}",
        ]
        if entry.get("time") is not None:
            parts.append(f"t {rational_str(entry['time'])}")
        if entry.get("job") is not None:
            parts.append(f"job {entry['job']}")
        if entry.get("note"):
            parts.append(entry["note"])
        return "  ".join(parts)
    return f"fix: {entry.get('action')}  rate {rational_str(entry['rate'])}"


def cmd_oracle(args) -> int:
    try:
        inst = _read_instance(args.instance)
    except Exception as exc:
        print(f"invalid instance: {exc}", file=sys.stderr)
        return EXIT_INVALID
    try:
        if args.refine:
            value = oracle.refine_until_stable(inst, Fraction(args.slot))
            print(f"R = {_fmt(value)}")
        else:
            lp = oracle.discretize(inst, Fraction(args.slot))
            value, assignment = oracle.lp_min_rate(lp)
            print(f"R = {_fmt(value)}  (slot {args.slot}, {lp.variable_count} variables)")
            if args.show_assignment:
                for (job, speed, slot), amount in sorted(assignment.items()):
                    print(f"  job {job} speed {speed} slot {slot}: {rational_str(amount)}")
    except oracle.IncompatibleSlot as exc:
        print(f"invalid slot: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except oracle.Infeasible as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_verify(args) -> int:
    try:
        inst = _read_instance(args.instance)
        schedule, rate = load_schedule(Path(args.schedule).read_text())
        if args.rate is not None:
            rate = Fraction(args.rate)
        if rate is None:
            raise ValueError("schedule file carries no recharge_rate; pass --rate")
    except Exception as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    state = engine.state_from_schedule(inst, schedule, rate)
    table = state.table
    report = cert.check_optimality(state, schedule, table, strict=args.strict_slr)
    for line in report.violations:
        print(f"violation: {line}")
    if report.ok:
        print(f"schedule satisfies the optimality conditions at R = {_fmt(rate)}")
        try:
            dual = cert.build_dual_certificate(state, table)
            issues = cert.verify_duality(state, dual)
            if issues:
                for line in issues:
                    print(f"duality: {line}")
                return EXIT_FAIL
            print(f"dual certificate verified, objective {_fmt(dual.objective)}")
            if args.emit_certificate:
                Path(args.emit_certificate).write_text(
                    json.dumps(dual.to_dict(), indent=2) + "\n"
                )
                print(f"certificate written to {args.emit_certificate}")
        except cert.PreconditionFailed as exc:
            print(f"duality: {exc}")
            return EXIT_FAIL
        return EXIT_OK
    return EXIT_FAIL


def cmd_gen(args) -> int:
    rng = random.Random(args.seed)
    out_dir = Path(args.dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i in range(args.count):
        inst = generate_instance(rng, infeasible=args.infeasible)
        path = out_dir / f"instance_{args.seed:04d}_{i:04d}.json"
        path.write_text(dump_instance(inst))
        print(path)
    return EXIT_OK


def compare_rows(seed: int, count: int, slot=Fraction(1)):
    """Engine-vs-LP reports for ``count`` generated instances.

    Each row carries the instance digest, both optima, the energy-optimal
    rate, per-kind event counts and the certificate status.
    """
    rng = random.Random(seed)
    rows = []
    for index in range(count):
        inst = generate_instance(rng)
        digest = hashlib.sha256(
            json.dumps(instance_to_dict(inst), sort_keys=True).encode()
        ).hexdigest()[:12]
        row = {
            "index": index,
            "digest": digest,
            "instance": inst,
            "engine": None,
            "oracle": None,
            "yds": None,
            "events": {},
            "status": "",
            "seconds": 0.0,
        }
        started = time.perf_counter()
        try:
            result = engine.solve(inst)
            row["engine"] = result.rate
            row["yds"] = result.yds_rate
            row["result"] = result
            counts: dict[str, int] = {}
            for entry in result.trace:
                if "step" in entry:
                    counts[entry["kind"]] = counts.get(entry["kind"], 0) + 1
            row["events"] = counts
            row["status"] = "certified"
        except engine.InfeasibleInstance:
            row["status"] = "infeasible"
        except engine.EngineError as exc:
            row["status"] = f"engine-error: {exc}"
        try:
            row["oracle"] = oracle.refine_until_stable(inst, slot)
        except oracle.Infeasible:
            row["oracle"] = "infeasible"
        except oracle.RefinementBudgetExceeded as exc:
            row["oracle"] = f"unstable {exc.last_two}"
        row["seconds"] = time.perf_counter() - started
        if row["status"] == "infeasible" and row["oracle"] == "infeasible":
            row["match"] = True
        else:
            row["match"] = (
                row["status"] == "certified"
                and isinstance(row["oracle"], Fraction)
                and row["engine"] == row["oracle"]
            )
        rows.append(row)
    return rows


def cmd_compare(args) -> int:
    rows = compare_rows(args.seed, args.count, Fraction(args.slot))
    mismatches = 0
    width = len(str(max(args.count - 1, 0)))
    for row in rows:
        eng = rational_str(row["engine"]) if row["engine"] is not None else row["status"]
        orc = rational_str(row["oracle"]) if isinstance(row["oracle"], Fraction) else str(row["oracle"])
        yds = rational_str(row["yds"]) if row["yds"] is not None else "-"
        flag = "ok" if row["match"] else "MISMATCH"
        if not row["match"]:
            mismatches += 1
        events = ",".join(f"{k}:{v}" for k, v in sorted(row["events"].items())) or "-"
        print(
            f"{row['index']:{width}d}  {row['digest']}  engine={eng}  lp={orc}  "
            f"yds={yds}  events={events}  {row['seconds']:.2f}s  {flag}"
        )
    print(f"{len(rows)} rows, {mismatches} mismatches")
    return EXIT_OK if mismatches == 0 else EXIT_FAIL


# ---------------------------------------------------------------------------
# Plotting (hand-rolled SVG: deterministic bytes, no timestamps)
# ---------------------------------------------------------------------------

_PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"]


def render_energy_svg(schedule: Schedule, profile: SpeedProfile, rate: Fraction) -> str:
    """Dashed cumulative recharge, solid cumulative consumption, speed blocks."""
    from .schedule import _consumption_breakpoints

    points = list(_consumption_breakpoints(schedule, profile))
    horizon = max((t for t, _ in points), default=Fraction(1)) or Fraction(1)
    top = max(rate * horizon, points[-1][1] if points else Fraction(1), Fraction(1))
    width, height, margin, band = 640, 400, 45, 80

    def sx(t: Fraction) -> str:
        return decimal_str(margin + (width - 2 * margin) * t / horizon, 9)

    def sy(e: Fraction) -> str:
        usable = height - 2 * margin - band
        return decimal_str(margin + usable - usable * e / top, 9)

    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        '<rect width="100%" height="100%" fill="white"/>',
    ]
    axis_y = height - margin - band
    lines.append(
        f'<line x1="{margin}" y1="{axis_y}" x2="{width - margin}" y2="{axis_y}" '
        'stroke="black" stroke-width="1"/>'
    )
    lines.append(
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{axis_y}" '
        'stroke="black" stroke-width="1"/>'
    )
    lines.append(
        f'<line x1="{sx(Fraction(0))}" y1="{sy(Fraction(0))}" x2="{sx(horizon)}" '
        f'y2="{sy(rate * horizon)}" stroke="#555555" stroke-width="1.5" '
        'stroke-dasharray="7,5"/>'
    )
    path = " ".join(
        ("M" if i == 0 else "L") + f"{sx(t)},{sy(e)}" for i, (t, e) in enumerate(points)
    )
    lines.append(f'<path d="{path}" fill="none" stroke="black" stroke-width="2"/>')

    job_ids = sorted({seg.job for seg in schedule.busy_segments()})
    color = {j: _PALETTE[i % len(_PALETTE)] for i, j in enumerate(job_ids)}
    max_speed = profile.max_speed
    for seg in schedule.busy_segments():
        h = (band - 18) * profile.speed(seg.speed_index) / max_speed
        y = decimal_str(height - margin - h, 9)
        x = sx(seg.start)
        w = decimal_str((width - 2 * margin) * (seg.end - seg.start) / horizon, 9)
        lines.append(
            f'<rect x="{x}" y="{y}" width="{w}" height="{decimal_str(h, 9)}" '
            f'fill="{color[seg.job]}" stroke="black" stroke-width="0.5">'
            f"<title>job {seg.job} speed {rational_str(profile.speed(seg.speed_index))}"
            f"</title></rect>"
        )
    for t, e in points:
        if t > 0 and e == 0:
            lines.append(
                f'<circle cx="{sx(t)}" cy="{sy(e)}" r="4" fill="none" '
                'stroke="#d62728" stroke-width="1.5"/>'
            )
    lines.append(
        f'<text x="{margin}" y="{margin - 12}" font-family="monospace" font-size="13">'
        f"recharge rate {rational_str(rate)} ({decimal_str(rate)})</text>"
    )
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def cmd_plot(args) -> int:
    try:
        schedule, rate = load_schedule(Path(args.schedule).read_text())
        if args.rate is not None:
            rate = Fraction(args.rate)
        if rate is None:
            raise ValueError("schedule file carries no recharge_rate; pass --rate")
        profile = _read_instance(args.instance).profile
    except Exception as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    svg = render_energy_svg(schedule, profile, rate)
    Path(args.out).write_text(svg)
    print(args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="solarsched",
        description="Minimum recharge rate scheduling for discrete-speed processors",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="compute the minimum recharge rate")
    p.add_argument("instance")
    p.add_argument("--trace", action="store_true", help="print one line per event")
    p.add_argument("--emit-schedule", metavar="FILE")
    p.add_argument("--emit-certificate", metavar="FILE")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("oracle", help="slotted-LP reference optimum")
    p.add_argument("instance")
    p.add_argument("--slot", default="1", help="slot length (rational, default 1)")
    p.add_argument("--refine", action="store_true", help="halve the slot until stable")
    p.add_argument("--show-assignment", action="store_true")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("verify", help="check a schedule against the optimality conditions")
    p.add_argument("instance")
    p.add_argument("schedule")
    p.add_argument("--rate", help="override the schedule file's recharge rate")
    p.add_argument("--strict-slr", action="store_true",
                   help="quantify the dominance clause over whole window overlaps")
    p.add_argument("--emit-certificate", metavar="FILE")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("gen", help="write deterministic random instances")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--dir", default=".")
    p.add_argument("--infeasible", action="store_true")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("compare", help="batch engine-vs-LP comparison")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--count", type=int, default=50)
    p.add_argument("--slot", default="1")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("plot", help="SVG energy trace of a schedule")
    p.add_argument("instance")
    p.add_argument("schedule")
    p.add_argument("--rate")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
