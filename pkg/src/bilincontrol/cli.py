"""Command-line front end.

    bilincontrol simulate MANIFEST
    bilincontrol analyze PROBLEM_OR_MANIFEST
    bilincontrol solve MANIFEST
    bilincontrol reproduce {1,2} [--out DIR] [--h STEP] [--iters N]

Problem file (JSON)::

    {"A": [[...], ...], "B": [[...], ...], "L": [[...], ...],
     "x0": [...], "T": 0.5, "nu": 3, "beta": 0}

Manifest file (JSON); relative paths resolve against the manifest's folder::

    {"problem": "problem.json",
     "method": "global" | "global-regularized" | "gradient",
     "max_iters": 10, "h": 0.0005, "alpha_reg": 0.05,
     "singular_mode": "staged" | "bang-only-with-collapse",
     "initial_control": {"constant": 0.3}
                      | {"pieces": [[t0, t1, value], ...]}
                      | {"file": "control.csv"},
     "out": "results"}

Exit codes: 0 success, 2 input error, 3 solver stall.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import data
from .core import ControlSignal, GridSpec, ProblemError, ProblemSpec, load_problem, save_problem, validate_problem
from .dynamics import IntegrationError, evaluate, reachability_bounds, write_trajectory_csv
from .improve import METHODS, SolverConfig, solve, write_control_csv, write_iterations_csv
from .pmp import commutator_chain, singular_free_certificate

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_STALL = 3


class InputError(Exception):
    pass


@dataclass(frozen=True)
class RunManifest:
    problem_path: Path
    problem: ProblemSpec
    config: SolverConfig
    initial_control: ControlSignal
    output_dir: Path


def _read_json(path: Path):
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None


def _read_control_csv(path: Path, grid: GridSpec, nu: float) -> ControlSignal:
    try:
        with path.open(encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from None
    t, v = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        try:
            t.append(float(row[0]))
            v.append(float(row[1]))
        except (IndexError, ValueError):
            raise InputError(f"{path}: line {lineno}: expected two numbers 't,u'") from None
    if len(t) < 2:
        raise InputError(f"{path}: need at least two rows")
    return ControlSignal(grid, np.interp(grid.times, t, v), nu=nu)


def _initial_control(spec, grid: GridSpec, nu: float, base: Path) -> ControlSignal:
    if not isinstance(spec, dict) or len(spec) != 1:
        raise InputError("initial_control must be an object with one of 'constant', 'pieces', 'file'")
    (kind, value), = spec.items()
    if kind == "constant":
        u = ControlSignal.constant(grid, float(value), nu=nu)
    elif kind == "pieces":
        try:
            pieces = [(float(a), float(b), float(c)) for a, b, c in value]
        except (TypeError, ValueError):
            raise InputError("initial_control.pieces must be a list of [t0, t1, value]") from None
        u = ControlSignal.piecewise(grid, pieces, nu=nu)
    elif kind == "file":
        u = _read_control_csv(base / value, grid, nu)
    else:
        raise InputError(f"unknown initial_control kind {kind!r}")
    if u.clamped:
        raise InputError(f"initial control exceeds the bound |u| <= {nu}")
    return u


def load_manifest(path) -> RunManifest:
    path = Path(path)
    d = _read_json(path)
    if not isinstance(d, dict):
        raise InputError(f"{path}: top level must be an object")
    base = path.parent
    if "problem" not in d:
        raise InputError(f"{path}: missing field 'problem'")
    problem_path = base / d["problem"]
    try:
        problem = load_problem(problem_path)
    except OSError as exc:
        raise InputError(f"{problem_path}: {exc.strerror}") from None
    except ProblemError as exc:
        raise InputError(str(exc)) from None
    try:
        grid = GridSpec.from_step(problem.T, float(d.get("h", data.DEFAULT_STEP)))
        cfg = SolverConfig(
            method=d.get("method", "global"),
            max_iters=int(d.get("max_iters", 100)),
            grid=grid,
            alpha_reg=float(d.get("alpha_reg", 0.05)),
            stop_tol=float(d.get("stop_tol", 1e-9)),
            pmp_tol=float(d.get("pmp_tol", 1e-6)),
            singular_mode=d.get("singular_mode", "staged"),
        )
    except (TypeError, ValueError) as exc:
        raise InputError(f"{path}: {exc}") from None
    u0 = _initial_control(d.get("initial_control", {"constant": 0.0}), grid, problem.nu, base)
    out = base / d.get("out", "out")
    return RunManifest(problem_path, problem, cfg, u0, out)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_simulate(m: RunManifest) -> int:
    x, obj = evaluate(m.problem, m.initial_control)
    m.output_dir.mkdir(parents=True, exist_ok=True)
    write_trajectory_csv(x, m.output_dir / "trajectory.csv")
    print(f"terminal {obj.terminal!r}")
    print(f"integral {obj.integral!r}")
    print(f"total    {obj.total!r}")
    return EXIT_OK


def analyze_text(p: ProblemSpec) -> str:
    rep = validate_problem(p)
    b = reachability_bounds(p)
    chain = commutator_chain(p.A, p.B)
    lines = [
        f"dimension        {p.n}",
        f"gamma            {b.gamma!r}",
        f"norm bounds      [{b.lower!r}, {b.upper!r}]",
        f"block structure  {'present' if rep.block_structure else 'absent'}",
        f"A, B commute     {'yes' if rep.commuting else 'no'}",
        f"singular-free    {singular_free_certificate(p.L, p.B)}",
        "commutator chain:",
        chain.report(),
    ]
    return "\n".join(lines)


def cmd_analyze(path) -> int:
    path = Path(path)
    d = _read_json(path)
    if isinstance(d, dict) and "problem" in d:
        p = load_manifest(path).problem
    else:
        try:
            p = ProblemSpec.from_dict(d) if isinstance(d, dict) else load_problem(path)
        except (TypeError, ValueError) as exc:
            raise InputError(f"{path}: {exc}") from None
    print(analyze_text(p))
    return EXIT_OK


def _write_run(report, out: Path):
    out.mkdir(parents=True, exist_ok=True)
    write_iterations_csv(report.history, out / "iterations.csv")
    write_control_csv(report.final_control, out / "control.csv")
    write_trajectory_csv(report.final_trajectory, out / "trajectory.csv")


def cmd_solve(m: RunManifest) -> int:
    report = solve(m.problem, m.initial_control, m.config)
    _write_run(report, m.output_dir)
    last = report.history[-1]
    print(f"method       {m.config.method}")
    print(f"iterations   {len(report.history) - 1}")
    print(f"objective    {last.objective.total!r}")
    print(f"termination  {report.termination}")
    return EXIT_STALL if report.termination == "stalled" else EXIT_OK


def cmd_reproduce(example_id: int, out, h=data.DEFAULT_STEP, iters=10, alpha_reg=0.05) -> int:
    p, grid, u0 = data.example(example_id, h)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    save_problem(p, out / "problem.json")
    columns = {}
    stalled = False
    for method in METHODS:
        cfg = SolverConfig(method=method, max_iters=iters, grid=grid, alpha_reg=alpha_reg)
        report = solve(p, u0, cfg)
        _write_run(report, out / method)
        columns[method] = [r.objective.total for r in report.history]
        stalled |= report.termination == "stalled"
        print(f"{method:20s} {report.termination:10s} final {columns[method][-1]:.5f}")
    rows = max(len(v) for v in columns.values())
    with (out / "comparison.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iter"] + list(METHODS))
        for i in range(rows):
            w.writerow([i] + [repr(float(columns[m][i])) if i < len(columns[m]) else "" for m in METHODS])
    return EXIT_STALL if stalled else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bilincontrol", description=__doc__.split("\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)
    s = sub.add_parser("simulate", help="integrate the initial control, write trajectory.csv")
    s.add_argument("manifest")
    s = sub.add_parser("analyze", help="structural report for a problem")
    s.add_argument("path", help="problem or manifest JSON")
    s = sub.add_parser("solve", help="run the configured improvement method")
    s.add_argument("manifest")
    s = sub.add_parser("reproduce", help="rerun a built-in example with all three methods")
    s.add_argument("example", type=int, choices=sorted(data.EXAMPLES))
    s.add_argument("--out", default=None)
    s.add_argument("--h", type=float, default=data.DEFAULT_STEP)
    s.add_argument("--iters", type=int, default=10)
    s.add_argument("--alpha-reg", type=float, default=0.05)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "simulate":
            return cmd_simulate(load_manifest(args.manifest))
        if args.command == "analyze":
            return cmd_analyze(args.path)
        if args.command == "solve":
            return cmd_solve(load_manifest(args.manifest))
        out = args.out or f"example{args.example}"
        return cmd_reproduce(args.example, out, args.h, args.iters, args.alpha_reg)
    except (InputError, ProblemError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except IntegrationError as exc:
        print(f"error: integration failed: {exc}", file=sys.stderr)
        return EXIT_STALL


if __name__ == "__main__":
    sys.exit(main())
