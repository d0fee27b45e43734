"""Command-line front end.

Exit codes: 0 success, 2 scenario or validation error, 3 numerical failure,
4 cross-validation threshold exceeded (``compare-lq``).  Every failure writes
one JSON diagnostic line to stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import expr as ex
from . import export
from .crossval import compare_grid_riccati
from .grid import Grid
from .hjb import GridExitError, PolicyControl, SolverError, dpp_residual, solve, synthesize_trajectory
from .model import ControlSet, ValidationError
from .pmp import check_extremum, costate_vs_gradV, integrate_costate
from .riccati import RiccatiError, lq_value, solve_impulsive_riccati
from .scenario import Scenario, ScenarioError, load_scenario
from .sim import SimulationError, evaluate_cost, integrate

OUT_ENV = "HYBRIDCTL_OUT"

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_THRESHOLD = 0, 2, 3, 4


class ThresholdExceeded(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("scenario", help="scenario JSON file")
    common.add_argument("--out", default=os.environ.get(OUT_ENV, "out"),
                        help=f"output directory (default: ${OUT_ENV} or ./out)")
    common.add_argument("--threads", type=int, default=1, help="worker threads (results do not depend on it)")
    common.add_argument("--seed", type=int, default=0, help="seed for sampled checks")
    common.add_argument("--s", type=float, help="start time (overrides the scenario)")
    common.add_argument("--xi", type=float, nargs="+", help="start state (overrides the scenario)")
    common.add_argument("--h", type=float, help="simulation step")
    common.add_argument("--coupling", choices=["envelope", "left-limit"], default="envelope",
                        help="parametrized variant: how the pre-impulse control enters the jump")
    g = common.add_argument_group("grid overrides")
    g.add_argument("--lo", type=float, nargs="+")
    g.add_argument("--hi", type=float, nargs="+")
    g.add_argument("--nodes", type=int, nargs="+")
    g.add_argument("--dt", type=float)
    g.add_argument("--u-samples", type=int, nargs="+", help="per-axis lattice size for a box U")
    g.add_argument("--w-samples", type=int, nargs="+", help="per-axis lattice size for a box W")

    p = argparse.ArgumentParser(prog="hybridctl", description="Optimal control of impulsive hybrid systems.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="simulate the scenario's open-loop controls")
    sp = sub.add_parser("solve", parents=[common], help="grid dynamic programming")
    sp.add_argument("--variant", choices=["basic", "parametrized", "aftereffect"])
    sp.add_argument("--residual-samples", type=int, default=200, help="off-node points for the DPP residual")
    sy = sub.add_parser("synthesize", parents=[common], help="solve, then roll out the grid policy")
    sy.add_argument("--variant", choices=["basic", "parametrized", "aftereffect"])
    vp = sub.add_parser("verify-pmp", parents=[common], help="costate and extremum checks along a rollout")
    vp.add_argument("--controls", choices=["riccati", "grid"], help="default: riccati when an lq block exists")
    vp.add_argument("--tol", type=float, default=1e-6)
    rp = sub.add_parser("riccati", parents=[common], help="impulsive Riccati solve (needs an lq block)")
    rp.add_argument("--strict", action="store_true", help="drop the impulse cross term beta")
    cp = sub.add_parser("compare-lq", parents=[common], help="grid solve against the Riccati solution")
    cp.add_argument("--tol", type=float, default=0.02)
    cp.add_argument("--interior", type=float, default=0.6, help="central fraction of each axis compared")
    ce = sub.add_parser("check-expr", help="parse and differentiate one expression")
    ce.add_argument("expression")
    ce.add_argument("--vars", default=None, help="comma-separated declared variables")
    ce.add_argument("--wrt", action="append", default=[], help="differentiate with respect to this variable")
    ce.add_argument("--at", default=None, help="evaluate at name=value,... ")
    return p


# -- helpers ------------------------------------------------------------------


def _with_overrides(sc: Scenario, args) -> Scenario:
    system = sc.system
    for attr, flag in (("U", "u_samples"), ("W", "w_samples")):
        samples = getattr(args, flag, None)
        if samples:
            cs = getattr(system, attr)
            if cs.kind != "box":
                raise ScenarioError(f"--{flag.replace('_', '-')} needs a box control set")
            system = dataclasses.replace(system, **{attr: ControlSet.box(cs.lo, cs.hi, samples)})
    variant = getattr(args, "variant", None)
    if variant and variant != system.variant:
        system = dataclasses.replace(system, variant=variant)
    grid = sc.grid
    if any(getattr(args, k) is not None for k in ("lo", "hi", "nodes", "dt")):
        base = grid or Grid([-1.0] * system.n, [1.0] * system.n, [2] * system.n, 1e-2)
        try:
            grid = Grid(
                args.lo if args.lo is not None else base.lo,
                args.hi if args.hi is not None else base.hi,
                args.nodes if args.nodes is not None else base.nodes,
                args.dt if args.dt is not None else base.dt,
            )
        except ValueError as exc:
            raise ScenarioError(f"grid override: {exc}") from None
    xi0 = np.asarray(args.xi, dtype=float) if args.xi is not None else sc.xi0
    return dataclasses.replace(
        sc, system=system, grid=grid, xi0=xi0,
        s0=args.s if args.s is not None else sc.s0,
        h=args.h if args.h is not None else sc.h,
    )


def _need_grid(sc: Scenario) -> Grid:
    if sc.grid is None:
        raise ScenarioError("scenario has no grid block; pass --lo/--hi/--nodes/--dt")
    return sc.grid


def _need_start(sc: Scenario, n: int) -> np.ndarray:
    if sc.xi0 is None:
        raise ScenarioError("scenario has no initial state; pass --xi")
    if sc.xi0.shape != (n,):
        raise ScenarioError(f"initial state must have {n} components")
    return sc.xi0


def _need_lq(sc: Scenario):
    if sc.lq is None:
        raise ScenarioError("this command needs an lq block in the scenario")
    return sc.lq


def _grid_info(grid: Grid | None) -> dict | None:
    if grid is None:
        return None
    return {"lo": list(grid.lo), "hi": list(grid.hi), "nodes": list(grid.nodes), "dt": grid.dt}


def _sets_info(system) -> dict:
    def one(cs: ControlSet):
        if cs.kind == "finite":
            return {"finite": [list(p) for p in cs.points]}
        return {"box": {"lo": list(cs.lo), "hi": list(cs.hi), "samples": list(cs.samples)}}

    return {"u": one(system.U), "w": one(system.W)}


class _Run:
    """Collects outputs and writes the run summary."""

    def __init__(self, args, sc: Scenario | None):
        self.args = args
        self.sc = sc
        self.out = Path(args.out)
        self.outputs: list[str] = []
        self.metrics: dict = {}
        self.tolerances: dict = {}
        self.t0 = time.perf_counter()

    def path(self, name: str) -> Path:
        p = self.out / name
        self.outputs.append(name)
        return p

    def finish(self, status: str = "ok") -> dict:
        sc = self.sc
        cfg = {k: v for k, v in vars(self.args).items() if k not in ("command",)}
        summary = {
            "command": self.args.command,
            "status": status,
            "inputs": {
                "scenario": str(self.args.scenario),
                "digest": sc.digest if sc else None,
                "config": cfg,
                "grid": _grid_info(sc.grid) if sc else None,
                "controls": _sets_info(sc.system) if sc else None,
                "variant": sc.system.variant if sc else None,
            },
            "tolerances": self.tolerances,
            "metrics": self.metrics,
            "outputs": self.outputs + ["summary.json"],
            "runtime_s": round(time.perf_counter() - self.t0, 3),
        }
        export.write_json(summary, self.out / "summary.json")
        print(json.dumps({"status": status, "command": self.args.command, "summary": str(self.out / "summary.json"),
                          "metrics": self.metrics}, sort_keys=True, default=export._jsonable))
        return summary


# -- commands -------------------------------------------------------------------


def cmd_simulate(args, sc: Scenario, run: _Run) -> int:
    prob = sc.problem()
    xi = _need_start(sc, prob.n)
    traj = integrate(prob, sc.u_signal, sc.w_signal, sc.s0, xi, h=sc.h)
    cost = evaluate_cost(traj, prob)
    export.write_trajectory(traj, run.path("trajectory.csv"), prob.m_w)
    run.tolerances = {"h": sc.h, "event_tol": 1e-10}
    run.metrics = {"J": cost.total, "running": cost.running, "impulse": cost.impulse, "terminal": cost.terminal,
                   "impulses": len(traj.jumps), "x_final": traj.x[-1].tolist(),
                   "jump_error": traj.jump_error(prob)}
    return EXIT_OK


def _solve(sc: Scenario, run: _Run):
    prob = sc.problem()
    grid = _need_grid(sc)
    t0 = time.perf_counter()
    vf, pol = solve(prob, grid, coupling=run.args.coupling)
    run.metrics["solve_s"] = round(time.perf_counter() - t0, 3)
    run.metrics["clamp_fraction"] = vf.clamp_fraction
    run.tolerances["dt"] = grid.dt
    return prob, grid, vf, pol


def cmd_solve(args, sc: Scenario, run: _Run) -> int:
    prob, grid, vf, pol = _solve(sc, run)
    export.write_value_slices(vf, run.path("value.csv"))
    export.write_policy(pol, run.path("policy.csv"))
    # off-node one-step residuals at random step starts
    rng = np.random.default_rng(args.seed)
    starts = np.flatnonzero(np.isfinite(vf.dts))
    lo, hi = np.array(grid.lo), np.array(grid.hi)
    pts = []
    for _ in range(args.residual_samples if starts.size else 0):
        i = int(rng.choice(starts))
        pts.append((float(vf.times[i]), lo + (hi - lo) * rng.random(grid.dim)))
    run.metrics["dpp_residual"] = dpp_residual(vf, prob, pts)
    run.metrics["V_min"] = float(vf.values.min())
    run.metrics["V_max"] = float(vf.values.max())
    if sc.xi0 is not None and grid.contains(sc.xi0):
        run.metrics["V_start"] = vf.value(sc.s0, sc.xi0)
    return EXIT_OK


def cmd_synthesize(args, sc: Scenario, run: _Run) -> int:
    prob, grid, vf, pol = _solve(sc, run)
    xi = _need_start(sc, prob.n)
    traj, cost, V = synthesize_trajectory(vf, pol, prob, sc.s0, xi, h=sc.h)
    export.write_trajectory(traj, run.path("trajectory.csv"), prob.m_w)
    run.metrics.update({"J": cost.total, "V": V, "gap": cost.total - V, "impulses": len(traj.jumps)})
    return EXIT_OK


def cmd_verify_pmp(args, sc: Scenario, run: _Run) -> int:
    prob = sc.problem()
    xi = _need_start(sc, prob.n)
    mode = args.controls or ("riccati" if sc.lq is not None else "grid")
    vf = None
    if mode == "riccati":
        sol = solve_impulsive_riccati(_need_lq(sc), h=sc.lq_options.get("h", 1e-3),
                                      strict=sc.lq_options.get("strict", False))
        u, w = sol.controls()
        traj = integrate(prob, u, w, sc.s0, xi, h=sc.h)
    else:
        prob, grid, vf, pol = _solve(sc, run)
        traj = integrate(prob, PolicyControl(pol, "u"), PolicyControl(pol, "w"), sc.s0, xi, h=sc.h)
    cp = integrate_costate(prob, traj)
    rep = check_extremum(traj, cp, prob, tol=args.tol)
    export.write_trajectory(traj, run.path("trajectory.csv"), prob.m_w)
    export.write_costate(cp, run.path("costate.csv"))
    export.write_extremum(rep, run.path("extremum.csv"))
    run.tolerances["extremum"] = args.tol
    run.metrics.update({"controls": mode, "violations": rep.violations, "min_margin": rep.min_margin,
                        "J": evaluate_cost(traj, prob).total})
    if mode == "riccati":
        errs = []
        for t, side, x, p in zip(traj.t, traj.side, traj.x, cp.p):
            ref = 2 * sol.K(float(t), "-" if side == "-" else "+") @ x
            errs.append(np.linalg.norm(p - ref) / max(np.linalg.norm(ref), 1e-12))
        run.metrics["costate_vs_riccati_max_rel"] = float(np.max(errs))
    else:
        try:
            run.metrics["costate_vs_gradV"] = costate_vs_gradV(cp, vf, traj)
        except SolverError as exc:
            run.metrics["costate_vs_gradV"] = {"skipped": str(exc)}
    return EXIT_OK


def cmd_riccati(args, sc: Scenario, run: _Run) -> int:
    lq = _need_lq(sc)
    strict = args.strict or sc.lq_options.get("strict", False)
    h = sc.lq_options.get("h", 1e-3)
    sol = solve_impulsive_riccati(lq, h=h, strict=strict)
    export.write_kpath(sol, run.path("kpath.csv"))
    export.write_gains(sol, run.path("gains.csv"))
    run.tolerances["h"] = h
    run.metrics.update({"K0": sol.K(0.0).tolist(), "gains": [np.asarray(L).tolist() for L in sol.gains],
                        "strict": strict})
    if sc.xi0 is not None:
        prob = sc.problem()
        xi = _need_start(sc, prob.n)
        u, w = sol.controls()
        traj = integrate(prob, u, w, sc.s0, xi, h=sc.h)
        J = evaluate_cost(traj, prob).total
        V = lq_value(sol, sc.s0, xi)
        run.metrics.update({"V_start": V, "J_closed_loop": J, "rel_gap": abs(J - V) / max(abs(V), 1e-12)})
    return EXIT_OK


def cmd_compare_lq(args, sc: Scenario, run: _Run) -> int:
    lq = _need_lq(sc)
    prob, grid, vf, pol = _solve(sc, run)
    sol = solve_impulsive_riccati(lq, h=sc.lq_options.get("h", 1e-3), strict=sc.lq_options.get("strict", False))
    report = compare_grid_riccati(vf, sol, args.interior)
    export.write_value_slices(vf, run.path("value.csv"))
    export.write_kpath(sol, run.path("kpath.csv"))
    run.tolerances["max_rel_error"] = args.tol
    run.metrics.update(report)
    run.metrics["pass"] = report["max_rel_error"] <= args.tol
    if not run.metrics["pass"]:
        raise ThresholdExceeded(f"grid/Riccati discrepancy {report['max_rel_error']:.4g} exceeds {args.tol}")
    return EXIT_OK


def cmd_check_expr(args) -> int:
    declared = None if args.vars is None else [v.strip() for v in args.vars.split(",") if v.strip()]
    e = ex.parse(args.expression, declared)
    ds = {v: ex.differentiate(e, v) for v in args.wrt}
    out = {"expression": ex.to_string(e), "variables": sorted(ex.variables(e)),
           "derivatives": {v: ex.to_string(d) for v, d in ds.items()}}
    if args.at:
        env = {}
        for item in args.at.split(","):
            k, _, v = item.partition("=")
            env[k.strip()] = float(v)
        out["value"] = float(ex.evaluate(e, env))
        out["derivative_values"] = {v: float(ex.evaluate(d, env)) for v, d in ds.items()}
    print(json.dumps(out, sort_keys=True))
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "solve": cmd_solve,
    "synthesize": cmd_synthesize,
    "verify-pmp": cmd_verify_pmp,
    "riccati": cmd_riccati,
    "compare-lq": cmd_compare_lq,
}


def _diagnose(code: int, exc: BaseException, **extra) -> int:
    d = {"status": "error", "exit": code, "kind": type(exc).__name__, "message": str(exc)}
    d.update(extra)
    print(json.dumps(d, sort_keys=True, default=export._jsonable), file=sys.stderr)
    return code


def dispatch(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "check-expr":
        try:
            return cmd_check_expr(args)
        except ex.ExprError as exc:
            return _diagnose(EXIT_INPUT, exc, position=getattr(exc, "position", None))
        except ValueError as exc:
            return _diagnose(EXIT_INPUT, exc)
    run = None
    try:
        if args.threads < 1:
            raise ScenarioError("--threads must be >= 1")
        sc = _with_overrides(load_scenario(args.scenario), args)
        run = _Run(args, sc)
        code = COMMANDS[args.command](args, sc, run)
        run.finish()
        return code
    except ThresholdExceeded as exc:
        run.finish("threshold")
        return _diagnose(EXIT_THRESHOLD, exc)
    except (GridExitError, SimulationError, RiccatiError, np.linalg.LinAlgError, ArithmeticError) as exc:
        return _diagnose(EXIT_NUMERIC, exc, t=getattr(exc, "t", None))
    except (ScenarioError, ValidationError, SolverError, ex.ExprError, ValueError, KeyError) as exc:
        return _diagnose(EXIT_INPUT, exc)


def main() -> None:
    sys.exit(dispatch())
