"""JSON scenario files.

A scenario bundles a system, its costs and optional run settings (initial
point, grid, simulation controls).  The accepted layout is described by the
JSON schema shipped next to this module (``scenario.schema.json``).  Three
ways to state the system are supported:

* ``system`` + ``costs``: expressions given directly;
* ``lq``: matrices of a linear-quadratic problem, expanded to expressions
  (impulse times and control sets still come from ``system``);
* ``sampled_data``: a continuous plant with a discrete controller state,
  reduced to an impulsive system.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .controls import ConstantControl, ControlSignal, TableControl
from .grid import Grid
from .model import (
    ControlSet,
    CostSpec,
    HybridSystem,
    ImpulseSchedule,
    InterpolationOperator,
    Problem,
    SampledDataSystem,
    lq_to_general,
    reduce_sampled_data,
    validate_system,
)
from .riccati import LQSystem


class ScenarioError(ValueError):
    """Unreadable or schema-invalid scenario."""


def schema() -> dict:
    return json.loads(resources.files("hybridctl").joinpath("scenario.schema.json").read_text())


@dataclass
class Scenario:
    name: str
    system: HybridSystem
    costs: CostSpec
    horizon: float
    lq: LQSystem | None = None
    lq_options: dict = field(default_factory=dict)
    sampled: SampledDataSystem | None = None
    s0: float = 0.0
    xi0: np.ndarray | None = None
    grid: Grid | None = None
    h: float = 1e-3
    u_signal: ControlSignal | None = None
    w_signal: ControlSignal | None = None
    digest: str = ""

    def problem(self) -> Problem:
        return validate_system(self.system, self.costs)


def _control_set(d: dict | None, default: ControlSet) -> ControlSet:
    if d is None:
        return default
    if "finite" in d:
        return ControlSet.finite(d["finite"])
    b = d["box"]
    return ControlSet.box(b["lo"], b["hi"], b["samples"])


def _signal(d: dict | None, dim: int) -> ControlSignal:
    if d is None:
        return ConstantControl(np.zeros(max(dim, 1)))
    if "constant" in d:
        return ConstantControl(d["constant"])
    return TableControl(d["table"]["times"], d["table"]["values"])


def _exprs(items) -> tuple:
    return tuple(str(v) for v in items)


def _basis(d) -> InterpolationOperator:
    if d is None:
        return InterpolationOperator()
    return InterpolationOperator(tuple(tuple(str(v) for v in row) for row in d))


def parse_scenario(doc: dict, digest: str = "") -> Scenario:
    """Build a :class:`Scenario` from an already-decoded JSON document."""
    try:
        jsonschema.validate(doc, schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ScenarioError(f"schema violation at {where}: {exc.message}") from None
    T = float(doc["horizon"])
    sysd = doc.get("system", {})
    imp = sysd.get("impulse", {})
    times = tuple(float(t) for t in imp.get("times", ()))
    surfaces = imp.get("surface", ())
    if isinstance(surfaces, str):
        surfaces = (surfaces,)
    controls = sysd.get("controls", {})
    lq = None
    lq_options = {}
    sampled = None
    y0 = None

    if "lq" in doc:
        d = doc["lq"]
        n = len(d["P"])
        m_u = len(d["Q"][0])
        lq = LQSystem(
            P=d["P"], Q=d["Q"], A=d["A"], B=d.get("B", np.zeros((n, m_u))), C=d["C"], A0=d["A0"], T=T,
            times=times, M=d.get("M"), N=d.get("N"), alpha=d.get("alpha"), beta=d.get("beta"),
            gamma=d.get("gamma"),
        )
        lq_options = {"strict": bool(d.get("strict", False)), "h": float(d.get("h", 1e-3))}
        try:
            U = _control_set(controls.get("u"), None) if "u" in controls else None
            W = _control_set(controls.get("w"), None) if "w" in controls else None
            system, costs = lq_to_general(lq, U=U, W=W)
        except ValueError as exc:
            raise ScenarioError(f"lq block: {exc}") from None
    elif "sampled_data" in doc:
        d = doc["sampled_data"]
        sampled = SampledDataSystem(
            variant=d["variant"], n_y=d["n_y"], n_z=d["n_z"], f=_exprs(d["f"]), g=_exprs(d["g"]),
            times=tuple(float(t) for t in d["times"]), T=T,
            U=_control_set(d["controls"]["u"], None), W=_control_set(d["controls"]["w"], None),
            z0=tuple(d["z0"]), w0=tuple(d.get("w0", ())), p=_basis(d.get("p")), q=_basis(d.get("q")),
        )
        c = doc.get("costs", {})
        costs = CostSpec(F=str(c.get("F", "0")), Phi=str(c.get("Phi", "0")), F0=str(c.get("F0", "0")))
        system, costs = reduce_sampled_data(sampled, costs)
        y0 = d.get("y0")
    else:
        if "f" not in sysd or "n" not in sysd:
            raise ScenarioError("scenario needs system.n and system.f (or an lq / sampled_data block)")
        n = int(sysd["n"])
        U = _control_set(controls.get("u"), ControlSet.finite([[0.0]]))
        W = _control_set(controls.get("w"), ControlSet.finite([[0.0]]))
        I = _exprs(imp.get("I", ["0"] * n)) if (times or surfaces) else ()
        b0 = tuple(sysd["b0"]) if "b0" in sysd else None
        system = HybridSystem(
            n=n, f=_exprs(sysd["f"]), I=I, U=U, W=W, T=T,
            schedule=ImpulseSchedule(times=times, surfaces=_exprs(surfaces)),
            variant=sysd.get("variant", "basic"), b0=b0,
        )
        c = doc.get("costs", {})
        costs = CostSpec(F=str(c.get("F", "0")), Phi=str(c.get("Phi", "0")), F0=str(c.get("F0", "0")))

    init = doc.get("initial", {})
    if "xi" in init:
        xi0 = np.asarray(init["xi"], dtype=float)
    elif sampled is not None and y0 is not None:
        xi0 = sampled.initial_state(y0)
    else:
        xi0 = None
    g = doc.get("grid")
    try:
        grid = Grid(g["lo"], g["hi"], g["nodes"], g["dt"]) if g else None
    except ValueError as exc:
        raise ScenarioError(f"grid block: {exc}") from None
    simd = doc.get("simulation", {})
    return Scenario(
        name=doc.get("name", ""),
        system=system,
        costs=costs,
        horizon=T,
        lq=lq,
        lq_options=lq_options,
        sampled=sampled,
        s0=float(init.get("s", 0.0)),
        xi0=xi0,
        grid=grid,
        h=float(simd.get("h", 1e-3)),
        u_signal=_signal(simd.get("u"), system.U.dim),
        w_signal=_signal(simd.get("w"), system.W.dim),
        digest=digest,
    )


def load_scenario(path: str | Path) -> Scenario:
    """Read, schema-check and build a scenario.  Raises :class:`ScenarioError`."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc.strerror}") from None
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ScenarioError("scenario must be a JSON object")
    return parse_scenario(doc, hashlib.sha256(raw).hexdigest())
