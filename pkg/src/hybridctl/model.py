"""Hybrid/impulsive system descriptions and their validated form.

A :class:`HybridSystem` plus :class:`CostSpec` hold expression *text*.
:func:`validate_system` parses and checks them and returns a
:class:`Problem`, the object every solver works with.  Variable names used
inside expressions:

    t            time
    x1..xn       state
    u1..um       continuous control
    w1..wk       impulse control
    a1..am       left limit of the continuous control at an impulse
                 (``variant="parametrized"``)
    b1..bk       impulse control applied at the previous impulse
                 (``variant="aftereffect"``)

Sampled-data systems (continuous plant, discrete controller state z updated at
the sample times) are described by :class:`SampledDataSystem` and turned into
an impulsive system with :func:`reduce_sampled_data`.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import expr as ex

VARIANTS = ("basic", "parametrized", "aftereffect")


class ValidationError(ValueError):
    """Raised with the complete list of problems found in a model."""

    def __init__(self, errors: Sequence[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass(frozen=True)
class ControlSet:
    """Finite list of control vectors, or an axis-aligned box sampled on a lattice."""

    kind: str
    points: tuple = ()
    lo: tuple = ()
    hi: tuple = ()
    samples: tuple = ()

    @classmethod
    def finite(cls, points) -> "ControlSet":
        pts = tuple(tuple(float(v) for v in np.atleast_1d(p)) for p in points)
        return cls("finite", points=pts)

    @classmethod
    def box(cls, lo, hi, samples) -> "ControlSet":
        lo = tuple(float(v) for v in np.atleast_1d(lo))
        hi = tuple(float(v) for v in np.atleast_1d(hi))
        samples = np.atleast_1d(samples)
        if samples.size == 1 and len(lo) > 1:
            samples = np.repeat(samples, len(lo))
        return cls("box", lo=lo, hi=hi, samples=tuple(int(s) for s in samples))

    @property
    def is_finite(self) -> bool:
        return self.kind == "finite"

    @property
    def dim(self) -> int:
        if self.kind == "finite":
            return len(self.points[0]) if self.points else 0
        return len(self.lo)

    def problems(self, label: str) -> list[str]:
        errs = []
        if self.kind == "finite":
            if not self.points:
                errs.append(f"control set {label} is empty")
            elif len({len(p) for p in self.points}) != 1:
                errs.append(f"control set {label} mixes vector lengths")
        elif self.kind == "box":
            if not (len(self.lo) == len(self.hi) == len(self.samples)) or not self.lo:
                errs.append(f"control set {label}: lo/hi/samples lengths differ")
            if any(lo > hi for lo, hi in zip(self.lo, self.hi)):
                errs.append(f"control set {label}: lower bound above upper bound")
            if any(s < 1 for s in self.samples):
                errs.append(f"control set {label}: sample counts must be >= 1")
        else:
            errs.append(f"control set {label}: unknown kind {self.kind!r}")
        return errs

    def sample(self) -> np.ndarray:
        """Controls in enumeration order, shape (k, dim).

        Finite sets keep declaration order; boxes are walked in lexicographic
        lattice order (first axis slowest).
        """
        if self.kind == "finite":
            return np.array(self.points, dtype=float).reshape(len(self.points), -1)
        axes = [
            np.array([(lo + hi) / 2]) if n == 1 else np.linspace(lo, hi, n)
            for lo, hi, n in zip(self.lo, self.hi, self.samples)
        ]
        return np.array(list(itertools.product(*axes)), dtype=float).reshape(-1, len(axes))

    def contains(self, v, tol: float = 1e-12) -> bool:
        v = np.atleast_1d(np.asarray(v, dtype=float))
        if self.kind == "finite":
            return bool(np.any(np.all(np.abs(self.sample() - v) <= tol, axis=1)))
        return bool(np.all(v >= np.array(self.lo) - tol) and np.all(v <= np.array(self.hi) + tol))


@dataclass(frozen=True)
class ImpulseSchedule:
    """Fixed impulse times, or event surfaces g(t, x) whose zero crossings trigger jumps."""

    times: tuple = ()
    surfaces: tuple = ()

    @property
    def kind(self) -> str:
        return "surface" if self.surfaces else "fixed"


@dataclass(frozen=True)
class HybridSystem:
    n: int
    f: tuple
    U: ControlSet
    T: float
    I: tuple = ()
    W: ControlSet = field(default_factory=lambda: ControlSet.finite([[0.0]]))
    schedule: ImpulseSchedule = field(default_factory=ImpulseSchedule)
    variant: str = "basic"
    b0: tuple | None = None


@dataclass(frozen=True)
class CostSpec:
    F: str = "0"
    Phi: str = "0"
    F0: str = "0"


def _names(prefix: str, k: int) -> list[str]:
    return [f"{prefix}{i + 1}" for i in range(k)]


def _stack(values, lead: tuple) -> np.ndarray:
    return np.stack([np.broadcast_to(np.asarray(v, dtype=float), lead) for v in values], axis=-1)


class Problem:
    """Validated system and costs with vectorized evaluators.

    All evaluators accept broadcastable arrays: ``x`` has shape (..., n),
    ``u`` (..., m_u), ``w`` (..., m_w); ``t`` is a scalar or array.
    """

    def __init__(self, system: HybridSystem, costs: CostSpec, parsed: dict):
        self.system = system
        self.costs = costs
        self.n = system.n
        self.m_u = system.U.dim
        self.m_w = system.W.dim
        self.T = float(system.T)
        self.U = system.U
        self.W = system.W
        self.variant = system.variant
        self.schedule = system.schedule
        self.times = np.array(system.schedule.times, dtype=float)
        self.b0 = None if system.b0 is None else np.asarray(system.b0, dtype=float)
        self.exprs = parsed
        self._fn = {
            "f": [ex.compile_expr(e) for e in parsed["f"]],
            "I": [ex.compile_expr(e) for e in parsed["I"]],
            "F": ex.compile_expr(parsed["F"]),
            "Phi": ex.compile_expr(parsed["Phi"]),
            "F0": ex.compile_expr(parsed["F0"]),
            "g": [ex.compile_expr(e) for e in parsed["surfaces"]],
        }
        self._deriv: dict = {}

    def __repr__(self):
        return f"Problem(n={self.n}, m_u={self.m_u}, m_w={self.m_w}, T={self.T}, variant={self.variant!r})"

    @property
    def has_surfaces(self) -> bool:
        return bool(self.exprs["surfaces"])

    # environments -----------------------------------------------------------

    def _env(self, t, x, u=None, w=None, a=None, b=None):
        x = np.asarray(x, dtype=float)
        env = {"t": t}
        shapes = [np.shape(t), x.shape[:-1]]
        for i in range(self.n):
            env[f"x{i + 1}"] = x[..., i]
        for prefix, v in (("u", u), ("w", w), ("a", a), ("b", b)):
            if v is None:
                continue
            v = np.asarray(v, dtype=float)
            shapes.append(v.shape[:-1])
            for i in range(v.shape[-1]):
                env[f"{prefix}{i + 1}"] = v[..., i]
        return env, np.broadcast_shapes(*shapes)

    def _impulse_args(self, a, b):
        if self.variant == "parametrized" and a is None:
            raise ValueError("parametrized impulse map needs the control left limit a")
        if self.variant == "aftereffect" and b is None:
            raise ValueError("aftereffect impulse map needs the previous impulse control b")
        return (a if self.variant == "parametrized" else None, b if self.variant == "aftereffect" else None)

    # evaluators ----------------------------------------------------------------

    def flow(self, t, x, u) -> np.ndarray:
        env, lead = self._env(t, x, u=u)
        return _stack([fn(env) for fn in self._fn["f"]], lead)

    def jump(self, t, x, w, a=None, b=None) -> np.ndarray:
        a, b = self._impulse_args(a, b)
        env, lead = self._env(t, x, w=w, a=a, b=b)
        return _stack([fn(env) for fn in self._fn["I"]], lead)

    def running_cost(self, t, x, u) -> np.ndarray:
        env, lead = self._env(t, x, u=u)
        return np.broadcast_to(np.asarray(self._fn["F"](env), dtype=float), lead)

    def impulse_cost(self, t, x, w, a=None, b=None) -> np.ndarray:
        a, b = self._impulse_args(a, b)
        env, lead = self._env(t, x, w=w, a=a, b=b)
        return np.broadcast_to(np.asarray(self._fn["Phi"](env), dtype=float), lead)

    def terminal_cost(self, x) -> np.ndarray:
        env, lead = self._env(0.0, x)
        return np.broadcast_to(np.asarray(self._fn["F0"](env), dtype=float), lead)

    def surface_values(self, t, x) -> np.ndarray:
        env, lead = self._env(t, x)
        return np.array([float(fn(env)) for fn in self._fn["g"]])

    # symbolic derivatives ----------------------------------------------------

    def derivative(self, key: str, var: str):
        """Compiled partial derivative of expression ``key`` w.r.t. ``var``.

        ``key`` is ``"f3"``/``"I2"`` for a component, or ``"F"``, ``"Phi"``, ``"F0"``.
        """
        ck = (key, var)
        if ck not in self._deriv:
            if key[0] in "fI" and key[1:].isdigit():
                e = self.exprs[key[0]][int(key[1:]) - 1]
            else:
                e = self.exprs[key]
            self._deriv[ck] = ex.compile_expr(ex.differentiate(e, var))
        return self._deriv[ck]

    def _jac(self, key: str, env, lead) -> np.ndarray:
        xs = _names("x", self.n)
        rows = [_stack([self.derivative(f"{key}{i + 1}", v)(env) for v in xs], lead) for i in range(self.n)]
        return np.stack(rows, axis=-2)

    def _grad(self, key: str, env, lead) -> np.ndarray:
        return _stack([self.derivative(key, v)(env) for v in _names("x", self.n)], lead)

    def flow_jacobian(self, t, x, u) -> np.ndarray:
        """[..., i, j] = d f_i / d x_j."""
        env, lead = self._env(t, x, u=u)
        return self._jac("f", env, lead)

    def jump_jacobian(self, t, x, w, a=None, b=None) -> np.ndarray:
        a, b = self._impulse_args(a, b)
        env, lead = self._env(t, x, w=w, a=a, b=b)
        return self._jac("I", env, lead)

    def running_cost_grad(self, t, x, u) -> np.ndarray:
        env, lead = self._env(t, x, u=u)
        return self._grad("F", env, lead)

    def impulse_cost_grad(self, t, x, w, a=None, b=None) -> np.ndarray:
        a, b = self._impulse_args(a, b)
        env, lead = self._env(t, x, w=w, a=a, b=b)
        return self._grad("Phi", env, lead)

    def terminal_cost_grad(self, x) -> np.ndarray:
        env, lead = self._env(0.0, x)
        return self._grad("F0", env, lead)

    def kinked(self) -> list:
        """(label, kink-argument expression) pairs over all model expressions."""
        out = []
        for key in ("f", "I"):
            for i, e in enumerate(self.exprs[key]):
                out += [(f"{key}{i + 1}", k) for k in ex.kink_arguments(e)]
        for key in ("F", "Phi", "F0"):
            out += [(key, k) for k in ex.kink_arguments(self.exprs[key])]
        return out


def declared_variables(system: HybridSystem) -> dict[str, set]:
    n, m_u, m_w = system.n, system.U.dim, system.W.dim
    xs = set(_names("x", n))
    us = set(_names("u", m_u))
    ws = set(_names("w", m_w))
    jump_vars = {"t"} | xs | ws
    if system.variant == "parametrized":
        jump_vars |= set(_names("a", m_u))
    if system.variant == "aftereffect":
        jump_vars |= set(_names("b", m_w))
    return {
        "f": {"t"} | xs | us,
        "I": jump_vars,
        "F": {"t"} | xs | us,
        "Phi": jump_vars,
        "F0": xs,
        "surfaces": {"t"} | xs,
    }


def _check_expr(text, allowed: set, label: str, errors: list):
    try:
        e = ex.parse(str(text))
    except ex.ExprSyntaxError as exc:
        errors.append(f"{label}: {exc}")
        return None
    for name in sorted(ex.variables(e) - allowed):
        errors.append(f"{label}: undeclared variable {name!r}")
    return e


def validate_system(system: HybridSystem, costs: CostSpec | None = None) -> Problem:
    """Parse and dimension-check; raise :class:`ValidationError` listing every violation."""
    if isinstance(system, SampledDataSystem):
        system, costs = reduce_sampled_data(system, costs or CostSpec())
    costs = costs or CostSpec()
    errors: list[str] = []
    if not isinstance(system.n, (int, np.integer)) or system.n < 1:
        errors.append("state dimension n must be >= 1")
    if not system.T > 0:
        errors.append("horizon T must be positive")
    if system.variant not in VARIANTS:
        errors.append(f"unknown variant {system.variant!r}")
    errors += system.U.problems("U") + system.W.problems("W")
    times = list(system.schedule.times)
    if any(b <= a for a, b in zip(times, times[1:])):
        errors.append("impulse times not strictly increasing")
    if any(not (0 < t < system.T) for t in times):
        errors.append("impulse times must lie strictly inside (0, T)")
    if times and system.schedule.surfaces:
        errors.append("schedule has both fixed times and event surfaces")
    if system.variant == "aftereffect":
        if not system.W.is_finite:
            errors.append("aftereffect variant needs a finite impulse control set W")
        if system.b0 is None or len(system.b0) != system.W.dim:
            errors.append("aftereffect variant needs initial previous control b0 of length m_w")
    if errors and any(e.startswith(("state dimension", "control set")) for e in errors):
        raise ValidationError(errors)

    allowed = declared_variables(system)
    n = system.n
    if len(system.f) != n:
        errors.append(f"f has {len(system.f)} components, expected {n}")
    impulse_text = tuple(system.I) if system.I else ("0",) * n
    if len(impulse_text) != n:
        errors.append(f"I has {len(impulse_text)} components, expected {n}")
    parsed = {
        "f": [_check_expr(s, allowed["f"], f"f[{i + 1}]", errors) for i, s in enumerate(system.f)],
        "I": [_check_expr(s, allowed["I"], f"I[{i + 1}]", errors) for i, s in enumerate(impulse_text)],
        "F": _check_expr(costs.F, allowed["F"], "F", errors),
        "Phi": _check_expr(costs.Phi, allowed["Phi"], "Phi", errors),
        "F0": _check_expr(costs.F0, allowed["F0"], "F0", errors),
        "surfaces": [
            _check_expr(s, allowed["surfaces"], f"surface[{i + 1}]", errors)
            for i, s in enumerate(system.schedule.surfaces)
        ],
    }
    if errors:
        raise ValidationError(errors)
    return Problem(system, costs, parsed)


# -- sampled-data systems ------------------------------------------------------


@dataclass(frozen=True)
class InterpolationOperator:
    """Maps held discrete samples to a continuous-time signal.

    ``basis[i][j]`` is an expression in ``t`` and ``tau`` (the start of the
    sample interval containing t); the output is ``sum_j basis[i][j] * z_j``.
    ``basis=None`` is the zero-order hold (identity).
    """

    basis: tuple | None = None

    def matrix(self, t: float, tau: float, dim: int) -> np.ndarray:
        if self.basis is None:
            return np.eye(dim)
        env = {"t": t, "tau": tau}
        return np.array([[float(ex.evaluate(ex.parse(str(s), ("t", "tau")), env)) for s in row] for row in self.basis])

    def uses_tau(self) -> bool:
        if self.basis is None:
            return False
        return any("tau" in ex.variables(ex.parse(str(s))) for row in self.basis for s in row)

    def problems(self, label: str, in_dim: int) -> list[str]:
        if self.basis is None:
            return []
        errs = []
        if any(len(row) != in_dim for row in self.basis):
            errs.append(f"{label}: basis needs {in_dim} functions per row")
        for row in self.basis:
            for s in row:
                _check_expr(s, {"t", "tau"}, label, errs)
        return errs


def interpolate(op: InterpolationOperator, samples, t: float, times=(), T: float = np.inf) -> np.ndarray:
    """Value of the interpolated signal at ``t``.

    ``samples[k]`` is the discrete vector held on ``[tau_k, tau_{k+1})`` with
    ``tau_0 = 0`` and ``tau_1.. = times``.
    """
    if not (0.0 <= t <= T):
        raise ValueError(f"time {t} outside [0, {T}]")
    starts = np.concatenate([[0.0], np.asarray(times, dtype=float)])
    k = int(np.searchsorted(starts, t, side="right") - 1)
    if k >= len(samples):
        raise ValueError(f"no sample for the interval starting at {starts[k]}")
    z = np.atleast_1d(np.asarray(samples[k], dtype=float))
    mat = op.matrix(t, starts[k], z.size)
    return mat @ z


@dataclass(frozen=True)
class SampledDataSystem:
    """Continuous plant y' = f(t, y, u, pz[, qw]) with discrete state z(tau+) = g(...).

    ``variant`` is one of ``"C1D1"``, ``"C1D2"``, ``"C2D1"``, ``"C2D2"``:
    C1 lets f read the held discrete control ``qw1..``, D1 lets g read the
    continuous control ``u1..``.  Expression variables: f uses ``t, y*, u*,
    pz*`` (+ ``qw*``); g uses ``t, y*, z*, w*`` (+ ``u*``).  Costs use ``t,
    y*, z*, u*`` (F), ``t, y*, z*, w*`` (Phi) and ``y*, z*`` (F0).
    """

    variant: str
    n_y: int
    n_z: int
    f: tuple
    g: tuple
    times: tuple
    T: float
    U: ControlSet
    W: ControlSet
    z0: tuple
    w0: tuple = ()
    p: InterpolationOperator = field(default_factory=InterpolationOperator)
    q: InterpolationOperator = field(default_factory=InterpolationOperator)

    @property
    def continuous_reads_w(self) -> bool:
        return self.variant.startswith("C1")

    @property
    def discrete_reads_u(self) -> bool:
        return self.variant.endswith("D1")

    def problems(self, costs: CostSpec) -> list[str]:
        errs = []
        if self.variant not in ("C1D1", "C1D2", "C2D1", "C2D2"):
            return [f"unknown sampled-data variant {self.variant!r}"]
        errs += self.U.problems("U") + self.W.problems("W")
        if errs:
            return errs
        m_u, m_w = self.U.dim, self.W.dim
        ys, zs = set(_names("y", self.n_y)), set(_names("z", self.n_z))
        us, ws = set(_names("u", m_u)), set(_names("w", m_w))
        f_vars = {"t"} | ys | us | set(_names("pz", self.n_z))
        if self.continuous_reads_w:
            f_vars |= set(_names("qw", m_w))
            if len(self.w0) != m_w:
                errs.append("C1 variants need the initial held control w0")
        g_vars = {"t"} | ys | zs | ws | (us if self.discrete_reads_u else set())
        if len(self.f) != self.n_y:
            errs.append(f"f has {len(self.f)} components, expected {self.n_y}")
        if len(self.g) != self.n_z:
            errs.append(f"g has {len(self.g)} components, expected {self.n_z}")
        if len(self.z0) != self.n_z:
            errs.append("z0 length must equal n_z")
        for i, s in enumerate(self.f):
            _check_expr(s, f_vars, f"f[{i + 1}]", errs)
        for i, s in enumerate(self.g):
            _check_expr(s, g_vars, f"g[{i + 1}]", errs)
        _check_expr(costs.F, {"t"} | ys | zs | us, "F", errs)
        _check_expr(costs.Phi, {"t"} | ys | zs | ws | (us if self.discrete_reads_u else set()), "Phi", errs)
        _check_expr(costs.F0, ys | zs, "F0", errs)
        errs += self.p.problems("p", self.n_z)
        errs += self.q.problems("q", m_w)
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            errs.append("sample times not strictly increasing")
        return errs

    def layout(self) -> dict:
        """Index offsets of the blocks of the reduced state."""
        m_w = self.W.dim
        hold = self.n_y + self.n_z
        clock_needed = self.p.uses_tau() or (self.continuous_reads_w and self.q.uses_tau())
        n_hold = m_w if self.continuous_reads_w else 0
        clock = hold + n_hold if clock_needed else None
        n = hold + n_hold + (1 if clock_needed else 0)
        return {"y": 0, "z": self.n_y, "hold": hold, "n_hold": n_hold, "clock": clock, "n": n}

    def initial_state(self, y0) -> np.ndarray:
        """Reduced initial state [y0, z0, w0 (C1), 0 (clock)]."""
        lay = self.layout()
        x = np.zeros(lay["n"])
        x[: self.n_y] = np.asarray(y0, dtype=float)
        x[lay["z"] : lay["z"] + self.n_z] = self.z0
        if lay["n_hold"]:
            x[lay["hold"] : lay["hold"] + lay["n_hold"]] = self.w0
        return x


def _x(i: int) -> ex.Var:
    return ex.Var(f"x{i + 1}")


def _weighted(op: InterpolationOperator, dim: int, offset: int, clock: int | None) -> list[ex.Expression]:
    """Expressions for (op z)_i with z stored at x[offset:offset+dim]."""
    out = []
    for i in range(dim):
        if op.basis is None:
            out.append(_x(offset + i))
            continue
        terms = None
        for j, s in enumerate(op.basis[i]):
            phi = ex.parse(str(s), ("t", "tau"))
            if clock is not None:
                phi = ex.substitute(phi, {"tau": _x(clock)})
            term = ex.BinOp("*", phi, _x(offset + j))
            terms = term if terms is None else ex.BinOp("+", terms, term)
        out.append(terms if terms is not None else ex.Num(0.0))
    return out


def reduce_sampled_data(sd: SampledDataSystem, costs: CostSpec) -> tuple[HybridSystem, CostSpec]:
    """Rewrite a sampled-data system as an impulsive ODE on x = [y, z, held w, clock].

    z (and, for C1, the held w) are constant between sample times and reset
    at them: I_z = g - z, I_hold = w - hold.  A clock component recording the
    last sample time is added only when a basis function reads ``tau``.  For
    D1 variants g reads the continuous control, which becomes the left limit
    ``a`` of the parametrized impulse map.
    """
    errs = sd.problems(costs)
    if errs:
        raise ValidationError(errs)
    lay = sd.layout()
    m_u, m_w = sd.U.dim, sd.W.dim
    mapping: dict[str, ex.Expression] = {}
    for i in range(sd.n_y):
        mapping[f"y{i + 1}"] = _x(lay["y"] + i)
    for j in range(sd.n_z):
        mapping[f"z{j + 1}"] = _x(lay["z"] + j)
    for i, e in enumerate(_weighted(sd.p, sd.n_z, lay["z"], lay["clock"])):
        mapping[f"pz{i + 1}"] = e
    if sd.continuous_reads_w:
        for i, e in enumerate(_weighted(sd.q, m_w, lay["hold"], lay["clock"])):
            mapping[f"qw{i + 1}"] = e
    jump_map = dict(mapping)
    if sd.discrete_reads_u:
        jump_map.update({f"u{i + 1}": ex.Var(f"a{i + 1}") for i in range(m_u)})

    def sub(text, m):
        return ex.to_string(ex.substitute(ex.parse(str(text)), m))

    f = [sub(s, mapping) for s in sd.f] + ["0"] * (lay["n"] - sd.n_y)
    impulse = ["0"] * sd.n_y
    impulse += [f"{sub(g, jump_map)} - x{lay['z'] + j + 1}" for j, g in enumerate(sd.g)]
    impulse += [f"w{j + 1} - x{lay['hold'] + j + 1}" for j in range(lay["n_hold"])]
    if lay["clock"] is not None:
        impulse.append(f"t - x{lay['clock'] + 1}")
    system = HybridSystem(
        n=lay["n"],
        f=tuple(f),
        I=tuple(impulse),
        U=sd.U,
        W=sd.W,
        T=sd.T,
        schedule=ImpulseSchedule(times=tuple(sd.times)),
        variant="parametrized" if sd.discrete_reads_u else "basic",
    )
    reduced_costs = CostSpec(F=sub(costs.F, mapping), Phi=sub(costs.Phi, jump_map), F0=sub(costs.F0, mapping))
    return system, reduced_costs


# -- LQ problems as general systems -----------------------------------------------


def _coef(c) -> str | None:
    """Coefficient text, or None when the entry is the literal zero."""
    if isinstance(c, str):
        return f"({c})"
    c = float(c)
    if c == 0.0:
        return None
    if c == 1.0:
        return ""
    return f"({c!r})" if c < 0 else repr(c)


def _sum_terms(terms: list[tuple[object, str]]) -> str:
    parts = []
    for c, mono in terms:
        ct = _coef(c)
        if ct is None:
            continue
        parts.append(mono if ct == "" else f"{ct}*{mono}")
    return " + ".join(parts) if parts else "0"


def lq_to_general(lq, U: ControlSet | None = None, W: ControlSet | None = None) -> tuple[HybridSystem, CostSpec]:
    """Emit the expression form of a linear-quadratic impulsive problem.

    f = P x + Q u, I = M x + N w, F = x'Ax + 2x'Bu + u'Cu,
    Phi = x'(alpha)x + 2x'(beta)w + w'(gamma)w, F0 = x'A0x.
    Impulse matrices must be the same at every impulse time.
    """
    lq.check()
    n, m_u, m_w = lq.n, lq.m_u, lq.m_w
    M, N, alpha, beta, gamma = lq.uniform_jump()
    xs, us, ws = _names("x", n), _names("u", m_u), _names("w", m_w)
    P, Q, A, B, C = (lq.raw(k) for k in "PQABC")

    def ent(mat, i, j):
        return mat[i][j]

    f = [_sum_terms([(ent(P, i, j), xs[j]) for j in range(n)] + [(ent(Q, i, k), us[k]) for k in range(m_u)]) for i in range(n)]
    impulse = [
        _sum_terms([(M[i, j], xs[j]) for j in range(n)] + [(N[i, k], ws[k]) for k in range(m_w)]) for i in range(n)
    ]

    def twice(c):
        return f"2*({c})" if isinstance(c, str) else 2.0 * float(c)

    F = _sum_terms(
        [(ent(A, i, j), f"{xs[i]}*{xs[j]}") for i in range(n) for j in range(n)]
        + [(twice(ent(B, i, k)), f"{xs[i]}*{us[k]}") for i in range(n) for k in range(m_u)]
        + [(ent(C, k, l), f"{us[k]}*{us[l]}") for k in range(m_u) for l in range(m_u)]
    )
    Phi = _sum_terms(
        [(alpha[i, j], f"{xs[i]}*{xs[j]}") for i in range(n) for j in range(n)]
        + [(2.0 * beta[i, k], f"{xs[i]}*{ws[k]}") for i in range(n) for k in range(m_w)]
        + [(gamma[k, l], f"{ws[k]}*{ws[l]}") for k in range(m_w) for l in range(m_w)]
    )
    A0 = np.asarray(lq.A0, dtype=float)
    F0 = _sum_terms([(A0[i, j], f"{xs[i]}*{xs[j]}") for i in range(n) for j in range(n)])
    U = U or ControlSet.box([-10.0] * m_u, [10.0] * m_u, [41] * m_u)
    W = W or ControlSet.box([-10.0] * m_w, [10.0] * m_w, [41] * m_w)
    system = HybridSystem(
        n=n,
        f=tuple(f),
        I=tuple(impulse),
        U=U,
        W=W,
        T=float(lq.T),
        schedule=ImpulseSchedule(times=tuple(float(t) for t in lq.times)),
    )
    return system, CostSpec(F=F, Phi=Phi, F0=F0)
