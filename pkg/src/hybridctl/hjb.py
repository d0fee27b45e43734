"""Backward dynamic programming on a state grid with impulse conditions.

Between impulse times the value function is advanced by a semi-Lagrangian
step::

    V(s, xi) = min_a { dt * F(s, xi, a) + V~(s + dt, xi + dt * f(s, xi, a)) }

with V~ the multilinear interpolant of the later slice.  At an impulse time
the jump condition is applied::

    V(tau-, xi) = min_b { V(tau+, xi + I(tau, xi, b)) + Phi(tau, xi, b) }

Minimization is by enumeration of the sampled control sets; ties go to the
first control in enumeration order.  Points leaving the grid are clamped to
it and counted.

Two extensions are supported: impulse maps that read the continuous control's
left limit ``a`` (``variant="parametrized"``) and impulse maps that read the
previous impulse control ``b`` (``variant="aftereffect"``).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .controls import ControlSignal
from .grid import Grid, split_steps
from .model import Problem
from .sim import CostBreakdown, Trajectory, evaluate_cost, integrate

log = logging.getLogger(__name__)

# candidate evaluations per chunk in the vectorized backups
CHUNK = 2_000_000


class SolverError(ValueError):
    pass


class GridExitError(SolverError):
    def __init__(self, t: float, x):
        self.t = t
        self.x = np.asarray(x)
        super().__init__(f"trajectory leaves the grid at t={t:.6g}, x={self.x.tolist()}")


@dataclass
class ValueFunction:
    """Time slices of V, ascending; impulse times carry a "-" and a "+" slice.

    ``values`` has shape (S, P, *grid.shape).  P = 1 except for the
    aftereffect variant, where index p is the previous impulse control
    ``params[p]``.  For the parametrized variant the stored slices are the
    envelope over ``a`` and ``param_minus[j]`` holds the per-a V- slices
    (shape (len(params), *grid.shape)) at slice index j.
    """

    grid: Grid
    variant: str
    times: np.ndarray
    sides: list
    values: np.ndarray
    dts: np.ndarray
    clamps: np.ndarray
    params: np.ndarray | None = None
    param_minus: dict = field(default_factory=dict)
    b0_index: int = 0
    coupling: str = "envelope"

    @property
    def clamp_fraction(self) -> float:
        return float(self.clamps.sum()) / max(1, int(np.isfinite(self.dts).sum()) * int(np.prod(self.grid.shape)))

    def slice_index(self, s: float, side: str = "+") -> int:
        idx = np.flatnonzero(np.abs(self.times - s) <= 1e-12)
        if idx.size == 0:
            raise KeyError(f"no slice at s={s}")
        for i in idx:
            if self.sides[i] == side:
                return int(i)
        return int(idx[-1] if side != "-" else idx[0])

    def param_index(self, param=None) -> int:
        if self.variant != "aftereffect" or param is None:
            return self.b0_index if self.variant == "aftereffect" else 0
        return _nearest_row(self.params, param)

    def slice(self, i: int, param=None) -> np.ndarray:
        return self.values[i, self.param_index(param)]

    def value(self, s: float, xi, side: str = "+", param=None) -> float:
        """V(s, xi) by multilinear interpolation in space and linear in time."""
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        p = self.param_index(param)
        exact = np.flatnonzero(np.abs(self.times - s) <= 1e-12)
        if exact.size:
            i = self.slice_index(s, side)
            return float(self.grid.interpolate(self.values[i, p], xi)[0])
        if not self.times[0] <= s <= self.times[-1]:
            raise ValueError(f"s={s} outside the solved horizon")
        i = int(np.searchsorted(self.times, s, side="right") - 1)
        th = (s - self.times[i]) / (self.times[i + 1] - self.times[i])
        v0 = self.grid.interpolate(self.values[i, p], xi)[0]
        v1 = self.grid.interpolate(self.values[i + 1, p], xi)[0]
        return float((1 - th) * v0 + th * v1)

    def gradient(self, s: float, xi, side: str = "+", param=None) -> np.ndarray:
        """Central differences of V with one cell width per axis."""
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        h = self.grid.spacing
        lo, hi = np.array(self.grid.lo), np.array(self.grid.hi)
        if np.any(xi - h < lo - 1e-12) or np.any(xi + h > hi + 1e-12):
            raise SolverError(f"point {xi.tolist()} too close to the grid boundary for central differences")
        g = np.empty_like(xi)
        for k in range(xi.size):
            e = np.zeros_like(xi)
            e[k] = h[k]
            g[k] = (self.value(s, xi + e, side, param) - self.value(s, xi - e, side, param)) / (2 * h[k])
        return g


@dataclass
class Policy:
    """Minimizing controls on the grid.

    ``u[j, p]`` holds the continuous controls (flattened nodes, m_u) for the
    step starting at ``step_times[j]``.  ``w[k, q]`` holds impulse controls at
    ``impulse_times[k]``; q indexes the parameter (``a`` sample for the
    parametrized variant, previous control ``b`` for the aftereffect one).
    ``a[k]`` is the envelope's minimizing ``a`` (parametrized only).
    """

    grid: Grid
    variant: str
    step_times: np.ndarray
    u: np.ndarray
    impulse_times: np.ndarray
    w: np.ndarray
    params: np.ndarray | None = None
    a: np.ndarray | None = None
    b0_index: int = 0

    def _node(self, x) -> int:
        return int(np.ravel_multi_index(self.grid.nearest_index(x), self.grid.shape))

    def _param(self, b) -> int:
        if self.variant != "aftereffect":
            return 0
        return self.b0_index if b is None else _nearest_row(self.params, b)

    def step_index(self, t: float) -> int:
        return int(np.clip(np.searchsorted(self.step_times, t + 1e-12, side="right") - 1, 0, len(self.step_times) - 1))

    def u_at(self, t: float, x, b=None) -> np.ndarray:
        return self.u[self.step_index(t), self._param(b), self._node(x)]

    def w_at(self, t: float, x, a=None, b=None) -> np.ndarray:
        k = int(np.argmin(np.abs(self.impulse_times - t)))
        if self.variant == "parametrized":
            q = 0 if a is None else _nearest_row(self.params, a)
        else:
            q = self._param(b)
        return self.w[k, q, self._node(x)]


class PolicyControl(ControlSignal):
    """Nearest-node lookup in a solved policy.

    The continuous control is looked up once per solver step, at the first
    query inside it, and then held until the next solver step; a simulator
    running with a finer step then applies the same piecewise constant
    control the backward sweep assumed.
    """

    hold = True

    def __init__(self, policy: Policy, kind: str = "u"):
        self.policy = policy
        self.kind = kind
        self._held = None

    def __call__(self, t, x, a=None, b=None, **ctx):
        if self.kind != "u":
            return self.policy.w_at(t, x, a=a, b=b)
        key = (self.policy.step_index(t), self.policy._param(b))
        if self._held is None or self._held[0] != key:
            self._held = (key, self.policy.u_at(t, x, b=b))
        return self._held[1]


def _nearest_row(rows: np.ndarray, v) -> int:
    v = np.atleast_1d(np.asarray(v, dtype=float))
    return int(np.argmin(np.sum((rows - v) ** 2, axis=1)))


def _require(prob: Problem, grid: Grid, variant: str | None = None):
    if prob.has_surfaces:
        raise SolverError("grid solvers need fixed impulse times; event surfaces are simulator-only")
    if grid.dim != prob.n:
        raise SolverError(f"grid dimension {grid.dim} does not match state dimension {prob.n}")
    if variant is not None and prob.variant != variant:
        raise SolverError(f"problem variant is {prob.variant!r}, solver expects {variant!r}")
    if prob.U.sample().shape[0] == 0 or prob.W.sample().shape[0] == 0:
        raise SolverError("empty control sample")


def _chunks(N: int, k: int):
    size = max(1, CHUNK // max(1, k))
    for start in range(0, N, size):
        yield slice(start, min(N, start + size))


def backup_step(prob: Problem, grid: Grid, V_next: np.ndarray, s: float, dt: float):
    """One semi-Lagrangian step.  Returns (V, argmin control index, clamp count)."""
    X = grid.points
    Us = prob.U.sample()
    N = X.shape[0]
    V = np.empty(N)
    arg = np.empty(N, dtype=np.intp)
    clamps = 0
    for sl in _chunks(N, Us.shape[0]):
        Xc = X[sl][:, None, :]
        f = prob.flow(s, Xc, Us[None, :, :])
        F = prob.running_cost(s, Xc, Us[None, :, :])
        Vf, nc = grid.interpolate(V_next, Xc + dt * f)
        cand = dt * F + Vf
        j = np.argmin(cand, axis=1)
        arg[sl] = j
        V[sl] = cand[np.arange(j.size), j]
        clamps += nc
    return V.reshape(grid.shape), arg, clamps


def _jump_candidates(prob, grid, Vplus, tau, Ws, a=None, b=None):
    """(candidates (N, kw), clamps) for V+(xi + I) + Phi over the sampled w."""
    X = grid.points
    N = X.shape[0]
    cand = np.empty((N, Ws.shape[0]))
    clamps = 0
    a_ = None if a is None else np.asarray(a, dtype=float)[None, None, :]
    b_ = None if b is None else np.asarray(b, dtype=float)[None, None, :]
    for sl in _chunks(N, Ws.shape[0]):
        Xc = X[sl][:, None, :]
        dx = prob.jump(tau, Xc, Ws[None, :, :], a=a_, b=b_)
        Vj, nc = grid.interpolate(Vplus, Xc + dx)
        cand[sl] = Vj + prob.impulse_cost(tau, Xc, Ws[None, :, :], a=a_, b=b_)
        clamps += nc
    return cand, clamps


def impulse_backup(Vplus: np.ndarray, prob: Problem, grid: Grid, tau: float):
    """V(tau-, xi) = min_b {V(tau+, xi + I(tau, xi, b)) + Phi(tau, xi, b)}.

    Returns (V-, minimizing controls with shape (*grid.shape, m_w), clamp count).
    """
    Ws = prob.W.sample()
    if Ws.shape[0] == 0:
        raise SolverError("empty impulse control set")
    cand, clamps = _jump_candidates(prob, grid, np.asarray(Vplus).reshape(grid.shape), tau, Ws)
    j = np.argmin(cand, axis=1)
    Vm = cand[np.arange(j.size), j]
    return Vm.reshape(grid.shape), Ws[j].reshape(*grid.shape, -1), clamps


def impulse_backup_parametrized(Vplus: np.ndarray, prob: Problem, grid: Grid, tau: float):
    """Jump condition with impulse map I(tau, xi, a, b), a = left limit of u.

    Returns (per-a V- with shape (k_a, *grid.shape), envelope min over a,
    w* per a (k_a, *grid.shape, m_w), a* for the envelope (*grid.shape, m_u),
    clamp count).  a ranges over the sampled continuous control set.
    """
    As = prob.U.sample()
    Ws = prob.W.sample()
    if Ws.shape[0] == 0:
        raise SolverError("empty impulse control set")
    Vplus = np.asarray(Vplus).reshape(grid.shape)
    N = grid.points.shape[0]
    per_a = np.empty((As.shape[0], N))
    w_idx = np.empty((As.shape[0], N), dtype=np.intp)
    clamps = 0
    for i, a in enumerate(As):
        cand, nc = _jump_candidates(prob, grid, Vplus, tau, Ws, a=a)
        j = np.argmin(cand, axis=1)
        per_a[i] = cand[np.arange(N), j]
        w_idx[i] = j
        clamps += nc
    ia = np.argmin(per_a, axis=0)
    env = per_a[ia, np.arange(N)]
    return (
        per_a.reshape(As.shape[0], *grid.shape),
        env.reshape(grid.shape),
        Ws[w_idx].reshape(As.shape[0], *grid.shape, -1),
        As[ia].reshape(*grid.shape, -1),
        clamps,
    )


def impulse_backup_aftereffect(Vplus: np.ndarray, prob: Problem, grid: Grid, tau: float):
    """V(tau-, xi, b) = min_c {V(tau+, xi + I(tau, xi, c, b), c) + Phi(tau, xi, c, b)}.

    ``Vplus`` has shape (|W|, *grid.shape), indexed by the control c applied
    at this impulse (it becomes the "previous" control afterwards).  Returns
    (V- per b, c* per b with shape (|W|, *grid.shape, m_w), clamp count).
    """
    if not prob.W.is_finite:
        raise SolverError("aftereffect backup needs a finite impulse control set")
    Ws = prob.W.sample()
    Vplus = np.asarray(Vplus).reshape(Ws.shape[0], *grid.shape)
    X = grid.points
    N = X.shape[0]
    Vm = np.empty((Ws.shape[0], N))
    c_idx = np.empty((Ws.shape[0], N), dtype=np.intp)
    clamps = 0
    for ib, b in enumerate(Ws):
        cand = np.empty((N, Ws.shape[0]))
        for ic, c in enumerate(Ws):
            dx = prob.jump(tau, X, c[None, :], b=b[None, :])
            Vj, nc = grid.interpolate(Vplus[ic], X + dx)
            cand[:, ic] = Vj + prob.impulse_cost(tau, X, c[None, :], b=b[None, :])
            clamps += nc
        j = np.argmin(cand, axis=1)
        Vm[ib] = cand[np.arange(N), j]
        c_idx[ib] = j
    return Vm.reshape(Ws.shape[0], *grid.shape), Ws[c_idx].reshape(Ws.shape[0], *grid.shape, -1), clamps


def _tied_step(prob: Problem, grid: Grid, per_a: np.ndarray, s: float, dt: float):
    """Last step before an impulse when the impulse reads the applied control.

    V(s, xi) = min_j { dt F(s, xi, u_j) + V-(tau, xi + dt f(s, xi, u_j), a = u_j) }
    """
    X = grid.points
    Us = prob.U.sample()
    N = X.shape[0]
    cand = np.empty((N, Us.shape[0]))
    clamps = 0
    for j, u in enumerate(Us):
        f = prob.flow(s, X, u[None, :])
        Vf, nc = grid.interpolate(per_a[j], X + dt * f)
        cand[:, j] = dt * prob.running_cost(s, X, u[None, :]) + Vf
        clamps += nc
    arg = np.argmin(cand, axis=1)
    return cand[np.arange(N), arg].reshape(grid.shape), arg, clamps


def _sweep(prob: Problem, grid: Grid, coupling: str = "envelope"):
    variant = prob.variant
    Us = prob.U.sample()
    Ws = prob.W.sample()
    P = Ws.shape[0] if variant == "aftereffect" else 1
    breaks = [0.0] + [float(t) for t in prob.times] + [prob.T]
    F0 = prob.terminal_cost(grid.points).reshape(grid.shape)
    V = np.broadcast_to(F0, (P, *grid.shape)).copy()
    # collected backwards, reversed at the end
    slices = [(prob.T, ".", V, np.nan, 0)]
    step_times, u_pol = [], []
    imp_times, w_pol, a_pol = [], [], []
    param_minus_rev = {}
    pending = None  # per-a V- of the impulse that closes the current interval
    for k in range(len(breaks) - 2, -1, -1):
        a0, a1 = breaks[k], breaks[k + 1]
        nsteps, dt = split_steps(a0, a1, grid.dt)
        for i in range(nsteps - 1, -1, -1):
            s = a0 + i * dt
            step = a1 - s if i == nsteps - 1 else dt
            newV = np.empty_like(V)
            args = np.empty((P, grid.points.shape[0]), dtype=np.intp)
            nc = 0
            if pending is not None and i == nsteps - 1:
                newV[0], args[0], nc = _tied_step(prob, grid, pending, s, step)
            else:
                for p in range(P):
                    newV[p], args[p], c = backup_step(prob, grid, V[p], s, step)
                    nc += c
            V = newV
            side = "+" if (i == 0 and k > 0) else "."
            slices.append((s, side, V, step, nc))
            step_times.append(s)
            u_pol.append(Us[args])
        if k > 0:
            tau = a0
            if variant == "basic":
                Vm, wstar, nc = impulse_backup(V[0], prob, grid, tau)
                V = Vm[None]
                w_pol.append(wstar.reshape(1, -1, prob.m_w))
            elif variant == "parametrized":
                per_a, env, wstar, astar, nc = impulse_backup_parametrized(V[0], prob, grid, tau)
                V = env[None]
                w_pol.append(wstar.reshape(Us.shape[0], -1, prob.m_w))
                a_pol.append(astar.reshape(-1, prob.m_u))
                param_minus_rev[len(slices)] = per_a
                if coupling == "left-limit":
                    pending = per_a
            else:
                Vm, cstar, nc = impulse_backup_aftereffect(V, prob, grid, tau)
                V = Vm
                w_pol.append(cstar.reshape(P, -1, prob.m_w))
            slices.append((tau, "-", V, np.nan, nc))
            imp_times.append(tau)
        else:
            pending = None
    slices.reverse()
    S = len(slices)
    param_minus = {S - 1 - j: v for j, v in param_minus_rev.items()}
    params = None
    b0_index = 0
    if variant == "aftereffect":
        params = Ws
        b0_index = _nearest_row(Ws, prob.b0)
    elif variant == "parametrized":
        params = Us
    vf = ValueFunction(
        grid=grid,
        variant=variant,
        times=np.array([s[0] for s in slices]),
        sides=[s[1] for s in slices],
        values=np.stack([s[2] for s in slices]),
        dts=np.array([s[3] for s in slices]),
        clamps=np.array([s[4] for s in slices]),
        params=params,
        param_minus=param_minus,
        b0_index=b0_index,
    )
    pol = Policy(
        grid=grid,
        variant=variant,
        step_times=np.array(step_times[::-1]),
        u=np.stack(u_pol[::-1]) if u_pol else np.zeros((0, P, grid.points.shape[0], prob.m_u)),
        impulse_times=np.array(imp_times[::-1]),
        w=np.stack(w_pol[::-1]) if w_pol else np.zeros((0, P, grid.points.shape[0], prob.m_w)),
        params=params,
        a=np.stack(a_pol[::-1]) if a_pol else None,
        b0_index=b0_index,
    )
    if vf.clamps.any():
        log.info("clamped %.3g%% of foot/jump points", 100 * vf.clamp_fraction)
    return vf, pol


def solve_basic(prob: Problem, grid: Grid) -> tuple[ValueFunction, Policy]:
    """Backward sweep for the basic problem (impulse map I(t, x, w))."""
    _require(prob, grid, "basic")
    return _sweep(prob, grid)


def solve_parametrized(prob: Problem, grid: Grid, coupling: str = "envelope") -> tuple[ValueFunction, Policy]:
    """Backward sweep where the impulse map also reads the left limit a of u.

    ``coupling="envelope"`` continues the sweep with min over a of the per-a
    V- slices, treating a as chosen at the impulse.  ``"left-limit"`` instead
    ties a to the control applied on the last step before each impulse, which
    is what the simulator does; the envelope is then only a lower bound.
    """
    _require(prob, grid, "parametrized")
    if coupling not in ("envelope", "left-limit"):
        raise SolverError(f"unknown coupling {coupling!r}")
    vf, pol = _sweep(prob, grid, coupling)
    vf.coupling = coupling
    return vf, pol


def solve_aftereffect(prob: Problem, grid: Grid) -> tuple[ValueFunction, Policy]:
    """Backward sweep carrying one grid per previous impulse control b in W."""
    _require(prob, grid, "aftereffect")
    if not prob.W.is_finite:
        raise SolverError("aftereffect solver needs a finite impulse control set")
    return _sweep(prob, grid)


def solve(prob: Problem, grid: Grid, coupling: str = "envelope") -> tuple[ValueFunction, Policy]:
    if prob.variant == "parametrized":
        return solve_parametrized(prob, grid, coupling)
    return {"basic": solve_basic, "aftereffect": solve_aftereffect}[prob.variant](prob, grid)


def synthesize_trajectory(
    vf: ValueFunction, pol: Policy, prob: Problem, s: float, xi, h: float | None = None
) -> tuple[Trajectory, CostBreakdown, float]:
    """Closed-loop rollout under the grid policy (nearest-node lookup).

    Returns the trajectory, its realized cost and the interpolated V(s, xi).
    """
    grid = vf.grid
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    if not grid.contains(xi):
        raise GridExitError(s, xi)
    traj = integrate(prob, PolicyControl(pol, "u"), PolicyControl(pol, "w"), s, xi, h=h or grid.dt)
    lo, hi = np.array(grid.lo) - 1e-9, np.array(grid.hi) + 1e-9
    bad = np.flatnonzero(np.any((traj.x < lo) | (traj.x > hi), axis=1))
    if bad.size:
        i = int(bad[0])
        raise GridExitError(float(traj.t[i]), traj.x[i])
    cost = evaluate_cost(traj, prob)
    return traj, cost, vf.value(s, xi, side="+")


def dpp_residual(vf: ValueFunction, prob: Problem, points, param=None) -> dict:
    """One-step consistency V(s, xi) - min_a {dt F + V~(s + dt, xi + dt f)}.

    ``points`` are (s, xi) pairs with s a step-start slice time.  Returns the
    max and mean absolute residual.
    """
    grid = vf.grid
    Us = prob.U.sample()
    p = vf.param_index(param)
    res = []
    for s, xi in points:
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        i = vf.slice_index(s, "+")
        if not np.isfinite(vf.dts[i]):
            raise SolverError(f"s={s} is not the start of a time step")
        dt = vf.dts[i]
        V_here = grid.interpolate(vf.values[i, p], xi)[0]
        f = prob.flow(s, xi[None, :], Us)
        F = prob.running_cost(s, xi[None, :], Us)
        Vf, _ = grid.interpolate(vf.values[i + 1, p], xi[None, :] + dt * f)
        res.append(abs(float(V_here - np.min(dt * F + Vf))))
    res = np.array(res)
    return {"max": float(res.max()) if res.size else 0.0, "mean": float(res.mean()) if res.size else 0.0, "n": int(res.size)}
