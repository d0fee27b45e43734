"""Forward simulation of impulsive controlled ODEs and cost evaluation.

Between impulses the state follows x' = f(t, x, u) (classical RK4, fixed
step).  At an impulse the jump x+ = x- + I(t, x-, w) is applied once, using
the left limit.  Fixed impulse times are always mesh nodes; event surfaces
are located by bisection.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import simpson

from .controls import ControlSignal
from .grid import split_steps
from .model import Problem

EVENT_TOL = 1e-10
MAX_EVENTS = 100_000


class SimulationError(ArithmeticError):
    def __init__(self, message: str, t: float | None = None):
        self.t = t
        super().__init__(message)


@dataclass
class JumpRecord:
    t: float
    x_minus: np.ndarray
    x_plus: np.ndarray
    w: np.ndarray
    a: np.ndarray | None = None
    b: np.ndarray | None = None


@dataclass
class Trajectory:
    """Sampled path.  Rows at an impulse time come in pairs: side "-" then "+".

    ``u[i]`` is the control in force right after row i; on a "-" row and on
    the final row it is the left limit.  ``hold`` records whether controls
    were constant over each step (zero-order hold) or evaluated per stage.
    """

    t: np.ndarray
    side: list
    x: np.ndarray
    u: np.ndarray
    jumps: list = field(default_factory=list)
    hold: bool = True

    def __len__(self):
        return len(self.t)

    @property
    def n(self) -> int:
        return self.x.shape[1]

    def segments(self) -> list[slice]:
        """Row ranges of the continuous pieces between impulses."""
        out, start = [], 0
        for i, s in enumerate(self.side):
            if s == "-":
                out.append(slice(start, i + 1))
                start = i + 1
        if len(self.t):
            out.append(slice(start, len(self.t)))
        return out

    def jump_error(self, prob: Problem) -> float:
        """Max |x+ - (x- + I(t, x-, w))| over the jump records."""
        err = 0.0
        for j in self.jumps:
            dx = prob.jump(j.t, j.x_minus, j.w, a=j.a, b=j.b)
            err = max(err, float(np.max(np.abs(j.x_plus - (j.x_minus + dx)))))
        return err

    def at(self, t: float, side: str = "+") -> np.ndarray:
        """State at a mesh time (one-sided at impulse times)."""
        idx = np.flatnonzero(np.isclose(self.t, t, rtol=0, atol=1e-12))
        if idx.size == 0:
            raise KeyError(f"{t} is not a trajectory node")
        if idx.size > 1:
            return self.x[idx[0] if side == "-" else idx[-1]]
        return self.x[idx[0]]


@dataclass
class CostBreakdown:
    running: float
    impulse: float
    terminal: float

    @property
    def total(self) -> float:
        return self.running + self.impulse + self.terminal


class _Stepper:
    def __init__(self, prob: Problem, u: ControlSignal):
        self.prob = prob
        self.u = u

    def control(self, t, x, ctx):
        return np.atleast_1d(np.asarray(self.u(t, x, **ctx), dtype=float))

    def step(self, t, x, dt, u_held, ctx):
        f = self.prob.flow
        if u_held is not None:
            k1 = f(t, x, u_held)
            k2 = f(t + dt / 2, x + dt / 2 * k1, u_held)
            k3 = f(t + dt / 2, x + dt / 2 * k2, u_held)
            k4 = f(t + dt, x + dt * k3, u_held)
        else:
            c = self.control
            k1 = f(t, x, c(t, x, ctx))
            x2 = x + dt / 2 * k1
            k2 = f(t + dt / 2, x2, c(t + dt / 2, x2, ctx))
            x3 = x + dt / 2 * k2
            k3 = f(t + dt / 2, x3, c(t + dt / 2, x3, ctx))
            x4 = x + dt * k3
            k4 = f(t + dt, x4, c(t + dt, x4, ctx))
        return x + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


class _Recorder:
    def __init__(self):
        self.t, self.side, self.x, self.u = [], [], [], []

    def add(self, t, side, x, u):
        self.t.append(float(t))
        self.side.append(side)
        self.x.append(np.array(x, dtype=float))
        self.u.append(np.array(u, dtype=float))


def _check_finite(x, t):
    if not np.all(np.isfinite(x)):
        raise SimulationError(f"state became non-finite at t={t:.10g}", t)


def integrate(
    prob: Problem,
    u: ControlSignal,
    w: ControlSignal,
    s: float = 0.0,
    xi=None,
    h: float = 1e-3,
    t_end: float | None = None,
) -> Trajectory:
    """Simulate from x(s+) = xi to ``t_end`` (default T)."""
    t_end = prob.T if t_end is None else float(t_end)
    if not (0.0 <= s < t_end <= prob.T + 1e-12):
        raise ValueError(f"need 0 <= s < t_end <= T, got s={s}, t_end={t_end}")
    x = np.atleast_1d(np.asarray(xi, dtype=float)).copy()
    if x.shape != (prob.n,):
        raise ValueError(f"initial state must have length {prob.n}")
    _check_finite(x, s)
    if prob.has_surfaces:
        return _integrate_events(prob, u, w, s, x, h, t_end)
    return _integrate_fixed(prob, u, w, s, x, h, t_end)


def _apply_jump(prob, w, t, x, a, ctx):
    b = ctx["b"]
    wv = np.atleast_1d(np.asarray(w(t, x, a=a, **ctx), dtype=float))
    x_plus = x + prob.jump(t, x, wv, a=a, b=b)
    _check_finite(x_plus, t)
    return JumpRecord(t, x.copy(), x_plus, wv, a if prob.variant == "parametrized" else None,
                      b if prob.variant == "aftereffect" else None), x_plus


def _integrate_fixed(prob, u, w, s, x, h, t_end):
    taus = [float(t) for t in prob.times if s < t < t_end]
    breaks = [s] + taus + [t_end]
    stepper = _Stepper(prob, u)
    rec = _Recorder()
    jumps = []
    b = prob.b0
    for k in range(len(breaks) - 1):
        ctx = {"segment": len(jumps), "b": b}
        a0, a1 = breaks[k], breaks[k + 1]
        nsteps, dt = split_steps(a0, a1, h)
        u_last = None
        for i in range(nsteps):
            t = a0 + i * dt
            uc = stepper.control(t, x, ctx)
            held = uc if u.hold else None
            rec.add(t, "+" if (i == 0 and k > 0) else ".", x, uc)
            x = stepper.step(t, x, a1 - t if i == nsteps - 1 else dt, held, ctx)
            _check_finite(x, t + dt)
            u_last = uc
        u_left = u_last if u.hold else stepper.control(a1, x, ctx)
        if k < len(breaks) - 2:
            rec.add(a1, "-", x, u_left)
            jr, x = _apply_jump(prob, w, a1, x, u_left, ctx)
            jumps.append(jr)
            b = jr.w
        else:
            rec.add(a1, ".", x, u_left)
    return Trajectory(np.array(rec.t), rec.side, np.array(rec.x), np.array(rec.u), jumps, bool(u.hold))


def _integrate_events(prob, u, w, s, x, h, t_end):
    stepper = _Stepper(prob, u)
    rec = _Recorder()
    jumps = []
    b = prob.b0
    t = s
    g_prev = prob.surface_values(t, x)
    after_jump = False
    while t < t_end - 1e-14:
        ctx = {"segment": len(jumps), "b": b}
        dt = min(h, t_end - t)
        if t_end - (t + dt) < 1e-12 * max(1.0, t_end):
            dt = t_end - t
        uc = stepper.control(t, x, ctx)
        held = uc if u.hold else None
        rec.add(t, "+" if after_jump else ".", x, uc)
        after_jump = False
        x_new = stepper.step(t, x, dt, held, ctx)
        _check_finite(x_new, t + dt)
        g_new = prob.surface_values(t + dt, x_new)
        crossed = [i for i in range(len(g_new)) if _crosses(g_prev[i], g_new[i])]
        theta = None
        if crossed:
            hits = [(_bisect(prob, stepper, t, x, dt, held, ctx, i, g_prev[i]), i) for i in crossed]
            theta, _ = min(hits)  # earliest; ties keep declaration order
            if t + theta >= t_end - 1e-12:
                theta = None
        if theta is not None:
            t_hit = t + theta
            x_minus = stepper.step(t, x, theta, held, ctx)
            u_left = uc if u.hold else stepper.control(t_hit, x_minus, ctx)
            rec.add(t_hit, "-", x_minus, u_left)
            jr, x = _apply_jump(prob, w, t_hit, x_minus, u_left, ctx)
            jumps.append(jr)
            if len(jumps) > MAX_EVENTS:
                raise SimulationError("too many impulses (Zeno behaviour?)", t_hit)
            b = jr.w
            t = t_hit
            g_prev = prob.surface_values(t, x)
            after_jump = True
            continue
        t, x, g_prev = t + dt, x_new, g_new
    u_left = rec.u[-1] if u.hold and rec.u else stepper.control(t, x, {"segment": len(jumps), "b": b})
    rec.add(t_end, ".", x, u_left)
    return Trajectory(np.array(rec.t), rec.side, np.array(rec.x), np.array(rec.u), jumps, bool(u.hold))


def _crosses(g0: float, g1: float) -> bool:
    return (g0 < 0 < g1) or (g0 > 0 > g1) or (g1 == 0 and g0 != 0)


def _bisect(prob, stepper, t, x, dt, held, ctx, i, g0) -> float:
    """Step fraction (in time units) at which surface i first reaches zero."""
    lo, hi = 0.0, dt
    while hi - lo > EVENT_TOL:
        mid = 0.5 * (lo + hi)
        gm = prob.surface_values(t + mid, stepper.step(t, x, mid, held, ctx))[i]
        if not np.isfinite(gm):
            raise SimulationError("event bisection failed: non-finite surface value", t + mid)
        if gm == 0 or np.sign(gm) != np.sign(g0):
            hi = mid
        else:
            lo = mid
    g_hi = prob.surface_values(t + hi, stepper.step(t, x, hi, held, ctx))[i]
    if not (g_hi == 0 or np.sign(g_hi) != np.sign(g0)):
        raise SimulationError("event bisection failed to bracket the crossing", t + hi)
    return hi


def evaluate_cost(traj: Trajectory, prob: Problem) -> CostBreakdown:
    """Running cost by Simpson's rule per inter-impulse segment, plus impulse and terminal costs."""
    if len(traj) == 0:
        return CostBreakdown(0.0, 0.0, 0.0)
    running = 0.0
    for seg in traj.segments():
        ts = traj.t[seg]
        if ts.size < 3:
            raise ValueError(f"segment starting at t={ts[0]:.6g} has {ts.size} nodes; Simpson needs 3")
        F = prob.running_cost(ts, traj.x[seg], traj.u[seg])
        running += float(simpson(F, x=ts))
    impulse = float(sum(float(prob.impulse_cost(j.t, j.x_minus, j.w, a=j.a, b=j.b)) for j in traj.jumps))
    terminal = float(prob.terminal_cost(traj.x[-1]))
    return CostBreakdown(running, impulse, terminal)
