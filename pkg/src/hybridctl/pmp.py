"""Hamiltonians, costate integration with jumps, and extremum checks.

Along a candidate optimal trajectory the costate p = grad V satisfies

    dp/ds = -dH/dx                      between impulses
    p(tau-) = p(tau+) + dK/dx           at impulses, evaluated at (tau, x-, p+)
    p(T-) = grad F0(x(T-))

with H = <p, f> + F and the impulsive Hamiltonian K = <p, I> + Phi.  The
optimal controls minimize H (off impulse times) and K (at impulse times).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import expr as ex
from .hjb import ValueFunction
from .model import Problem
from .sim import SimulationError, Trajectory


@dataclass
class CostatePath:
    t: np.ndarray
    side: list
    p: np.ndarray
    jumps: list = field(default_factory=list)  # (tau, p_plus, p_minus)


@dataclass
class ExtremumReport:
    """Margins H(u) - H(u*) per sampled u and K(w) - K(w*) per sampled w."""

    h_rows: list  # (s, control, margin)
    k_rows: list
    tol: float

    @property
    def h_margins(self) -> np.ndarray:
        return np.array([m for _, _, m in self.h_rows])

    @property
    def k_margins(self) -> np.ndarray:
        return np.array([m for _, _, m in self.k_rows])

    @property
    def violations(self) -> int:
        return int(np.sum(self.h_margins < -self.tol) + np.sum(self.k_margins < -self.tol))

    @property
    def min_margin(self) -> float:
        m = np.concatenate([self.h_margins, self.k_margins])
        return float(m.min()) if m.size else 0.0


def hamiltonian(s, x, p, u, prob: Problem) -> float:
    """<p, f(s, x, u)> + F(s, x, u)."""
    x, p, u = (np.atleast_1d(np.asarray(v, dtype=float)) for v in (x, p, u))
    return float(p @ prob.flow(s, x, u) + prob.running_cost(s, x, u))


def impulsive_hamiltonian(s, x, p, w, prob: Problem, a=None, b=None) -> float:
    """<p, I(s, x, w)> + Phi(s, x, w)."""
    x, p, w = (np.atleast_1d(np.asarray(v, dtype=float)) for v in (x, p, w))
    return float(p @ prob.jump(s, x, w, a=a, b=b) + prob.impulse_cost(s, x, w, a=a, b=b))


def _dH_dx(prob, t, x, u, p):
    return prob.flow_jacobian(t, x, u).T @ p + prob.running_cost_grad(t, x, u)


def _warn_kinks(prob: Problem, traj: Trajectory):
    kinked = prob.kinked()
    if not kinked:
        return
    hits = set()
    for label, arg in kinked:
        fn = ex.compile_expr(arg)
        for i in range(len(traj)):
            env = {"t": traj.t[i]}
            env.update({f"x{k + 1}": traj.x[i, k] for k in range(traj.n)})
            env.update({f"u{k + 1}": traj.u[i, k] for k in range(traj.u.shape[1])})
            try:
                v = fn(env)
            except ex.EvaluationError:
                continue  # reads impulse-only variables
            if abs(v) <= 1e-12:
                hits.add(label)
                break
    if hits:
        warnings.warn(f"kink convention exercised along the trajectory in {sorted(hits)}", RuntimeWarning)


def integrate_costate(prob: Problem, traj: Trajectory) -> CostatePath:
    """Backward RK4 for the costate on the trajectory mesh, with jumps.

    States inside a step come from cubic Hermite interpolation of the
    trajectory; controls are the held value (zero-order-hold trajectories) or
    linear between nodes (continuously evaluated feedback).
    """
    if traj.u.shape[0] != len(traj) or traj.u.shape[1] != prob.m_u:
        raise ValueError("trajectory does not carry its continuous controls")
    if len(traj.jumps) != traj.side.count("-"):
        raise ValueError("trajectory does not carry its impulse controls")
    _warn_kinks(prob, traj)
    N = len(traj)
    P = np.empty((N, prob.n))
    p = prob.terminal_cost_grad(traj.x[-1])
    P[-1] = p
    jumps_out = []
    jump_iter = iter(reversed(traj.jumps))
    for i in range(N - 2, -1, -1):
        if traj.side[i] == "-" and traj.side[i + 1] == "+":
            jr = next(jump_iter)
            dK = prob.jump_jacobian(jr.t, jr.x_minus, jr.w, a=jr.a, b=jr.b).T @ p + prob.impulse_cost_grad(
                jr.t, jr.x_minus, jr.w, a=jr.a, b=jr.b
            )
            p_minus = p + dK
            jumps_out.append((jr.t, p.copy(), p_minus.copy()))
            p = p_minus
            P[i] = p
            continue
        t0, t1 = traj.t[i], traj.t[i + 1]
        h = t1 - t0
        x0, x1 = traj.x[i], traj.x[i + 1]
        u0 = traj.u[i]
        if traj.hold:
            u1 = um = u0
        else:
            u1 = traj.u[i + 1]
            um = 0.5 * (u0 + u1)
        f0 = prob.flow(t0, x0, u0)
        f1 = prob.flow(t1, x1, u1)
        xm = 0.5 * (x0 + x1) + h / 8 * (f0 - f1)
        tm = t0 + h / 2
        # dp/ds = -dH/dx, stepping from t1 back to t0
        k1 = _dH_dx(prob, t1, x1, u1, p)
        k2 = _dH_dx(prob, tm, xm, um, p + h / 2 * k1)
        k3 = _dH_dx(prob, tm, xm, um, p + h / 2 * k2)
        k4 = _dH_dx(prob, t0, x0, u0, p + h * k3)
        p = p + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(p)):
            raise SimulationError(f"costate became non-finite at s={t0:.6g}", t0)
        P[i] = p
    return CostatePath(traj.t.copy(), list(traj.side), P, jumps_out[::-1])


def check_extremum(
    traj: Trajectory,
    costate: CostatePath,
    prob: Problem,
    u_samples=None,
    w_samples=None,
    tol: float = 1e-6,
) -> ExtremumReport:
    """Compare H and K at the trajectory's controls with every sampled control."""
    if len(costate.t) != len(traj) or not np.allclose(costate.t, traj.t):
        raise ValueError("costate and trajectory meshes differ")
    Us = prob.U.sample() if u_samples is None else np.atleast_2d(np.asarray(u_samples, dtype=float))
    Ws = prob.W.sample() if w_samples is None else np.atleast_2d(np.asarray(w_samples, dtype=float))
    h_rows = []
    for i in range(len(traj)):
        s, x, p = traj.t[i], traj.x[i], costate.p[i]
        Hs = prob.flow(s, x[None, :], Us) @ p + prob.running_cost(s, x[None, :], Us)
        H_star = hamiltonian(s, x, p, traj.u[i], prob)
        for u, m in zip(Us, Hs - H_star):
            h_rows.append((float(s), u, float(m)))
    k_rows = []
    for jr, (tau, p_plus, _) in zip(traj.jumps, costate.jumps):
        a = None if jr.a is None else np.broadcast_to(jr.a, (Ws.shape[0], jr.a.size))
        b = None if jr.b is None else np.broadcast_to(jr.b, (Ws.shape[0], jr.b.size))
        Ks = prob.jump(tau, jr.x_minus[None, :], Ws, a=a, b=b) @ p_plus + prob.impulse_cost(
            tau, jr.x_minus[None, :], Ws, a=a, b=b
        )
        K_star = impulsive_hamiltonian(tau, jr.x_minus, p_plus, jr.w, prob, a=jr.a, b=jr.b)
        for w, m in zip(Ws, Ks - K_star):
            k_rows.append((float(tau), w, float(m)))
    return ExtremumReport(h_rows, k_rows, tol)


def costate_vs_gradV(costate: CostatePath, vf: ValueFunction, traj: Trajectory, param=None) -> dict:
    """Relative error between the costate and central differences of V along the trajectory.

    Relative error per row is |p - grad V| / max(|grad V|, 1e-12).
    """
    errs = []
    for i in range(len(traj)):
        side = "-" if traj.side[i] == "-" else "+"
        g = vf.gradient(traj.t[i], traj.x[i], side=side, param=param)
        errs.append(np.linalg.norm(costate.p[i] - g) / max(np.linalg.norm(g), 1e-12))
    errs = np.array(errs)
    return {"max": float(errs.max()), "mean": float(errs.mean()), "n": int(errs.size)}
