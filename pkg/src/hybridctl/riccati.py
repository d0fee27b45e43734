"""Linear-quadratic impulsive problems: Riccati flow between impulses plus jumps.

Problem data::

    x' = P(t) x + Q(t) u                    between impulses
    x+ = x- + M x- + N w                    at tau_k
    F   = x'A x + 2 x'B u + u'C u
    Phi = x'(alpha) x + 2 x'(beta) w + w'(gamma) w
    F0  = x'A0 x

With V(s, x) = x'K(s)x the dynamic-programming equations reduce to

    -dK/ds = A + K P + P'K - (K Q + B) C^-1 (Q'K + B')
    K-     = G'K+G + alpha - (G'K+N + beta) S^-1 (N'K+G + beta'),
             G = E + M,  S = N'K+N + gamma
    w*     = L x,  L = -S^-1 (N'K+G + beta')
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import expr as ex
from .controls import FeedbackControl
from .grid import split_steps


class RiccatiError(ArithmeticError):
    """Singular or indefinite matrices, or finite escape of the flow."""


def _is_symbolic(m) -> bool:
    return any(isinstance(v, str) for row in m for v in row)


class _MatrixFn:
    """Constant matrix, or matrix of expressions in t."""

    def __init__(self, data, name: str):
        self.name = name
        if isinstance(data, np.ndarray) or not _is_symbolic(np.atleast_2d(np.asarray(data, dtype=object))):
            self.const = np.atleast_2d(np.asarray(data, dtype=float))
            self.raw = self.const.tolist()
            self.fns = None
        else:
            rows = [list(r) for r in np.atleast_2d(np.asarray(data, dtype=object))]
            self.raw = [[v if isinstance(v, str) else float(v) for v in r] for r in rows]
            self.const = None
            self.fns = [
                [ex.compile_expr(ex.parse(v, ("t",))) if isinstance(v, str) else float(v) for v in r] for r in self.raw
            ]

    @property
    def shape(self) -> tuple:
        return (len(self.raw), len(self.raw[0]) if self.raw else 0)

    def __call__(self, t: float) -> np.ndarray:
        if self.const is not None:
            return self.const
        env = {"t": t}
        return np.array([[fn(env) if callable(fn) else fn for fn in r] for r in self.fns], dtype=float)


def _jump_stack(data, K: int, name: str) -> np.ndarray:
    arr = np.asarray(data, dtype=float)
    if arr.ndim <= 2:
        arr = np.atleast_2d(arr)
        return np.repeat(arr[None], max(K, 1), axis=0)
    if arr.shape[0] != K:
        raise ValueError(f"{name}: expected one matrix per impulse time ({K}), got {arr.shape[0]}")
    return arr


@dataclass
class LQSystem:
    """Linear-quadratic impulsive problem.

    Flow and running-cost matrices may be numbers or expressions in ``t``.
    Jump matrices are a single matrix (used at every impulse) or one per
    impulse time.
    """

    P: object
    Q: object
    A: object
    B: object
    C: object
    A0: object
    T: float
    times: Sequence[float] = ()
    M: object = None
    N: object = None
    alpha: object = None
    beta: object = None
    gamma: object = None
    _fns: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        for k in "PQABC":
            self._fns[k] = _MatrixFn(getattr(self, k), k)
        self.A0 = np.atleast_2d(np.asarray(self.A0, dtype=float))
        self.times = tuple(float(t) for t in self.times)
        n, m_u = self._fns["Q"].shape
        K = len(self.times)
        m_w = 1 if self.N is None else np.atleast_2d(np.asarray(self.N, dtype=float)).shape[-1]
        defaults = {
            "M": np.zeros((n, n)),
            "N": np.zeros((n, m_w)),
            "alpha": np.zeros((n, n)),
            "beta": np.zeros((n, m_w)),
            "gamma": np.eye(m_w),
        }
        for k, d in defaults.items():
            if getattr(self, k) is None:
                setattr(self, k, d)
        self._jumps = {k: _jump_stack(getattr(self, k), K, k) for k in defaults}

    @property
    def n(self) -> int:
        return self._fns["P"].shape[0]

    @property
    def m_u(self) -> int:
        return self._fns["Q"].shape[1]

    @property
    def m_w(self) -> int:
        return self._jumps["N"].shape[-1]

    def mat(self, key: str, t: float) -> np.ndarray:
        return self._fns[key](t)

    def raw(self, key: str) -> list:
        return self._fns[key].raw

    def jump(self, k: int) -> tuple:
        """(M, N, alpha, beta, gamma) at the k-th impulse (0-based)."""
        return tuple(self._jumps[name][k] for name in ("M", "N", "alpha", "beta", "gamma"))

    def uniform_jump(self) -> tuple:
        mats = self.jump(0)
        for k in range(1, len(self.times)):
            if any(not np.array_equal(a, b) for a, b in zip(mats, self.jump(k))):
                raise ValueError("jump matrices differ between impulse times")
        return mats

    def check(self, probe: int = 11) -> None:
        """Raise ValueError listing dimension, symmetry and definiteness problems."""
        n, m_u, m_w = self.n, self.m_u, self.m_w
        errs = []
        want = {"P": (n, n), "Q": (n, m_u), "A": (n, n), "B": (n, m_u), "C": (m_u, m_u)}
        for k, shp in want.items():
            if self._fns[k].shape != shp:
                errs.append(f"{k} has shape {self._fns[k].shape}, expected {shp}")
        if self.A0.shape != (n, n):
            errs.append(f"A0 has shape {self.A0.shape}, expected {(n, n)}")
        jwant = {"M": (n, n), "N": (n, m_w), "alpha": (n, n), "beta": (n, m_w), "gamma": (m_w, m_w)}
        for k, shp in jwant.items():
            if self._jumps[k].shape[1:] != shp:
                errs.append(f"{k} has shape {self._jumps[k].shape[1:]}, expected {shp}")
        if errs:
            raise ValueError("; ".join(errs))
        times = list(self.times)
        if any(b <= a for a, b in zip(times, times[1:])) or any(not 0 < t < self.T for t in times):
            errs.append("impulse times must be strictly increasing inside (0, T)")
        if not np.allclose(self.A0, self.A0.T):
            errs.append("A0 not symmetric")
        for t in np.linspace(0.0, self.T, probe):
            A, C = self.mat("A", t), self.mat("C", t)
            if not np.allclose(A, A.T):
                errs.append(f"A not symmetric at t={t:g}")
                break
            if not np.allclose(C, C.T) or np.linalg.eigvalsh(0.5 * (C + C.T)).min() <= 0:
                errs.append(f"C not symmetric positive definite at t={t:g}")
                break
        for k in range(len(self.times)):
            _, _, alpha, _, gamma = self.jump(k)
            if not np.allclose(alpha, alpha.T):
                errs.append(f"alpha not symmetric at impulse {k + 1}")
            if not np.allclose(gamma, gamma.T) or np.linalg.eigvalsh(0.5 * (gamma + gamma.T)).min() <= 0:
                errs.append(f"gamma not symmetric positive definite at impulse {k + 1}")
        if errs:
            raise ValueError("; ".join(errs))


def _sym(K: np.ndarray) -> np.ndarray:
    return 0.5 * (K + K.T)


def riccati_rhs(lq: LQSystem, s: float, K: np.ndarray) -> np.ndarray:
    """R(s, K) with -dK/ds = R."""
    P, Q, A, B, C = (lq.mat(k, s) for k in "PQABC")
    KQB = K @ Q + B
    try:
        return A + K @ P + P.T @ K - KQB @ np.linalg.solve(C, KQB.T)
    except np.linalg.LinAlgError as exc:
        raise RiccatiError(f"C singular at s={s:g}") from exc


def riccati_flow(lq: LQSystem, K_end, s0: float, s1: float, h: float = 1e-3) -> tuple[np.ndarray, np.ndarray]:
    """Integrate the Riccati equation backward from K(s1) = K_end to s0.

    Classical RK4 with per-step symmetrization.  Returns ascending times and
    the matrices at those times.
    """
    K = _sym(np.atleast_2d(np.asarray(K_end, dtype=float)))
    nsteps, dt = split_steps(s0, s1, h)
    times = s1 - dt * np.arange(nsteps + 1)
    times[-1] = s0
    out = [K]
    for i in range(nsteps):
        s = times[i]
        k1 = riccati_rhs(lq, s, K)
        k2 = riccati_rhs(lq, s - dt / 2, K + dt / 2 * k1)
        k3 = riccati_rhs(lq, s - dt / 2, K + dt / 2 * k2)
        k4 = riccati_rhs(lq, s - dt, K + dt * k3)
        K = _sym(K + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4))
        if not np.all(np.isfinite(K)) or np.abs(K).max() > 1e12:
            raise RiccatiError(f"Riccati solution escapes near s={times[i + 1]:.6g}")
        out.append(K)
    return times[::-1].copy(), np.array(out[::-1])


def _impulse_terms(K_plus, M, N, beta, gamma):
    K_plus = np.atleast_2d(np.asarray(K_plus, dtype=float))
    M = np.atleast_2d(np.asarray(M, dtype=float))
    N = np.atleast_2d(np.asarray(N, dtype=float))
    G = np.eye(K_plus.shape[0]) + M
    S = _sym(N.T @ K_plus @ N + np.atleast_2d(np.asarray(gamma, dtype=float)))
    lam = np.linalg.eigvalsh(S).min()
    if lam <= 0:
        raise RiccatiError(f"N'K+N + gamma not positive definite (smallest eigenvalue {lam:.3g})")
    cross = N.T @ K_plus @ G + np.atleast_2d(np.asarray(beta, dtype=float)).T
    return G, S, cross


def impulse_gain(K_plus, M, N, beta, gamma, strict: bool = False) -> np.ndarray:
    """Minimizing impulse feedback L (w* = L x).

    ``strict=True`` drops the cross-cost term beta.
    """
    N = np.atleast_2d(np.asarray(N, dtype=float))
    if strict:
        beta = np.zeros((N.shape[0], N.shape[1]))
    _, S, cross = _impulse_terms(K_plus, M, N, beta, gamma)
    return -np.linalg.solve(S, cross)


def riccati_jump(K_plus, M, N, alpha, beta, gamma, strict: bool = False) -> np.ndarray:
    """K(tau-) from K(tau+) by minimizing the impulse objective over w in closed form."""
    N = np.atleast_2d(np.asarray(N, dtype=float))
    if strict:
        beta = np.zeros((N.shape[0], N.shape[1]))
    G, S, cross = _impulse_terms(K_plus, M, N, beta, gamma)
    K_plus = np.atleast_2d(np.asarray(K_plus, dtype=float))
    Km = G.T @ K_plus @ G + np.atleast_2d(np.asarray(alpha, dtype=float)) - cross.T @ np.linalg.solve(S, cross)
    return _sym(Km)


def impulse_objective(x, b, K_plus, M, N, alpha, beta, gamma) -> np.ndarray:
    """Cost-to-go through an impulse for controls b (..., m_w) from state x."""
    x = np.asarray(x, dtype=float)
    b = np.asarray(b, dtype=float)
    y = x + np.atleast_2d(M) @ x + b @ np.atleast_2d(N).T
    return (
        np.einsum("...i,ij,...j->...", y, K_plus, y)
        + x @ np.atleast_2d(alpha) @ x
        + 2 * b @ (np.atleast_2d(beta).T @ x)
        + np.einsum("...i,ij,...j->...", b, np.atleast_2d(gamma), b)
    )


@dataclass
class RiccatiSolution:
    """Piecewise K(s): ``pieces[k]`` covers [tau_k, tau_{k+1}] with tau_0 = 0, tau_{K+1} = T."""

    lq: LQSystem
    pieces: list
    gains: list
    strict: bool = False

    @property
    def breaks(self) -> np.ndarray:
        return np.concatenate([[0.0], self.lq.times, [self.lq.T]])

    def K_on_segment(self, k: int, s: float) -> np.ndarray:
        times, Ks = self.pieces[k]
        j = int(np.clip(np.searchsorted(times, s, side="right") - 1, 0, len(times) - 2))
        th = (s - times[j]) / (times[j + 1] - times[j])
        th = min(max(th, 0.0), 1.0)
        return (1 - th) * Ks[j] + th * Ks[j + 1]

    def segment_of(self, s: float, side: str = "+") -> int:
        if not 0.0 <= s <= self.lq.T:
            raise ValueError(f"time {s} outside [0, {self.lq.T}]")
        taus = np.asarray(self.lq.times)
        if side == "-":
            k = int(np.searchsorted(taus, s, side="left"))
        else:
            k = int(np.searchsorted(taus, s, side="right"))
        return min(k, len(self.pieces) - 1)

    def K(self, s: float, side: str = "+") -> np.ndarray:
        return self.K_on_segment(self.segment_of(s, side), s)

    def feedback_gain(self, s: float, side: str = "+", segment: int | None = None) -> np.ndarray:
        """G(s) with u* = G(s) x."""
        K = self.K(s, side) if segment is None else self.K_on_segment(segment, s)
        Q, B, C = (self.lq.mat(k, s) for k in "QBC")
        return -np.linalg.solve(C, Q.T @ K + B.T)

    def mesh(self) -> tuple[np.ndarray, list, np.ndarray]:
        """Flattened (times, sides, K) with both one-sided values at impulse times."""
        times, sides, Ks = [], [], []
        K = len(self.pieces)
        for k, (ts, ks) in enumerate(self.pieces):
            for j, (t, m) in enumerate(zip(ts, ks)):
                side = "."
                if j == 0 and k > 0:
                    side = "+"
                elif j == len(ts) - 1 and k < K - 1:
                    side = "-"
                times.append(t)
                sides.append(side)
                Ks.append(m)
        return np.array(times), sides, np.array(Ks)

    def controls(self) -> tuple[FeedbackControl, FeedbackControl]:
        """Closed-loop (u, w) signals: u = G(s)x evaluated per stage, w = L_k x."""
        taus = np.asarray(self.lq.times)

        def u_fn(t, x, segment=None, **ctx):
            return self.feedback_gain(t, segment=segment) @ np.asarray(x, dtype=float)

        def w_fn(t, x, **ctx):
            k = int(np.argmin(np.abs(taus - t)))
            return self.gains[k] @ np.asarray(x, dtype=float)

        return FeedbackControl(u_fn), FeedbackControl(w_fn)


def solve_impulsive_riccati(lq: LQSystem, h: float = 1e-3, strict: bool = False) -> RiccatiSolution:
    """Backward composition of Riccati flows and jumps from K(T-) = A0."""
    lq.check()
    breaks = np.concatenate([[0.0], lq.times, [lq.T]])
    K_end = lq.A0.copy()
    pieces: list = [None] * (len(breaks) - 1)
    gains: list = [None] * len(lq.times)
    for k in range(len(breaks) - 2, -1, -1):
        times, Ks = riccati_flow(lq, K_end, breaks[k], breaks[k + 1], h)
        Ks[-1] = K_end  # exact terminal / post-jump value
        pieces[k] = (times, Ks)
        if k > 0:
            M, N, alpha, beta, gamma = lq.jump(k - 1)
            K_plus = Ks[0]
            gains[k - 1] = impulse_gain(K_plus, M, N, beta, gamma, strict=strict)
            K_end = riccati_jump(K_plus, M, N, alpha, beta, gamma, strict=strict)
    return RiccatiSolution(lq, pieces, gains, strict)


def lq_value(sol: RiccatiSolution, s: float, x, side: str = "+") -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return float(x @ sol.K(s, side) @ x)
