"""Deterministic CSV and JSON output.

Floats are written with 17 significant digits (round-trip exact), rows and
columns in a fixed order, LF line endings.  Empty cells mean "not applicable"
(for example impulse-control columns on rows that are not impulses).
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .hjb import Policy, ValueFunction
from .model import Problem
from .pmp import CostatePath, ExtremumReport
from .riccati import RiccatiSolution
from .sim import JumpRecord, Trajectory


def fmt(v) -> str:
    if v is None:
        return ""
    v = float(v)
    if v == 0.0:
        return "0"  # also folds -0.0
    return format(v, ".17g")


def _write(path, header: list[str], rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for r in rows:
            wr.writerow(r)
    return path


def _names(prefix: str, k: int) -> list[str]:
    return [f"{prefix}{i + 1}" for i in range(k)]


def write_trajectory(traj: Trajectory, path, m_w: int | None = None) -> Path:
    """Columns ``t, side, x.., u.., w.., jump``; impulse controls sit on the "-" row."""
    n = traj.x.shape[1] if traj.x.ndim == 2 else 0
    m_u = traj.u.shape[1] if traj.u.ndim == 2 else 0
    if m_w is None:
        m_w = traj.jumps[0].w.size if traj.jumps else 0
    header = ["t", "side", *_names("x", n), *_names("u", m_u), *_names("w", m_w), "jump"]
    jumps = iter(traj.jumps)

    def rows():
        for i in range(len(traj)):
            side = traj.side[i]
            ws = [""] * m_w
            if side == "-":
                ws = [fmt(v) for v in next(jumps).w]
            yield [fmt(traj.t[i]), side, *map(fmt, traj.x[i]), *map(fmt, traj.u[i]), *ws,
                   "1" if side in "-+" else "0"]

    return _write(path, header, rows())


def read_trajectory(path, prob: Problem) -> Trajectory:
    """Inverse of :func:`write_trajectory`; jump records are rebuilt from the row pairs."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    xs = [i for i, h in enumerate(header) if h.startswith("x")]
    us = [i for i, h in enumerate(header) if h.startswith("u")]
    ws = [i for i, h in enumerate(header) if h.startswith("w")]
    t = np.array([float(r[0]) for r in body])
    side = [r[1] for r in body]
    x = np.array([[float(r[i]) for i in xs] for r in body]).reshape(len(body), len(xs))
    u = np.array([[float(r[i]) for i in us] for r in body]).reshape(len(body), len(us))
    jumps = []
    b = prob.b0
    for i, r in enumerate(body):
        if side[i] != "-":
            continue
        w = np.array([float(r[j]) for j in ws])
        jumps.append(JumpRecord(
            t[i], x[i].copy(), x[i + 1].copy(), w,
            u[i].copy() if prob.variant == "parametrized" else None,
            b if prob.variant == "aftereffect" else None,
        ))
        b = w
    return Trajectory(t, side, x, u, jumps)


def write_value_slices(vf: ValueFunction, path) -> Path:
    """Columns ``s, side, xi.., [a.. | b..], V`` for every slice and node.

    Aftereffect runs carry one row block per previous control b.  Parametrized
    runs write the envelope with empty a cells, and at impulse times one
    extra block per sampled a.
    """
    grid = vf.grid
    X = grid.points
    n = grid.dim
    pcols: list[str] = []
    if vf.variant == "aftereffect":
        pcols = _names("b", vf.params.shape[1])
    elif vf.variant == "parametrized":
        pcols = _names("a", vf.params.shape[1])
    header = ["s", "side", *_names("xi", n), *pcols, "V"]

    def rows():
        for i, (s, side) in enumerate(zip(vf.times, vf.sides)):
            blocks = []
            if vf.variant == "aftereffect":
                blocks = [(vf.params[p], vf.values[i, p]) for p in range(len(vf.params))]
            else:
                blocks = [(None, vf.values[i, 0])]
                if vf.variant == "parametrized" and i in vf.param_minus:
                    blocks += [(vf.params[q], vf.param_minus[i][q]) for q in range(len(vf.params))]
            for par, V in blocks:
                pc = [""] * len(pcols) if par is None else [fmt(v) for v in par]
                for node, v in zip(X, V.ravel()):
                    yield [fmt(s), side, *map(fmt, node), *pc, fmt(v)]

    return _write(path, header, rows())


def write_policy(pol: Policy, path) -> Path:
    """Columns ``s, side, xi.., [a.. | b..], u.., w..``.

    Step rows (side "." or "+") fill u; impulse rows (side "-") fill w.
    """
    grid = pol.grid
    X = grid.points
    m_u = pol.u.shape[-1]
    m_w = pol.w.shape[-1]
    pcols: list[str] = []
    if pol.variant in ("aftereffect", "parametrized"):
        pcols = _names("b" if pol.variant == "aftereffect" else "a", pol.params.shape[1])
    header = ["s", "side", *_names("xi", grid.dim), *pcols, *_names("u", m_u), *_names("w", m_w)]
    taus = set(float(t) for t in pol.impulse_times)

    def rows():
        events = [(float(s), 1, j) for j, s in enumerate(pol.step_times)]
        events += [(float(s), 0, k) for k, s in enumerate(pol.impulse_times)]
        for s, kind, j in sorted(events):
            if kind == 1:
                side = "+" if s in taus else "."
                for p in range(pol.u.shape[1]):
                    pc = [fmt(v) for v in pol.params[p]] if pol.variant == "aftereffect" else [""] * len(pcols)
                    for node, u in zip(X, pol.u[j, p]):
                        yield [fmt(s), side, *map(fmt, node), *pc, *map(fmt, u), *[""] * m_w]
            else:
                for q in range(pol.w.shape[1]):
                    pc = [fmt(v) for v in pol.params[q]] if pcols else []
                    for node, w in zip(X, pol.w[j, q]):
                        yield [fmt(s), "-", *map(fmt, node), *pc, *[""] * m_u, *map(fmt, w)]

    return _write(path, header, rows())


def write_costate(cp: CostatePath, path) -> Path:
    n = cp.p.shape[1] if cp.p.ndim == 2 else 0
    rows = ([fmt(t), side, *map(fmt, p)] for t, side, p in zip(cp.t, cp.side, cp.p))
    return _write(path, ["s", "side", *_names("p", n)], rows)


def write_extremum(rep: ExtremumReport, path) -> Path:
    """Columns ``s, kind(H|K), c1.., margin``; controls padded to a common width."""
    width = max([len(np.atleast_1d(c)) for _, c, _ in rep.h_rows + rep.k_rows], default=0)

    def rows():
        for kind, rs in (("H", rep.h_rows), ("K", rep.k_rows)):
            for s, c, m in rs:
                c = [fmt(v) for v in np.atleast_1d(c)]
                yield [fmt(s), kind, *c, *[""] * (width - len(c)), fmt(m)]

    return _write(path, ["s", "kind", *_names("c", width), "margin"], rows())


def write_kpath(sol: RiccatiSolution, path) -> Path:
    times, sides, Ks = sol.mesh()
    n = sol.lq.n
    header = ["s", "side", *[f"K_{i + 1}{j + 1}" for i in range(n) for j in range(n)]]
    rows = ([fmt(t), side, *map(fmt, K.ravel())] for t, side, K in zip(times, sides, Ks))
    return _write(path, header, rows)


def write_gains(sol: RiccatiSolution, path) -> Path:
    m_w, n = sol.lq.m_w, sol.lq.n
    header = ["tau_k", *[f"L_{i + 1}{j + 1}" for i in range(m_w) for j in range(n)]]
    rows = ([fmt(t), *map(fmt, np.asarray(L).ravel())] for t, L in zip(sol.lq.times, sol.gains))
    return _write(path, header, rows)


def write_json(obj, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n", encoding="utf-8")
    return path


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"not JSON serializable: {type(v).__name__}")
