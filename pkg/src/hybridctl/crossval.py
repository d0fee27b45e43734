"""Grid value function against the Riccati quadratic form."""

from __future__ import annotations

import numpy as np

from .hjb import ValueFunction
from .riccati import RiccatiSolution


def interior_mask(grid, fraction: float = 0.6) -> np.ndarray:
    """Nodes inside the central ``fraction`` of every axis (flattened, C order)."""
    X = grid.points
    lo, hi = np.array(grid.lo), np.array(grid.hi)
    mid, half = (lo + hi) / 2, fraction * (hi - lo) / 2
    return np.all(np.abs(X - mid) <= half + 1e-12, axis=1)


def compare_grid_riccati(vf: ValueFunction, sol: RiccatiSolution, fraction: float = 0.6) -> dict:
    """Max over slices and interior nodes of |V - x'Kx| / (1 + |x'Kx|)."""
    X = vf.grid.points
    mask = interior_mask(vf.grid, fraction)
    Xi = X[mask]
    worst, where = -1.0, None
    for i, (s, side) in enumerate(zip(vf.times, vf.sides)):
        K = sol.K(float(s), "-" if side == "-" else "+")
        ref = np.einsum("ni,ij,nj->n", Xi, K, Xi)
        err = np.abs(vf.values[i, 0].ravel()[mask] - ref) / (1 + np.abs(ref))
        j = int(np.argmax(err))
        if err[j] > worst:
            worst, where = float(err[j]), (float(s), side, Xi[j].tolist())
    return {"max_rel_error": worst, "at_s": where[0], "at_side": where[1], "at_xi": where[2],
            "interior_fraction": fraction, "slices": len(vf.times), "nodes": int(mask.sum())}
