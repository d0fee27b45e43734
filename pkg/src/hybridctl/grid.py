"""Tensor state grids, multilinear interpolation, impulse-aligned time meshes."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

# foot points within this many cell widths of a node are read at the node
SNAP = 1e-9


def split_steps(a: float, b: float, h: float) -> tuple[int, float]:
    """Number of steps and step size covering ``[a, b]`` with steps <= ``h``."""
    length = b - a
    if length <= 0:
        return 0, 0.0
    n = max(1, math.ceil(length / h - 1e-9))
    return n, length / n


def segment_mesh(a: float, b: float, h: float) -> np.ndarray:
    n, dt = split_steps(a, b, h)
    mesh = a + dt * np.arange(n + 1)
    mesh[-1] = b
    return mesh


@dataclass(frozen=True)
class Grid:
    lo: tuple
    hi: tuple
    nodes: tuple
    dt: float = 1e-2
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "lo", tuple(float(v) for v in np.atleast_1d(self.lo)))
        object.__setattr__(self, "hi", tuple(float(v) for v in np.atleast_1d(self.hi)))
        object.__setattr__(self, "nodes", tuple(int(v) for v in np.atleast_1d(self.nodes)))
        errors = []
        if not (len(self.lo) == len(self.hi) == len(self.nodes)):
            errors.append("grid lo/hi/nodes lengths differ")
        if any(n < 2 for n in self.nodes):
            errors.append("grid node counts must be >= 2")
        if any(lo >= hi for lo, hi in zip(self.lo, self.hi)):
            errors.append("grid bounds need lo < hi")
        if not self.dt > 0:
            errors.append("grid time step must be positive")
        if errors:
            raise ValueError("; ".join(errors))

    @property
    def dim(self) -> int:
        return len(self.nodes)

    @property
    def shape(self) -> tuple:
        return self.nodes

    @property
    def spacing(self) -> np.ndarray:
        return (np.array(self.hi) - np.array(self.lo)) / (np.array(self.nodes) - 1)

    @property
    def axes(self) -> list[np.ndarray]:
        return [np.linspace(lo, hi, n) for lo, hi, n in zip(self.lo, self.hi, self.nodes)]

    @property
    def points(self) -> np.ndarray:
        """All nodes, shape (N, dim), C order."""
        if "points" not in self._cache:
            mesh = np.meshgrid(*self.axes, indexing="ij")
            self._cache["points"] = np.stack([m.ravel() for m in mesh], axis=-1)
        return self._cache["points"]

    def contains(self, x, tol: float = 1e-9) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= np.array(self.lo) - tol) and np.all(x <= np.array(self.hi) + tol))

    def interpolate(self, values: np.ndarray, q) -> tuple[np.ndarray, int]:
        """Multilinear interpolation of a node array at points ``q`` (..., dim).

        Points outside the box are clamped to it.  Returns the interpolated
        values and the number of clamped points.
        """
        q = np.asarray(q, dtype=float)
        lo = np.array(self.lo)
        nn = np.array(self.nodes)
        r = (q - lo) / self.spacing
        outside = np.any((r < -SNAP) | (r > nn - 1 + SNAP), axis=-1)
        r = np.clip(r, 0, nn - 1)
        rr = np.rint(r)
        r = np.where(np.abs(r - rr) <= SNAP, rr, r)
        i = np.minimum(np.floor(r).astype(np.intp), nn - 2)
        th = r - i
        out = np.zeros(q.shape[:-1])
        for corner in itertools.product((0, 1), repeat=self.dim):
            w = np.ones(q.shape[:-1])
            idx = []
            for k, c in enumerate(corner):
                w = w * (th[..., k] if c else 1.0 - th[..., k])
                idx.append(i[..., k] + c)
            out = out + w * values[tuple(idx)]
        return out, int(np.count_nonzero(outside))

    def nearest_index(self, x) -> tuple:
        x = np.asarray(x, dtype=float)
        r = np.rint((x - np.array(self.lo)) / self.spacing).astype(int)
        return tuple(np.clip(r, 0, np.array(self.nodes) - 1))
