"""Control signals fed to the simulator.

A signal is called as ``signal(t, x, **ctx)`` and returns a control vector.
The simulator passes context keywords: ``segment`` (number of impulses
already applied), ``a`` (left limit of the continuous control, at impulse
times) and ``b`` (the previous impulse control).  Signals ignore what they
do not need.

``hold`` decides how the simulator samples a signal: held signals are read
once at the start of each integrator step (zero-order hold); the others are
evaluated at every Runge-Kutta stage.
"""

from __future__ import annotations

from typing import Callable

import numpy as np


class ControlSignal:
    hold = True

    def __call__(self, t: float, x: np.ndarray, **ctx) -> np.ndarray:
        raise NotImplementedError


class ConstantControl(ControlSignal):
    def __init__(self, value):
        self.value = np.atleast_1d(np.asarray(value, dtype=float))

    def __call__(self, t, x, **ctx):
        return self.value

    def __repr__(self):
        return f"ConstantControl({self.value.tolist()})"


class TableControl(ControlSignal):
    """Piecewise-constant: ``values[i]`` on ``[times[i], times[i+1])``."""

    def __init__(self, times, values):
        self.times = np.asarray(times, dtype=float)
        self.values = np.atleast_2d(np.asarray(values, dtype=float))
        if self.values.shape[0] != self.times.size:
            self.values = self.values.T
        if self.values.shape[0] != self.times.size:
            raise ValueError("table needs one control vector per mesh time")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("table mesh must be strictly increasing")

    def __call__(self, t, x, **ctx):
        # tolerance keeps mesh-aligned steps on the intended entry
        i = np.searchsorted(self.times, t + 1e-12, side="right") - 1
        return self.values[max(i, 0)]


class FeedbackControl(ControlSignal):
    """Wraps ``fn(t, x, **ctx)``; continuous (per-stage) unless ``hold``."""

    def __init__(self, fn: Callable, hold: bool = False):
        self.fn = fn
        self.hold = hold

    def __call__(self, t, x, **ctx):
        return np.atleast_1d(np.asarray(self.fn(t, x, **ctx), dtype=float))
