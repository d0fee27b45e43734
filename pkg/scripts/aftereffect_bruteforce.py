"""Aftereffect DP value against exhaustive enumeration.

Enumerates every impulse-control sequence crossed with per-segment constant
continuous controls, for both initial "previous" controls b0 and a few
starting states.  The scenario's step (one step per inter-impulse interval,
velocities moving by whole cells) keeps every foot on a node, so the DP is
exact there.  A second pass with dt = 0.01 puts feet between nodes; the
interpolation error then accumulates over many steps and V lands above the
enumerated optimum.
"""

import dataclasses
import itertools

import numpy as np

from hybridctl.controls import TableControl
from hybridctl.grid import Grid
from hybridctl.hjb import solve_aftereffect
from hybridctl.scenario import load_scenario
from hybridctl.sim import evaluate_cost, integrate

from _common import SCENARIOS, parser, write_table


def enumerate_best(prob, xi, h=0.01):
    breaks = [0.0, *prob.times]
    best = np.inf
    for ws in itertools.product(prob.W.sample()[:, 0], repeat=len(prob.times)):
        w = TableControl(list(prob.times), [[v] for v in ws])
        for us in itertools.product(prob.U.sample()[:, 0], repeat=len(breaks)):
            traj = integrate(prob, TableControl(breaks, [[v] for v in us]), w, 0.0, xi, h=h)
            best = min(best, evaluate_cost(traj, prob).total)
    return best


def main():
    p = parser(__doc__.splitlines()[0], "out/aftereffect_bruteforce.csv")
    p.add_argument("--xi", type=float, nargs="+", default=[-0.5, 0.0, 0.5, 1.0])
    args = p.parse_args()
    sc = load_scenario(SCENARIOS / "aftereffect.json")
    rows = []
    for b0 in (0.0, 1.0):
        system = dataclasses.replace(sc.system, b0=(b0,))
        prob = dataclasses.replace(sc, system=system).problem()
        for dt in (sc.grid.dt, 0.01):
            vf, _ = solve_aftereffect(prob, Grid(sc.grid.lo, sc.grid.hi, sc.grid.nodes, dt))
            for xi in args.xi:
                V = vf.value(0.0, [xi])
                J = enumerate_best(prob, [xi])
                rel = abs(V - J) / max(abs(J), 1e-12)
                rows.append([b0, dt, xi, V, J, rel])
                print(f"b0={b0:g} dt={dt:<5g} xi={xi:<5g} V={V:.6g} J={J:.6g} rel={rel:.3g}")
    write_table(args.out, ["b0", "dt", "xi", "V_dp", "J_enum", "rel_diff"], rows)


if __name__ == "__main__":
    main()
