"""Grid HJB against the Riccati solution under grid and time-step refinement.

For the scalar LQ scenario, reports the interior relative discrepancy
max |V - xi^2 K(s)| / (1 + xi^2 K(s)) and the solve time per resolution.
"""

import time

from hybridctl.crossval import compare_grid_riccati
from hybridctl.grid import Grid
from hybridctl.hjb import solve_basic
from hybridctl.riccati import solve_impulsive_riccati
from hybridctl.scenario import load_scenario

from _common import SCENARIOS, parser, write_table


def main():
    p = parser(__doc__.splitlines()[0], "out/lq_crossval.csv")
    p.add_argument("--nodes", type=int, nargs="+", default=[51, 101, 201, 401])
    p.add_argument("--dts", type=float, nargs="+", default=[1e-2, 3e-3, 1e-3])
    args = p.parse_args()
    sc = load_scenario(SCENARIOS / "lq_scalar.json")
    prob = sc.problem()
    sol = solve_impulsive_riccati(sc.lq, h=1e-3)
    rows = []
    for nodes in args.nodes:
        for dt in args.dts:
            t0 = time.perf_counter()
            vf, _ = solve_basic(prob, Grid(sc.grid.lo, sc.grid.hi, [nodes], dt))
            secs = time.perf_counter() - t0
            res = compare_grid_riccati(vf, sol)
            rows.append([str(nodes), dt, res["max_rel_error"], res["at_s"], res["at_xi"][0], secs])
            print(f"nodes={nodes:4d} dt={dt:<6g} max_rel={res['max_rel_error']:.4g} ({secs:.2f}s)")
    write_table(args.out, ["nodes", "dt", "max_rel_error", "at_s", "at_xi", "solve_s"], rows)


if __name__ == "__main__":
    main()
