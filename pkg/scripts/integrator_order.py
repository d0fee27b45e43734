"""Observed order of the RK4 integrator on dx/dt = x, x(0) = 1, T = 1."""

import numpy as np

from hybridctl.controls import ConstantControl
from hybridctl.model import ControlSet, HybridSystem, validate_system
from hybridctl.sim import integrate

from _common import parser, write_table


def main():
    p = parser(__doc__, "out/integrator_order.csv")
    p.add_argument("--hs", type=float, nargs="+", default=[0.1, 0.05, 0.02, 0.01, 0.005, 0.0025])
    args = p.parse_args()
    prob = validate_system(HybridSystem(n=1, f=("x1",), U=ControlSet.finite([[0.0]]), T=1.0))
    zero = ConstantControl([0.0])
    rows, prev = [], None
    for h in args.hs:
        err = abs(integrate(prob, zero, zero, 0.0, [1.0], h=h).x[-1, 0] - np.e)
        order = np.log(prev[1] / err) / np.log(prev[0] / h) if prev else float("nan")
        rows.append([h, err, order])
        print(f"h={h:<7g} err={err:.3e} order={order:.3f}")
        prev = (h, err)
    write_table(args.out, ["h", "abs_error", "observed_order"], rows)


if __name__ == "__main__":
    main()
