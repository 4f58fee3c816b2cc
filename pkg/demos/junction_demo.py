"""Relax a triple-junction field on the unit disc and run the blowdown diagnostics.

Run with ``python demos/junction_demo.py [grid] [R]`` (defaults 128 and 16).
"""

import sys

from triplewell import diagnostics as D
from triplewell.junction import tensions_from_t
from triplewell.partitions import solve_problem1, three_arcs
from triplewell.potential import symmetric_well
from triplewell.solver import disc_spec, energy, network_field, relax
from triplewell.geodesics import pairwise_costs


def main(n=128, R=16.0):
    pot = symmetric_well()
    costs = tuple(pairwise_costs(pot))
    print("pairwise costs c12, c13, c23:", ", ".join(f"{c:.6f}" for c in costs))

    bdata = three_arcs()
    net = solve_problem1(bdata, tensions_from_t(*[c / 2 for c in costs]))
    print(f"sharp-interface minimum m0 = {net.cost:.6f} ({net.topology})")

    field = network_field(net, bdata, pot, R, disc_spec(n))
    print(f"initial energy / R = {energy(field, pot, R):.6f}")
    field = relax(field, pot, R, tol=1e-7)
    print(f"relaxed energy / R = {energy(field, pot, R):.6f}")

    rep = D.classify_blowdown(field, pot, [0.25, 0.5, 0.9], costs, R=R)
    print(rep.summary())
    print(f"Pohozaev residual at r = 1/2: {D.pohozaev_residual(field, pot, 0.5, R=R):.4e}")


if __name__ == "__main__":
    args = sys.argv[1:]
    main(int(args[0]) if args else 128, float(args[1]) if len(args) > 1 else 16.0)
