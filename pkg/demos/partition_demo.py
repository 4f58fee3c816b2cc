"""Compare the sharp partition with the wetted (gray-phase) partition over a sweep of areas."""

import numpy as np

from triplewell.junction import tensions_from_t
from triplewell.partitions import compare_partitions, three_arcs

deltas = np.geomspace(1e-4, 1e-2, 7)
for t in [(1.0, 1.0, 1.0), (1.0, 1.5, 2.0)]:
    table = compare_partitions(three_arcs(), tensions_from_t(*t), deltas)
    print(f"tensions {t}: fitted exponent {table.exponent:.4f}, "
          f"max gap/sqrt(delta) {table.gamma:.4f}, curvature defect {table.curvature_defect:.1e}")
    for d, m0, md, gap, ratio in table.rows:
        print(f"  delta {d:.2e}  m0 {m0:.6f}  m0(delta) {md:.6f}  gap {gap:.3e}")
