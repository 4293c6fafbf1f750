"""A degenerate solution: rank-n L(zeta) and a totally geodesic boundary.

On the flat plane, L(zeta) with constant value [[1,0,1],[0,1,0],[1,0,1]]
has rank 2.  The canonical density sigma = x1 - 1 cuts the plane along a
straight line, both halves carry scalar-flat metrics, and the line is a
totally geodesic order-1 boundary.

Run:  python demos/rank_n_boundary.py
"""

import numpy as np

from projtractor.chart import model_chart
from projtractor.solver import ExprSolution
from projtractor.strata import (
    Grid,
    boundary_restrict,
    compactification_order,
    locate_degeneracy,
    reconstruct_metric,
    totally_geodesic_check,
)

C, (known,) = model_chart("rank_n_flat", 2)
sol = ExprSolution(C, known.zeta)
rep = locate_degeneracy(C, sol, Grid.of_chart(C, 11))
print("branch:", rep.branch, " strata:", rep.strata_counts())

xs = np.array([lp.x for lp in rep.hypersurface_points])
print("locus x1 values:", np.unique(np.round(xs[:, 0], 12)))

pts = np.array([[0.0, 0.5], [1.6, -1.2]])
md = reconstruct_metric(C, sol, pts, fd=False)
print("scalar curvature off the locus:", md.scalar_curvature)

gc = totally_geodesic_check(C, sol, rep)
print(f"geodesics tangent to the locus stay on it: deviation {gc.deviation:.2e}")
print("order of compactification:", compactification_order(C, sol, rep).order)

lp = min(rep.hypersurface_points, key=lambda q: abs(q.x[1]))
bd = boundary_restrict(C, sol, lp, rep)
print(f"at {np.round(bd.point, 6)}: induced zeta {bd.zeta_hat[0, 0]:.6f}, {bd.label}")
