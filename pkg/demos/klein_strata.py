"""Hyperbolic space as the interior of a projectively compact region.

The flat projective structure on the plane carries the solution
zeta = delta - x x^T of the metrizability equation.  Its weighted
determinant vanishes on the unit circle; inside, the reconstructed metric
is the Klein model of the hyperbolic plane, outside it is de Sitter-like.

Run:  python demos/klein_strata.py
"""

import numpy as np

from projtractor.chart import model_chart
from projtractor.solver import ExprSolution, solve_space
from projtractor.strata import (
    Grid,
    boundary_restrict,
    compactification_order,
    locate_degeneracy,
    reconstruct_metric,
)

C, (known,) = model_chart("klein_ball", 2)
sol = ExprSolution(C, known.zeta)

# every structure in the flat class is metrizable in six independent ways
print("solution space dimension:", solve_space(C).dim)

rep = locate_degeneracy(C, sol, Grid.of_chart(C, 15))
print("branch:", rep.branch, " strata:", rep.strata_counts())

radii = [np.linalg.norm(lp.x) for lp in rep.hypersurface_points]
print(f"{len(radii)} locus points, radius in [{min(radii):.12f}, {max(radii):.12f}]")

inside = np.array([[0.0, 0.0], [0.4, -0.3], [-0.2, 0.7]])
outside = np.array([[1.3, 0.2], [-0.9, 1.1]])
for label, pts in (("inside", inside), ("outside", outside)):
    md = reconstruct_metric(C, sol, pts, fd=False)
    print(f"{label}: scalar curvature {np.round(md.scalar_curvature, 12)}, S {np.round(md.S, 12)}")

# S keeps its sign across the circle while the scalar curvature flips
print("order of compactification:", compactification_order(C, sol, rep).order)

lp = rep.hypersurface_points[0]
bd = boundary_restrict(C, sol, lp, rep)
print("boundary point", np.round(bd.point, 6), "induced signature", bd.signature)
