"""Generic projective structures are not metrizable.

A small random polynomial perturbation of the flat connection already has
holonomy that fixes no symmetric 2-tractor.  The singular values of the
stacked (Hol - Id) matrices show the clean gap the solver relies on.

Run:  python demos/generic_holonomy.py
"""

import numpy as np

from projtractor.chart import model_chart
from projtractor.solver import ensure_special, holonomy, lasso_rectangle, solve_space

C, _ = model_chart("perturbed_flat", 2, {"amplitude": 0.1, "seed": 1})
C = ensure_special(C)

for side in (0.2, 0.5, 0.8):
    hol = holonomy(C, C.center, lasso_rectangle(C.center, 0, 1, side / 2, side / 2))
    print(f"square of side {side}: |Hol - Id| = {np.linalg.norm(hol - np.eye(6)):.3e}")

sb = solve_space(C)
print("dim =", sb.dim)
print("singular values:", np.array2string(sb.singular_values, precision=3))
print(f"noise floor {sb.noise_floor:.1e}, tolerance sweep {sb.sweep}")

flat, _ = model_chart("flat", 2)
print("flat comparison: dim =", solve_space(flat).dim)
