import numpy as np
import pytest

from projtractor.bgg import _chi_from, covariant_zeta, split_metrizability, theta0_metrizability
from projtractor.chart import curvature_jets, model_chart
from projtractor.solver import (
    CurvePath,
    ExprSolution,
    ParallelSolution,
    SolverConfig,
    TransportError,
    consistency_check,
    ensure_special,
    evaluate_solution,
    holonomy,
    lasso_rectangle,
    solve_space,
    sym_basis,
    sym_to_vec,
    transport,
    vec_to_sym,
    verification_grid,
)
from projtractor.tractor import Tractor2Sym

RANK_N_H0 = np.array([[1.0, 0, 1], [0, 1, 0], [1, 0, 1]])


@pytest.fixture(scope="module")
def klein_lc():
    C, (sol,) = model_chart("klein_ball", 2, {"representative": "levi_civita"})
    return C, sol, solve_space(C)


def test_sym_basis_orthonormal():
    for n in (2, 3):
        E = sym_basis(n)
        gram = np.einsum("kij,lij->kl", E, E)
        np.testing.assert_allclose(gram, np.eye(len(E)), atol=1e-15)
        M = np.random.default_rng(n).normal(size=(n + 1, n + 1))
        M = M + M.T
        np.testing.assert_allclose(vec_to_sym(sym_to_vec(M), n), M, atol=1e-14)


def test_flat_transport_constant():
    flat, _ = model_chart("flat", 2)
    H1 = transport(flat, Tractor2Sym(np.eye(2), np.zeros(2), 0.0), CurvePath.straight([0, 0], [1, 0]))
    np.testing.assert_allclose(H1.matrix(), np.diag([1.0, 1.0, 0.0]), atol=1e-15)


def test_flat_transport_closed_form():
    flat, _ = model_chart("flat", 2, {"domain": [(-2, 2), (-2, 2)]})
    x = np.array([0.7, -1.3])
    H = transport(flat, Tractor2Sym.from_matrix(RANK_N_H0), CurvePath(np.array([[0, 0], [0.7, 0.4], x])))
    x1, x2 = x
    np.testing.assert_allclose(H.zeta, [[(1 - x1) ** 2, x2 * (x1 - 1)], [x2 * (x1 - 1), 1 + x2**2]], atol=1e-12)


def test_reversibility_on_curved_chart():
    C = ensure_special(model_chart("perturbed_flat", 2)[0])
    path = CurvePath(np.array([[-0.5, -0.5], [0.4, -0.2], [0.6, 0.7]]))
    H0 = Tractor2Sym.from_matrix(RANK_N_H0)
    back = transport(C, transport(C, H0, path), path.reversed())
    np.testing.assert_allclose(back.matrix(), RANK_N_H0, atol=1e-9)


def test_flat_holonomy_identity():
    flat, _ = model_chart("flat", 2)
    hol = holonomy(flat, [0, 0], lasso_rectangle([0, 0], 0, 1, 0.5, 0.5))
    np.testing.assert_allclose(hol, np.eye(6), atol=1e-9)


def test_perturbed_holonomy_nontrivial_and_group_property():
    C = ensure_special(model_chart("perturbed_flat", 2, {"amplitude": 0.1, "seed": 1})[0])
    loop = lasso_rectangle([0, 0], 0, 1, 0.25, 0.25)  # side 0.5
    hol = holonomy(C, [0, 0], loop)
    assert np.linalg.norm(hol - np.eye(6)) > 1e-4
    twice = holonomy(C, [0, 0], loop.then(loop))
    np.testing.assert_allclose(twice, hol @ hol, atol=1e-8)


def test_holonomy_requires_closed_loop():
    flat, _ = model_chart("flat", 2)
    with pytest.raises(ValueError):
        holonomy(flat, [0, 0], CurvePath.straight([0, 0], [0.5, 0]))


def test_transport_leaving_domain():
    flat, _ = model_chart("flat", 2)
    with pytest.raises(TransportError):
        transport(flat, Tractor2Sym.from_matrix(np.eye(3)), CurvePath.straight([0, 0], [1.5, 0]))


@pytest.mark.parametrize("n, dim", [(2, 6), (3, 10)])
def test_flat_dimension(n, dim):
    assert solve_space(model_chart("flat", n)[0]).dim == dim


def test_klein_levi_civita_dimension(klein_lc):
    sb = klein_lc[2]
    assert sb.dim == 6
    assert sb.residual_score <= 1e-6


@pytest.mark.parametrize("seed", [1, 2, 3, 4, 5])
def test_generic_perturbation_not_metrizable(seed):
    sb = solve_space(model_chart("perturbed_flat", 2, {"amplitude": 0.1, "seed": seed})[0])
    assert sb.dim == 0
    assert sb.basis == []


def test_basis_solves_metrizability(klein_lc):
    C, _, sb = klein_lc
    grid = verification_grid(C, 5)
    for k in range(sb.dim):
        sol = sb.solution(k)
        Z = sol.zeta_jet(grid, 1)
        chi = _chi_from(covariant_zeta(curvature_jets(C, grid, 1).G, Z).value, 2)
        assert np.abs(chi).max() <= 1e-7


def test_evaluate_solution_flat_elements():
    flat, _ = model_chart("flat", 2)
    ident = ParallelSolution(flat, [0, 0], np.diag([1.0, 1.0, 0.0]))
    _, zeta = evaluate_solution(flat, ident, [0.4, -0.7])
    np.testing.assert_allclose(zeta, np.eye(2), atol=1e-15)
    klein = ParallelSolution(flat, [0, 0], np.diag([1.0, 1.0, -1.0]))
    x = np.array([0.4, -0.7])
    H, zeta = evaluate_solution(flat, klein, x)
    np.testing.assert_allclose(zeta, np.eye(2) - np.outer(x, x), atol=1e-14)
    np.testing.assert_allclose(H.lam, x, atol=1e-14)


def test_consistency_check():
    C, (sol,) = model_chart("klein_ball", 2, {"representative": "levi_civita"})
    H0 = split_metrizability(C, sol.zeta, C.center)
    ps = ParallelSolution(C, C.center, H0)
    pts = np.random.default_rng(9).uniform(-0.4, 0.4, size=(10, 2))
    assert consistency_check(ps, pts) <= 1e-6
    # and the transported field matches the closed form
    np.testing.assert_allclose(ps.matrices(pts), ExprSolution(C, sol.zeta).matrices(pts), atol=1e-9)


def test_path_independence(klein_lc):
    C, sol, sb = klein_lc
    H0 = split_metrizability(C, sol.zeta, sb.base_point).matrix()
    coeffs = [np.sum(H0 * B.matrix()) for B in sb.basis]
    np.testing.assert_allclose(sum(c * B.matrix() for c, B in zip(coeffs, sb.basis)), H0, atol=1e-9)
    target = np.array([0.45, -0.35])
    paths = [
        CurvePath.straight([0, 0], target),
        CurvePath(np.array([[0, 0], [0.45, 0], target])),
        CurvePath(np.array([[0, 0], [-0.3, -0.5], [0.2, -0.55], target])),
    ]
    ends = [transport(C, Tractor2Sym.from_matrix(H0), p).matrix() for p in paths]
    for e in ends[1:]:
        np.testing.assert_allclose(e, ends[0], atol=1e-8)


def test_dimension_bound_and_sweep():
    C, _ = model_chart("gnomonic_sphere", 2, {"representative": "levi_civita"})
    sb = solve_space(C, config=SolverConfig(seed=4))
    assert sb.dim == 6 <= 6
    assert set(sb.sweep.values()) == {6}
    assert sb.curvature_kernel_dim == 6


def test_solution_space_in_three_dimensions():
    C, (sol,) = model_chart("klein_ball", 3)
    sb = solve_space(C)
    assert sb.dim == 10
    x = np.array([0.3, 0.2, -0.5])
    H0 = split_metrizability(C, sol.zeta, sb.base_point).matrix()
    M = ParallelSolution(C, sb.base_point, H0).matrices(x[None])[0]
    assert np.abs(theta0_metrizability(C, [[str(float(v)) for v in row] for row in M[:3, :3]], x)).max() == 0.0
    np.testing.assert_allclose(M[:3, :3], np.eye(3) - np.outer(x, x), atol=1e-12)
