import numpy as np
import pytest
from hypothesis import given, strategies as st

from projtractor import expr as ex
from projtractor.bgg import (
    calibration_ratio,
    em_derivative,
    em_derivative_split,
    inverse_identities,
    metrizability_residual_batch,
    prolongation_term,
    split_density,
    split_metrizability,
    theta0_density,
    theta0_metrizability,
)
from projtractor.chart import (
    Upsilon,
    curvature_jets,
    make_chart,
    model_chart,
    projective_change,
    scale_density,
    special_normalize,
)
from projtractor.tractor import Tractor2Sym, apply_connection, connection_matrix, invert, spectral

KLEIN_ZETA = (("1 - x1^2", "-(x1*x2)"), ("-(x1*x2)", "1 - x2^2"))


def flat(n=2):
    return model_chart("flat", n)[0]


def test_split_density_constant():
    Phi = split_density(flat(), "1", [0.3, 0.2])
    assert Phi.tau == 1.0
    assert not np.any(Phi.eta) and not np.any(Phi.phi)


def test_split_density_square():
    Phi = split_density(flat(), "x1^2", [0.5, -0.4])
    assert Phi.tau == 0.25
    np.testing.assert_array_equal(Phi.eta, [0.5, 0.0])
    np.testing.assert_array_equal(Phi.phi, [[1.0, 0.0], [0.0, 0.0]])


def test_split_density_preserved_scale_has_no_middle_slot():
    # the Levi-Civita representative preserves (1 - r^2)^{-3/2} dx, so its
    # weight-2 density is (1 - r^2)^{-1} in that trivialization, i.e. constant
    C, _ = model_chart("klein_ball", 2, {"representative": "levi_civita"})
    for x in ([0.0, 0.0], [0.3, -0.2]):
        f = float(scale_density(C, np.array([x])).value[0])
        r2 = x[0] ** 2 + x[1] ** 2
        assert f ** (2 / 3) * (1 - r2) == pytest.approx(1.0, rel=1e-10)
        Phi = split_density(C, "1", x)
        assert np.abs(Phi.eta).max() == 0.0


def test_split_metrizability_identity():
    H = split_metrizability(flat(), (("1", "0"), ("0", "1")), [0.4, 0.1])
    np.testing.assert_array_equal(H.matrix(), np.diag([1.0, 1.0, 0.0]))


def test_split_metrizability_klein():
    x = np.array([0.3, -0.6])
    H = split_metrizability(flat(), KLEIN_ZETA, x)
    np.testing.assert_allclose(H.zeta, np.eye(2) - np.outer(x, x), atol=1e-15)
    np.testing.assert_allclose(H.lam, x, atol=1e-15)
    assert H.rho == pytest.approx(-1.0, abs=1e-15)


def test_split_metrizability_rank_n_at_origin():
    C, (sol,) = model_chart("rank_n_flat", 2)
    H = split_metrizability(C, sol.zeta, [0.0, 0.0])
    np.testing.assert_allclose(H.matrix(), [[1, 0, 1], [0, 1, 0], [1, 0, 1]], atol=1e-15)


def test_theta0_density_examples():
    assert np.abs(theta0_density(flat(), "1 + x1*x2 - 3*x2^2", [0.2, 0.7])).max() == 0.0
    th = theta0_density(flat(), "x1^3", [0.2, 0.7])
    expected = np.zeros((2, 2, 2))
    expected[0, 0, 0] = 6.0
    np.testing.assert_array_equal(th, expected)


def test_theta0_density_projective_invariance_of_zero():
    # a solution tau of the density equation in the flat scale, carried to a
    # projectively related special connection with psi(0) = 0
    psi = ex.parse("0.2*x1 - 0.1*x2 + 0.15*x1*x2")
    C = projective_change(flat(), Upsilon(tuple(ex.diff(psi, i) for i in (1, 2))))
    tau = ex.mul(ex.Call("exp", ex.scale(2.0, psi)), ex.parse("1 - x1^2 - x2^2"))
    pts = [[0.1, 0.2], [-0.3, 0.4]]
    for x in pts:
        assert np.abs(theta0_density(flat(), "1 - x1^2 - x2^2", x)).max() <= 1e-14
        assert np.abs(theta0_density(C, tau, x)).max() <= 1e-8
    # and a non-solution stays a non-solution
    bad = ex.mul(ex.Call("exp", ex.scale(2.0, psi)), ex.parse("x1^3"))
    assert np.abs(theta0_density(C, bad, pts[0])).max() > 1.0


def test_metrizability_flat_quadratic_solves():
    x = np.random.default_rng(0).uniform(-1, 1, size=(50, 2))
    assert metrizability_residual_batch(flat(), KLEIN_ZETA, x).max() <= 1e-15


def test_metrizability_residual_direct_substitution():
    chi = theta0_metrizability(flat(), (("x2", "0"), ("0", "0")), [0.3, -0.8])
    # d_2 zeta^{11} = 1 and the divergence vanishes, so chi_2^{11} = 1
    assert chi[1, 0, 0] == 1.0
    chi2 = theta0_metrizability(flat(), (("1 + x1^2", "0"), ("0", "1")), [0.3, 0.0])
    assert chi2[0, 0, 0] == pytest.approx(0.2, rel=1e-14)
    assert chi2[1, 0, 1] == pytest.approx(-0.2, rel=1e-14)


def test_metrizability_traces_vanish():
    C, _ = model_chart("perturbed_flat", 3)
    S, _ = special_normalize(C)
    zeta = (("1 + x1", "x2*x3", "0"), ("x2*x3", "exp(x1)", "x3"), ("0", "x3", "2 - x2^2"))
    chi = theta0_metrizability(S, zeta, [0.1, 0.2, 0.3])
    assert np.abs(np.einsum("bab->a", chi)).max() <= 1e-12
    assert np.abs(np.einsum("aab->b", chi)).max() <= 1e-12


def test_klein_levi_civita_metrizes():
    C, (sol,) = model_chart("klein_ball", 2, {"representative": "levi_civita"})
    g = np.linspace(-0.55, 0.55, 20)
    pts = np.array([(a, b) for a in g for b in g])
    assert metrizability_residual_batch(C, sol.zeta, pts).max() <= 1e-9
    assert np.abs(em_derivative_split(C, sol.zeta, pts)).max() <= 1e-9


def test_em_derivative_flat_family_vanishes():
    rng = np.random.default_rng(4)
    for _ in range(3):
        A = rng.normal(size=(3, 3))
        H0 = A + A.T
        z, l, r = H0[:2, :2], H0[:2, 2], H0[2, 2]
        zeta = tuple(
            tuple(f"{float(z[a, b])!r} - ({float(l[b])!r})*x{a + 1} - ({float(l[a])!r})*x{b + 1} + ({float(r)!r})*x{a + 1}*x{b + 1}"
                  for b in range(2))
            for a in range(2)
        )
        pts = rng.uniform(-1, 1, size=(10, 2))
        assert np.abs(em_derivative_split(flat(), zeta, pts)).max() <= 1e-13


def test_em_derivative_top_slot_is_residual():
    C, _ = model_chart("perturbed_flat", 2, {"amplitude": 0.3})
    S, _ = special_normalize(C)
    zeta = (("1 + x1*x2", "x1"), ("x1", "2 + sin(x2)"))
    x = np.array([[0.2, -0.3]])
    em = em_derivative_split(S, zeta, x)[0]
    chi = theta0_metrizability(S, zeta, x[0])
    np.testing.assert_allclose(em[:, :2, :2], chi, atol=1e-12)


def test_em_derivative_expression_field():
    H = Tractor2Sym(KLEIN_ZETA, ["x1", "x2"], "-1")
    out = em_derivative(flat(), H, [0.2, 0.5])
    assert out.shape == (2, 3, 3)
    assert np.abs(out).max() == 0.0
    assert isinstance(em_derivative(flat(), H, [0.2, 0.5], c=1), Tractor2Sym)


def test_inverse_identities_constant():
    H = Tractor2Sym(np.eye(2), np.zeros(2), -1.0)
    for r in inverse_identities(flat(), H, [0.1, 0.1]):
        assert np.abs(r).max() == 0.0


def test_inverse_identities_klein_grid():
    H = Tractor2Sym(KLEIN_ZETA, ["x1", "x2"], "-1")
    for x in np.random.default_rng(5).uniform(-1.4, 1.4, size=(15, 2)):
        for r in inverse_identities(flat(), H, x):
            assert np.abs(r).max() <= 1e-9


def test_inverse_identities_generic_field():
    C, _ = model_chart("perturbed_flat", 2, {"amplitude": 0.3})
    S, _ = special_normalize(C)
    H = Tractor2Sym([["2 + x1", "x2"], ["x2", "1 + x1^2"]], ["sin(x1)", "0.3"], "-1 + x1*x2")
    for r in inverse_identities(S, H, [0.2, 0.4]):
        assert np.abs(r).max() <= 1e-12


def test_tau_gradient_on_locus():
    # tau = -(1 - r^2) from the inverse of the Klein solution vanishes on the
    # unit circle, where d tau = 2 eta
    H = Tractor2Sym(KLEIN_ZETA, ["x1", "x2"], "-1")
    for t in np.linspace(0, 2 * np.pi, 7):
        x = np.array([np.cos(t), np.sin(t)]) * (1 + 1e-9)
        Phi = invert(Tractor2Sym.from_matrix(
            np.block([[np.eye(2) - np.outer(x, x), x[:, None]], [x[None, :], -np.ones((1, 1))]])))
        h = 1e-5

        def tau(p):
            M = np.block([[np.eye(2) - np.outer(p, p), p[:, None]], [p[None, :], -np.ones((1, 1))]])
            return invert(Tractor2Sym.from_matrix(M)).tau

        grad = np.array([(tau(x + h * e) - tau(x - h * e)) / (2 * h) for e in np.eye(2)])
        assert abs(Phi.tau) < 1e-8
        np.testing.assert_allclose(grad, 2 * Phi.eta, atol=1e-7)


def test_normality_detector():
    C, _ = model_chart("klein_ball", 2, {"representative": "levi_civita"})
    tau = "1 + x1*x2^2 + sin(x2)"
    x0 = np.array([0.15, -0.2])
    h = 1e-3
    n = 2

    def Phi(x):
        return split_density(C, tau, x).matrix()

    d = np.array([
        (-Phi(x0 + 2 * h * e) + 8 * Phi(x0 + h * e) - 8 * Phi(x0 - h * e) + Phi(x0 - 2 * h * e)) / (12 * h)
        for e in np.eye(n)
    ])
    cj = curvature_jets(C, x0[None], 1)
    A = connection_matrix(cj.G, cj.P).value[0]
    nab = d + apply_connection("cosym", A, Phi(x0))
    assert np.abs(nab[:, :n, n]).max() <= 1e-9
    assert np.abs(nab[:, n, n]).max() <= 1e-9
    assert np.abs(nab[:, :n, :n]).max() > 1e-2


def test_scalar_invariant_under_scale_change():
    C, (sol,) = model_chart("klein_ball", 2)
    psi = ex.parse("0.2*x1 - 0.25*x2 + 0.1*x1*x2 - 0.05*x2^2")
    C2 = projective_change(C, Upsilon(tuple(ex.diff(psi, i) for i in (1, 2))))
    factor = ex.Call("exp", ex.scale(-2.0, psi))
    zeta2 = tuple(tuple(ex.mul(factor, sol.zeta[a][b]) for b in range(2)) for a in range(2))
    pts = np.random.default_rng(8).uniform(-1.2, 1.2, size=(12, 2))
    for x in pts:
        S1 = float(scale_density(C, x[None]).value[0]) ** 2 * spectral(split_metrizability(C, sol.zeta, x)).det
        S2 = float(scale_density(C2, x[None]).value[0]) ** 2 * spectral(split_metrizability(C2, zeta2, x)).det
        assert S2 == pytest.approx(S1, rel=1e-8)
        assert S1 == pytest.approx(-6.0, rel=1e-12)


@given(st.floats(-0.9, 0.9), st.floats(-0.9, 0.9))
def test_calibration_ratio_klein(a, b):
    if a * a + b * b > 0.8:
        return
    H = split_metrizability(flat(), KLEIN_ZETA, [a, b])
    assert calibration_ratio(H) == pytest.approx(1.0 / 3.0, rel=1e-10)


def test_calibration_ratio_three_dimensions():
    C, (sol,) = model_chart("gnomonic_sphere", 3)
    H = split_metrizability(C, sol.zeta, [0.2, -0.1, 0.4])
    assert calibration_ratio(H) == pytest.approx(0.25, rel=1e-10)


def _diagonal_metric_chart(diag, half=0.5):
    """Levi-Civita connection of g = diag(...) and zeta = g^{-1}."""
    n = len(diag)
    g = [ex.parse(d, n) for d in diag]
    entries = {}
    for a in range(n):
        for b in range(n):
            for c in range(b, n):
                t = ex.ZERO
                if a == c:
                    t = ex.add(t, ex.diff(g[a], b + 1))
                if a == b:
                    t = ex.add(t, ex.diff(g[a], c + 1))
                if b == c:
                    t = ex.sub(t, ex.diff(g[b], a + 1))
                if not ex.is_zero(t):
                    entries[(a, b, c)] = ex.div(ex.scale(0.5, t), g[a])
    C = make_chart(n, [(-half, half)] * n, entries, name="metric")
    zeta = tuple(tuple(ex.div(ex.ONE, g[a]) if a == b else ex.ZERO for b in range(n)) for a in range(n))
    return C, zeta


@pytest.mark.parametrize("diag", [
    ("1 + x1^2 + 0.5*x2^2", "2 + x1*x2 + 0.3*x1^3"),
    ("1 + x2^2", "1 + 0.5*x1^2 + x3^2", "2 + x1*x2 + 0.4*x3"),
])
def test_prolongation_sign_on_curved_metric(diag):
    C, zeta = _diagonal_metric_chart(diag)
    n = C.n
    pts = np.random.default_rng(n).uniform(-0.4, 0.4, size=(8, n))
    assert metrizability_residual_batch(C, zeta, pts).max() <= 1e-12
    em = em_derivative_split(C, zeta, pts)
    assert np.abs(em).max() <= 1e-9
    # the curvature correction is far from negligible, so its sign is pinned
    cj = curvature_jets(C, pts, 2)
    M = np.array([split_metrizability(C, zeta, x).matrix() for x in pts])
    assert np.abs(prolongation_term(cj.W.value, cj.Y.value, M)).max() > 1e-2
