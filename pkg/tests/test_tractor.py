import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from projtractor.chart import curvature_jets, model_chart, special_normalize
from projtractor.tractor import (
    CoTractorVec,
    RankError,
    SingularError,
    Tractor2Sym,
    TractorVec,
    apply_connection,
    connection_matrix,
    det_weighted,
    invert,
    signed_adjugate,
    spectral,
    thomas_D,
    tractor_connect,
    tractor_curvature_act,
)


def _klein_field():
    # L(zeta) for zeta = delta - x x^T on the flat representative
    return Tractor2Sym(
        [["1 - x1^2", "-(x1*x2)"], ["-(x1*x2)", "1 - x2^2"]], ["x1", "x2"], "-1"
    )


def test_klein_solution_is_parallel():
    C, _ = model_chart("klein_ball", 2)
    for x in ([0.0, 0.0], [0.3, -0.7], [1.2, 0.4]):
        for D in tractor_connect(C, _klein_field(), x):
            assert np.abs(D.matrix()).max() < 1e-14


def test_thomas_D_example():
    C, _ = model_chart("flat", 2)
    D = thomas_D(C, "1 - x1", 1.0, [0.25, 0.5])
    assert D.xi == 0.75
    np.testing.assert_array_equal(D.mu, [-1.0, 0.0])


def _curved():
    C, _ = model_chart("perturbed_flat", 2, {"amplitude": 0.4, "seed": 3})
    return special_normalize(C)[0]


def test_curvature_action_matches_commutator():
    C = _curved()
    H = Tractor2Sym([["1 + x1*x2", "x2"], ["x2", "2 - x1^2"]], ["sin(x1)", "x1*x2"], "1 + x2")
    x0 = np.array([0.2, -0.1])
    h = 1e-4
    n = 2

    def N(x):
        return np.array([D.matrix() for D in tractor_connect(C, H, x)])

    dN = np.empty((n, n, 3, 3))  # dN[a, b] = d_a N_b
    for a in range(n):
        e = np.eye(n)[a] * h
        dN[a] = (-N(x0 + 2 * e) + 8 * N(x0 + e) - 8 * N(x0 - e) + N(x0 - 2 * e)) / (12 * h)
    cj = curvature_jets(C, x0[None], 1)
    A = connection_matrix(cj.G, cj.P).value[0]
    N0 = N(x0)
    comm = np.empty((n, n, 3, 3))
    for a in range(n):
        for b in range(n):
            comm[a, b] = (
                dN[a, b] - dN[b, a]
                + apply_connection("sym", A, N0[b])[a]
                - apply_connection("sym", A, N0[a])[b]
            )
    act = tractor_curvature_act(C, H, x0)
    ref = np.array([[Tractor2Sym(act.zeta[a, b], act.lam[a, b], act.rho[a, b]).matrix() for b in range(n)]
                    for a in range(n)])
    assert np.abs(ref).max() > 1e-3
    np.testing.assert_allclose(comm, ref, atol=1e-6)


def test_det_weighted_examples():
    assert det_weighted(np.eye(2)) == 2.0
    assert det_weighted(np.eye(3)) == 6.0
    x = np.array([0.3, 0.4])
    z = np.eye(2) - np.outer(x, x)
    assert det_weighted(z) == pytest.approx(2 * (1 - 0.25), rel=1e-15)


def test_spectral_example():
    sp = spectral(np.diag([1.0, 1.0, -1.0]))
    assert sp.det == -6.0
    assert sp.signature == (2, 1, 0)
    assert sp.rank == 3
    np.testing.assert_array_equal(sp.eigenvalues, [1.0, 1.0, -1.0])


def test_rank_n_spectrum():
    M = np.array([[1.0, 0, 1], [0, 1, 0], [1, 0, 1]])
    sp = spectral(M)
    assert sp.signature == (2, 0, 1)
    np.testing.assert_allclose(sp.eigenvalues, [2, 1, 0], atol=1e-15)
    assert sp.det == 0.0


def test_invert_identity_and_klein():
    Phi = invert(Tractor2Sym.from_matrix(np.eye(3)))
    np.testing.assert_array_equal(Phi.matrix(), np.eye(3))
    H = Tractor2Sym(np.eye(2), np.zeros(2), -1.0)
    assert invert(H).tau == -1.0


def test_invert_singular():
    with pytest.raises(SingularError):
        invert(Tractor2Sym.from_matrix([[1.0, 0, 1], [0, 1, 0], [1, 0, 1]]))


def test_signed_adjugate_rank_n():
    M = np.array([[1.0, 0, 1], [0, 1, 0], [1, 0, 1]])
    sa = signed_adjugate(M)
    assert sa.rank == 2 and not sa.sign_flip
    I = sa.I.vector()
    np.testing.assert_allclose(np.outer(I, I), sa.matrix, atol=1e-14)
    np.testing.assert_allclose(M @ I, 0.0, atol=1e-14)
    np.testing.assert_allclose(I, [1.0, 0.0, -1.0], atol=1e-14)


def test_signed_adjugate_flips_negative_kernel_square():
    M = np.diag([1.0, -1.0, 0.0])
    sa = signed_adjugate(M)
    assert sa.sign_flip
    np.testing.assert_allclose(sa.I.vector(), [0, 0, 1], atol=1e-15)


def test_signed_adjugate_low_rank():
    with pytest.raises(RankError):
        signed_adjugate(np.diag([1.0, 0.0, 0.0]))


def test_signed_adjugate_full_rank_is_adjugate():
    M = np.diag([2.0, 3.0, -1.0])
    sa = signed_adjugate(M)
    np.testing.assert_allclose(sa.matrix, np.linalg.det(M) * np.linalg.inv(M), atol=1e-14)
    assert sa.I is None


@given(st.lists(st.floats(-3, 3), min_size=6, max_size=6))
def test_pairing_is_dot_product(v):
    V = TractorVec(v[:2], v[2])
    U = CoTractorVec(v[3], v[4:])
    assert U.pair(V) == pytest.approx(v[0] * v[4] + v[1] * v[5] + v[2] * v[3], abs=1e-12)


@given(st.lists(st.floats(-2, 2), min_size=6, max_size=6))
def test_inverse_round_trip(entries):
    a, b, c, d, e, f = entries
    M = np.array([[a, b, c], [b, d, e], [c, e, f]]) + 4 * np.diag([1.0, 1.0, -1.0])
    sp = spectral(M)
    if sp.signature[2] or abs(np.linalg.det(M)) < 1e-3:
        return
    Phi = invert(Tractor2Sym.from_matrix(M)).matrix()
    np.testing.assert_allclose(Phi @ M, np.eye(3), atol=1e-9)
    assert sp.det == pytest.approx(math.factorial(3) * np.linalg.det(M), rel=1e-9, abs=1e-9)


def test_frame_round_trip():
    M = np.array([[1.0, 2, 3], [2, 4, 5], [3, 5, 6]])
    H = Tractor2Sym.from_matrix(M)
    np.testing.assert_array_equal(H.zeta, [[1, 2], [2, 4]])
    np.testing.assert_array_equal(H.lam, [3, 5])
    assert H.rho == 6.0
    np.testing.assert_array_equal(H.matrix(), M)
