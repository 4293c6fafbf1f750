"""Splitting operators, first BGG operators and the prolonged connection.

All densities are trivialized by the volume density preserved by the chart
connection, so their covariant derivatives are partial derivatives.
Tensor arrays put the differentiation index first: ``chi[c, a, b]`` is
chi_c^{ab}.
"""

from __future__ import annotations

import itertools

import numpy as np

from . import expr as ex
from .chart import ChartConnection, curvature_jets
from .taylor import Taylor, contract
from .tractor import (
    CoTractor2Sym,
    Tractor2Sym,
    apply_connection,
    connection_matrix,
    det_weighted,
    field_jet,
    invert,
    spectral,
)

# The prolonged connection is the tractor connection minus
# PROLONGATION_SIGN / n * (0, -W_{cd}^a_e zeta^{de}, 2 Y_{cba} zeta^{ba}).
# The sign is the one for which L(zeta) of a genuine solution is parallel on
# curved charts (see tests/test_bgg.py).
PROLONGATION_SIGN = 1.0


def _pts(x) -> np.ndarray:
    return np.atleast_2d(np.asarray(x, dtype=float))


def zeta_jet(zeta, points, order: int) -> Taylor:
    """Jets of a symmetric n x n field given by expressions or numbers."""
    pts = _pts(points)
    n = pts.shape[1]
    out = Taylor.constant(np.zeros((pts.shape[0], n, n)), n, order)
    keys, exprs = [], []
    for a in range(n):
        for b in range(a, n):
            e = zeta[a][b]
            if not isinstance(e, (str, ex.Num, ex.Var, ex.Neg, ex.BinOp, ex.Pow, ex.Call)):
                out.c[:, a, b, 0] = out.c[:, b, a, 0] = float(e)
                continue
            keys.append((a, b))
            exprs.append(ex.as_expression(e, n))
    for (a, b), j in zip(keys, ex.eval_many(exprs, pts, order)):
        out.c[:, a, b] = j.c
        out.c[:, b, a] = j.c
    return out


def scalar_jet(tau, points, order: int) -> Taylor:
    pts = _pts(points)
    e = ex.as_expression(tau, pts.shape[1])
    return ex.eval_batch(e, pts, order)


def covariant_zeta(G: Taylor, Z: Taylor) -> Taylor:
    """nabla_c zeta^{ab} as ``[p, c, a, b]``."""
    dZ = Z.partials()
    Gt = G.truncate(dZ.order)
    Zt = Z.truncate(dZ.order)
    return dZ + contract("pace,peb->pcab", Gt, Zt) + contract("pbce,pae->pcab", Gt, Zt)


def divergence(G: Taylor, V: Taylor) -> Taylor:
    """nabla_a V^a for a (weighted) vector field."""
    dV = V.partials()
    trace = Taylor(np.einsum("paaeZ->peZ", G.truncate(dV.order).c), G.n, dV.order)
    return Taylor(np.einsum("paaZ->pZ", dV.c), V.n, dV.order) + contract("pe,pe->p", trace, V.truncate(dV.order))


def hessian(G: Taylor, T: Taylor) -> Taylor:
    """nabla_a nabla_b of a density; symmetric for torsion-free connections."""
    dT = T.partials()
    ddT = dT.partials()
    return ddT - contract("peab,pe->pab", G.truncate(ddT.order), dT.truncate(ddT.order))


def covariant_sym2(G: Taylor, S: Taylor) -> Taylor:
    """nabla_a S_{bc} for a covariant 2-tensor, as ``[p, a, b, c]``."""
    dS = S.partials()
    Gt, St = G.truncate(dS.order), S.truncate(dS.order)
    return dS - contract("peab,pec->pabc", Gt, St) - contract("peac,pbe->pabc", Gt, St)


def split_metrizability_jet(C: ChartConnection, zeta, points, order: int = 0) -> Taylor:
    """L(zeta) as a jet of the (n+1) x (n+1) matrix, to the requested order."""
    pts = _pts(points)
    n = C.n
    cj = curvature_jets(C, pts, order + 2)
    Z = zeta_jet(zeta, pts, order + 2)
    return _split_from_jets(cj.G, cj.P, Z, n)


def _split_from_jets(G: Taylor, P: Taylor, Z: Taylor, n: int) -> Taylor:
    nab = covariant_zeta(G, Z)
    D = Taylor(np.einsum("pbabZ->paZ", nab.c), Z.n, nab.order)
    lam = D * (-1.0 / (n + 1))
    divD = divergence(G, D)
    o = divD.order
    rho = contract("pab,pab->p", P.truncate(o), Z.truncate(o)) * (1.0 / n) + divD * (1.0 / (n * (n + 1)))
    lam = lam.truncate(o)
    npts = Z.shape[0]
    c = np.zeros((npts, n + 1, n + 1, lam.c.shape[-1]))
    c[:, :n, :n] = Z.truncate(o).c
    c[:, :n, n] = lam.c
    c[:, n, :n] = lam.c
    c[:, n, n] = rho.c
    return Taylor(c, Z.n, o)


def split_metrizability(C: ChartConnection, zeta, x) -> Tractor2Sym:
    """L(zeta) = (zeta, -(1/(n+1)) nabla_b zeta^{ab}, (1/n) P_ab zeta^ab + nabla_a nabla_b zeta^ab / (n(n+1)))."""
    M = split_metrizability_jet(C, zeta, _pts(x), 0).value[0]
    return Tractor2Sym.from_matrix(M)


def split_density(C: ChartConnection, tau, x) -> CoTractor2Sym:
    """L(tau) = (tau, nabla tau / 2, nabla nabla tau / 2 + P tau)."""
    pts = _pts(x)
    cj = curvature_jets(C, pts, 1)
    T = scalar_jet(tau, pts, 2)
    t = T.value[0]
    grad = T.partials().value[0]
    hess = hessian(cj.G, T).value[0]
    return CoTractor2Sym(float(t), 0.5 * grad, 0.5 * hess + cj.P.value[0] * t)


def symmetrize3(T: np.ndarray) -> np.ndarray:
    """Total symmetrization over the last three axes, exactly symmetric."""
    n = T.shape[-1]
    out = np.empty_like(T)
    for combo in itertools.combinations_with_replacement(range(n), 3):
        perms = sorted(set(itertools.permutations(combo)))
        val = sum(T[(Ellipsis,) + p] for p in itertools.permutations(combo)) / 6.0
        for p in perms:
            out[(Ellipsis,) + p] = val
    return out


def theta0_density(C: ChartConnection, tau, x) -> np.ndarray:
    """Symmetrized nabla nabla nabla tau + 2 tau nabla P + 4 P nabla tau."""
    pts = _pts(x)
    cj = curvature_jets(C, pts, 2)
    T = scalar_jet(tau, pts, 3)
    H2 = hessian(cj.G, T)  # order 1
    third = covariant_sym2(cj.G, H2).value[0]
    dP = covariant_sym2(cj.G, cj.P).value[0]
    t = T.value[0]
    grad = T.partials().value[0]
    P = cj.P.value[0]
    raw = third + 2.0 * t * dP + 4.0 * np.einsum("ab,c->abc", P, grad)
    return symmetrize3(raw)


def _chi_from(nab: np.ndarray, n: int) -> np.ndarray:
    D = np.einsum("...bab->...a", nab)
    delta = np.eye(n)
    k = 1.0 / (n + 1)
    return nab - k * (np.einsum("ca,...b->...cab", delta, D) + np.einsum("cb,...a->...cab", delta, D))


def theta0_metrizability(C: ChartConnection, zeta, x) -> np.ndarray:
    """Trace-free part of nabla_c zeta^{ab}, as ``chi[c, a, b]``."""
    pts = _pts(x)
    cj = curvature_jets(C, pts, 1)
    Z = zeta_jet(zeta, pts, 1)
    nab = covariant_zeta(cj.G, Z).value[0]
    return _chi_from(nab, C.n)


def metrizability_residual_batch(C: ChartConnection, zeta, points) -> np.ndarray:
    """max |chi| at each point of a batch."""
    pts = _pts(points)
    cj = curvature_jets(C, pts, 1)
    Z = zeta_jet(zeta, pts, 1)
    chi = _chi_from(covariant_zeta(cj.G, Z).value, C.n)
    return np.abs(chi).reshape(len(pts), -1).max(axis=1)


# ---------------------------------------------------------------------------
# prolonged connection

def prolongation_term(W: np.ndarray, Y: np.ndarray, M: np.ndarray) -> np.ndarray:
    """(s/n)(0, -W_{cd}^a_e zeta^{de}, 2 Y_{cba} zeta^{ba}) for every direction c.

    ``W``: (..., n, n, n, n), ``Y``: (..., n, n, n), ``M``: (..., N, N);
    returns (..., n, N, N).
    """
    n = W.shape[-1]
    zeta = M[..., :n, :n]
    s = PROLONGATION_SIGN / n
    mid = -s * np.einsum("...cdae,...de->...ca", W, zeta)
    bot = 2.0 * s * np.einsum("...cba,...ba->...c", Y, zeta)
    K = np.zeros(np.broadcast_shapes(W.shape[:-4], M.shape[:-2]) + (n, n + 1, n + 1))
    K[..., :n, n] = mid
    K[..., n, :n] = mid
    K[..., n, n] = bot
    return K


def prolonged_operator(A: np.ndarray, W: np.ndarray, Y: np.ndarray, M: np.ndarray) -> np.ndarray:
    """Non-derivative part B_c(M) of the prolonged connection."""
    return apply_connection("sym", A, M) - prolongation_term(W, Y, M)


def _em_from_jet(cj, F: Taylor) -> np.ndarray:
    A = connection_matrix(cj.G, cj.P).value
    M = F.value
    dM = F.partials().value
    return dM + prolonged_operator(A, cj.W.value, cj.Y.value, M)


def em_derivative(C: ChartConnection, H: Tractor2Sym, x, c: int | None = None):
    """Prolonged derivative of a 2-tractor field with expression slots.

    Returns a Tractor2Sym for direction ``c`` or, with ``c=None``, the
    ``(n, n+1, n+1)`` array over all directions.
    """
    pts = _pts(x)
    cj = curvature_jets(C, pts, 2)
    F, _ = field_jet(H, pts, 1)
    out = _em_from_jet(cj, F)[0]
    return out if c is None else Tractor2Sym.from_matrix(out[c])


def em_derivative_split(C: ChartConnection, zeta, points) -> np.ndarray:
    """Prolonged derivative of L(zeta), shape ``(P, n, n+1, n+1)``."""
    pts = _pts(points)
    cj = curvature_jets(C, pts, 3)
    Z = zeta_jet(zeta, pts, 3)
    F = _split_from_jets(cj.G, cj.P, Z, C.n)
    return _em_from_jet(cj, F)


# ---------------------------------------------------------------------------
# identities for the inverse

def inverse_identities(C: ChartConnection, H: Tractor2Sym, x) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Residuals (lhs - rhs) of the derivative formulas for Phi = H^{-1}.

    Returns arrays indexed ``[i, a, d]``, ``[i, a]`` and ``[i]`` for the
    phi, eta and tau equations respectively.
    """
    pts = _pts(x)
    n = C.n
    cj = curvature_jets(C, pts, 1)
    F, _ = field_jet(H, pts, 1)
    M = F.value[0]
    dM = F.partials().value[0]
    G = cj.G.value[0]
    P = cj.P.value[0]
    A = connection_matrix(cj.G, cj.P).value[0]
    Phi = invert(Tractor2Sym.from_matrix(M)).matrix()
    nabH = dM + apply_connection("sym", A, M)
    chi, psi, omega = nabH[:, :n, :n], nabH[:, :n, n], nabH[:, n, n]  # [i, ...]
    dPhi = -np.einsum("ab,ibc,cd->iad", Phi, dM, Phi)
    phi, eta, tau = Phi[:n, :n], Phi[:n, n], Phi[n, n]
    d_phi, d_eta, d_tau = dPhi[:, :n, :n], dPhi[:, :n, n], dPhi[:, n, n]
    lhs_phi = d_phi - np.einsum("eia,ed->iad", G, phi) - np.einsum("eid,ae->iad", G, phi)
    lhs_eta = d_eta - np.einsum("eia,e->ia", G, eta)
    lhs_tau = d_tau
    rhs_phi = (
        -(np.einsum("id,a->iad", P, eta) + np.einsum("ia,d->iad", P, eta))
        - np.einsum("ac,icb,bd->iad", phi, chi, phi)
        - np.einsum("ac,ic,d->iad", phi, psi, eta)
        - np.einsum("a,ib,bd->iad", eta, psi, phi)
        - np.einsum("a,i,d->iad", eta, omega, eta)
    )
    rhs_eta = (
        phi
        - P * tau
        - np.einsum("ac,icb,b->ia", phi, chi, eta)
        - np.einsum("ac,ic->ia", phi, psi) * tau
        - np.einsum("a,ib,b->ia", eta, psi, eta)
        - np.einsum("a,i->ia", eta, omega) * tau
    )
    rhs_tau = (
        2.0 * eta
        - 2.0 * tau * np.einsum("c,ic->i", eta, psi)
        - tau**2 * omega
        - np.einsum("icb,c,b->i", chi, eta, eta)
    )
    return lhs_phi - rhs_phi, lhs_eta - rhs_eta, lhs_tau - rhs_tau


def calibration_ratio(H: Tractor2Sym) -> float:
    """det_weighted(zeta) / (det L * tau) with tau the X-X slot of the inverse."""
    return det_weighted(H.zeta) / (spectral(H).det * invert(H).tau)
