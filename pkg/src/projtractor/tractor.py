"""Tractor algebra in the splitting determined by a special scale.

Frame convention: the n tangent slots come first and the X-slot last, so a
tractor V = (nu^a, rho) is the vector ``[nu, rho]`` and a symmetric
2-tractor H = (zeta, lambda, rho) is the matrix ``[[zeta, lambda], [lambda^T, rho]]``.
Cotractors U = (xi, mu_a) are written ``[mu, xi]`` so that the pairing is
the plain dot product, and Phi = (tau, eta, phi) is ``[[phi, eta], [eta^T, tau]]``.

With A_c the connection matrix

    A_c = [[Gamma^b_{cd}, delta^b_c], [-P_{cd}, 0]]

the normal tractor connection is d_c + A_c on tractors, d_c - A_c^T on
cotractors, and the induced action on symmetric products.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Any

import numpy as np

from . import expr as ex
from .chart import ChartConnection, CurvatureJets, curvature_jets
from .taylor import Taylor, contract


class SingularError(ValueError):
    pass


class RankError(ValueError):
    pass


@dataclass(frozen=True)
class TractorVec:
    nu: Any
    rho: Any

    def vector(self) -> np.ndarray:
        return np.append(np.asarray(self.nu, dtype=float), float(self.rho))

    @classmethod
    def from_vector(cls, v) -> "TractorVec":
        v = np.asarray(v, dtype=float)
        return cls(v[:-1].copy(), float(v[-1]))


@dataclass(frozen=True)
class CoTractorVec:
    xi: Any
    mu: Any

    def vector(self) -> np.ndarray:
        return np.append(np.asarray(self.mu, dtype=float), float(self.xi))

    @classmethod
    def from_vector(cls, v) -> "CoTractorVec":
        v = np.asarray(v, dtype=float)
        return cls(float(v[-1]), v[:-1].copy())

    def pair(self, V: TractorVec) -> float:
        return float(np.dot(self.vector(), V.vector()))


@dataclass(frozen=True)
class Tractor2Sym:
    zeta: Any
    lam: Any
    rho: Any

    def matrix(self) -> np.ndarray:
        return _block(self.zeta, self.lam, self.rho)

    @classmethod
    def from_matrix(cls, M) -> "Tractor2Sym":
        M = np.asarray(M, dtype=float)
        return cls(M[..., :-1, :-1].copy(), M[..., :-1, -1].copy(), _scalar(M[..., -1, -1]))


@dataclass(frozen=True)
class CoTractor2Sym:
    tau: Any
    eta: Any
    phi: Any

    def matrix(self) -> np.ndarray:
        return _block(self.phi, self.eta, self.tau)

    @classmethod
    def from_matrix(cls, M) -> "CoTractor2Sym":
        M = np.asarray(M, dtype=float)
        return cls(_scalar(M[..., -1, -1]), M[..., :-1, -1].copy(), M[..., :-1, :-1].copy())


def _scalar(v):
    return float(v) if np.ndim(v) == 0 else v.copy()


def _block(top, side, corner) -> np.ndarray:
    top = np.asarray(top, dtype=float)
    side = np.asarray(side, dtype=float)
    corner = np.asarray(corner, dtype=float)
    n = top.shape[-1]
    M = np.empty(top.shape[:-2] + (n + 1, n + 1))
    M[..., :n, :n] = top
    M[..., :n, n] = side
    M[..., n, :n] = side
    M[..., n, n] = corner
    return M


# ---------------------------------------------------------------------------
# fields with expression-valued slots

def _flat_entries(field) -> tuple[list, tuple[int, ...], str]:
    """Frame-form entries of a field as a nested list of slot values."""
    if isinstance(field, TractorVec):
        return list(field.nu) + [field.rho], (len(field.nu) + 1,), "vec"
    if isinstance(field, CoTractorVec):
        return list(field.mu) + [field.xi], (len(field.mu) + 1,), "covec"
    if isinstance(field, Tractor2Sym):
        top, side, corner = field.zeta, field.lam, field.rho
        kind = "sym"
    elif isinstance(field, CoTractor2Sym):
        top, side, corner = field.phi, field.eta, field.tau
        kind = "cosym"
    else:
        raise TypeError(f"unsupported field type {type(field).__name__}")
    n = len(side)
    entries = []
    for i in range(n + 1):
        for j in range(n + 1):
            if i < n and j < n:
                entries.append(top[i][j])
            elif i < n:
                entries.append(side[i])
            elif j < n:
                entries.append(side[j])
            else:
                entries.append(corner)
    return entries, (n + 1, n + 1), kind


def field_jet(field, points, order: int) -> tuple[Taylor, str]:
    """Jets of a field's frame form at ``points`` (expression or numeric slots)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n = pts.shape[1]
    entries, shape, kind = _flat_entries(field)
    out = Taylor.constant(np.zeros((pts.shape[0],) + shape), n, order)
    flat = out.c.reshape((pts.shape[0], -1, out.c.shape[-1]))
    exprs, slots = [], []
    for k, e in enumerate(entries):
        if isinstance(e, str) or isinstance(e, (ex.Num, ex.Var, ex.Neg, ex.BinOp, ex.Pow, ex.Call)):
            exprs.append(ex.as_expression(e, n))
            slots.append(k)
        else:
            flat[:, k, 0] = float(e)
    for k, j in zip(slots, ex.eval_many(exprs, pts, order)):
        flat[:, k, :] = j.c
    return out, kind


def _wrap(M: np.ndarray, kind: str):
    if kind == "vec":
        return TractorVec.from_vector(M)
    if kind == "covec":
        return CoTractorVec.from_vector(M)
    if kind == "sym":
        return Tractor2Sym.from_matrix(M)
    return CoTractor2Sym.from_matrix(M)


# ---------------------------------------------------------------------------
# connection

def connection_matrix(G: Taylor, P: Taylor) -> Taylor:
    """A[p, c] = [[Gamma^b_{cd}, delta^b_c], [-P_{cd}, 0]] as a jet."""
    order = min(G.order, P.order)
    G, P = G.truncate(order), P.truncate(order)
    npts, n = G.shape[0], G.shape[1]
    c = np.zeros((npts, n, n + 1, n + 1, G.c.shape[-1]))
    c[:, :, :n, :n] = np.einsum("pbcdZ->pcbdZ", G.c)
    for k in range(n):
        c[:, k, k, n, 0] = 1.0
    c[:, :, n, :n] = -P.c
    return Taylor(c, G.n, order)


def apply_connection(kind: str, A, M):
    """Non-derivative part of the tractor connection: A_c acting on M.

    ``A`` has shape ``(..., n, N, N)`` (direction first) and ``M`` has shape
    ``(..., N)`` or ``(..., N, N)``; works on arrays or jets via ``contract``.
    """
    if isinstance(A, Taylor) or isinstance(M, Taylor):
        if kind == "vec":
            return contract("pcij,pj->pci", A, M)
        if kind == "covec":
            return -contract("pcji,pj->pci", A, M)
        AM = contract("pcik,pkj->pcij", A, M)
        if kind == "sym":
            return AM + Taylor(np.swapaxes(AM.c, 2, 3), AM.n, AM.order)
        AtM = contract("pcki,pkj->pcij", A, M)
        return -(AtM + Taylor(np.swapaxes(AtM.c, 2, 3), AtM.n, AtM.order))
    if kind == "vec":
        return np.einsum("...cij,...j->...ci", A, M)
    if kind == "covec":
        return -np.einsum("...cji,...j->...ci", A, M)
    if kind == "sym":
        AM = np.einsum("...cik,...kj->...cij", A, M)
        return AM + np.swapaxes(AM, -1, -2)
    AtM = np.einsum("...cki,...kj->...cij", A, M)
    return -(AtM + np.swapaxes(AtM, -1, -2))


def tractor_connect(C: ChartConnection, field, x, c: int | None = None):
    """Covariant derivative of a (co)tractor field in direction ``c``.

    Slots may be expressions (strings or parsed) or constants.  With
    ``c=None`` a list over all directions is returned.
    """
    x = np.asarray(x, dtype=float).reshape(1, -1)
    cj = curvature_jets(C, x, 1)
    A = connection_matrix(cj.G, cj.P).value[0]
    F, kind = field_jet(field, x, 1)
    dF = F.partials().value[0]  # direction first
    out = dF + apply_connection(kind, A, F.value[0])
    if c is None:
        return [_wrap(out[k], kind) for k in range(C.n)]
    return _wrap(out[c], kind)


def thomas_D(C: ChartConnection, f, weight: float, x) -> CoTractorVec:
    """D_A f = (w f, nabla_a f) for a weighted scalar density f."""
    j = ex.eval_jet(ex.as_expression(f, C.n), x, 1)
    return CoTractorVec(weight * j.value, j.d1.copy())


def curvature_matrix(W: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Tractor curvature Omega_{ab} = [[W_{ab}^c_d, 0], [-Y_{abd}, 0]]."""
    n = W.shape[-1]
    Om = np.zeros(W.shape[:-4] + (n, n, n + 1, n + 1))
    Om[..., :n, :n] = W
    Om[..., n, :n] = -Y
    return Om


def tractor_curvature_act(C: ChartConnection, H: Tractor2Sym, x) -> Tractor2Sym:
    """Tractor curvature acting on H; slot arrays carry two leading indices (a, b)."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    cj = curvature_jets(C, x, 2)
    W, Y = cj.W.value[0], cj.Y.value[0]
    F, _ = field_jet(H, x, 0)
    M = F.value[0]
    n = C.n
    zeta, lam = M[:n, :n], M[:n, n]
    top = np.einsum("abce,de->abcd", W, zeta) + np.einsum("abde,ce->abcd", W, zeta)
    mid = np.einsum("abcd,d->abc", W, lam) - np.einsum("abd,cd->abc", Y, zeta)
    bot = -2.0 * np.einsum("abc,c->ab", Y, lam)
    return Tractor2Sym(top, mid, bot)


# ---------------------------------------------------------------------------
# determinants, signature, inverse, adjugate

def det_weighted(zeta) -> float:
    """Full contraction of zeta with two permutation symbols: n! det(zeta)."""
    z = np.asarray(zeta, dtype=float)
    n = z.shape[-1]
    return math.factorial(n) * _leibniz_det(z)


def _leibniz_det(M: np.ndarray) -> float:
    n = M.shape[0]
    if n == 0:
        return 1.0
    if n > 4:
        return float(np.linalg.det(M))
    total = 0.0
    for perm in itertools.permutations(range(n)):
        sign = _perm_sign(perm)
        prod = 1.0
        for i, j in enumerate(perm):
            prod *= M[i, j]
        total += sign * prod
    return total


def _perm_sign(perm) -> int:
    sign = 1
    p = list(perm)
    for i in range(len(p)):
        while p[i] != i:
            j = p[i]
            p[i], p[j] = p[j], p[i]
            sign = -sign
    return sign


@dataclass(frozen=True)
class Spectral:
    det: float
    signature: tuple[int, int, int]
    eigenvalues: np.ndarray  # descending

    @property
    def rank(self) -> int:
        return self.signature[0] + self.signature[1]


def _as_matrix(H) -> np.ndarray:
    if isinstance(H, (Tractor2Sym, CoTractor2Sym)):
        return H.matrix()
    return np.asarray(H, dtype=float)


def signature(M: np.ndarray, tol_rank: float = 1e-9) -> tuple[tuple[int, int, int], np.ndarray]:
    ev = np.sort(np.linalg.eigvalsh(M))[::-1]
    radius = np.abs(ev).max(initial=0.0)
    cut = tol_rank * radius
    p = int(np.sum(ev > cut))
    q = int(np.sum(ev < -cut))
    return (p, q, len(ev) - p - q), ev


def spectral(H, tol_rank: float = 1e-9) -> Spectral:
    """Determinant (permutation-symbol normalized), signature and eigenvalues."""
    M = _as_matrix(H)
    sig, ev = signature(M, tol_rank)
    return Spectral(math.factorial(M.shape[0]) * _leibniz_det(M), sig, ev)


def invert(H: Tractor2Sym, tol_rank: float = 1e-9) -> CoTractor2Sym:
    M = _as_matrix(H)
    sig, _ = signature(M, tol_rank)
    if sig[2] > 0:
        raise SingularError(f"cannot invert a degenerate 2-tractor of signature {sig}")
    return CoTractor2Sym.from_matrix(np.linalg.inv(M))


def adjugate(M: np.ndarray) -> np.ndarray:
    """Transposed cofactor matrix."""
    M = np.asarray(M, dtype=float)
    N = M.shape[0]
    adj = np.empty_like(M)
    idx = np.arange(N)
    for i in range(N):
        for j in range(N):
            minor = M[np.ix_(idx != j, idx != i)]
            adj[i, j] = (-1) ** (i + j) * _leibniz_det(minor)
    return adj


@dataclass(frozen=True)
class SignedAdjugate:
    matrix: np.ndarray
    I: CoTractorVec | None
    sign_flip: bool
    rank: int
    kernel_residual: float


def signed_adjugate(H, tol_rank: float = 1e-9) -> SignedAdjugate:
    """Adjugate of M(H), sign chosen positive semidefinite in the rank-n case.

    For rank n the result factors as I (x) I with I spanning the kernel of H;
    I is returned with its first non-negligible component positive.
    """
    M = _as_matrix(H)
    n = M.shape[0] - 1
    sig, _ = signature(M, tol_rank)
    rank = sig[0] + sig[1]
    if rank < n:
        raise RankError(f"rank {rank} < n = {n}: the adjugate vanishes and cannot be factored")
    adj = adjugate(M)
    if rank == n + 1:
        return SignedAdjugate(adj, None, False, rank, 0.0)
    w, V = np.linalg.eigh(adj)
    k = int(np.argmax(np.abs(w)))
    flip = bool(w[k] < 0)
    vec = V[:, k] * math.sqrt(abs(w[k]))
    big = np.abs(vec) > 1e-12 * np.abs(vec).max()
    if vec[np.argmax(big)] < 0:
        vec = -vec
    mat = -adj if flip else adj
    resid = float(np.abs(M @ vec).max() / max(1.0, np.abs(M).max() * np.abs(vec).max()))
    return SignedAdjugate(mat, CoTractorVec.from_vector(vec), flip, rank, resid)
