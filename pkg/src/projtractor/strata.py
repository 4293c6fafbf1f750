"""Stratification of a manifold by a metrizability solution.

Given a solution (a parallel section H = L(zeta) of the prolonged
connection) this module classifies points by the signature data of H and
zeta, locates the degeneracy locus of zeta, reconstructs the metric on the
open strata and examines the geometry induced on the locus.

Densities are trivialized by the volume form f dx preserved by the chart
connection; weighted determinants and the rank-n factor I therefore carry
powers of f (see :func:`projtractor.chart.scale_density`).
"""

from __future__ import annotations

import itertools
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .bgg import _chi_from, hessian, scalar_jet, split_density
from .chart import ChartConnection, curvature_jets, scale_density
from .solver import fd_stencil
from .taylor import Taylor, contract
from .tractor import (
    CoTractorVec,
    RankError,
    Tractor2Sym,
    curvature_matrix,
    invert,
    signature,
    signed_adjugate,
    spectral,
)

PLUS, ZERO, MINUS, OUTSIDE = "plus", "zero", "minus", "outside"


class OutsideHypothesesError(ValueError):
    """rank L(zeta) < n: the classification theorems do not apply."""


class RankInstabilityError(RuntimeError):
    """rank L(zeta) is not constant over the sampled region."""


class HypothesisFailure(RuntimeError):
    """A conclusion guaranteed under the hypotheses fails numerically."""


class BranchError(ValueError):
    """Operation requested on the wrong rank branch."""


@dataclass(frozen=True)
class Tolerances:
    tol_rank: float = 1e-9
    tol_zero: float = 1e-10


# ---------------------------------------------------------------------------
# grids

@dataclass(frozen=True)
class Grid:
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    m: int

    def __post_init__(self):
        if self.m < 3:
            raise ValueError("grid resolution must be at least 3 per axis")

    @classmethod
    def of_chart(cls, C: ChartConnection, m: int) -> "Grid":
        return cls(tuple(C.lower.tolist()), tuple(C.upper.tolist()), m)

    @property
    def n(self) -> int:
        return len(self.lower)

    def axes(self) -> list[np.ndarray]:
        return [np.linspace(lo, hi, self.m) for lo, hi in zip(self.lower, self.upper)]

    def points(self) -> np.ndarray:
        """Lexicographic order, last coordinate fastest."""
        return np.array(list(itertools.product(*self.axes())), dtype=float).reshape(-1, self.n)

    def edges(self) -> np.ndarray:
        """Index pairs of neighbouring grid points."""
        shape = (self.m,) * self.n
        idx = np.arange(self.m**self.n).reshape(shape)
        out = []
        for ax in range(self.n):
            a = np.take(idx, np.arange(self.m - 1), axis=ax).ravel()
            b = np.take(idx, np.arange(1, self.m), axis=ax).ravel()
            out.append(np.stack([a, b], axis=1))
        return np.vstack(out)


# ---------------------------------------------------------------------------
# point classification

@dataclass(frozen=True)
class PointClass:
    rankL: int
    sigL: tuple[int, int, int]
    sig_zeta: tuple[int, int, int]
    stratum: str
    tau: float | None
    sigma: float | None
    det_zeta: float
    S: float
    I: np.ndarray | None = field(default=None, compare=False, repr=False)


def _stratum(value: float, tol_zero: float) -> str:
    if value > tol_zero:
        return PLUS
    if value < -tol_zero:
        return MINUS
    return ZERO


def classify_point(C: ChartConnection, H, tolerances: Tolerances | None = None, x=None,
                   scale: float | None = None, orient: np.ndarray | None = None) -> PointClass:
    """Signature data of H = L(zeta) at one point.

    ``scale`` is the preserved-volume coefficient f at the point; it is
    computed from ``x`` when not given (and taken as 1 without either).
    ``orient`` fixes the sign of the rank-n factor I by requiring a
    positive inner product with it.
    """
    tol = tolerances or Tolerances()
    M = H.matrix() if isinstance(H, Tractor2Sym) else np.asarray(H, dtype=float)
    n = M.shape[0] - 1
    if scale is None:
        scale = 1.0 if x is None else float(scale_density(C, np.asarray(x, dtype=float)[None]).value[0])
    sp = spectral(M, tol.tol_rank)
    zeta = M[:n, :n]
    sig_zeta, _ = signature(zeta, tol.tol_rank)
    det_zeta = scale**2 * float(np.linalg.det(zeta))
    S = scale**2 * sp.det
    if sp.rank < n:
        raise OutsideHypothesesError(f"rank L = {sp.rank} < n = {n}")
    if sp.rank == n + 1:
        tau = -float(invert(Tractor2Sym.from_matrix(M), tol.tol_rank).tau)
        return PointClass(sp.rank, sp.signature, sig_zeta, _stratum(tau, tol.tol_zero), tau, None, det_zeta, S)
    adj = signed_adjugate(M, tol.tol_rank)
    vec = scale * adj.I.vector()
    if orient is not None and float(vec @ orient) < 0:
        vec = -vec
    sigma = float(vec[n])
    return PointClass(sp.rank, sp.signature, sig_zeta, _stratum(sigma, tol.tol_zero), det_zeta, sigma, det_zeta, S, vec)


def _classify_many(C, M, scales, tol, orient=None):
    out = []
    for k in range(len(M)):
        ref = None if orient is None else orient[k]
        try:
            out.append(classify_point(C, M[k], tol, scale=float(scales[k]), orient=ref))
        except OutsideHypothesesError:
            n = M.shape[-1] - 1
            sp = spectral(M[k], tol.tol_rank)
            sz, _ = signature(M[k][:n, :n], tol.tol_rank)
            out.append(PointClass(sp.rank, sp.signature, sz, OUTSIDE, None, None,
                                  float(scales[k]) ** 2 * float(np.linalg.det(M[k][:n, :n])),
                                  float(scales[k]) ** 2 * sp.det))
    return out


def _orient_grid(grid: Grid, vecs: list[np.ndarray]) -> list[np.ndarray]:
    """Make the rank-n factor I continuous over the grid (breadth-first from the first point)."""
    nbrs: dict[int, list[int]] = {}
    for a, b in grid.edges():
        nbrs.setdefault(int(a), []).append(int(b))
        nbrs.setdefault(int(b), []).append(int(a))
    out = list(vecs)
    seen = {0}
    queue = deque([0])
    while queue:
        i = queue.popleft()
        for j in nbrs.get(i, []):
            if j in seen:
                continue
            if float(out[j] @ out[i]) < 0:
                out[j] = -out[j]
            seen.add(j)
            queue.append(j)
    return out


# ---------------------------------------------------------------------------
# degeneracy locus

@dataclass(frozen=True)
class LocusPoint:
    x: np.ndarray
    value: float
    gradient: np.ndarray
    conormal: np.ndarray
    I: np.ndarray | None = None  # oriented rank-n factor at the point


@dataclass
class StrataReport:
    grid: Grid
    points: np.ndarray
    classes: list[PointClass]
    hypersurface_points: list[LocusPoint]
    diagnostics: dict
    rank: int
    n: int

    @property
    def branch(self) -> str:
        return "n+1" if self.rank == self.n + 1 else "n"

    def strata_counts(self) -> dict:
        counts: dict = {}
        for c in self.classes:
            counts[c.stratum] = counts.get(c.stratum, 0) + 1
        return counts


def _values_at(solution, C: ChartConnection, pts: np.ndarray, rank: int, tol: Tolerances, refs=None):
    """tau (rank n+1) or oriented sigma (rank n) at points, plus the oriented I."""
    M = solution.matrices(pts)
    f = scale_density(C, pts).value
    classes = _classify_many(C, M, f, tol, refs)
    if rank == C.n + 1:
        return np.array([c.tau for c in classes]), None
    return np.array([c.sigma for c in classes]), [c.I for c in classes]


def _bisect(solution, C, a, b, va, vb, rank, tol, refs, max_iter=200):
    """Batched bisection on segments [a, b] with sign-changing values."""
    a, b = a.copy(), b.copy()
    va, vb = va.copy(), vb.copy()
    done = np.zeros(len(a), dtype=bool)
    xs = 0.5 * (a + b)
    vs = np.zeros(len(a))
    Is = list(refs) if refs is not None else None
    for _ in range(max_iter):
        active = np.nonzero(~done)[0]
        if not len(active):
            break
        mid = 0.5 * (a[active] + b[active])
        r = None if refs is None else [refs[k] for k in active]
        vm, Im = _values_at(solution, C, mid, rank, tol, r)
        for j, k in enumerate(active):
            xs[k], vs[k] = mid[j], vm[j]
            if Is is not None:
                Is[k] = Im[j]
            width = np.abs(b[k] - a[k]).max()
            if abs(vm[j]) <= tol.tol_zero or width < 1e-15 * max(1.0, np.abs(mid[j]).max()):
                done[k] = True
            elif np.sign(vm[j]) == np.sign(va[k]):
                a[k], va[k] = mid[j], vm[j]
            else:
                b[k], vb[k] = mid[j], vm[j]
    return xs, vs, Is


def _tau_gradient(solution, pts: np.ndarray) -> np.ndarray:
    """Gradient of tau = -Phi_XX where Phi is the inverse of M(H)."""
    J = solution.jet(pts, 1)
    M = J.value
    dM = J.partials().value  # [p, c, i, j]
    Phi = np.linalg.inv(M)
    n = M.shape[-1] - 1
    return np.einsum("pi,pcij,pj->pc", Phi[:, n, :], dM, Phi[:, :, n])


_CENTRAL = ((-2, 1.0 / 12.0), (-1, -8.0 / 12.0), (1, 8.0 / 12.0), (2, -1.0 / 12.0))
_ONE_SIDED = ((0, -25.0 / 12.0), (1, 48.0 / 12.0), (2, -36.0 / 12.0), (3, 16.0 / 12.0), (4, -3.0 / 12.0))


def _gradient_fd(C: ChartConnection, func, pts: np.ndarray, delta: float) -> np.ndarray:
    """Fourth-order finite-difference gradients, one-sided next to the domain boundary.

    ``func`` maps an ``(m, n)`` array of points and the index of the base
    point of each row to values.
    """
    n = C.n
    rows, owner, weights = [], [], []
    for k, x in enumerate(pts):
        for a in range(n):
            central = x[a] - 2 * delta >= C.lower[a] and x[a] + 2 * delta <= C.upper[a]
            direction = 1.0 if x[a] + 4 * delta <= C.upper[a] else -1.0
            stencil = _CENTRAL if central else tuple((direction * o, direction * w) for o, w in _ONE_SIDED)
            for off, w in stencil:
                p = x.copy()
                p[a] += off * delta
                rows.append(p)
                owner.append(k)
                weights.append((k, a, w))
    vals = func(np.array(rows), np.array(owner))
    out = np.zeros((len(pts), n))
    for v, (k, a, w) in zip(vals, weights):
        out[k, a] += w * v / delta
    return out


def _sigma_gradient(solution, C, pts, refs, tol, delta) -> np.ndarray:
    def func(rows, owner):
        return _values_at(solution, C, rows, C.n, tol, [refs[k] for k in owner])[0]

    return _gradient_fd(C, func, pts, delta)


def locate_degeneracy(C: ChartConnection, solution, grid: Grid, tolerances: Tolerances | None = None) -> StrataReport:
    """Classify the grid and refine the degeneracy locus of zeta by bisection."""
    tol = tolerances or Tolerances()
    n = C.n
    pts = grid.points()
    M = solution.matrices(pts)
    f = scale_density(C, pts).value
    classes = _classify_many(C, M, f, tol)
    ranks = {c.rankL for c in classes}
    if len(ranks) != 1:
        raise RankInstabilityError(f"rank L varies over the grid: {sorted(ranks)}")
    rank = ranks.pop()
    if rank < n:
        raise OutsideHypothesesError(f"rank L = {rank} < n = {n} on the grid")
    diagnostics: dict = {}
    refs = None
    if rank == n:
        refs = _orient_grid(grid, [c.I for c in classes])
        classes = _classify_many(C, M, f, tol, refs)
        values = np.array([c.sigma for c in classes])
    else:
        values = np.array([c.tau for c in classes])

    loc_x, loc_v, loc_I = [], [], []
    for k in np.nonzero(np.abs(values) <= tol.tol_zero)[0]:
        loc_x.append(pts[k])
        loc_v.append(values[k])
        loc_I.append(None if refs is None else refs[k])
    E = grid.edges()
    va, vb = values[E[:, 0]], values[E[:, 1]]
    change = (np.abs(va) > tol.tol_zero) & (np.abs(vb) > tol.tol_zero) & (np.sign(va) != np.sign(vb))
    E = E[change]
    if len(E):
        r = None if refs is None else [refs[i] for i in E[:, 0]]
        xs, vs, Is = _bisect(solution, C, pts[E[:, 0]], pts[E[:, 1]], values[E[:, 0]], values[E[:, 1]], rank, tol, r)
        loc_x.extend(xs)
        loc_v.extend(vs)
        loc_I.extend(Is if Is is not None else [None] * len(xs))

    locus: list[LocusPoint] = []
    if loc_x:
        X = np.array(loc_x)
        if rank == n + 1:
            grads = _tau_gradient(solution, X)
        else:
            delta = 1e-3 * float(C.half_width.min())
            grads = _sigma_gradient(solution, C, X, loc_I, tol, delta)
        norms = np.linalg.norm(grads, axis=1)
        if norms.min() < 1e-6:
            raise HypothesisFailure(f"gradient of the defining density vanishes on the locus ({norms.min():.2e})")
        for k in range(len(X)):
            locus.append(LocusPoint(X[k], float(loc_v[k]), grads[k], grads[k] / norms[k], loc_I[k]))
        diagnostics["locus_max_abs_value"] = float(np.max(np.abs(loc_v)))
        diagnostics["locus_min_gradient"] = float(norms.min())
        ML = solution.matrices(X)
        zeta = ML[:, :n, :n]
        if rank == n + 1:
            zg = np.einsum("pcd,pc->pd", zeta, grads)
            scale = np.linalg.norm(zeta, axis=(1, 2)) * norms
            diagnostics["kernel_residual"] = float(np.max(np.linalg.norm(zg, axis=1) / scale))
            Phi = np.linalg.inv(ML)
            # d Phi_XX = 2 eta where Phi_XX vanishes, and Phi_XX = -tau
            diagnostics["eq14_residual"] = float(np.abs(-grads - 2.0 * Phi[:, :n, n]).max())
        else:
            kern = np.einsum("pcd,pc->pd", zeta, grads)
            diagnostics["kernel_residual"] = float(
                np.max(np.linalg.norm(kern, axis=1) / (np.linalg.norm(zeta, axis=(1, 2)) * norms))
            )

    if rank == n:
        sig = np.array([c.sigma for c in classes])
        det = np.array([c.det_zeta for c in classes])
        s = 1.0 if np.sum(det * sig**2) >= 0 else -1.0
        diagnostics["sigma_sq_sign"] = s
        diagnostics["sigma_sq_residual"] = float(np.abs(sig**2 - s * det).max())
        delta = 1e-3 * float(C.half_width.min())
        inner = C.contains(pts, margin=-2.0 * delta)
        Ipts = pts[inner]
        Irefs = [refs[k] for k in np.nonzero(inner)[0]]
        if len(Ipts):
            grads = _sigma_gradient(solution, C, Ipts, Irefs, tol, delta)
            Ivec = np.array(Irefs)
            diagnostics["I_minus_Dsigma"] = float(
                max(np.abs(Ivec[:, :n] - grads).max(), np.abs(Ivec[:, n] - sig[inner]).max())
            )
    return StrataReport(grid, pts, classes, locus, diagnostics, rank, n)


# ---------------------------------------------------------------------------
# metric reconstruction

def _det_jet(Z: Taylor) -> Taylor:
    n = Z.shape[-1]
    total = None
    for perm in itertools.permutations(range(n)):
        sign = 1.0
        p = list(perm)
        for i in range(n):
            while p[i] != i:
                j = p[i]
                p[i], p[j] = p[j], p[i]
                sign = -sign
        term = Z[:, 0, perm[0]]
        for i in range(1, n):
            term = term * Z[:, i, perm[i]]
        term = term * sign
        total = term if total is None else total + term
    return total


def _inverse_jet(K: Taylor) -> Taylor:
    """Matrix inverse of a jet by the Neumann series about the value."""
    g0 = np.linalg.inv(K.value)
    D = Taylor(K.c.copy(), K.n, K.order)
    D.c[..., 0] = 0.0
    G0 = Taylor.constant(g0, K.n, K.order)
    term = G0
    out = G0
    for _ in range(K.order):
        term = -contract("pij,pjk->pik", term, contract("pij,pjk->pik", D, G0))
        out = out + term
    return out


def _levi_civita(g: Taylor, ginv: Taylor) -> Taylor:
    """Christoffel symbols Gamma^a_{bc} of g, one order below g."""
    dg = g.partials()  # [p, e, i, j] = d_e g_ij
    o = dg.order
    t = (
        Taylor(np.einsum("pbdcZ->pdbcZ", dg.c), g.n, o)
        + Taylor(np.einsum("pcdbZ->pdbcZ", dg.c), g.n, o)
        - dg
    )
    return contract("pad,pdbc->pabc", ginv.truncate(o), t) * 0.5


def _ricci_from_gamma(G: Taylor) -> Taylor:
    dG = G.partials()
    t1 = Taylor(np.einsum("pacbdZ->pabcdZ", dG.c), G.n, dG.order)
    Gt = G.truncate(dG.order)
    half = t1 + contract("pcae,pebd->pabcd", Gt, Gt)
    R = half - Taylor(np.einsum("pabcdZ->pbacdZ", half.c), G.n, half.order)
    return Taylor(np.einsum("pabadZ->pbdZ", R.c), G.n, R.order)


@dataclass
class MetricData:
    g_inv: np.ndarray
    g: np.ndarray
    scalar_curvature: np.ndarray
    scalar_curvature_fd: np.ndarray
    S: np.ndarray
    tau: np.ndarray
    upsilon: np.ndarray
    class_residual: np.ndarray  # Gamma_g - Gamma - (delta Upsilon + delta Upsilon)
    upsilon_curl: np.ndarray


def reconstruct_metric(C: ChartConnection, solution, x, tolerances: Tolerances | None = None,
                       fd_step: float = 1e-3, fd: bool = True) -> MetricData:
    """Metric g with g^{-1} = sgn(tau) tau zeta, tau the weighted determinant.

    Works on a batch of points.  The scalar curvature is computed from exact
    jets; a finite-difference evaluation of the Christoffel symbols of g is
    returned alongside as an independent estimate (NaN where the stencil
    would leave the domain).
    """
    tol = tolerances or Tolerances()
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    n = C.n
    Z = solution.zeta_jet(pts, 2)
    F = scale_density(C, pts, 2)
    tau = _det_jet(Z) * (F * F)
    if np.any(np.abs(tau.value) <= tol.tol_zero):
        raise ValueError("metric reconstruction requested on the degeneracy locus")
    sgn = np.sign(tau.value)
    K = contract("p,pab->pab", tau * sgn, Z)
    g = _inverse_jet(K)
    Gg = _levi_civita(g, K)  # order 1
    Ric = _ricci_from_gamma(Gg).value
    scal = np.einsum("pbd,pbd->p", K.value, Ric)

    # projective class: Gamma_g - Gamma = delta Upsilon + delta Upsilon
    Gc = C.gamma_jet(pts, 1)
    diff = Gg - Gc
    ups = Taylor(np.einsum("paacZ->pcZ", diff.c), n, diff.order) * (1.0 / (n + 1))
    delta = np.eye(n)
    model = contract("pc,ab->pabc", ups, delta) + contract("pb,ac->pabc", ups, delta)
    resid = np.abs((diff - model).value).reshape(len(pts), -1).max(axis=1)
    dU = ups.partials().value
    curl = np.abs(dU - np.swapaxes(dU, 1, 2)).reshape(len(pts), -1).max(axis=1)

    M = solution.matrices(pts)
    S = F.value**2 * np.array([spectral(m, tol.tol_rank).det for m in M])
    h = fd_step * float(C.half_width.min())
    inner = C.contains(pts, margin=-2.0 * h)
    scal_fd = np.full(len(pts), np.nan)
    if fd:
        for k in np.nonzero(inner)[0]:
            scal_fd[k] = _scalar_fd(C, solution, pts[k], h)
    return MetricData(K.value, g.value, scal, scal_fd, S, tau.value, ups.value, resid, curl)


def _scalar_fd(C: ChartConnection, solution, x, delta: float) -> float:
    n = C.n
    st, combine = fd_stencil(x, delta, second=True)
    Zs = solution.matrices(st)[:, :n, :n]
    f = scale_density(C, st).value
    tau = f**2 * np.linalg.det(Zs)
    ginv = (np.sign(tau) * tau)[:, None, None] * Zs
    g = np.linalg.inv(ginv)
    g0, dg, ddg = combine(g)  # dg[i, j, e], ddg[i, j, e, f]
    gi = np.linalg.inv(g0)
    # t[d, b, c] = d_b g_dc + d_c g_db - d_d g_bc
    t = np.einsum("dcb->dbc", dg) + dg - np.einsum("bcd->dbc", dg)
    Gam = 0.5 * np.einsum("ad,dbc->abc", gi, t)
    dgi = -np.einsum("ai,ije,jd->ade", gi, dg, gi)
    dt = np.einsum("dcbe->dbce", ddg) + ddg - np.einsum("bcde->dbce", ddg)
    dGam = 0.5 * (np.einsum("ade,dbc->abce", dgi, t) + np.einsum("ad,dbce->abce", gi, dt))  # d_e Gamma^a_bc
    R = (
        np.einsum("cbda->abcd", dGam)
        - np.einsum("cadb->abcd", dGam)
        + np.einsum("cae,ebd->abcd", Gam, Gam)
        - np.einsum("cbe,ead->abcd", Gam, Gam)
    )
    Ric = np.einsum("abad->bd", R)
    return float(np.einsum("bd,bd->", gi, Ric))


# ---------------------------------------------------------------------------
# geometry of the locus

@dataclass
class GeodesicCheck:
    applicable: bool
    deviation: float | None
    normalized: float | None
    samples: int
    skipped: int
    note: str = ""


def _geodesics(C: ChartConnection, x0: np.ndarray, v0: np.ndarray, length: float, step: float, every: int):
    """RK4 for x'' = -Gamma(x', x'); returns sample times, positions and an inside mask."""
    nsteps = max(1, math.ceil(length / step - 1e-9))
    h = length / nsteps
    n = C.n

    def rhs(x, v):
        G = C.gamma_jet(x, 0).value
        return v, -np.einsum("pabc,pb,pc->pa", G, v, v)

    x, v = x0.copy(), v0.copy()
    inside = np.ones(len(x0), dtype=bool)
    times, pos, ok = [], [], []
    for k in range(1, nsteps + 1):
        k1x, k1v = rhs(x, v)
        k2x, k2v = rhs(x + 0.5 * h * k1x, v + 0.5 * h * k1v)
        k3x, k3v = rhs(x + 0.5 * h * k2x, v + 0.5 * h * k2v)
        k4x, k4v = rhs(x + h * k3x, v + h * k3v)
        x = x + (h / 6.0) * (k1x + 2 * k2x + 2 * k3x + k4x)
        v = v + (h / 6.0) * (k1v + 2 * k2v + 2 * k3v + k4v)
        inside &= C.contains(x)
        # keep stepping from a safe point once outside; those samples are dropped
        x = np.where(inside[:, None], x, x0)
        if k % every == 0 or k == nsteps:
            times.append(k * h)
            pos.append(x.copy())
            ok.append(inside.copy())
    return np.array(times), np.array(pos), np.array(ok)


def tangent_frame(conormal: np.ndarray) -> np.ndarray:
    """Orthonormal basis (columns) of the kernel of the conormal."""
    nvec = np.asarray(conormal, dtype=float)
    _, _, Vt = np.linalg.svd(nvec[None, :])
    return Vt[1:].T


def totally_geodesic_check(C: ChartConnection, solution, report: StrataReport, length: float = 0.3,
                           step: float = 1e-3, tolerances: Tolerances | None = None) -> GeodesicCheck:
    """Distance of locus-tangent geodesics from the locus, measured by |sigma|."""
    tol = tolerances or Tolerances()
    if report.branch != "n":
        return GeodesicCheck(False, None, None, 0, 0, "rank n+1 branch: the locus need not be totally geodesic")
    if not report.hypersurface_points:
        raise ValueError("nonempty locus required")
    starts, dirs = [], []
    for lp in report.hypersurface_points:
        T = tangent_frame(lp.conormal)
        for j in range(T.shape[1]):
            for s in (1.0, -1.0):
                starts.append(lp.x)
                dirs.append(s * T[:, j])
    starts, dirs = np.array(starts), np.array(dirs)
    times, pos, ok = _geodesics(C, starts, dirs, length, step, every=max(1, int(round(0.01 / step))))
    samples = pos[ok]
    if not len(samples):
        raise ValueError("every geodesic leaves the chart domain")
    tt = np.broadcast_to(times[:, None], ok.shape)[ok]
    M = solution.matrices(samples)
    f = scale_density(C, samples).value
    sig = np.array([abs(c.sigma) if c.sigma is not None else np.nan
                    for c in _classify_many(C, M, f, tol)])
    skipped = int(np.sum(~ok[-1]))
    return GeodesicCheck(True, float(np.nanmax(sig)), float(np.nanmax(sig / tt**2)), int(len(samples)), skipped)


@dataclass
class BoundaryData:
    point: np.ndarray
    conormal: np.ndarray
    zeta_hat: np.ndarray
    kernel_residual: float
    induced_residual: float | None
    conformal_rep: np.ndarray | None
    signature: tuple[int, int, int]
    weyl_residual: float | None = None
    curvature_residual: float | None = None
    tau_bar: float | None = None
    label: str | None = None


def boundary_restrict(C: ChartConnection, solution, point: LocusPoint, report: StrataReport,
                      tolerances: Tolerances | None = None, fd_step: float = 1e-3) -> BoundaryData:
    """Geometry induced by zeta on the degeneracy locus at one point."""
    tol = tolerances or Tolerances()
    n = C.n
    x = np.asarray(point.x, dtype=float)
    nvec = point.conormal
    M = solution.matrices(x[None])[0]
    zeta = M[:n, :n]
    kern = float(np.linalg.norm(zeta @ nvec) / max(1.0, np.linalg.norm(zeta)))
    T = tangent_frame(nvec)
    zh = T.T @ zeta @ T
    zh = 0.5 * (zh + zh.T)
    sig, _ = signature(zh, tol.tol_rank)
    f = float(scale_density(C, x[None]).value[0])
    if report.branch == "n+1":
        det = abs(np.linalg.det(zh))
        conf = zh / det ** (1.0 / (n - 1)) if det > 0 else None
        cs = curvature_jets(C, x[None], 1)
        W = cs.W.value[0]
        weyl = np.einsum("a,cj,cdae,de->j", nvec, T, W, zeta)
        return BoundaryData(x, nvec, zh, kern, None, conf, sig, weyl_residual=float(np.abs(weyl).max()))
    tau_bar = f**2 * float(np.linalg.det(zh))
    label = "Sigma_" + {PLUS: "+", MINUS: "-", ZERO: "0"}[_stratum(tau_bar, tol.tol_zero)]
    cj = curvature_jets(C, x[None], 2)
    Omega = curvature_matrix(cj.W.value[0], cj.Y.value[0])  # [c, e, B, F]
    I = point.I if point.I is not None else signed_adjugate(M, tol.tol_rank).I.vector() * f
    contraction = np.einsum("B,ceBF,eF->c", I, Omega, M[:n, :])
    induced = _induced_residual(C, solution, point, report, T, fd_step * float(C.half_width.min()), tol)
    return BoundaryData(x, nvec, zh, kern, induced, None, sig, curvature_residual=float(np.abs(contraction).max()),
                        tau_bar=tau_bar, label=label)


def _project_to_locus(solution, C, pts, nvec, ref, tol, reach):
    """Move points along the conormal onto the zero set of sigma (secant iterations)."""
    n = C.n
    s0 = np.zeros(len(pts))
    s1 = np.full(len(pts), 0.1 * reach)
    v0, _ = _values_at(solution, C, pts, n, tol, [ref] * len(pts))
    v1, _ = _values_at(solution, C, pts + s1[:, None] * nvec, n, tol, [ref] * len(pts))
    for _ in range(50):
        if np.all(np.abs(v1) <= 1e-14) or np.all(np.abs(s1 - s0) <= 1e-15):
            break
        denom = np.where(v1 != v0, v1 - v0, 1.0)
        s2 = np.where(v1 != v0, s1 - v1 * (s1 - s0) / denom, s1)
        s0, v0 = s1, v1
        s1 = s2
        v1, _ = _values_at(solution, C, pts + s1[:, None] * nvec, n, tol, [ref] * len(pts))
    return s1


def _induced_residual(C, solution, point: LocusPoint, report, T, delta, tol) -> float:
    """Trace-free part of the induced derivative of zeta_hat in the chart y = T^t (x - p).

    The induced connection is read off the embedding by finite differences
    and replaced by its trace-free projective representative, so that
    densities on the locus are trivialized by dy.  NaN when the stencil
    would leave the chart.  On a curve (n = 2) the trace-free part of any
    derivative vanishes, so the residual is zero there.
    """
    n = C.n
    m = n - 1
    x = point.x
    nvec = point.conormal
    ys, combine = fd_stencil(np.zeros(m), delta, second=True)
    base = x + ys @ T.T
    if not np.all(C.contains(base, margin=-2.0 * delta)):
        return math.nan
    s = _project_to_locus(solution, C, base, nvec, point.I, tol, delta)
    emb = base + s[:, None] * nvec
    Zs = solution.matrices(emb)[:, :n, :n]
    zh = np.einsum("ai,pab,bj->pij", T, Zs, T)
    z0, dz = combine(zh)[:2]  # dz[i, j, k] = d_k zeta_hat^{ij}
    _, ds, dds = combine(s)
    dx = T + np.outer(nvec, ds)  # dx[a, i] = d_i x^a
    ddx = np.einsum("a,ij->aij", nvec, dds)
    G = C.gamma_jet(x[None], 0).value[0]
    acc = ddx + np.einsum("abc,bi,cj->aij", G, dx, dx)
    Gh = np.einsum("ak,aij->kij", T, acc)  # induced Gamma^k_{ij}
    tr = np.einsum("aab->b", Gh) / (m + 1)
    eye = np.eye(m)
    Gh = Gh - np.einsum("ac,b->abc", eye, tr) - np.einsum("ab,c->abc", eye, tr)
    nab = (
        np.einsum("ijk->kij", dz)
        + np.einsum("ike,ej->kij", Gh, z0)
        + np.einsum("jke,ie->kij", Gh, z0)
    )
    return float(np.abs(_chi_from(nab, m)).max())


# ---------------------------------------------------------------------------
# compactification order

@dataclass
class OrderResult:
    order: int
    evidence: dict


def compactification_order(C: ChartConnection, solution, report: StrataReport, offset: float = 0.05,
                           tolerances: Tolerances | None = None) -> OrderResult:
    """Order of the projective compactification along the locus.

    Evidence: the vanishing order of tau = det zeta on the locus (first
    order for rank n+1, second order for rank n where sigma is the defining
    density), and the parallelism of the defining density for the metric
    connection just off the locus.
    """
    tol = tolerances or Tolerances()
    if not report.hypersurface_points:
        raise ValueError("nonempty locus required")
    n = C.n
    X = np.array([lp.x for lp in report.hypersurface_points])
    nv = np.array([lp.conormal for lp in report.hypersurface_points])
    # vanishing order of the weighted determinant on the locus
    Z = solution.zeta_jet(X, 1)
    F = scale_density(C, X, 1)
    tau = _det_jet(Z) * (F * F)
    grad_tau = np.linalg.norm(tau.partials().value, axis=1)
    grad_zeta = np.array([np.linalg.norm(lp.gradient) for lp in report.hypersurface_points])
    # parallelism of the defining density for the metric connection, off the locus
    reach = offset * float(C.half_width.min())
    near = np.vstack([X + reach * nv, X - reach * nv])
    near = near[C.contains(near)]
    md = reconstruct_metric(C, solution, near, tol, fd=False)
    Zn = solution.zeta_jet(near, 1)
    Fn = scale_density(C, near, 1)
    tn = _det_jet(Zn) * (Fn * Fn)
    dtau = tn.partials().value
    tv = tn.value[:, None]
    res_w2 = np.abs(dtau + 2.0 * md.upsilon * tv).max() / np.abs(dtau).max()
    res_w1 = np.abs(dtau + 1.0 * md.upsilon * tv).max() / np.abs(dtau).max()
    order = 2 if report.rank == n + 1 else 1
    evidence = {
        "rank": report.rank,
        "defining_density": "tau" if order == 2 else "sigma",
        "weight": 2 if order == 2 else 1,
        "min_grad_defining_density": float(grad_zeta.min()),
        "max_grad_det_zeta_on_locus": float(grad_tau.max()),
        "tau_parallel_residual": float(res_w2),
        "tau_wrong_weight_residual": float(res_w1),
        "samples": int(len(near)),
    }
    return OrderResult(order, evidence)


# ---------------------------------------------------------------------------
# rank-one density solutions

@dataclass
class Rank1Report:
    sign: float
    sigma: np.ndarray
    points: np.ndarray
    factor_residual: float
    schouten_residual: float
    locus: np.ndarray
    geodesic_deviation: float | None


def analyze_rank1_density(C: ChartConnection, tau, grid: Grid, tolerances: Tolerances | None = None,
                          geodesic_length: float = 0.3) -> Rank1Report:
    """tau with rank-one L(tau): recover sigma with sigma^2 = +-tau and check L(tau) = +-(D sigma)(D sigma)."""
    tol = tolerances or Tolerances()
    n = C.n
    pts = grid.points()
    Ls = np.array([split_density(C, tau, p).matrix() for p in pts])
    vecs, signs = [], []
    for k, L in enumerate(Ls):
        w, V = np.linalg.eigh(L)
        radius = np.abs(w).max()
        rank = int(np.sum(np.abs(w) > tol.tol_rank * max(radius, 1e-300)))
        if rank != 1:
            raise RankError(f"L(tau) has rank {rank} at {pts[k].tolist()}")
        j = int(np.argmax(np.abs(w)))
        signs.append(np.sign(w[j]))
        vecs.append(V[:, j] * math.sqrt(abs(w[j])))
    if len(set(signs)) != 1:
        raise RankError("L(tau) changes sign over the grid")
    eps = float(signs[0])
    vecs = _orient_grid(grid, vecs)
    sigma = np.array([v[n] for v in vecs])

    # exact jets of sigma = +-sqrt(eps tau) away from its zero set
    T = scalar_jet(tau, pts, 3)
    t0 = eps * T.value
    off = t0 > 1e-6 * max(1.0, np.abs(t0).max())
    factor, schouten = 0.0, 0.0
    if np.any(off):
        P_ = pts[off]
        Tj = scalar_jet(tau, P_, 3) * eps
        r = np.sqrt(Tj.value)
        sj = Tj.compose([r, 0.5 / r, -0.25 / r**3, 0.375 / r**5]) * np.sign(sigma[off])
        cj = curvature_jets(C, P_, 2)
        grad = sj.partials().value
        s0 = sj.value
        D = np.concatenate([grad, s0[:, None]], axis=1)  # (mu, xi) = (nabla sigma, sigma)
        factor = float(np.abs(Ls[off] - eps * np.einsum("pi,pj->pij", D, D)).max())
        hs = hessian(cj.G, sj).value
        Psig = cj.P.value + hs / s0[:, None, None]
        schouten = float(np.abs(Psig).max())

    # zero set of sigma on grid edges
    E = grid.edges()
    va, vb = sigma[E[:, 0]], sigma[E[:, 1]]
    locus = [pts[k] for k in np.nonzero(np.abs(sigma) <= tol.tol_zero)[0]]
    for (i, j) in E[(np.abs(va) > tol.tol_zero) & (np.abs(vb) > tol.tol_zero) & (np.sign(va) != np.sign(vb))]:
        a, b, fa = pts[i].copy(), pts[j].copy(), sigma[i]
        ref = vecs[i]
        for _ in range(200):
            mid = 0.5 * (a + b)
            w, V = np.linalg.eigh(split_density(C, tau, mid).matrix())
            k = int(np.argmax(np.abs(w)))
            v = V[:, k] * math.sqrt(abs(w[k]))
            v = v if float(v @ ref) >= 0 else -v
            fm = v[n]
            if abs(fm) <= tol.tol_zero or np.abs(b - a).max() < 1e-15:
                break
            if np.sign(fm) == np.sign(fa):
                a, fa = mid, fm
            else:
                b = mid
        locus.append(mid)
    locus = np.array(locus).reshape(-1, n)

    deviation = None
    if len(locus):
        starts, dirs = [], []
        for x in locus:
            w, V = np.linalg.eigh(split_density(C, tau, x).matrix())
            k = int(np.argmax(np.abs(w)))
            mu = V[:n, k]
            Tf = tangent_frame(mu / np.linalg.norm(mu))
            for j in range(Tf.shape[1]):
                for s in (1.0, -1.0):
                    starts.append(x)
                    dirs.append(s * Tf[:, j])
        times, pos, ok = _geodesics(C, np.array(starts), np.array(dirs), geodesic_length, 1e-3, every=10)
        samples = pos[ok]
        if len(samples):
            vals = scalar_jet(tau, samples, 0).value
            deviation = float(np.sqrt(np.abs(vals)).max())
    return Rank1Report(eps, sigma, pts, factor, schouten, locus, deviation)
