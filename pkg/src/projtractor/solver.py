"""Parallel transport for the prolonged connection and the solution space.

Symmetric 2-tractors are handled as vectors in an orthonormal (Frobenius)
basis of symmetric (n+1) x (n+1) matrices, so transport along a curve is a
linear ODE ``dv/dt = -xdot^c B_c v`` integrated with classical RK4.
Paths are polylines; every straight segment of every path in a batch is
integrated simultaneously.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import expr as ex
from .bgg import PROLONGATION_SIGN, _split_from_jets, prolonged_operator, split_metrizability_jet, zeta_jet
from .chart import ChartConnection, NotSpecialError, curvature_jets, special_normalize
from .taylor import Taylor
from .tractor import Tractor2Sym, connection_matrix


class TransportError(RuntimeError):
    """Path leaves the chart or the integrator misses its error budget."""


class IllConditionedError(RuntimeError):
    """Kernel dimension changes across the tolerance sweep."""


class VerificationError(RuntimeError):
    """A computed basis element fails the prolonged-equation check."""


# ---------------------------------------------------------------------------
# symmetric matrices as vectors

@lru_cache(maxsize=None)
def sym_basis(n: int) -> np.ndarray:
    """Orthonormal basis E[k] of symmetric (n+1) x (n+1) matrices."""
    N = n + 1
    out = []
    for i in range(N):
        for j in range(i, N):
            E = np.zeros((N, N))
            if i == j:
                E[i, i] = 1.0
            else:
                E[i, j] = E[j, i] = 1.0 / math.sqrt(2.0)
            out.append(E)
    basis = np.array(out)
    basis.setflags(write=False)
    return basis


def sym_to_vec(M: np.ndarray) -> np.ndarray:
    n = M.shape[-1] - 1
    return np.einsum("kij,...ij->...k", sym_basis(n), M)


def vec_to_sym(v: np.ndarray, n: int) -> np.ndarray:
    return np.einsum("kij,...k->...ij", sym_basis(n), v)


# ---------------------------------------------------------------------------
# paths

@dataclass(frozen=True)
class CurvePath:
    """Polyline x(t), t in [0, 1], parametrized proportionally to length."""

    vertices: np.ndarray

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.vertices, dtype=float))
        if v.shape[0] < 2:
            raise ValueError("a path needs at least two vertices")
        object.__setattr__(self, "vertices", v)

    @classmethod
    def straight(cls, a, b) -> "CurvePath":
        return cls(np.array([a, b], dtype=float))

    @property
    def start(self) -> np.ndarray:
        return self.vertices[0]

    @property
    def end(self) -> np.ndarray:
        return self.vertices[-1]

    @property
    def is_closed(self) -> bool:
        return bool(np.allclose(self.start, self.end, rtol=0.0, atol=1e-14))

    def segment_lengths(self) -> np.ndarray:
        return np.linalg.norm(np.diff(self.vertices, axis=0), axis=1)

    def reversed(self) -> "CurvePath":
        return CurvePath(self.vertices[::-1].copy())

    def then(self, other: "CurvePath") -> "CurvePath":
        if not np.allclose(self.end, other.start, rtol=0.0, atol=1e-14):
            raise ValueError("paths do not join")
        return CurvePath(np.vstack([self.vertices, other.vertices[1:]]))

    def __call__(self, t) -> np.ndarray:
        lengths = self.segment_lengths()
        cum = np.concatenate([[0.0], np.cumsum(lengths)])
        s = np.clip(np.asarray(t, dtype=float), 0.0, 1.0) * cum[-1]
        return np.stack([np.interp(s, cum, self.vertices[:, i]) for i in range(self.vertices.shape[1])], axis=-1)


def lasso_rectangle(x0, i: int, j: int, s_i: float, s_j: float) -> CurvePath:
    """Rectangle in the (i, j) coordinate plane centered at x0, entered from x0."""
    x0 = np.asarray(x0, dtype=float)
    ei = np.zeros_like(x0)
    ej = np.zeros_like(x0)
    ei[i], ej[j] = s_i, s_j
    pts = [x0, x0 + ei, x0 + ei + ej, x0 - ei + ej, x0 - ei - ej, x0 + ei - ej, x0 + ei, x0]
    return CurvePath(np.array(pts))


def loop_family(C: ChartConnection, x0, scales=(0.2, 0.5, 0.8), quads: int = 4, seed: int = 0) -> list[CurvePath]:
    """Deterministic loop family at x0 used to probe holonomy."""
    x0 = np.asarray(x0, dtype=float)
    room = np.minimum(C.upper - x0, x0 - C.lower)
    loops = []
    for i, j in itertools.combinations(range(C.n), 2):
        for s in scales:
            si = min(s * C.half_width[i], room[i])
            sj = min(s * C.half_width[j], room[j])
            loops.append(lasso_rectangle(x0, i, j, si, sj))
    rng = np.random.default_rng(seed)
    inner_lo = C.center - 0.9 * C.half_width
    inner_hi = C.center + 0.9 * C.half_width
    for _ in range(quads):
        corners = rng.uniform(inner_lo, inner_hi, size=(3, C.n))
        loops.append(CurvePath(np.vstack([x0, corners, x0])))
    return loops


# ---------------------------------------------------------------------------
# generators

def _bmats(A: np.ndarray, W: np.ndarray, Y: np.ndarray, n: int) -> np.ndarray:
    """Matrices of M -> B_c(M) in the symmetric basis, shape (P, n, Nv, Nv).

    Built from the operator on all (n+1)^2 matrix entries and projected with
    the orthonormal basis; agrees with :func:`prolonged_operator`.
    """
    N = n + 1
    P = A.shape[0]
    eye = np.eye(N)
    op = A[:, :, :, None, :, None] * eye[None, None, None, :, None, :]
    op = op + eye[None, None, :, None, :, None] * A[:, :, None, :, None, :]
    s = PROLONGATION_SIGN / n
    mid = s * W  # [p, c, d, a, e]: coefficient of zeta^{de} in the (a, X) slot
    op[:, :, :n, n, :n, :n] += np.transpose(mid, (0, 1, 3, 2, 4))
    op[:, :, n, :n, :n, :n] += np.transpose(mid, (0, 1, 3, 2, 4))
    op[:, :, n, n, :n, :n] -= 2.0 * s * np.transpose(Y, (0, 1, 3, 2))
    E = sym_basis(n).reshape(-1, N * N)
    nv = E.shape[0]
    right = op.reshape(-1, N * N) @ E.T  # (P n N^2, Nv)
    right = np.swapaxes(right.reshape(P * n, N * N, nv), 1, 2).reshape(-1, N * N)
    out = (right @ E.T).reshape(P, n, nv, nv)
    return np.swapaxes(out, -1, -2)


def ensure_special(C: ChartConnection) -> ChartConnection:
    """The chart itself when its connection is special, else its trace-free representative."""
    if C.is_special or C.is_flat_literal:
        return C
    rng = np.random.default_rng(0)
    probe = np.vstack([C.center, rng.uniform(C.center - 0.9 * C.half_width, C.center + 0.9 * C.half_width, (16, C.n))])
    try:
        curvature_jets(C, probe, 1)
        return C
    except NotSpecialError:
        return special_normalize(C)[0]


class Generator:
    """Evaluates the prolonged-connection matrices B_c on a special chart."""

    def __init__(self, C: ChartConnection, chunk: int = 20000):
        self.C = C
        self.n = C.n
        self.nv = (C.n + 1) * (C.n + 2) // 2
        self.chunk = chunk
        self.flat = C.is_flat_literal
        self._const = self._eval(C.center[None, :])[0] if self.flat else None

    def _eval(self, pts: np.ndarray) -> np.ndarray:
        cj = curvature_jets(self.C, pts, 2)
        A = connection_matrix(cj.G, cj.P).value
        return _bmats(A, cj.W.value, cj.Y.value, self.n)

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        if self.flat:
            return np.broadcast_to(self._const, (pts.shape[0],) + self._const.shape)
        out = np.empty((pts.shape[0], self.n, self.nv, self.nv))
        for k in range(0, pts.shape[0], self.chunk):
            out[k : k + self.chunk] = self._eval(pts[k : k + self.chunk])
        return out

    def jet(self, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """B_c and its first partials d_a B_c, shapes (P, n, Nv, Nv) and (P, a, c, Nv, Nv)."""
        pts = np.atleast_2d(pts)
        cj = curvature_jets(self.C, pts, 3)
        A = connection_matrix(cj.G, cj.P).truncate(1)
        W, Y = cj.W.truncate(1), cj.Y
        B = _bmats(A.value, W.value, Y.value, self.n)
        dA, dW, dY = A.partials().value, W.partials().value, Y.partials().value
        dB = np.stack(
            [_bmats(dA[:, a], dW[:, a], dY[:, a], self.n) for a in range(self.n)], axis=1
        )
        return B, dB


# ---------------------------------------------------------------------------
# integration

@dataclass
class _Batch:
    U: np.ndarray  # (R, Nv, K) fine-step result
    err: np.ndarray  # (R,) Richardson estimate, max-norm


def _rk4_step(G0, Gh, G1, U, h):
    k1 = G0 @ U
    k2 = Gh @ (U + 0.5 * h * k1)
    k3 = Gh @ (U + 0.5 * h * k2)
    k4 = G1 @ (U + h * k3)
    return U + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _integrate_segments(gen: Generator, starts, ends, nsteps: int, V0=None) -> _Batch:
    """Transport along straight segments with nsteps and 2*nsteps RK4 steps."""
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    ends = np.atleast_2d(np.asarray(ends, dtype=float))
    R, n = starts.shape
    nv = gen.nv
    vel = ends - starts
    V = np.broadcast_to(np.eye(nv), (R, nv, nv)) if V0 is None else np.asarray(V0, dtype=float)
    V = np.array(np.broadcast_to(V, (R, nv, V.shape[-1])))
    h = 1.0 / nsteps
    if gen.flat:
        G = -np.einsum("rc,ckm->rkm", vel, gen._const)
        coarse = np.linalg.matrix_power(_rk4_matrix(G, h), nsteps) @ V
        fine = np.linalg.matrix_power(_rk4_matrix(G, 0.5 * h), 2 * nsteps) @ V
        return _Batch(fine, np.abs(fine - coarse).reshape(R, -1).max(axis=1) / 15.0)
    coarse, fine = V.copy(), V.copy()
    slab = max(1, gen.chunk // (4 * R))
    for k0 in range(0, nsteps, slab):
        k1 = min(nsteps, k0 + slab)
        ts = np.arange(4 * k0, 4 * k1 + 1) * (0.25 * h)
        pts = starts[:, None, :] + ts[None, :, None] * vel[:, None, :]
        B = gen(pts.reshape(-1, n)).reshape(R, len(ts), n, nv, nv)
        G = -np.einsum("rc,rtckm->rtkm", vel, B)
        for k in range(k1 - k0):
            j = 4 * k
            coarse = _rk4_step(G[:, j], G[:, j + 2], G[:, j + 4], coarse, h)
            fine = _rk4_step(G[:, j], G[:, j + 1], G[:, j + 2], fine, 0.5 * h)
            fine = _rk4_step(G[:, j + 2], G[:, j + 3], G[:, j + 4], fine, 0.5 * h)
    return _Batch(fine, np.abs(fine - coarse).reshape(R, -1).max(axis=1) / 15.0)


def _rk4_matrix(G: np.ndarray, h: float) -> np.ndarray:
    """One RK4 step for a constant generator: the degree-4 Taylor polynomial of exp(hG)."""
    I = np.broadcast_to(np.eye(G.shape[-1]), G.shape)
    hG = h * G
    out, term = I.copy(), I
    for k in range(1, 5):
        term = term @ hG / k
        out = out + term
    return out


def _check_inside(C: ChartConnection, paths) -> None:
    for p in paths:
        if not np.all(C.contains(p.vertices, margin=1e-12)):
            raise TransportError("path leaves the chart domain")


def propagators(C: ChartConnection, paths, h: float = 1e-3, budget: float = 1e-9, gen: Generator | None = None):
    """Transport matrices (in the symmetric basis) and error estimates for several paths."""
    paths = list(paths)
    _check_inside(C, paths)
    gen = gen or Generator(C)
    total = math.ceil(1.0 / h - 1e-9)
    starts, ends, owner, counts = [], [], [], []
    for k, p in enumerate(paths):
        lengths = p.segment_lengths()
        L = lengths.sum()
        for seg, ell in enumerate(lengths):
            if ell == 0.0:
                continue
            starts.append(p.vertices[seg])
            ends.append(p.vertices[seg + 1])
            owner.append(k)
            counts.append(max(1, math.ceil(total * ell / L - 1e-9)))
    nv = gen.nv
    mats = [np.eye(nv) for _ in paths]
    errs = np.zeros(len(paths))
    if starts:
        batch = _integrate_segments(gen, np.array(starts), np.array(ends), max(counts))
        for r, k in enumerate(owner):
            mats[k] = batch.U[r] @ mats[k]
            errs[k] += batch.err[r]
    mats = np.array(mats)
    scale = np.maximum(1.0, np.abs(mats).reshape(len(paths), -1).max(axis=1))
    if np.any(errs > budget * scale):
        raise TransportError(f"integrator error estimate {errs.max():.3e} exceeds budget {budget:.1e}")
    return mats, errs


def transport(C: ChartConnection, H0: Tractor2Sym, path: CurvePath, h: float = 1e-3) -> Tractor2Sym:
    """Parallel transport of a symmetric 2-tractor for the prolonged connection."""
    C = _require_special(C)
    U, _ = propagators(C, [path], h)
    M0 = H0.matrix() if isinstance(H0, Tractor2Sym) else np.asarray(H0, dtype=float)
    return Tractor2Sym.from_matrix(vec_to_sym(U[0] @ sym_to_vec(M0), C.n))


def holonomy(C: ChartConnection, x0, loop: CurvePath, h: float = 1e-3) -> np.ndarray:
    """Holonomy of a loop at x0 as an Nv x Nv matrix in the symmetric basis."""
    C = _require_special(C)
    if not (loop.is_closed and np.allclose(loop.start, x0, rtol=0.0, atol=1e-12)):
        raise ValueError("loop must start and end at x0")
    return propagators(C, [loop], h)[0][0]


def _require_special(C: ChartConnection) -> ChartConnection:
    if C.is_special or C.is_flat_literal:
        return C
    curvature_jets(C, C.center[None, :], 1)  # raises NotSpecialError
    return C


def ray_transport(C: ChartConnection, x0, V0: np.ndarray, targets, h: float = 1e-3, budget: float = 1e-9,
                  gen: Generator | None = None) -> np.ndarray:
    """Transport the columns of V0 (Nv x K) from x0 to every target along straight rays."""
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    if not np.all(C.contains(targets, margin=1e-12)):
        raise TransportError("target outside the chart domain")
    gen = gen or Generator(C)
    nsteps = math.ceil(1.0 / h - 1e-9)
    x0 = np.asarray(x0, dtype=float)
    out = np.empty((len(targets), gen.nv, V0.shape[-1]))
    same = np.all(targets == x0, axis=1)
    out[same] = V0
    idx = np.nonzero(~same)[0]
    if len(idx):
        batch = _integrate_segments(gen, np.broadcast_to(x0, (len(idx), C.n)), targets[idx], nsteps, V0[None])
        scale = np.maximum(1.0, np.abs(batch.U).reshape(len(idx), -1).max(axis=1))
        if np.any(batch.err > budget * scale):
            raise TransportError(f"integrator error estimate {batch.err.max():.3e} exceeds budget {budget:.1e}")
        out[idx] = batch.U
    return out


# ---------------------------------------------------------------------------
# finite differences

_D1 = ((-2, 1.0 / 12.0), (-1, -8.0 / 12.0), (1, 8.0 / 12.0), (2, -1.0 / 12.0))
_D2 = ((-2, -1.0 / 12.0), (-1, 16.0 / 12.0), (0, -30.0 / 12.0), (1, 16.0 / 12.0), (2, -1.0 / 12.0))


def fd_stencil(x, delta: float, second: bool = False):
    """Stencil points and a function combining values into derivative arrays.

    Uses fourth-order central differences for first, pure second and mixed
    second derivatives.
    """
    x = np.asarray(x, dtype=float)
    n = len(x)
    pts = [x.copy()]
    for a in range(n):
        for s in (-2, -1, 1, 2):
            p = x.copy()
            p[a] += s * delta
            pts.append(p)
    pairs = list(itertools.combinations(range(n), 2)) if second else []
    for a, b in pairs:
        for (si, _), (sj, _) in itertools.product(_D1, _D1):
            p = x.copy()
            p[a] += si * delta
            p[b] += sj * delta
            pts.append(p)

    def combine(vals: np.ndarray):
        f0 = vals[0]
        d1 = np.zeros(f0.shape + (n,))
        d2 = np.zeros(f0.shape + (n, n))
        for a in range(n):
            base = 1 + 4 * a
            near = {s: vals[base + k] for k, s in enumerate((-2, -1, 1, 2))}
            near[0] = f0
            d1[..., a] = sum(w * near[s] for s, w in _D1) / delta
            d2[..., a, a] = sum(w * near[s] for s, w in _D2) / delta**2
        k = 1 + 4 * n
        for a, b in pairs:
            acc = 0.0
            for (_, wi), (_, wj) in itertools.product(_D1, _D1):
                acc = acc + wi * wj * vals[k]
                k += 1
            d2[..., a, b] = d2[..., b, a] = acc / delta**2
        return (f0, d1, d2) if second else (f0, d1)

    return np.array(pts), combine


# ---------------------------------------------------------------------------
# solution fields

class ParallelSolution:
    """Solution of the prolonged system determined by its value at a base point."""

    def __init__(self, C: ChartConnection, base_point, H0, h: float = 1e-3):
        self.C = C
        self.n = C.n
        self.base_point = np.asarray(base_point, dtype=float)
        M0 = H0.matrix() if isinstance(H0, Tractor2Sym) else np.asarray(H0, dtype=float)
        self.H0 = Tractor2Sym.from_matrix(M0)
        self.v0 = sym_to_vec(M0)
        self.h = h
        self._gen = Generator(C)

    def matrices(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        V = ray_transport(self.C, self.base_point, self.v0[:, None], pts, self.h, gen=self._gen)
        return vec_to_sym(V[..., 0], self.n)

    def jet(self, points, order: int = 1) -> Taylor:
        """Jet of M(H) from the parallel-transport equation itself."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        V = ray_transport(self.C, self.base_point, self.v0[:, None], pts, self.h, gen=self._gen)[..., 0]
        derivs = [V]
        if order >= 1:
            if order >= 2:
                B, dB = self._gen.jet(pts)
            else:
                B, dB = self._gen(pts), None
            dV = -np.einsum("pckm,pm->pkc", B, V)
            derivs.append(dV)
            if order >= 2:
                # d_a d_c v = -(d_a B_c) v - B_c d_a v
                ddV = -np.einsum("packm,pm->pkac", dB, V) - np.einsum("pckm,pma->pkac", B, dV)
                derivs.append(0.5 * (ddV + np.swapaxes(ddV, -1, -2)))
        if order > 2:
            raise ValueError("parallel solutions provide jets up to order 2")
        E = sym_basis(self.n)
        mats = [np.einsum("kij,pk...->pij...", E, d) for d in derivs]
        return Taylor.from_derivatives(mats, self.n)

    def zeta_jet(self, points, order: int = 2) -> Taylor:
        return self.jet(points, order)[:, : self.n, : self.n]


class ExprSolution:
    """Solution given in closed form by expressions for zeta."""

    def __init__(self, C: ChartConnection, zeta):
        self.C = C
        self.n = C.n
        self.zeta = tuple(tuple(ex.as_expression(zeta[a][b], C.n) for b in range(C.n)) for a in range(C.n))

    def matrices(self, points) -> np.ndarray:
        return split_metrizability_jet(self.C, self.zeta, points, 0).value

    def jet(self, points, order: int = 1) -> Taylor:
        return split_metrizability_jet(self.C, self.zeta, points, order)

    def zeta_jet(self, points, order: int = 2) -> Taylor:
        return zeta_jet(self.zeta, np.atleast_2d(points), order)


def evaluate_solution(C: ChartConnection, solution: ParallelSolution, x) -> tuple[Tractor2Sym, np.ndarray]:
    """H(x) by straight transport from the base point, and its top slot."""
    M = solution.matrices(np.asarray(x, dtype=float)[None])[0]
    H = Tractor2Sym.from_matrix(M)
    return H, H.zeta


def consistency_check(solution: ParallelSolution, points, delta: float = 1e-2) -> float:
    """max |L(zeta_fd) - H| where zeta_fd is reconstructed from transported values."""
    C = solution.C
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n = C.n
    worst = 0.0
    for x in pts:
        stencil, combine = fd_stencil(x, delta, second=True)
        M = solution.matrices(stencil)
        Z = Taylor.from_derivatives(list(combine(M[:, :n, :n])), n)
        Z = Taylor(Z.c[None], n, 2)
        cj = curvature_jets(C, x[None], 2)
        L = _split_from_jets(cj.G, cj.P, Z, n).value[0]
        worst = max(worst, float(np.abs(L - M[0]).max()))
    return worst


# ---------------------------------------------------------------------------
# solution space

@dataclass
class SolverConfig:
    h: float = 1e-3
    tol_rank: float = 1e-8
    sweep: tuple[float, ...] = (1e-7, 1e-8, 1e-9, 1e-10, 1e-11)
    scales: tuple[float, ...] = (0.2, 0.5, 0.8)
    quads: int = 4
    seed: int = 0
    grid: int = 5
    fd_step: float = 5e-3  # relative to the smallest half-width of the domain
    verify_tol: float = 1e-6
    verify: bool = True


@dataclass
class SolutionBasis:
    base_point: np.ndarray
    basis: list[Tractor2Sym]
    dim: int
    residual_score: float
    singular_values: np.ndarray = field(repr=False)
    gap_ratio: float
    noise_floor: float
    sweep: dict
    curvature_kernel_dim: int
    chart: ChartConnection = field(repr=False)

    def solution(self, k: int, h: float = 1e-3) -> ParallelSolution:
        return ParallelSolution(self.chart, self.base_point, self.basis[k], h)


def _canonical_sign(v: np.ndarray) -> np.ndarray:
    k = int(np.argmax(np.abs(v) > np.abs(v).max() * (1 - 1e-9)))
    return v if v[k] > 0 else -v


def curvature_kernel_dim(gen: Generator, x0, tol: float = 1e-8) -> int:
    """dim of the common kernel of the prolonged curvature at x0."""
    B, dB = gen.jet(np.asarray(x0, dtype=float)[None])
    B, dB = B[0], dB[0]
    n = gen.n
    rows = []
    for a, c in itertools.combinations(range(n), 2):
        F = dB[a, c] - dB[c, a] + B[a] @ B[c] - B[c] @ B[a]
        rows.append(F)
    if not rows:
        return gen.nv
    s = np.linalg.svd(np.vstack(rows), compute_uv=False)
    scale = max(1.0, np.abs(B).max())
    return int(np.sum(s <= tol * scale))


def verification_grid(C: ChartConnection, m: int = 5, inset: float = 0.8) -> np.ndarray:
    axes = [np.linspace(C.center[i] - inset * C.half_width[i], C.center[i] + inset * C.half_width[i], m) for i in range(C.n)]
    return np.array(list(itertools.product(*axes)))


def solve_space(C: ChartConnection, x0=None, config: SolverConfig | None = None) -> SolutionBasis:
    """Space of parallel sections of the prolonged connection (metrizability solutions)."""
    cfg = config or SolverConfig()
    C = ensure_special(C)
    x0 = C.center if x0 is None else np.asarray(x0, dtype=float)
    gen = Generator(C)
    loops = loop_family(C, x0, cfg.scales, cfg.quads, cfg.seed)
    hol, errs = propagators(C, loops, cfg.h, gen=gen)
    nv = gen.nv
    stack = np.vstack([Hm - np.eye(nv) for Hm in hol])
    _, s, Vt = np.linalg.svd(stack)
    floor = max(1e-12, 10.0 * float(errs.max()))
    smax = float(s[0])

    def kernel_dim(tol: float) -> int:
        return int(np.sum(s <= max(tol * smax, floor)))

    sweep = {tol: kernel_dim(tol) for tol in cfg.sweep}
    if len(set(sweep.values())) > 1:
        raise IllConditionedError(f"kernel dimension varies across tolerances: {sweep}")
    dim = kernel_dim(cfg.tol_rank)
    retained = s[: nv - dim]
    discarded = s[nv - dim :]
    if len(retained):
        gap = float(retained.min() / max(discarded.max(initial=0.0), floor))
    else:
        gap = math.inf
    kernel = np.array([_canonical_sign(v) for v in Vt[nv - dim :]]) if dim else np.zeros((0, nv))
    basis = [Tractor2Sym.from_matrix(vec_to_sym(v, C.n)) for v in kernel]
    residual = 0.0
    if dim and cfg.verify:
        residual = _verify(C, gen, x0, kernel, cfg)
        if residual > cfg.verify_tol:
            raise VerificationError(f"basis fails the prolonged equation on the grid: residual {residual:.3e}")
    return SolutionBasis(
        base_point=x0,
        basis=basis,
        dim=dim,
        residual_score=residual,
        singular_values=s,
        gap_ratio=gap,
        noise_floor=floor,
        sweep=sweep,
        curvature_kernel_dim=curvature_kernel_dim(gen, x0),
        chart=C,
    )


def _verify(C: ChartConnection, gen: Generator, x0, kernel: np.ndarray, cfg: SolverConfig) -> float:
    """max over grid and basis of |d M + B(M)| with d M from finite differences."""
    grid = verification_grid(C, cfg.grid)
    n = C.n
    stencils = []
    combine = None
    for x in grid:
        pts, combine = fd_stencil(x, cfg.fd_step * float(C.half_width.min()))
        stencils.append(pts)
    allpts = np.vstack(stencils)
    V = ray_transport(C, x0, kernel.T, allpts, cfg.h, gen=gen)  # (P, Nv, dim)
    V = V.reshape(len(grid), -1, gen.nv, kernel.shape[0])
    B = gen(grid)
    worst = 0.0
    for g in range(len(grid)):
        f0, d1 = combine(V[g])
        res = np.einsum("kmc->ckm", d1) + np.einsum("ckm,md->ckd", B[g], f0)
        worst = max(worst, float(np.abs(res).max()))
    return worst
