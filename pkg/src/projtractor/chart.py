"""Chart connections: projective changes, special scale, curvature, models.

Christoffel symbols are stored as ``gamma[a][b][c]`` for Gamma^a_{bc} with
0-based indices; the lower pair is symmetric by storage.  Curvature arrays
use the index order of their symbols, e.g. ``R[a, b, c, d]`` is
R_{ab}{}^c{}_d with

    (nabla_a nabla_b - nabla_b nabla_a) v^c = R_{ab}{}^c{}_d v^d.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

import numpy as np

from . import expr as ex
from .expr import Expression
from .taylor import Taylor, contract

MODEL_NAMES = ("flat", "klein_ball", "gnomonic_sphere", "rank_n_flat", "perturbed_flat")


class NotSpecialError(ValueError):
    """The connection does not preserve any volume density."""


@dataclass(frozen=True)
class ChartConnection:
    n: int
    domain: tuple[tuple[float, float], ...]
    gamma: tuple  # gamma[a][b][c], symmetric in (b, c)
    is_special: bool = False
    name: str = "chart"

    def __post_init__(self):
        if not 2 <= self.n <= 4:
            raise ValueError("supported dimensions are 2..4")
        if len(self.domain) != self.n:
            raise ValueError("domain must have one interval per coordinate")
        for a, b, c in itertools.product(range(self.n), repeat=3):
            if self.gamma[a][b][c] != self.gamma[a][c][b]:
                raise ValueError("Christoffel symbols must be symmetric in the lower indices")
            if ex.max_variable(self.gamma[a][b][c]) > self.n:
                raise ValueError("Christoffel expression uses a variable beyond the chart dimension")

    @property
    def lower(self) -> np.ndarray:
        return np.array([lo for lo, _ in self.domain])

    @property
    def upper(self) -> np.ndarray:
        return np.array([hi for _, hi in self.domain])

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    @property
    def half_width(self) -> np.ndarray:
        return 0.5 * (self.upper - self.lower)

    def contains(self, points, margin: float = 0.0) -> np.ndarray:
        pts = np.atleast_2d(points)
        return np.all((pts >= self.lower - margin) & (pts <= self.upper + margin), axis=1)

    @property
    def is_flat_literal(self) -> bool:
        """True when every Christoffel symbol is the literal zero."""
        return all(ex.is_zero(self.gamma[a][b][c]) for a, b, c in self.entries())

    def entries(self):
        for a in range(self.n):
            for b in range(self.n):
                for c in range(b, self.n):
                    yield a, b, c

    def gamma_jet(self, points, order: int) -> Taylor:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        n = self.n
        out = Taylor.constant(np.zeros((pts.shape[0], n, n, n)), n, order)
        keys = [k for k in self.entries() if not ex.is_zero(self.gamma[k[0]][k[1]][k[2]])]
        if not keys:
            return out
        jets = ex.eval_many([self.gamma[a][b][c] for a, b, c in keys], pts, order)
        for (a, b, c), j in zip(keys, jets):
            out.c[:, a, b, c] = j.c
            out.c[:, a, c, b] = j.c
        return out


def make_chart(n: int, domain, entries: dict | None = None, *, is_special=False, name="chart") -> ChartConnection:
    """Build a chart from ``{(a, b, c): expression}`` with 0-based indices.

    Either ordering of the lower pair may be supplied; giving both with
    different expressions is an error.
    """
    table = [[[ex.ZERO] * n for _ in range(n)] for _ in range(n)]
    seen: dict = {}
    for (a, b, c), val in (entries or {}).items():
        e = ex.as_expression(val, n)
        key = (a, min(b, c), max(b, c))
        if key in seen and seen[key] != e:
            raise ValueError(f"conflicting entries for Gamma^{a}_{{{b}{c}}}")
        seen[key] = e
        table[a][b][c] = e
        table[a][c][b] = e
    gamma = tuple(tuple(tuple(row) for row in plane) for plane in table)
    dom = tuple((float(lo), float(hi)) for lo, hi in domain)
    return ChartConnection(n, dom, gamma, is_special, name)


@dataclass(frozen=True)
class Upsilon:
    components: tuple  # n Expressions

    @classmethod
    def of(cls, comps, n: int | None = None) -> "Upsilon":
        return cls(tuple(ex.as_expression(c, n) for c in comps))


def projective_change(C: ChartConnection, u: Upsilon) -> ChartConnection:
    """Gamma'^a_{bc} = Gamma^a_{bc} + Upsilon_b delta^a_c + Upsilon_c delta^a_b."""
    n = C.n
    if len(u.components) != n:
        raise ValueError("Upsilon must have n components")
    entries = {}
    for a, b, c in C.entries():
        e = C.gamma[a][b][c]
        if a == c:
            e = ex.add(e, u.components[b])
        if a == b:
            e = ex.add(e, u.components[c])
        entries[(a, b, c)] = e
    trivial = all(ex.is_zero(t) for t in u.components)
    return make_chart(n, C.domain, entries, is_special=C.is_special and trivial, name=C.name)


def trace_form(C: ChartConnection) -> list[Expression]:
    """The 1-form Gamma^b_{ba}."""
    return [ex.total(C.gamma[b][b][a] for b in range(C.n)) for a in range(C.n)]


def special_normalize(C: ChartConnection) -> tuple[ChartConnection, Upsilon]:
    """Projectively change to the representative with vanishing trace Gamma^b_{ba}.

    That representative preserves the coordinate volume density, so weighted
    densities are plain functions whose covariant derivative is the partial
    derivative.
    """
    k = -1.0 / (C.n + 1)
    u = Upsilon(tuple(ex.scale(k, t) for t in trace_form(C)))
    out = projective_change(C, u)
    return replace(out, is_special=True), u


def scale_density(C: ChartConnection, points, order: int = 0, nodes: int = 24) -> Taylor:
    """Coefficient f of the volume form f dx^1...dx^n preserved by a special chart.

    Normalized by f(center) = 1.  log f is the line integral of the trace
    form from the center (Gauss-Legendre); its derivatives are the trace form
    and its jets.  Permutation-symbol contractions such as weighted
    determinants pick up powers of f in coordinates.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n = C.n
    trace = trace_form(C)
    if all(ex.is_zero(t) for t in trace):
        return Taylor.constant(np.ones(len(pts)), n, order)
    t_nodes, w = np.polynomial.legendre.leggauss(nodes)
    t_nodes, w = 0.5 * (t_nodes + 1.0), 0.5 * w
    d = pts - C.center
    quad = C.center + t_nodes[:, None, None] * d[None]  # (nodes, P, n)
    vals = np.stack([ex.evaluate(t, quad.reshape(-1, n)).reshape(len(t_nodes), -1) for t in trace], axis=-1)
    logf = np.einsum("k,kpa,pa->p", w, vals, d)
    derivs = [logf]
    if order >= 1:
        Tj = [ex.eval_batch(t, pts, order - 1) for t in trace]
        T = Taylor(np.stack([j.c for j in Tj], axis=1), n, order - 1)
        derivs.extend(T.derivative_arrays())
    L = Taylor.from_derivatives(derivs, n)
    f0 = np.exp(logf)
    return L.compose([f0] * (order + 1))


# ---------------------------------------------------------------------------
# curvature

def tperm(T: Taylor, spec: str) -> Taylor:
    return Taylor(np.einsum(spec.replace("->", "Z->") + "Z", T.c), T.n, T.order)


@dataclass(frozen=True)
class CurvatureSuite:
    R: np.ndarray
    Ric: np.ndarray
    P: np.ndarray
    W: np.ndarray
    Ycot: np.ndarray


@dataclass
class CurvatureJets:
    G: Taylor
    R: Taylor
    Ric: Taylor
    P: Taylor
    W: Taylor
    Y: Taylor | None


def _check_special(C: ChartConnection, Ric: np.ndarray, tol: float = 1e-10) -> None:
    if C.is_special:
        return
    anti = np.abs(Ric - np.swapaxes(Ric, -1, -2)).max(initial=0.0)
    if anti > tol * max(1.0, np.abs(Ric).max(initial=0.0)):
        raise NotSpecialError(
            "connection is not special (Ricci tensor not symmetric); call special_normalize first"
        )


def curvature_jets(C: ChartConnection, points, order: int = 2) -> CurvatureJets:
    """Curvature tensors as jets; ``order`` is the jet order of Gamma.

    R, Ric, P, W carry order ``order - 1`` and the Cotton tensor ``order - 2``.
    """
    n = C.n
    G = C.gamma_jet(points, order)
    dG = G.partials()  # dG[p, e, a, b, c] = d_e Gamma^a_{bc}
    t1 = tperm(dG, "pacbd->pabcd")
    quad = contract("pcae,pebd->pabcd", G, G)
    half = t1 + quad
    R = half - tperm(half, "pabcd->pbacd")
    Ric = tperm(R, "pabad->pbd")
    _check_special(C, Ric.value)
    P = (Ric + tperm(Ric, "pab->pba")) * (0.5 / (n - 1))
    delta = np.eye(n)
    schouten = contract("pbd,ca->pabcd", P, delta) - contract("pad,cb->pabcd", P, delta)
    W = R - schouten
    Y = None
    if order >= 2:
        dP = P.partials()  # dP[p, a, b, c] = d_a P_{bc}
        Gt = G.truncate(order - 2)
        Pt = P.truncate(order - 2)
        Y = (
            dP
            - tperm(dP, "pabc->pbac")
            - contract("peac,pbe->pabc", Gt, Pt)
            + contract("pebc,pae->pabc", Gt, Pt)
        )
    return CurvatureJets(G, R, Ric, P, W, Y)


def curvature_suite(C: ChartConnection, x) -> CurvatureSuite:
    """R, Ric, P, W and the Cotton tensor at a single point."""
    cj = curvature_jets(C, np.asarray(x, dtype=float).reshape(1, -1), 2)
    return CurvatureSuite(cj.R.value[0], cj.Ric.value[0], cj.P.value[0], cj.W.value[0], cj.Y.value[0])


# ---------------------------------------------------------------------------
# model geometries

@dataclass(frozen=True)
class KnownSolution:
    label: str
    zeta: tuple  # n x n Expressions (symmetric)
    params: dict = field(default_factory=dict)


def _var(i: int) -> Expression:
    return ex.Var(i + 1)


def _sym_zeta(n: int, fn) -> tuple:
    return tuple(tuple(fn(a, b) for b in range(n)) for a in range(n))


def _r2(n: int) -> Expression:
    return ex.total(ex.Pow(_var(i), 2) for i in range(n))


def _quadratic_family(n: int, zeta0, lambda0, rho0) -> tuple:
    """zeta(x) = zeta0 - x^a l^b - x^b l^a + rho0 x^a x^b."""
    def entry(a, b):
        e = ex.Num(float(zeta0[a][b]))
        e = ex.sub(e, ex.scale(lambda0[b], _var(a)))
        e = ex.sub(e, ex.scale(lambda0[a], _var(b)))
        return ex.add(e, ex.scale(rho0, ex.mul(_var(a), _var(b))))
    return _sym_zeta(n, entry)


def _box(n: int, params: dict, default: float):
    if "domain" in params:
        dom = params["domain"]
        if len(dom) != n:
            raise ValueError("domain must have n intervals")
        return tuple((float(lo), float(hi)) for lo, hi in dom)
    return tuple((-default, default) for _ in range(n))


def model_chart(name: str, n: int, params: dict | None = None) -> tuple[ChartConnection, list[KnownSolution]]:
    """Built-in projective structures with attached closed-form solutions."""
    params = dict(params or {})
    if name not in MODEL_NAMES:
        raise ValueError(f"unknown model {name!r}; choose from {', '.join(MODEL_NAMES)}")
    if not 2 <= n <= 4:
        raise ValueError("supported dimensions are 2..4")
    ident = np.eye(n)

    if name == "flat":
        C = make_chart(n, _box(n, params, 1.0), is_special=True, name=name)
        return C, [KnownSolution("identity", _sym_zeta(n, lambda a, b: ex.Num(ident[a, b])))]

    if name in ("klein_ball", "gnomonic_sphere"):
        sign = -1.0 if name == "klein_ball" else 1.0
        rep = params.get("representative", "flat")
        if rep == "flat":
            C = make_chart(n, _box(n, params, 1.5), is_special=True, name=name)
            zeta = _sym_zeta(
                n, lambda a, b: ex.add(ex.Num(ident[a, b]), ex.scale(sign, ex.mul(_var(a), _var(b))))
            )
            return C, [KnownSolution(name, zeta)]
        if rep != "levi_civita":
            raise ValueError("representative must be 'flat' or 'levi_civita'")
        # Levi-Civita connection of the metric, which preserves its own volume
        # form; in that scale zeta is the inverse metric itself.
        conf = ex.add(ex.ONE, ex.scale(sign, _r2(n)))  # 1 -+ r^2
        entries = {}
        for a, b, c in itertools.product(range(n), repeat=3):
            if b > c:
                continue
            t = ex.ZERO
            if a == c:
                t = ex.add(t, _var(b))
            if a == b:
                t = ex.add(t, _var(c))
            if not ex.is_zero(t):
                entries[(a, b, c)] = ex.div(ex.scale(-sign, t), conf)
        C = make_chart(n, _box(n, params, 0.6), entries, is_special=True, name=name + "_lc")
        zeta = _sym_zeta(
            n,
            lambda a, b: ex.mul(conf, ex.add(ex.Num(ident[a, b]), ex.scale(sign, ex.mul(_var(a), _var(b))))),
        )
        return C, [KnownSolution(name, zeta)]

    if name == "rank_n_flat":
        zeta0 = np.asarray(params.get("zeta0", ident), dtype=float)
        lam0 = np.asarray(params.get("lambda0", ident[0]), dtype=float)
        rho0 = float(params.get("rho0", 1.0))
        if zeta0.shape != (n, n) or lam0.shape != (n,) or not np.allclose(zeta0, zeta0.T):
            raise ValueError("rank_n_flat needs a symmetric n x n zeta0 and an n-vector lambda0")
        M = np.block([[zeta0, lam0[:, None]], [lam0[None, :], np.array([[rho0]])]])
        C = make_chart(n, _box(n, params, 2.0), is_special=True, name=name)
        sol = KnownSolution(
            "rank_n", _quadratic_family(n, zeta0, lam0, rho0), {"H0": M.tolist()}
        )
        return C, [sol]

    # perturbed_flat
    amp = float(params.get("amplitude", 0.1))
    seed = int(params.get("seed", 1))
    rng = np.random.default_rng(seed)
    monos = [()] + [(i,) for i in range(n)] + list(itertools.combinations_with_replacement(range(n), 2))
    coeffs = rng.uniform(-1.0, 1.0, size=(n, n, n, len(monos)))
    entries = {}
    for a, b, c in itertools.product(range(n), repeat=3):
        if b > c:
            continue
        sym = 0.5 * (coeffs[a, b, c] + coeffs[a, c, b])
        terms = []
        for k, mono in enumerate(monos):
            m = ex.ONE
            for i in mono:
                m = ex.mul(m, _var(i))
            terms.append(ex.scale(amp * sym[k], m))
        entries[(a, b, c)] = ex.total(terms)
    C = make_chart(n, _box(n, params, 1.0), entries, name=name)
    return C, []
