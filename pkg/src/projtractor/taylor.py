"""Truncated multivariate Taylor arithmetic.

A :class:`Taylor` stores, for every point of a batch and every entry of a
tensor, the Taylor coefficients of a smooth function up to a fixed total
degree.  Coefficients are indexed by monomials sorted by degree, so that
truncating to a lower order is a slice of the last axis.

Array layout is ``(P, *tensor_shape, M)`` where ``P`` is the number of
points and ``M`` the number of monomials of degree at most ``order``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np


@dataclass(frozen=True)
class Layout:
    n: int
    order: int
    monomials: tuple[tuple[int, ...], ...]
    index: dict
    sizes: tuple[int, ...]  # sizes[k] = number of monomials of degree <= k
    mult: np.ndarray  # (M, M, M): mult[g, x, y] = 1 when x + y = g
    deriv: np.ndarray  # (n, M_{order-1}, M_order)


@lru_cache(maxsize=None)
def layout(n: int, order: int) -> Layout:
    monos: list[tuple[int, ...]] = []
    sizes = []
    for deg in range(order + 1):
        for combo in itertools.combinations_with_replacement(range(n), deg):
            alpha = [0] * n
            for i in combo:
                alpha[i] += 1
            monos.append(tuple(alpha))
        sizes.append(len(monos))
    index = {a: i for i, a in enumerate(monos)}
    m = len(monos)
    mult = np.zeros((m, m, m))
    for x, ax in enumerate(monos):
        for y, ay in enumerate(monos):
            g = tuple(p + q for p, q in zip(ax, ay))
            if sum(g) <= order:
                mult[index[g], x, y] = 1.0
    m_low = sizes[order - 1] if order > 0 else 0
    deriv = np.zeros((n, m_low, m))
    for i in range(m_low):
        alpha = monos[i]
        for c in range(n):
            beta = list(alpha)
            beta[c] += 1
            deriv[c, i, index[tuple(beta)]] = alpha[c] + 1
    return Layout(n, order, tuple(monos), index, tuple(sizes), mult, deriv)


class Taylor:
    """Batch of tensor-valued truncated Taylor polynomials."""

    __slots__ = ("c", "n", "order")
    __array_priority__ = 100

    def __init__(self, coeffs: np.ndarray, n: int, order: int):
        self.c = coeffs
        self.n = n
        self.order = order

    # construction -------------------------------------------------------
    @classmethod
    def constant(cls, value, n: int, order: int, npts: int | None = None) -> "Taylor":
        v = np.asarray(value, dtype=float)
        if npts is not None and (v.ndim == 0 or v.shape[0] != npts):
            v = np.broadcast_to(v, (npts,) + v.shape)
        m = layout(n, order).sizes[order]
        c = np.zeros(v.shape + (m,))
        c[..., 0] = v
        return cls(c, n, order)

    @classmethod
    def variable(cls, points: np.ndarray, i: int, order: int) -> "Taylor":
        pts = np.asarray(points, dtype=float)
        n = pts.shape[1]
        lay = layout(n, order)
        c = np.zeros((pts.shape[0], lay.sizes[order]))
        c[:, 0] = pts[:, i]
        if order >= 1:
            e = [0] * n
            e[i] = 1
            c[:, lay.index[tuple(e)]] = 1.0
        return cls(c, n, order)

    @classmethod
    def from_derivatives(cls, derivs, n: int) -> "Taylor":
        """Inverse of :meth:`derivative_arrays`; ``derivs[k]`` has k trailing axes of size n."""
        order = len(derivs) - 1
        lay = layout(n, order)
        shape = np.shape(derivs[0])
        c = np.zeros(shape + (lay.sizes[order],))
        for j, alpha in enumerate(lay.monomials):
            k = sum(alpha)
            idx = tuple(i for i in range(n) for _ in range(alpha[i]))
            weight = math.prod(math.factorial(a) for a in alpha)
            c[..., j] = np.asarray(derivs[k])[(Ellipsis,) + idx] / weight
        return cls(c, n, order)

    # basic properties ---------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.c.shape[:-1]

    @property
    def value(self) -> np.ndarray:
        return self.c[..., 0]

    def truncate(self, order: int) -> "Taylor":
        if order >= self.order:
            return self
        m = layout(self.n, self.order).sizes[order]
        return Taylor(self.c[..., :m], self.n, order)

    def __getitem__(self, key) -> "Taylor":
        # indexes tensor/point axes only; the coefficient axis is trailing
        return Taylor(self.c[key], self.n, self.order)

    # arithmetic ---------------------------------------------------------
    def _coerce(self, other):
        if isinstance(other, Taylor):
            order = min(self.order, other.order)
            return self.truncate(order), other.truncate(order)
        return self, None

    def __add__(self, other):
        a, b = self._coerce(other)
        if b is None:
            c = a.c.copy()
            c[..., 0] = c[..., 0] + np.asarray(other, dtype=float)
            return Taylor(c, a.n, a.order)
        return Taylor(a.c + b.c, a.n, a.order)

    __radd__ = __add__

    def __neg__(self):
        return Taylor(-self.c, self.n, self.order)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        a, b = self._coerce(other)
        if b is None:
            s = np.asarray(other, dtype=float)
            return Taylor(a.c * s[..., None], a.n, a.order)
        return Taylor(_cauchy(a.c, b.c, layout(a.n, a.order).mult), a.n, a.order)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Taylor):
            return self * other.reciprocal()
        return self * (1.0 / np.asarray(other, dtype=float))

    def __rtruediv__(self, other):
        return self.reciprocal() * other

    def reciprocal(self) -> "Taylor":
        u0 = self.value
        derivs = [1.0 / u0]
        for k in range(1, self.order + 1):
            derivs.append(-k * derivs[-1] / u0)
        return self.compose(derivs)

    def ipow(self, k: int) -> "Taylor":
        """Integer power by repeated squaring."""
        if k < 0:
            return self.ipow(-k).reciprocal()
        result = Taylor.constant(np.ones(self.shape), self.n, self.order)
        base = self
        while k:
            if k & 1:
                result = result * base
            k >>= 1
            if k:
                base = base * base
        return result

    def compose(self, derivs) -> "Taylor":
        """Evaluate f(self) given f and its derivatives at the constant term.

        ``derivs[k]`` is the k-th derivative of f at ``self.value``.
        """
        delta = Taylor(self.c.copy(), self.n, self.order)
        delta.c[..., 0] = 0.0
        out = Taylor.constant(derivs[0], self.n, self.order)
        power = None
        for k in range(1, self.order + 1):
            power = delta if power is None else power * delta
            out = out + power * (np.asarray(derivs[k]) / math.factorial(k))
        return out

    # calculus -----------------------------------------------------------
    def partials(self) -> "Taylor":
        """All first partial derivatives; new axis 1 holds the direction."""
        if self.order == 0:
            raise ValueError("cannot differentiate an order-0 jet")
        d = layout(self.n, self.order).deriv
        c = np.moveaxis(np.einsum("...j,cij->c...i", self.c, d), 0, 1)
        return Taylor(c, self.n, self.order - 1)

    def derivative_arrays(self) -> list[np.ndarray]:
        """Derivative tensors ``[f, Df, D2f, D3f]`` up to ``self.order``.

        Higher derivative tensors are filled from one coefficient per
        monomial, so they are exactly symmetric.
        """
        lay = layout(self.n, self.order)
        out = [self.c[..., 0].copy()]
        for k in range(1, self.order + 1):
            arr = np.empty(self.shape + (self.n,) * k)
            for combo in itertools.combinations_with_replacement(range(self.n), k):
                alpha = [0] * self.n
                for i in combo:
                    alpha[i] += 1
                weight = math.prod(math.factorial(a) for a in alpha)
                val = self.c[..., lay.index[tuple(alpha)]] * weight
                for perm in set(itertools.permutations(combo)):
                    arr[(Ellipsis,) + perm] = val
            out.append(arr)
        return out


def _cauchy(a: np.ndarray, b: np.ndarray, mult: np.ndarray) -> np.ndarray:
    a, b = np.broadcast_arrays(a, b)
    out = np.zeros(a.shape)
    for x in range(a.shape[-1]):
        # coefficients of b shifted by the monomial x
        out += a[..., x : x + 1] * (b @ mult[:, x, :].T)
    return out


def _einsum2(sa: str, sb: str, out: str, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Two-operand einsum evaluated as a batched matrix product.

    Indices shared by both operands and the output are batch axes, shared
    indices absent from the output are summed.
    """
    if len(set(sa)) != len(sa) or len(set(sb)) != len(sb):
        return np.einsum(f"{sa},{sb}->{out}", a, b)
    only_a = [i for i in sa if i not in sb and i not in out]
    only_b = [i for i in sb if i not in sa and i not in out]
    if only_a:
        keep = "".join(i for i in sa if i not in only_a)
        a, sa = np.einsum(f"{sa}->{keep}", a), keep
    if only_b:
        keep = "".join(i for i in sb if i not in only_b)
        b, sb = np.einsum(f"{sb}->{keep}", b), keep
    size = {i: a.shape[k] for k, i in enumerate(sa)}
    for k, i in enumerate(sb):
        size[i] = max(size.get(i, 1), b.shape[k])
    batch = [i for i in out if i in sa and i in sb]
    contr = [i for i in sa if i in sb and i not in out]
    fa = [i for i in sa if i not in sb]
    fb = [i for i in sb if i not in sa]
    at = np.broadcast_to(
        np.transpose(a, [sa.index(i) for i in batch + fa + contr]),
        tuple(size[i] for i in batch + fa + contr),
    )
    bt = np.broadcast_to(
        np.transpose(b, [sb.index(i) for i in batch + contr + fb]),
        tuple(size[i] for i in batch + contr + fb),
    )
    nb = math.prod(size[i] for i in batch)
    na = math.prod(size[i] for i in fa)
    nk = math.prod(size[i] for i in contr)
    nf = math.prod(size[i] for i in fb)
    res = np.matmul(at.reshape(nb, na, nk), bt.reshape(nb, nk, nf))
    res = res.reshape(tuple(size[i] for i in batch + fa + fb))
    order = batch + fa + fb
    return np.transpose(res, [order.index(i) for i in out])


def contract(spec: str, a, b) -> Taylor:
    """Einstein-summation product of two tensor jets (or a jet and an array).

    ``spec`` follows :func:`numpy.einsum` over the tensor axes only, with the
    point axis written explicitly as ``p``.
    """
    lhs, out = spec.split("->")
    sa, sb = lhs.split(",")
    if not isinstance(b, Taylor):
        return Taylor(np.einsum(f"{sa}Z,{sb}->{out}Z", a.c, np.asarray(b, dtype=float)), a.n, a.order)
    if not isinstance(a, Taylor):
        return Taylor(np.einsum(f"{sa},{sb}Z->{out}Z", np.asarray(a, dtype=float), b.c), b.n, b.order)
    order = min(a.order, b.order)
    a, b = a.truncate(order), b.truncate(order)
    lay = layout(a.n, order)
    res = None
    for x in range(a.c.shape[-1]):
        ax = a.c[..., x]
        if not np.any(ax):
            continue
        # coefficients of b shifted by the monomial x
        m = lay.sizes[order - sum(lay.monomials[x])]
        shifted = b.c[..., :m] @ lay.mult[:, x, :m].T
        term = _einsum2(sa, sb + "Z", out + "Z", ax, shifted)
        res = term if res is None else res + term
    if res is None:
        shape_probe = np.einsum(f"{sa},{sb}->{out}", a.c[..., 0], b.c[..., 0])
        res = np.zeros(shape_probe.shape + (a.c.shape[-1],))
    return Taylor(res, a.n, order)
