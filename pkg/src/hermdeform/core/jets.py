"""Batched truncated Taylor ("jet") arithmetic over real variables.

This is the differentiation engine of the package.  A :class:`Jet` stores
the Taylor coefficients of a smooth function of ``nvars`` real variables,
truncated at total degree ``order``, for a whole batch of base points at
once.  All geometric quantities (metric derivatives, Christoffel symbols,
curvature tensors, variation formulas) are obtained by evaluating closed
form expressions *in this algebra*, so every derivative the package
reports is exact up to floating point roundoff -- there is no numerical
differencing anywhere in the curvature pipeline.

Storage convention
------------------
Coefficients are Taylor-normalized: ``coeffs[idx(alpha)] = d^alpha f / alpha!``
evaluated at the base point.  The raw partial derivative is recovered via
:meth:`Jet.partial_value` which multiplies by ``alpha!``.  The coefficient
array has shape ``(ncoeff, *shape)`` where ``shape`` is any trailing
batch/tensor shape; binary operations broadcast trailing shapes exactly
like numpy does.

Multi-indices are ordered by (total degree, lexicographic), so the
constant term is always index 0 and the ``nvars`` first-degree terms
follow immediately -- several extraction helpers rely on this layout.

The algebra is small on purpose: at most 4 real variables and order <= 4
(70 coefficients) ever occur in this package, and products reduce to a
few hundred fused multiply-adds per batch, each a vectorized numpy
operation over the batch.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import factorial
from typing import Callable, Sequence

import numpy as np

from ..errors import JetOrderError

__all__ = [
    "MAX_JET_ORDER",
    "MultiIndexTable",
    "jet_table",
    "Jet",
    "jet_constant",
    "jet_variables",
    "jexp",
    "jlog",
    "jsqrt",
    "jsin",
    "jcos",
    "jreciprocal",
    "jstack",
    "jmatmul",
    "jmat_transpose",
    "jmat_inverse",
    "jdet",
    "d_hol",
    "d_antihol",
]

MAX_JET_ORDER = 4
"""Largest truncation order supported (and ever needed) by the package."""


def _multi_indices(nvars: int, order: int) -> list[tuple[int, ...]]:
    """All multi-indices with ``|alpha| <= order`` in (degree, lex) order."""
    by_degree: list[list[tuple[int, ...]]] = [[(0,) * nvars]]
    for deg in range(1, order + 1):
        level: list[tuple[int, ...]] = []
        seen: set[tuple[int, ...]] = set()
        for alpha in by_degree[deg - 1]:
            for v in range(nvars):
                beta = alpha[:v] + (alpha[v] + 1,) + alpha[v + 1 :]
                if beta not in seen:
                    seen.add(beta)
                    level.append(beta)
        by_degree.append(sorted(level))
    return [alpha for level in by_degree for alpha in level]


@dataclass(frozen=True)
class MultiIndexTable:
    """Precomputed index bookkeeping for one ``(nvars, order)`` algebra.

    Attributes
    ----------
    nvars, order : int
        Number of real variables and truncation order.
    alphas : ndarray, shape (ncoeff, nvars)
        Multi-indices in canonical (degree, lex) order.
    index : dict
        Maps a multi-index tuple to its coefficient slot.
    factorials : ndarray, shape (ncoeff,)
        ``alpha!`` for converting Taylor coefficients to derivatives.
    mul_groups : tuple
        For each output slot ``g``: ``(g, i_array, j_array)`` with all
        coefficient pairs satisfying ``alphas[i] + alphas[j] == alphas[g]``.
    diff_maps : tuple
        Per variable ``v``: ``(dst, src, fac)`` arrays implementing the
        coefficient shift of d/dx_v (result lives in the order-1 table).
    """

    nvars: int
    order: int
    alphas: np.ndarray
    index: dict
    factorials: np.ndarray
    mul_groups: tuple
    diff_maps: tuple

    @property
    def ncoeff(self) -> int:
        return self.alphas.shape[0]


@lru_cache(maxsize=None)
def jet_table(nvars: int, order: int) -> MultiIndexTable:
    """Build (and cache) the :class:`MultiIndexTable` for an algebra."""
    if not 1 <= nvars:
        raise JetOrderError(f"need at least one variable, got {nvars}")
    if not 0 <= order <= MAX_JET_ORDER:
        raise JetOrderError(
            f"jet order must lie in [0, {MAX_JET_ORDER}], got {order}"
        )
    alphas_list = _multi_indices(nvars, order)
    alphas = np.array(alphas_list, dtype=np.int64)
    index = {alpha: i for i, alpha in enumerate(alphas_list)}
    factorials = np.array(
        [np.prod([factorial(a) for a in alpha]) for alpha in alphas_list],
        dtype=np.float64,
    )

    pair_lists: list[tuple[list[int], list[int]]] = [([], []) for _ in alphas_list]
    for i, ai in enumerate(alphas_list):
        deg_i = sum(ai)
        for j, aj in enumerate(alphas_list):
            if deg_i + sum(aj) > order:
                continue
            g = index[tuple(x + y for x, y in zip(ai, aj))]
            pair_lists[g][0].append(i)
            pair_lists[g][1].append(j)
    mul_groups = tuple(
        (g, np.array(ii, dtype=np.int64), np.array(jj, dtype=np.int64))
        for g, (ii, jj) in enumerate(pair_lists)
    )

    diff_maps = []
    if order >= 1:
        lower = _multi_indices(nvars, order - 1)
        lower_index = {alpha: i for i, alpha in enumerate(lower)}
        for v in range(nvars):
            dst, src, fac = [], [], []
            for beta in lower:
                gamma = beta[:v] + (beta[v] + 1,) + beta[v + 1 :]
                dst.append(lower_index[beta])
                src.append(index[gamma])
                fac.append(beta[v] + 1)
            diff_maps.append(
                (
                    np.array(dst, dtype=np.int64),
                    np.array(src, dtype=np.int64),
                    np.array(fac, dtype=np.float64),
                )
            )
    return MultiIndexTable(
        nvars=nvars,
        order=order,
        alphas=alphas,
        index=index,
        factorials=factorials,
        mul_groups=tuple(mul_groups),
        diff_maps=tuple(diff_maps),
    )


class Jet:
    """A batch of truncated Taylor expansions sharing one algebra.

    Parameters
    ----------
    table : MultiIndexTable
        The algebra this jet lives in.
    coeffs : ndarray, shape (table.ncoeff, *shape)
        Taylor-normalized coefficients; complex128 throughout.
    """

    __slots__ = ("table", "coeffs")

    def __init__(self, table: MultiIndexTable, coeffs: np.ndarray):
        coeffs = np.asarray(coeffs, dtype=np.complex128)
        if coeffs.shape[0] != table.ncoeff:
            raise JetOrderError(
                f"coefficient array has leading size {coeffs.shape[0]}, "
                f"table expects {table.ncoeff}"
            )
        self.table = table
        self.coeffs = coeffs

    # ------------------------------------------------------------------
    # basic structure
    # ------------------------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.coeffs.shape[1:]

    @property
    def order(self) -> int:
        return self.table.order

    @property
    def nvars(self) -> int:
        return self.table.nvars

    @property
    def value(self) -> np.ndarray:
        """The order-zero coefficient (the function's value)."""
        return self.coeffs[0]

    def partial_value(self, alpha: Sequence[int]) -> np.ndarray:
        """Exact partial derivative ``d^alpha f`` at the base points."""
        key = tuple(int(a) for a in alpha)
        if len(key) != self.nvars:
            raise JetOrderError(
                f"multi-index has {len(key)} entries, jet has {self.nvars} variables"
            )
        if sum(key) > self.order:
            raise JetOrderError(
                f"derivative {key} exceeds jet order {self.order}"
            )
        idx = self.table.index[key]
        return self.coeffs[idx] * self.table.factorials[idx]

    def truncate(self, order: int) -> "Jet":
        """Forget coefficients above ``order`` (no-op if already lower)."""
        if order >= self.order:
            return self
        new_table = jet_table(self.nvars, order)
        return Jet(new_table, self.coeffs[: new_table.ncoeff])

    def partial(self, var: int) -> "Jet":
        """The jet of ``d f / d x_var`` (one order lower)."""
        if self.order == 0:
            raise JetOrderError("cannot differentiate an order-0 jet")
        dst, src, fac = self.table.diff_maps[var]
        lower = jet_table(self.nvars, self.order - 1)
        out = np.empty((lower.ncoeff,) + self.shape, dtype=np.complex128)
        out[dst] = self.coeffs[src] * fac.reshape((-1,) + (1,) * len(self.shape))
        return Jet(lower, out)

    def conj(self) -> "Jet":
        """Complex conjugate (valid because the variables are real)."""
        return Jet(self.table, self.coeffs.conj())

    @property
    def real(self) -> "Jet":
        return (self + self.conj()) * 0.5

    @property
    def imag(self) -> "Jet":
        return (self - self.conj()) * (-0.5j)

    def reshape_tail(self, shape: tuple) -> "Jet":
        return Jet(self.table, self.coeffs.reshape((self.table.ncoeff,) + tuple(shape)))

    def __getitem__(self, key) -> "Jet":
        """Index into the trailing batch/tensor shape."""
        if not isinstance(key, tuple):
            key = (key,)
        return Jet(self.table, self.coeffs[(slice(None),) + key])

    # ------------------------------------------------------------------
    # ring operations
    # ------------------------------------------------------------------
    def _coerce(self, other) -> "Jet | None":
        if isinstance(other, Jet):
            if other.table.nvars != self.table.nvars:
                raise JetOrderError("cannot combine jets over different variables")
            order = min(self.order, other.order)
            return other.truncate(order)
        return None

    def __add__(self, other):
        rhs = self._coerce(other)
        if rhs is None:
            out = self.coeffs.copy()
            out[0] = out[0] + other
            return Jet(self.table, out)
        lhs = self.truncate(rhs.order)
        return Jet(lhs.table, lhs.coeffs + rhs.coeffs)

    __radd__ = __add__

    def __neg__(self):
        return Jet(self.table, -self.coeffs)

    def __sub__(self, other):
        return self + (-other if isinstance(other, Jet) else -np.asarray(other))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        rhs = self._coerce(other)
        if rhs is None:
            return Jet(self.table, self.coeffs * np.asarray(other))
        return self._combine(rhs, np.multiply)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Jet):
            return self * jreciprocal(other)
        return Jet(self.table, self.coeffs / np.asarray(other))

    def __rtruediv__(self, other):
        return jreciprocal(self) * other

    def __pow__(self, exponent: int):
        if not isinstance(exponent, (int, np.integer)):
            raise JetOrderError("jet powers must have integer exponents")
        if exponent < 0:
            return jreciprocal(self) ** (-exponent)
        result = jet_constant(self.table, np.ones(self.shape))
        base = self
        e = int(exponent)
        while e:
            if e & 1:
                result = result * base
            base = base * base if e > 1 else base
            e >>= 1
        return result

    def _combine(self, other: "Jet", op: Callable) -> "Jet":
        """Truncated product with ``op`` applied pairwise to coefficients.

        ``op`` must be a numpy-broadcasting binary operation (multiply,
        matmul, an einsum closure, ...).  The truncation order is the
        minimum of the two operands' orders.
        """
        order = min(self.order, other.order)
        a, b = self.truncate(order), other.truncate(order)
        table = a.table
        sample = op(a.coeffs[0], b.coeffs[0])
        out = np.zeros((table.ncoeff,) + sample.shape, dtype=np.complex128)
        for g, ii, jj in table.mul_groups:
            if len(ii) == 1:
                out[g] = op(a.coeffs[ii[0]], b.coeffs[jj[0]])
            else:
                acc = op(a.coeffs[ii[0]], b.coeffs[jj[0]])
                for i, j in zip(ii[1:], jj[1:]):
                    acc = acc + op(a.coeffs[i], b.coeffs[j])
                out[g] = acc
        return Jet(table, out)

    # ------------------------------------------------------------------
    # composition with analytic functions
    # ------------------------------------------------------------------
    def compose(self, series: np.ndarray) -> "Jet":
        """Evaluate ``sum_k series[k] * (self - value)^k`` in the algebra.

        ``series`` has shape ``(order+1, *shape)`` and holds the Taylor
        coefficients of the outer function around ``self.value``.  Used by
        all the analytic-function helpers below (Horner's scheme on the
        nilpotent part).
        """
        nil = Jet(self.table, self.coeffs.copy())
        nil.coeffs[0] = 0.0
        k_top = self.order
        acc = jet_constant(self.table, series[k_top])
        for k in range(k_top - 1, -1, -1):
            acc = acc * nil + series[k]
        return acc


def jet_constant(table: MultiIndexTable, value) -> Jet:
    """Lift a constant array into the algebra."""
    value = np.asarray(value, dtype=np.complex128)
    out = np.zeros((table.ncoeff,) + value.shape, dtype=np.complex128)
    out[0] = value
    return Jet(table, out)


def jet_variables(points: np.ndarray, order: int) -> list[Jet]:
    """Seed one jet per real coordinate for a batch of base points.

    Parameters
    ----------
    points : ndarray, shape (*batch, nvars)
        Base points; the trailing axis enumerates the variables.
    order : int
        Truncation order.

    Returns
    -------
    list of Jet
        ``jets[v]`` is the coordinate function ``x_v`` as a jet with
        trailing shape ``batch``.
    """
    points = np.asarray(points, dtype=np.float64)
    nvars = points.shape[-1]
    table = jet_table(nvars, order)
    batch = points.shape[:-1]
    jets = []
    for v in range(nvars):
        coeffs = np.zeros((table.ncoeff,) + batch, dtype=np.complex128)
        coeffs[0] = points[..., v]
        if order >= 1:
            unit = tuple(1 if w == v else 0 for w in range(nvars))
            coeffs[table.index[unit]] = 1.0
        jets.append(Jet(table, coeffs))
    return jets


# ----------------------------------------------------------------------
# analytic functions (series built from the value, then composed)
# ----------------------------------------------------------------------
def _series(jet: Jet, deriv_fn: Callable[[np.ndarray, int], np.ndarray]) -> np.ndarray:
    v = jet.value
    return np.array(
        [deriv_fn(v, k) / factorial(k) for k in range(jet.order + 1)]
    )


def jexp(jet: Jet) -> Jet:
    return jet.compose(_series(jet, lambda v, k: np.exp(v)))


def jlog(jet: Jet) -> Jet:
    """Principal logarithm; the jet's value must stay off (-inf, 0]."""
    v = jet.value
    if np.any(np.abs(v) == 0.0):
        raise JetOrderError("log of a jet with zero value")

    def dk(v, k):
        if k == 0:
            return np.log(v)
        return (-1.0) ** (k - 1) * factorial(k - 1) / v**k

    return jet.compose(_series(jet, dk))


def jsqrt(jet: Jet) -> Jet:
    v = jet.value
    if np.any(v.real <= 0.0):
        raise JetOrderError("sqrt of a jet requires strictly positive values")

    def deriv(v, k):
        coef = 1.0
        for i in range(k):
            coef *= 0.5 - i
        return coef * np.power(v, 0.5 - k)

    return jet.compose(_series(jet, deriv))


def jsin(jet: Jet) -> Jet:
    cycle = (np.sin, np.cos, lambda v: -np.sin(v), lambda v: -np.cos(v))
    return jet.compose(_series(jet, lambda v, k: cycle[k % 4](v)))


def jcos(jet: Jet) -> Jet:
    cycle = (np.cos, lambda v: -np.sin(v), lambda v: -np.cos(v), np.sin)
    return jet.compose(_series(jet, lambda v, k: cycle[k % 4](v)))


def jreciprocal(jet: Jet) -> Jet:
    v = jet.value
    if np.any(np.abs(v) == 0.0):
        raise JetOrderError("reciprocal of a jet with zero value")
    return jet.compose(
        _series(jet, lambda v, k: (-1.0) ** k * factorial(k) / v ** (k + 1))
    )


# ----------------------------------------------------------------------
# tensor helpers (jets with trailing tensor axes)
# ----------------------------------------------------------------------
def jstack(jets: Sequence[Jet], axis: int = -1) -> Jet:
    """Stack jets along a new trailing-tensor axis (negative axes only,
    counted from the end of the trailing shape)."""
    if axis >= 0:
        raise JetOrderError("jstack expects a negative axis into the tail shape")
    order = min(j.order for j in jets)
    parts = [j.truncate(order) for j in jets]
    table = parts[0].table
    coeffs = np.stack([p.coeffs for p in parts], axis=axis)
    return Jet(table, coeffs)


def jmatmul(a: Jet, b: Jet) -> Jet:
    """Matrix product over the last two trailing axes."""
    return a._combine(b, np.matmul)


def jcontract(subscripts: str, a: Jet, b: Jet) -> Jet:
    """General tensor contraction of two jets (einsum on the tails).

    ``subscripts`` addresses only the trailing tensor axes; batch axes
    must be covered by the usual ``...`` notation, e.g.
    ``'...kl,...ijl->...ijk'``.
    """

    def op(x, y):
        return np.einsum(subscripts, x, y)

    return a._combine(b, op)


def jmat_transpose(a: Jet) -> Jet:
    return Jet(a.table, np.swapaxes(a.coeffs, -1, -2))


def jmat_inverse(a: Jet) -> Jet:
    """Truncated inverse of a square-matrix jet by Newton iteration.

    ``X <- X (2I - A X)`` doubles the attained truncation degree each
    step, so ``ceil(log2(order+1))`` steps give the exact truncated
    inverse for any matrix size.
    """
    n = a.shape[-1]
    if a.shape[-2] != n:
        raise JetOrderError("jmat_inverse needs a square trailing matrix")
    eye = jet_constant(a.table, np.broadcast_to(np.eye(n), a.value.shape).copy())
    x = jet_constant(a.table, np.linalg.inv(a.value))
    degree = 0
    while degree < a.order:
        x = jmatmul(x, 2.0 * eye - jmatmul(a, x))
        degree = 2 * degree + 1
    return x


def jdet(a: Jet) -> Jet:
    """Determinant of a square-matrix jet (Laplace expansion, small n)."""
    n = a.shape[-1]
    if n == 1:
        return a[..., 0, 0]
    total = None
    for j in range(n):
        rows = [r for r in range(1, n)]
        cols = [c for c in range(n) if c != j]
        minor = jstack(
            [jstack([a[..., r, c] for c in cols], axis=-1) for r in rows],
            axis=-2,
        )
        term = a[..., 0, j] * jdet(minor)
        if j % 2:
            term = -term
        total = term if total is None else total + term
    return total


# ----------------------------------------------------------------------
# Wirtinger derivatives (variables ordered x_1..x_n, y_1..y_n)
# ----------------------------------------------------------------------
def d_hol(jet: Jet, i: int, n: int) -> Jet:
    """Holomorphic derivative d/dz_i = (d/dx_i - i d/dy_i)/2."""
    return (jet.partial(i) - 1j * jet.partial(n + i)) * 0.5


def d_antihol(jet: Jet, i: int, n: int) -> Jet:
    """Anti-holomorphic derivative d/dzbar_i = (d/dx_i + i d/dy_i)/2."""
    return (jet.partial(i) + 1j * jet.partial(n + i)) * 0.5
