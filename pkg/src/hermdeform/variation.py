"""First variation of the Chern curvature and the conformal-trace slope.

Two families of certified identities live here.

**Linear paths.**  Along ``g(t) = g - t*h`` (``h`` a Hermitian matrix
field) the lowered curvature tensor moves, to first order, by a
symmetrised second covariant derivative of ``h`` minus curvature
contractions of ``h``.  Tracing that identity with the moving inverse
metric gives the slope of the second trace: a symmetrised Laplacian of
``h`` plus a curvature contraction against the raised direction minus
symmetrised second-trace corrections.  The first trace has its own,
simpler slope: the complex Hessian of the scalar ``tr_g h`` (because the
first trace is a complex Hessian of ``-log det g``).  All three
right-hand sides are evaluated in closed form through the jet engine and
certified against central finite differences of the full curvature
pipeline with a mandatory second-order (Richardson) convergence check.

**Conformal paths.**  Along ``g(t) = e^{-t*F} g0`` the exponent-weighted
mixed trace::

    b(t)_{i jbar} = e^{t F} tilde^{k lbar} R(g(t))_{k lbar i jbar}

has slope exactly ``lap_tilde(F) * (g0)_{i jbar}`` where ``lap_tilde``
is the mixed complex Laplacian of the reference metric -- curvature of
the deformed metric drops out entirely.  This collapse is what lets the
deformation pipeline steer trace positivity with a single scalar bump
function, so it gets its own finite-difference certification
(:func:`b_identity_residual`).

Derivative/tensor index order for all 4-tensors is ``(k, lbar, i, jbar)``:
first pair = differentiation (form) slots, second pair = matrix slots.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Dict

import numpy as np

from .chern import connection_jets, curvature_from_jets, general_trace
from .core.fields import ScalarField, ScaledField, field_imag_residual
from .core.jets import (
    Jet,
    d_antihol,
    d_hol,
    jcontract,
    jet_variables,
    jstack,
)
from .core.metrics import (
    MetricSpec,
    conformal_scale,
    hermitian_residual,
    inverse_transpose,
)
from .errors import MetricNotPositive

__all__ = [
    "VariationDirection",
    "PerturbedMetric",
    "BTensorState",
    "constant_direction",
    "polynomial_direction",
    "random_direction",
    "conformal_direction",
    "variation_rhs",
    "variation_fd_check",
    "traced_variation_rhs",
    "traced_variation_fd_check",
    "first_trace_variation",
    "first_trace_variation_fd_check",
    "b_tensor",
    "hermitian_laplacian",
    "b_identity_residual",
    "richardson_gate",
]

#: Relative Hermiticity tolerance for perturbation directions.
HERMITICITY_TOL = 1e-10


# ---------------------------------------------------------------------------
# perturbation directions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VariationDirection:
    """A Hermitian matrix field ``h`` used as a metric perturbation.

    The sign convention throughout the module is ``d/dt g(t) = -h``,
    i.e. paths run ``g(t) = g - t*h``.

    Parameters
    ----------
    n : complex dimension (matrices are ``n x n``).
    jet_fn : callable ``(points, order) -> Jet`` with tail ``(n, n)``.
    label : human-readable description for reports.
    """

    n: int
    jet_fn: Callable[[np.ndarray, int], Jet]
    label: str = "h"

    def jet(self, points: np.ndarray, order: int = 2) -> Jet:
        out = self.jet_fn(np.asarray(points, dtype=np.float64), order)
        if out.shape[-2:] != (self.n, self.n):
            raise ValueError(
                f"direction {self.label!r} produced tail {out.shape}, "
                f"expected trailing ({self.n}, {self.n})"
            )
        return out

    def matrix(self, points: np.ndarray) -> np.ndarray:
        return self.jet(points, 0).value

    def __repr__(self) -> str:
        return f"VariationDirection({self.label!r}, n={self.n})"


def constant_direction(n: int, matrix: np.ndarray, label: str = "constant") -> VariationDirection:
    """Direction with the same Hermitian matrix at every point."""
    mat = np.asarray(matrix, dtype=np.complex128)
    if mat.shape != (n, n):
        raise ValueError(f"matrix shape {mat.shape} != ({n}, {n})")
    if hermitian_residual(mat) > HERMITICITY_TOL * (1.0 + float(np.max(np.abs(mat)))):
        raise ValueError("constant direction matrix is not Hermitian")

    def jet_fn(points: np.ndarray, order: int) -> Jet:
        coords = jet_variables(points, order)
        batch = points.shape[:-1]
        zero = coords[0] * 0.0
        cols = []
        for i in range(n):
            row = [zero + np.broadcast_to(mat[i, j], batch) for j in range(n)]
            cols.append(jstack(row, axis=-1))
        return jstack(cols, axis=-2)

    return VariationDirection(n=n, jet_fn=jet_fn, label=label)


def polynomial_direction(
    n: int,
    coefficients: Dict[tuple, np.ndarray],
    label: str = "polynomial",
) -> VariationDirection:
    """Direction ``h(z) = sum_alpha C_alpha * monomial_alpha(x, y)``.

    ``coefficients`` maps real multi-indices ``alpha`` (length-``2n``
    tuples over the coordinates ``x_1..x_n, y_1..y_n``) to Hermitian
    ``n x n`` matrices; real monomial coefficients keep the whole field
    Hermitian pointwise.
    """
    coeffs = {}
    for alpha, mat in coefficients.items():
        alpha = tuple(int(a) for a in alpha)
        if len(alpha) != 2 * n:
            raise ValueError(f"multi-index {alpha} has length != {2 * n}")
        mat = np.asarray(mat, dtype=np.complex128)
        if mat.shape != (n, n):
            raise ValueError(f"coefficient shape {mat.shape} != ({n}, {n})")
        if hermitian_residual(mat) > HERMITICITY_TOL * (1.0 + float(np.max(np.abs(mat)))):
            raise ValueError(f"coefficient at {alpha} is not Hermitian")
        coeffs[alpha] = mat

    def jet_fn(points: np.ndarray, order: int) -> Jet:
        coords = jet_variables(points, order)
        batch = points.shape[:-1]
        entries = [[coords[0] * 0.0 for _ in range(n)] for _ in range(n)]
        for alpha, mat in coeffs.items():
            mono = None
            for var, power in enumerate(alpha):
                for _ in range(power):
                    mono = coords[var] if mono is None else mono * coords[var]
            for i in range(n):
                for j in range(n):
                    c = mat[i, j]
                    if c == 0:
                        continue
                    term = (
                        (mono * c)
                        if mono is not None
                        else coords[0] * 0.0 + np.broadcast_to(c, batch)
                    )
                    entries[i][j] = entries[i][j] + term
        rows = [jstack(entries[i], axis=-1) for i in range(n)]
        return jstack(rows, axis=-2)

    return VariationDirection(n=n, jet_fn=jet_fn, label=label)


def random_direction(
    n: int,
    rng: np.random.Generator,
    scale: float = 0.25,
    degree: int = 2,
    label: str = "random",
) -> VariationDirection:
    """Deterministic pseudo-random smooth Hermitian direction.

    Coefficient matrices decay with monomial degree so low-order
    structure dominates; ``scale`` bounds the constant term.
    """

    def herm(size: float) -> np.ndarray:
        a = rng.normal(scale=size, size=(n, n)) + 1j * rng.normal(scale=size, size=(n, n))
        return 0.5 * (a + a.conj().T)

    coefficients: Dict[tuple, np.ndarray] = {}
    zero_alpha = (0,) * (2 * n)
    coefficients[zero_alpha] = herm(scale)
    for var in range(2 * n):
        alpha = tuple(1 if v == var else 0 for v in range(2 * n))
        coefficients[alpha] = herm(scale / 2.0)
    if degree >= 2:
        for v1 in range(2 * n):
            for v2 in range(v1, 2 * n):
                alpha = tuple(
                    (1 if v == v1 else 0) + (1 if v == v2 else 0) for v in range(2 * n)
                )
                coefficients[alpha] = herm(scale / 6.0)
    return polynomial_direction(n, coefficients, label=label)


def conformal_direction(m: MetricSpec, psi: ScalarField, label: str = "psi*g") -> VariationDirection:
    """Direction ``h = psi * g`` (the tangent of a conformal path of
    ``m`` with exponent ``-t*psi``)."""

    def jet_fn(points: np.ndarray, order: int) -> Jet:
        g = m.matrix_jet(points, order)
        p = psi.jet(points, order)
        return g * p.reshape_tail(p.shape + (1, 1))

    return VariationDirection(n=m.n, jet_fn=jet_fn, label=label)


@dataclass(frozen=True)
class PerturbedMetric:
    """The path point ``g - t*h`` exposed with the metric-spec surface
    (``chart`` / ``n`` / ``matrix_jet`` / ``matrix``) so the curvature
    pipeline accepts it unchanged."""

    base: MetricSpec
    direction: VariationDirection
    t: float
    name: str = "perturbed"

    @property
    def chart(self):
        return self.base.chart

    @property
    def n(self) -> int:
        return self.base.n

    def matrix_jet(self, points: np.ndarray, order: int) -> Jet:
        g = self.base.matrix_jet(points, order)
        if self.t == 0.0:
            return g
        return g - self.direction.jet(points, order) * self.t

    def matrix(self, points: np.ndarray) -> np.ndarray:
        return self.matrix_jet(points, 0).value


# ---------------------------------------------------------------------------
# covariant derivatives of the direction
# ---------------------------------------------------------------------------


def _direction_ingredients(m: MetricSpec, h: VariationDirection, points: np.ndarray) -> dict:
    """Everything the variation formulas need at a point batch.

    Returns values (plain arrays) for: metric ``g``, inverse ``ginv``
    (``[k, l] = g^{k lbar}``), torsion, lowered curvature ``riem`` with
    slots ``(k, lbar, i, jbar)``, second trace ``s2``, the direction
    ``h`` with its first covariant derivatives, and both orderings of
    its mixed second covariant derivative:

    * ``hess_ha[..., k, l, i, j] = (nabla_k nabla_lbar h)_{i jbar}``
    * ``hess_ah[..., k, l, i, j] = (nabla_lbar nabla_k h)_{i jbar}``

    Chern covariant derivatives correct holomorphic matrix slots along
    holomorphic directions only (and conjugately for anti-holomorphic),
    so each expansion carries a single connection term per slot.
    """
    n = m.n
    pts = np.asarray(points, dtype=np.float64)
    g_jet, ginv_jet, gamma_jet = connection_jets(m, pts, order=2)
    h_jet = h.jet(pts, 2)
    hval = h_jet.value
    resid = hermitian_residual(hval)
    if resid > HERMITICITY_TOL * (1.0 + float(np.max(np.abs(hval)))):
        raise ValueError(
            f"direction {h.label!r} is not Hermitian (residual {resid:.3e})"
        )

    gamma = gamma_jet.value
    gamma_conj_jet = gamma_jet.conj()

    # nabla_k h_{i jbar} = d_k h - Gamma_{ki}^r h_{r jbar}
    dh_hol = jstack([d_hol(h_jet, k, n) for k in range(n)], axis=-3)
    nabla_hol = dh_hol - jcontract("...kir,...rj->...kij", gamma_jet, h_jet)
    # nabla_lbar h_{i jbar} = dbar_l h - conj(Gamma_{lj}^s) h_{i sbar}
    dh_anti = jstack([d_antihol(h_jet, l, n) for l in range(n)], axis=-3)
    nabla_anti = dh_anti - jcontract("...ljs,...is->...lij", gamma_conj_jet, h_jet)

    # nabla_lbar (nabla_k h): correct the anti-holomorphic matrix slot only
    d_nabla_hol = np.stack(
        [d_antihol(nabla_hol, l, n).value for l in range(n)], axis=-4
    )  # (..., l, k, i, j)
    hess_ah = d_nabla_hol - np.einsum(
        "...ljs,...kis->...lkij", np.conj(gamma), nabla_hol.value
    )
    hess_ah = np.swapaxes(hess_ah, -4, -3)  # -> (..., k, l, i, j)

    # nabla_k (nabla_lbar h): correct the holomorphic matrix slot only
    d_nabla_anti = np.stack(
        [d_hol(nabla_anti, k, n).value for k in range(n)], axis=-4
    )  # (..., k, l, i, j)
    hess_ha = d_nabla_anti - np.einsum(
        "...kir,...lrj->...klij", gamma, nabla_anti.value
    )

    cj = curvature_from_jets(pts, g_jet, ginv_jet, gamma_jet)
    return {
        "n": n,
        "g": g_jet.value,
        "ginv": ginv_jet.value,
        "gamma": gamma,
        "torsion": cj.torsion,
        "riem": cj.curvature,
        "s2": cj.second_trace,
        "h": hval,
        "h_jet": h_jet,
        "ginv_jet": ginv_jet,
        "nabla_hol": nabla_hol.value,
        "nabla_anti": nabla_anti.value,
        "hess_ha": hess_ha,
        "hess_ah": hess_ah,
    }


# ---------------------------------------------------------------------------
# curvature-tensor variation
# ---------------------------------------------------------------------------


def variation_rhs(m: MetricSpec, h: VariationDirection, points: np.ndarray) -> np.ndarray:
    """Closed-form ``d/dt R(g - t h)_{k lbar i jbar}`` at ``t = 0``.

    Equals ``1/2 (nabla_k nabla_lbar + nabla_lbar nabla_k) h_{i jbar}``
    minus ``1/2`` of the curvature contractions of ``h`` on each matrix
    slot; shape ``(*batch, n, n, n, n)`` with slots ``(k, lbar, i, jbar)``.
    """
    ing = _direction_ingredients(m, h, points)
    sym = 0.5 * (ing["hess_ha"] + ing["hess_ah"])
    ginv, riem, hval = ing["ginv"], ing["riem"], ing["h"]
    # R_{k lbar i}^r h_{r jbar} = g^{p sbar} R_{k lbar i sbar} h_{p jbar}
    curv_hol = np.einsum("...ps,...klis,...pj->...klij", ginv, riem, hval)
    # R_{k lbar}^{sbar}_{jbar} h_{i sbar} = g^{p sbar} R_{k lbar p jbar} h_{i sbar}
    curv_anti = np.einsum("...ps,...klpj,...is->...klij", ginv, riem, hval)
    return sym - 0.5 * (curv_hol + curv_anti)


def variation_fd_check(
    m: MetricSpec, h: VariationDirection, points: np.ndarray, dt: float
) -> float:
    """Max-norm residual between the closed-form variation and the
    central finite difference of the full curvature pipeline at step
    ``dt``.  Second-order accurate: halving ``dt`` should shrink the
    residual about fourfold (callers assert the ratio, see
    :func:`richardson_gate`)."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    rhs = variation_rhs(m, h, points)
    fd = _curvature_path_derivative(m, h, points, dt)
    return float(np.max(np.abs(fd - rhs)))


def _curvature_path_derivative(
    m: MetricSpec, h: VariationDirection, points: np.ndarray, dt: float
) -> np.ndarray:
    plus = PerturbedMetric(base=m, direction=h, t=+dt)
    minus = PerturbedMetric(base=m, direction=h, t=-dt)
    for spec in (plus, minus):
        vals = spec.matrix(points)
        sym = 0.5 * (vals + np.conj(np.swapaxes(vals, -1, -2)))
        eigs = np.linalg.eigvalsh(sym)
        if float(eigs.min()) <= 0.0:
            raise MetricNotPositive(
                f"perturbed metric at t={spec.t:+.3e} left the positive cone "
                f"(min eigenvalue {float(eigs.min()):.3e})"
            )
    from .chern import curvature_tensor  # local import keeps module load acyclic

    r_plus = curvature_tensor(plus, points).curvature
    r_minus = curvature_tensor(minus, points).curvature
    return (r_plus - r_minus) / (2.0 * dt)


# ---------------------------------------------------------------------------
# traced variations
# ---------------------------------------------------------------------------


def traced_variation_rhs(
    m: MetricSpec, h: VariationDirection, points: np.ndarray
) -> np.ndarray:
    """Closed-form ``d/dt S(g - t h)_{i jbar}`` at ``t = 0``, where ``S``
    is the second trace (inverse metric contracted over the derivative
    slots of the curvature).

    Equals the ``g``-trace of :func:`variation_rhs` over its derivative
    slots plus the term from the moving inverse metric::

        1/2 g^{p qbar} (nabla_p nabla_qbar + nabla_qbar nabla_p) h_{i jbar}
        + h^{k lbar} R_{k lbar i jbar}
        - 1/2 (S_i^k h_{k jbar} + S^{lbar}_{jbar} h_{i lbar})

    with every raised index raised by ``g``.  The asymmetric regroupings
    using a single Laplacian ordering and a single second-trace
    correction are identical (the commutator of the two orderings, traced,
    is exactly the difference of the two corrections).  The output is
    Hermitian and equals the central finite difference of the second
    trace along ``g - t h`` to ``O(dt^2)``
    (see :func:`traced_variation_fd_check`).
    """
    ing = _direction_ingredients(m, h, points)
    ginv, riem, s2, hval = ing["ginv"], ing["riem"], ing["s2"], ing["h"]
    lap = 0.5 * np.einsum(
        "...pq,...pqij->...ij", ginv, ing["hess_ha"] + ing["hess_ah"]
    )
    h_up = np.einsum("...kb,...al,...ab->...kl", ginv, ginv, hval)
    hr = np.einsum("...kl,...klij->...ij", h_up, riem)
    sh = np.einsum("...kl,...il,...kj->...ij", ginv, s2, hval)
    hs = np.einsum("...kl,...kj,...il->...ij", ginv, s2, hval)
    return lap + hr - 0.5 * (sh + hs)


def first_trace_variation(
    m: MetricSpec, h: VariationDirection, points: np.ndarray
) -> np.ndarray:
    """Closed-form ``d/dt Ric1(g - t h)_{i jbar}`` at ``t = 0``.

    The first trace is a complex Hessian of ``-log det g``, so its path
    derivative collapses to the complex Hessian of the scalar
    ``tr_g h = g^{k lbar} h_{k lbar}`` -- no curvature or connection
    terms survive.  Certified against the central finite difference of
    the first trace (see :func:`first_trace_variation_fd_check`).
    """
    n = m.n
    pts = np.asarray(points, dtype=np.float64)
    _, ginv_jet, _ = connection_jets(m, pts, order=2)
    u = jcontract("...kl,...kl->...", ginv_jet, h.jet(pts, 2))
    rows = []
    for i in range(n):
        di = d_hol(u, i, n)
        rows.append(np.stack([d_antihol(di, j, n).value for j in range(n)], axis=-1))
    return np.stack(rows, axis=-2)


def traced_variation_fd_check(
    m: MetricSpec, h: VariationDirection, points: np.ndarray, dt: float
) -> float:
    """Max-norm residual of :func:`traced_variation_rhs` against the
    central finite difference of the second trace along ``g - t h``."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    from .chern import second_ricci

    rhs = traced_variation_rhs(m, h, points)
    plus = PerturbedMetric(base=m, direction=h, t=+dt)
    minus = PerturbedMetric(base=m, direction=h, t=-dt)
    fd = (second_ricci(plus, points) - second_ricci(minus, points)) / (2.0 * dt)
    return float(np.max(np.abs(fd - rhs)))


def first_trace_variation_fd_check(
    m: MetricSpec, h: VariationDirection, points: np.ndarray, dt: float
) -> float:
    """Max-norm residual of :func:`first_trace_variation` against the
    central finite difference of the first trace along ``g - t h``."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    from .chern import first_ricci

    rhs = first_trace_variation(m, h, points)
    plus = PerturbedMetric(base=m, direction=h, t=+dt)
    minus = PerturbedMetric(base=m, direction=h, t=-dt)
    fd = (first_ricci(plus, points) - first_ricci(minus, points)) / (2.0 * dt)
    return float(np.max(np.abs(fd - rhs)))


# ---------------------------------------------------------------------------
# conformal paths: the exponent-weighted mixed trace
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BTensorState:
    """Snapshot of a conformal deformation: reference metric ``tilde``,
    undeformed metric ``base``, conformal exponent field and the current
    amplitude ``t >= 0`` (the deformed metric is ``e^{-t F} base``)."""

    tilde: MetricSpec
    base: MetricSpec
    exponent: ScalarField
    t: float = 0.0

    def __post_init__(self):
        if self.t < 0.0:
            raise ValueError("deformation amplitude t must be >= 0")

    def at(self, t: float) -> "BTensorState":
        return replace(self, t=float(t))

    def deformed(self) -> MetricSpec:
        return _deformed_metric(self.base, self.exponent, self.t)


def _deformed_metric(base: MetricSpec, exponent: ScalarField, t: float) -> MetricSpec:
    if t == 0.0:
        return base
    return conformal_scale(
        base, ScaledField(exponent, -float(t)), label=f"{base.name}*exp(-t*F)"
    )


def _b_value(
    tilde: MetricSpec,
    base: MetricSpec,
    exponent: ScalarField,
    t: float,
    points: np.ndarray,
) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    deformed = _deformed_metric(base, exponent, t)
    trace = general_trace(tilde, deformed, pts)
    f_jet = exponent.jet(pts, 0)
    resid = field_imag_residual(f_jet)
    scale = 1.0 + float(np.max(np.abs(f_jet.value.real)))
    if resid > 1e-10 * scale:
        raise ValueError(f"conformal exponent is not real (residual {resid:.3e})")
    weight = np.exp(float(t) * f_jet.value.real)
    return weight[..., None, None] * trace


def b_tensor(state: BTensorState, points: np.ndarray) -> np.ndarray:
    """The exponent-weighted mixed trace
    ``e^{t F} tilde^{k lbar} R(e^{-t F} base)_{k lbar i jbar}`` at the
    state's amplitude; shape ``(*batch, n, n)``."""
    return _b_value(state.tilde, state.base, state.exponent, state.t, points)


def hermitian_laplacian(
    tilde: MetricSpec, scalar: ScalarField, points: np.ndarray
) -> np.ndarray:
    """Mixed complex Laplacian ``tilde^{k lbar} d_k dbar_l scalar``
    (no factor of 2 or 4; the package's distance module reports the
    real-geometry rescaling separately)."""
    n = tilde.n
    pts = np.asarray(points, dtype=np.float64)
    f_jet = scalar.jet(pts, 2)
    ddbar = np.stack(
        [
            np.stack(
                [d_antihol(d_hol(f_jet, k, n), l, n).value for l in range(n)],
                axis=-1,
            )
            for k in range(n)
        ],
        axis=-2,
    )
    tinv = inverse_transpose(tilde.matrix(pts))
    lap = np.einsum("...kl,...kl->...", tinv, ddbar)
    resid = float(np.max(np.abs(lap.imag))) if lap.size else 0.0
    if resid > 1e-9 * (1.0 + float(np.max(np.abs(lap.real)))):
        raise ValueError(f"Laplacian of a real field has imaginary part {resid:.3e}")
    return lap.real


def b_identity_residual(state: BTensorState, points: np.ndarray, dt: float) -> float:
    """Max-norm residual between the central finite-difference slope of
    the weighted trace at the state's amplitude and its closed form
    ``lap_tilde(F) * base``.

    The identity is exact (the weighted trace is affine in ``t``), so
    for correct code this residual is pure roundoff at any step size.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    pts = np.asarray(points, dtype=np.float64)
    b_plus = _b_value(state.tilde, state.base, state.exponent, state.t + dt, pts)
    b_minus = _b_value(state.tilde, state.base, state.exponent, state.t - dt, pts)
    slope = (b_plus - b_minus) / (2.0 * dt)
    lap = hermitian_laplacian(state.tilde, state.exponent, pts)
    target = lap[..., None, None] * state.base.matrix(pts)
    return float(np.max(np.abs(slope - target)))


def richardson_gate(
    residual_coarse: float,
    residual_fine: float,
    lo: float = 30.0,
    hi: float = 500.0,
    floor: float = 1e-8,
) -> bool:
    """Second-order convergence check with a degeneracy guard.

    For a genuinely ``O(dt^2)`` residual pair (steps differing 10x) the
    ratio coarse/fine sits near 100 and must land in ``[lo, hi]``.
    Identities that hold exactly (e.g. affine-in-``t`` traces) leave
    only roundoff in both residuals, where the ratio is meaningless;
    both residuals under ``floor`` therefore also passes.
    """
    if residual_coarse <= floor and residual_fine <= floor:
        return True
    if residual_fine == 0.0:
        return residual_coarse <= floor
    ratio = residual_coarse / residual_fine
    return lo <= ratio <= hi
