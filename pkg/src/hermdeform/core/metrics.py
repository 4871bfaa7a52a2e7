"""Hermitian metric specifications and their exact jets.

A :class:`MetricSpec` pairs a chart with a base metric from a small
builtin catalogue and an optional real conformal exponent field, so the
metric array is ``H = e^{phi} * H_base`` with ``H[..., j, l]`` holding the
component ``g_{j lbar}`` (row index unbarred, column index barred;
``H`` is Hermitian and positive definite wherever the spec is valid).

Builtin bases
-------------
``flat``
    The identity matrix: the standard Kahler metric of ``C^n``; on a
    torus chart this is the flat torus.

``hopf_standard``
    ``delta_{jl} / |z|^2`` on an annulus chart: the classical homogeneous
    metric of the compact quotient ``(C^n - 0)/(z ~ lam z)``, invariant
    under the identification.

``fubini_study``
    ``delta_{jl}/(1+|z|^2) - zbar_j z_l/(1+|z|^2)^2`` in an affine chart:
    the constant-holomorphic-sectional-curvature reference used by the
    curvature oracle tests (its first curvature trace equals ``(n+1) g``).

All jets are produced by closed-form evaluation in the jet algebra, so
derivatives are exact to roundoff at any supported order.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from ..errors import ChartDomainError, MetricNotPositive
from .charts import ChartModel
from .fields import ScalarField, SumField, field_imag_residual
from .jets import Jet, jet_constant, jet_table, jet_variables, jexp, jreciprocal, jstack

__all__ = [
    "MetricSpec",
    "metric_jet",
    "metric_matrix",
    "conformal_scale",
    "flat_metric",
    "hopf_standard",
    "fubini_study",
    "validate_positive",
    "hermitian_residual",
    "real_metric_matrix",
    "inverse_transpose",
]

_BASES = ("flat", "hopf_standard", "fubini_study")


@dataclass(frozen=True)
class MetricSpec:
    """A Hermitian metric on a chart: base catalogue entry times e^phi."""

    chart: ChartModel
    base: str = "flat"
    phi: Optional[ScalarField] = None
    name: str = "metric"

    def __post_init__(self):
        if self.base not in _BASES:
            raise ChartDomainError(
                f"unknown base metric {self.base!r}; choose from {_BASES}"
            )

    @property
    def n(self) -> int:
        return self.chart.n

    def matrix_jet(self, points: np.ndarray, order: int) -> Jet:
        return metric_jet(self, points, order)

    def matrix(self, points: np.ndarray) -> np.ndarray:
        return metric_matrix(self, points)


def _base_jet(spec: MetricSpec, coords: list[Jet], batch: tuple) -> Jet:
    n = spec.n
    table = coords[0].table
    eye = np.broadcast_to(np.eye(n), batch + (n, n)).copy()
    if spec.base == "flat":
        return jet_constant(table, eye)
    s = None
    for c in coords:
        s = c * c if s is None else s + c * c
    if spec.base == "hopf_standard":
        rs = jreciprocal(s)
        return jet_constant(table, eye) * rs.reshape_tail(rs.shape + (1, 1))
    # fubini_study
    inv1 = jreciprocal(1.0 + s)
    inv2 = inv1 * inv1
    rows = []
    for j in range(n):
        zbar_j = coords[j] - 1j * coords[n + j]
        entries = []
        for l in range(n):
            z_l = coords[l] + 1j * coords[n + l]
            e = -(zbar_j * z_l) * inv2
            if j == l:
                e = e + inv1
            entries.append(e)
        rows.append(jstack(entries, axis=-1))
    return jstack(rows, axis=-2)


def metric_jet(spec: MetricSpec, points: np.ndarray, order: int) -> Jet:
    """Exact jet of the metric array at a batch of chart points.

    Parameters
    ----------
    spec : MetricSpec
    points : ndarray, shape (*batch, 2n)
        Real chart coordinates (must lie in the chart domain).
    order : int
        Jet truncation order (0..4).

    Returns
    -------
    Jet with trailing shape ``(*batch, n, n)``.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.shape[-1] != spec.chart.real_dim:
        raise ChartDomainError(
            f"points have {pts.shape[-1]} coordinates, chart needs "
            f"{spec.chart.real_dim}"
        )
    spec.chart.require_inside(pts)
    coords = jet_variables(pts, order)
    base = _base_jet(spec, coords, pts.shape[:-1])
    if spec.phi is None:
        return base
    phi_jet = spec.phi.jet(pts, order)
    resid = field_imag_residual(phi_jet)
    if resid > 1e-10:
        raise MetricNotPositive(
            f"conformal exponent of {spec.name!r} is not real "
            f"(imaginary residue {resid:.3e})"
        )
    factor = jexp(phi_jet.real)
    return base * factor.reshape_tail(factor.shape + (1, 1))


def metric_matrix(spec: MetricSpec, points: np.ndarray) -> np.ndarray:
    """Metric values only (order-0 jet), shape ``(*batch, n, n)``."""
    return metric_jet(spec, points, 0).value


def conformal_scale(spec: MetricSpec, psi: ScalarField, label: str = "") -> MetricSpec:
    """The metric ``e^{psi} g`` as a new spec (exponents accumulate)."""
    phi = psi if spec.phi is None else SumField.of(spec.phi, psi)
    return replace(
        spec,
        phi=phi,
        name=label or f"{spec.name}*exp(psi)",
    )


def flat_metric(chart: ChartModel, name: str = "flat") -> MetricSpec:
    return MetricSpec(chart=chart, base="flat", name=name)


def hopf_standard(chart: ChartModel, name: str = "hopf_standard") -> MetricSpec:
    if chart.kind != "annulus":
        raise ChartDomainError(
            "the scaling-invariant shell metric needs an annulus chart"
        )
    return MetricSpec(chart=chart, base="hopf_standard", name=name)


def fubini_study(chart: ChartModel, name: str = "fubini_study") -> MetricSpec:
    return MetricSpec(chart=chart, base="fubini_study", name=name)


def hermitian_residual(h: np.ndarray) -> float:
    """Largest deviation of ``h`` from being Hermitian."""
    return float(np.max(np.abs(h - np.conj(np.swapaxes(h, -1, -2)))))


def validate_positive(
    spec: MetricSpec, points: np.ndarray, tol: float = 1e-10
) -> float:
    """Gate: Hermitian to ``tol`` and positive definite at every point.

    Returns the smallest eigenvalue found; raises
    :class:`MetricNotPositive` otherwise.
    """
    h = spec.matrix(points)
    resid = hermitian_residual(h)
    if resid > tol:
        raise MetricNotPositive(
            f"{spec.name!r}: Hermiticity residual {resid:.3e} exceeds {tol:.1e}"
        )
    eigs = np.linalg.eigvalsh(0.5 * (h + np.conj(np.swapaxes(h, -1, -2))))
    lo = float(eigs.min())
    if lo <= 0.0:
        raise MetricNotPositive(
            f"{spec.name!r}: minimum eigenvalue {lo:.6e} is not positive"
        )
    return lo


def inverse_transpose(h: np.ndarray) -> np.ndarray:
    """The raised-index array ``g^{k lbar}``: satisfies
    ``sum_l out[k, l] * h[j, l] = delta_{kj}``, i.e. ``inv(H).conj()``
    for Hermitian ``H``."""
    return np.conj(np.linalg.inv(h))


def real_metric_matrix(h: np.ndarray) -> np.ndarray:
    """Underlying Riemannian metric on ``(x, y)`` coordinates.

    For ``H = A + iB`` (Hermitian) the length form
    ``sum g_{k lbar} dz^k dzbar^l`` as a quadratic form on real tangents
    is the symmetric matrix ``[[A, B], [-B, A]]``; the flat metric maps to
    the identity, fixing the package's distance normalisation.
    """
    a = h.real
    b = h.imag
    top = np.concatenate([a, b], axis=-1)
    bot = np.concatenate([-b, a], axis=-1)
    return np.concatenate([top, bot], axis=-2)
