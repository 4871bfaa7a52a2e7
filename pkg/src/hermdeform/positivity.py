"""Sign certification of Hermitian (1,1)-arrays against a metric.

Given a field of Hermitian arrays ``T`` (curvature traces, deformed
traces, differences) and a positive Hermitian metric field ``H`` on the
same points, this module computes the generalized eigenvalue spectrum of
the pencil ``(T, H)`` pointwise, classifies the field's sign over a
sample grid, and measures whitened ``C^k`` distances between metrics.

The pencil is solved by Cholesky whitening: with ``H = L L^H`` the
eigenvalues of ``(T, H)`` are the ordinary eigenvalues of
``L^{-1} T L^{-H}``, computed batched by LAPACK.  A Hermiticity gate
rejects inputs whose asymmetry exceeds ``1e-10`` (absolute, relative to
the field scale) before any eigenvalue is trusted.

Classification vocabulary (``tol`` is the zero tolerance):

========================  ====================================================
``zero``                  every eigenvalue in ``[-tol, tol]``
``positive``              every eigenvalue ``> tol``
``negative``              every eigenvalue ``< -tol``
``quasi-positive``        ``>= -tol`` everywhere, definite (``> tol`` in all
                          directions) at at least one sample, not positive
``quasi-negative``        mirror image
``nonnegative``           ``>= -tol`` everywhere, definite nowhere, not zero
``nonpositive``           mirror image
``indefinite``            eigenvalues of both signs beyond ``tol``
========================  ====================================================
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core.metrics import MetricSpec, hermitian_residual, metric_jet, real_metric_matrix
from .errors import MetricNotPositive

__all__ = [
    "PositivityReport",
    "whiten_pencil",
    "min_eigen_field",
    "classify",
    "ck_distance",
    "DEFAULT_TOL_FACTOR",
]

DEFAULT_TOL_FACTOR = 1e-9
"""``tol = DEFAULT_TOL_FACTOR * max |eigenvalue|`` unless overridden."""

_HERM_GATE = 1e-10


def _gate_hermitian(arr: np.ndarray, what: str) -> None:
    resid = hermitian_residual(arr)
    scale = float(np.max(np.abs(arr))) if arr.size else 0.0
    if resid > _HERM_GATE * max(1.0, scale):
        raise MetricNotPositive(
            f"{what} is not Hermitian: residual {resid:.3e} at scale {scale:.3e}"
        )


def whiten_pencil(t: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Eigenvalues of the pencil ``(T, H)`` per point, ascending.

    Parameters
    ----------
    t, h : ndarray, shape (*batch, n, n)
        Hermitian field and positive Hermitian metric.

    Returns
    -------
    ndarray, shape (*batch, n): real generalized eigenvalues.
    """
    _gate_hermitian(t, "pencil numerator")
    _gate_hermitian(h, "pencil metric")
    hs = 0.5 * (h + np.conj(np.swapaxes(h, -1, -2)))
    try:
        chol = np.linalg.cholesky(hs)
    except np.linalg.LinAlgError as exc:
        raise MetricNotPositive(
            f"pencil metric is not positive definite: {exc}"
        ) from exc
    linv = np.linalg.inv(chol)
    white = linv @ t @ np.conj(np.swapaxes(linv, -1, -2))
    white = 0.5 * (white + np.conj(np.swapaxes(white, -1, -2)))
    return np.linalg.eigvalsh(white)


def min_eigen_field(t: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Smallest pencil eigenvalue per point, shape ``(*batch,)``."""
    return whiten_pencil(t, h)[..., 0]


@dataclass(frozen=True)
class PositivityReport:
    """Outcome of a sign sweep over a sample set."""

    classification: str
    min_eig: float
    max_eig: float
    tol_zero: float
    num_samples: int
    num_definite_points: int
    num_kernel_points: int
    argmin_point: tuple = field(default=())
    argmax_point: tuple = field(default=())

    @property
    def is_nonnegative(self) -> bool:
        return self.classification in (
            "positive",
            "quasi-positive",
            "nonnegative",
            "zero",
        )

    @property
    def is_strictly_positive(self) -> bool:
        return self.classification == "positive"

    def to_dict(self) -> dict:
        return {
            "classification": self.classification,
            "min_eig": self.min_eig,
            "max_eig": self.max_eig,
            "tol_zero": self.tol_zero,
            "num_samples": self.num_samples,
            "num_definite_points": self.num_definite_points,
            "num_kernel_points": self.num_kernel_points,
            "argmin_point": list(self.argmin_point),
            "argmax_point": list(self.argmax_point),
        }


def classify(
    t: np.ndarray,
    h: np.ndarray,
    points: np.ndarray | None = None,
    tol_zero: float | None = None,
) -> PositivityReport:
    """Classify the sign of the Hermitian field ``t`` relative to ``h``.

    ``points`` (optional, shape ``(*batch, 2n)``) lets the report record
    chart locations of the extremal samples.  ``tol_zero`` defaults to
    ``1e-9`` times the largest absolute eigenvalue over the sweep.
    """
    eigs = whiten_pencil(t, h)
    flat = eigs.reshape(-1, eigs.shape[-1])
    per_min = flat[:, 0]
    per_max = flat[:, -1]
    scale = float(np.max(np.abs(flat))) if flat.size else 0.0
    tol = DEFAULT_TOL_FACTOR * scale if tol_zero is None else float(tol_zero)

    lo = float(per_min.min())
    hi = float(per_max.max())
    definite_pos = per_min > tol
    definite_neg = per_max < -tol
    kernel = (np.abs(per_min) <= tol) | (np.abs(per_max) <= tol)

    if hi <= tol and lo >= -tol:
        cls = "zero"
    elif lo > tol:
        cls = "positive"
    elif hi < -tol:
        cls = "negative"
    elif lo >= -tol:
        if definite_pos.any():
            cls = "quasi-positive"
        else:
            cls = "nonnegative"
    elif hi <= tol:
        if definite_neg.any():
            cls = "quasi-negative"
        else:
            cls = "nonpositive"
    else:
        cls = "indefinite"

    arg_lo = int(np.argmin(per_min))
    arg_hi = int(np.argmax(per_max))
    if points is not None:
        pts = np.asarray(points, dtype=np.float64).reshape(flat.shape[0], -1)
        p_lo = tuple(map(float, pts[arg_lo]))
        p_hi = tuple(map(float, pts[arg_hi]))
    else:
        p_lo = p_hi = ()

    n_def = int(definite_pos.sum()) if lo >= -tol else int(definite_neg.sum())
    return PositivityReport(
        classification=cls,
        min_eig=lo,
        max_eig=hi,
        tol_zero=tol,
        num_samples=int(flat.shape[0]),
        num_definite_points=n_def,
        num_kernel_points=int(kernel.sum()),
        argmin_point=p_lo,
        argmax_point=p_hi,
    )


def _frame_transform(tilde_mat: np.ndarray) -> np.ndarray:
    """Inverse square root of the underlying real metric of ``tilde``
    (used to measure derivative directions in tilde-orthonormal frames)."""
    g = real_metric_matrix(tilde_mat)
    evals, evecs = np.linalg.eigh(g)
    if float(evals.min()) <= 0.0:
        raise MetricNotPositive("reference metric is not positive definite")
    return np.einsum(
        "...ab,...b,...cb->...ac", evecs, 1.0 / np.sqrt(evals), evecs
    )


def ck_distance(
    m1: MetricSpec,
    m2: MetricSpec,
    points: np.ndarray,
    k: int = 2,
    tilde: MetricSpec | None = None,
) -> float:
    """Whitened ``C^k`` distance between two metrics over a sample set.

    The difference array and its coordinate derivatives up to total
    order ``k`` are measured with the reference metric ``tilde``
    (default ``m1``): matrix index pairs are whitened by the inverse
    Cholesky factor of ``tilde`` and each derivative slot is contracted
    with an orthonormal frame of the underlying real metric of
    ``tilde``, making the number chart-reparametrisation-honest.  The
    result is the max over sample points and derivative orders of the
    Frobenius norms.
    """
    if k < 0 or k > 2:
        raise ValueError("ck_distance supports k in {0, 1, 2}")
    ref = tilde if tilde is not None else m1
    pts = np.asarray(points, dtype=np.float64)
    nvars = pts.shape[-1]

    d_jet = m1.matrix_jet(pts, k) - m2.matrix_jet(pts, k)
    tilde_mat = ref.matrix(pts)
    _gate_hermitian(tilde_mat, "reference metric")
    linv = np.linalg.inv(np.linalg.cholesky(tilde_mat))
    linv_h = np.conj(np.swapaxes(linv, -1, -2))
    frame = _frame_transform(tilde_mat)

    def whitened_norm(arr: np.ndarray) -> np.ndarray:
        extra = arr.ndim - linv.ndim
        l = linv.reshape(linv.shape[:-2] + (1,) * extra + linv.shape[-2:])
        lh = np.conj(np.swapaxes(l, -1, -2))
        w = l @ arr @ lh
        return np.sqrt(np.einsum("...ij,...ij->...", w, np.conj(w)).real)

    worst = float(np.max(whitened_norm(d_jet.value)))
    if k >= 1:
        d1 = np.stack(
            [d_jet.partial_value((0,) * v + (1,) + (0,) * (nvars - v - 1))
             for v in range(nvars)],
            axis=-3,
        )
        d1 = np.einsum("...ab,...bij->...aij", frame, d1)
        norms = whitened_norm(d1)
        worst = max(worst, float(np.max(np.sqrt(np.sum(norms**2, axis=-1)))))
    if k >= 2:
        tens = np.empty(pts.shape[:-1] + (nvars, nvars) + d_jet.value.shape[-2:],
                        dtype=np.complex128)
        for v in range(nvars):
            for w in range(nvars):
                alpha = [0] * nvars
                alpha[v] += 1
                alpha[w] += 1
                tens[..., v, w, :, :] = d_jet.partial_value(tuple(alpha))
        tens = np.einsum("...ab,...cd,...bdij->...acij", frame, frame, tens)
        norms = whitened_norm(tens)
        worst = max(
            worst, float(np.max(np.sqrt(np.sum(norms**2, axis=(-2, -1)))))
        )
    return worst
