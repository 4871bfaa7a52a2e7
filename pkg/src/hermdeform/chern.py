"""Canonical-connection apparatus of Hermitian metrics in a chart.

For a Hermitian metric ``g`` (array ``H[j, l] = g_{j lbar}``) the unique
connection compatible with both the metric and the complex structure
whose (0,1)-part is the Dolbeault operator has coefficients

    Gamma_{ij}^k = sum_l g^{k lbar} d_i g_{j lbar},

torsion ``T_{ij}^k = Gamma_{ij}^k - Gamma_{ji}^k`` (zero exactly when the
metric is Kahler), and curvature

    R_{i jbar k}^l  = - dbar_j Gamma_{ik}^l,
    R_{i jbar k lbar} = R_{i jbar k}^r g_{r lbar},

where ``d_i`` and ``dbar_j`` are the Wirtinger derivatives.  Two
inequivalent traces matter here:

* first trace   ``Ric1_{i jbar} = g^{k lbar} R_{i jbar k lbar}``
  (equals ``- d_i dbar_j log det H``),
* second trace  ``Ric2_{i jbar} = g^{k lbar} R_{k lbar i jbar}``,

plus the scalar ``g^{i jbar} Ric1_{i jbar}`` and the mixed trace of the
curvature of one metric against the inverse of another
(:func:`general_trace`), which is the object whose sign the deformation
modules certify and move.

Everything is evaluated in the exact jet algebra of
:mod:`hermdeform.core.jets`; the only roundoff is floating point.

Index raising convention: the array ``Hinv`` with
``sum_l Hinv[k, l] H[j, l] = delta_{kj}`` (i.e. ``inv(H).conj()``)
represents ``g^{k lbar}``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .core.jets import (
    Jet,
    d_antihol,
    d_hol,
    jcontract,
    jdet,
    jlog,
    jmat_inverse,
    jmat_transpose,
    jstack,
)
from .core.metrics import MetricSpec, inverse_transpose
from .errors import MetricNotPositive

#: Reject metric matrices whose 2-norm condition number exceeds this bound
#: before attempting an inverse; near-degenerate inputs would otherwise
#: poison every downstream contraction silently.
COND_LIMIT = 1e12

__all__ = [
    "COND_LIMIT",
    "CurvatureJet",
    "connection_jets",
    "christoffel",
    "torsion",
    "curvature_from_jets",
    "curvature_tensor",
    "first_ricci",
    "second_ricci",
    "chern_scalar",
    "general_trace",
    "kahler_defect",
    "rm_norm_sq",
    "torsion_norm_sq",
    "curvature_sup_norm",
]


def _whiteners(h: np.ndarray) -> np.ndarray:
    """Inverse Cholesky factors ``L^{-1}`` of a batch of Hermitian ``H``."""
    sym = 0.5 * (h + np.conj(np.swapaxes(h, -1, -2)))
    try:
        chol = np.linalg.cholesky(sym)
    except np.linalg.LinAlgError as exc:
        raise MetricNotPositive(f"metric is not positive definite: {exc}") from exc
    return np.linalg.inv(chol)


@dataclass(frozen=True)
class CurvatureJet:
    """Pointwise curvature apparatus of one metric on a point batch.

    All arrays share the leading batch shape; tensor indices follow the
    conventions in the module docstring (second and fourth curvature
    slots are the anti-holomorphic ones).
    """

    points: np.ndarray
    h: np.ndarray          # (..., n, n)       g_{j lbar}
    hinv: np.ndarray       # (..., n, n)       g^{k lbar}
    gamma: np.ndarray      # (..., n, n, n)    Gamma_{ij}^k
    torsion: np.ndarray    # (..., n, n, n)    T_{ij}^k
    curvature: np.ndarray  # (..., n, n, n, n) R_{i jbar k lbar}

    @property
    def n(self) -> int:
        return self.h.shape[-1]

    @cached_property
    def first_trace(self) -> np.ndarray:
        return np.einsum("...kl,...ijkl->...ij", self.hinv, self.curvature)

    @cached_property
    def second_trace(self) -> np.ndarray:
        return np.einsum("...kl,...klij->...ij", self.hinv, self.curvature)

    @cached_property
    def scalar(self) -> np.ndarray:
        s = np.einsum("...ij,...ij->...", self.hinv, self.first_trace)
        return s.real

    def pairing_residual(self) -> float:
        """Deviation from the Hermitian pairing symmetry
        ``R_{i jbar k lbar} = conj(R_{j ibar l kbar})``."""
        swapped = np.conj(np.einsum("...ijkl->...jilk", self.curvature))
        return float(np.max(np.abs(self.curvature - swapped)))


def connection_jets(spec: MetricSpec, points: np.ndarray, order: int = 2):
    """Internal workhorse: jets of ``H``, ``Hinv`` and ``Gamma``.

    Returns ``(h_jet, hinv_jet, gamma_jet)`` with ``gamma_jet`` one order
    below the metric jets.
    """
    n = spec.n
    h_jet = spec.matrix_jet(points, order)
    cond = np.linalg.cond(h_jet.value)
    if not np.all(np.isfinite(cond)) or float(np.max(cond)) > COND_LIMIT:
        raise MetricNotPositive(
            "metric matrix is numerically singular "
            f"(condition number {float(np.max(cond)):.3e} > {COND_LIMIT:.0e})"
        )
    hinv_jet = jmat_inverse(jmat_transpose(h_jet))
    dh = jstack([d_hol(h_jet, i, n) for i in range(n)], axis=-3)
    gamma_jet = jcontract("...kl,...ijl->...ijk", hinv_jet, dh)
    return h_jet, hinv_jet, gamma_jet


def christoffel(spec: MetricSpec, points: np.ndarray) -> np.ndarray:
    """Connection coefficients ``Gamma_{ij}^k``, shape ``(..., n, n, n)``."""
    return connection_jets(spec, points, order=1)[2].value


def torsion(spec: MetricSpec, points: np.ndarray) -> np.ndarray:
    """Torsion ``T_{ij}^k = Gamma_{ij}^k - Gamma_{ji}^k``."""
    g = christoffel(spec, points)
    return g - np.swapaxes(g, -3, -2)


def curvature_from_jets(
    points: np.ndarray, h_jet: Jet, hinv_jet: Jet, gamma_jet: Jet
) -> CurvatureJet:
    """Assemble the curvature apparatus from already-computed connection
    jets (``gamma_jet`` must carry at least one derivative order)."""
    n = h_jet.shape[-1]
    gamma = gamma_jet.value
    tors = gamma - np.swapaxes(gamma, -3, -2)
    # R_{i jbar k}^l = - dbar_j Gamma_{ik}^l ; stack j after i
    rmixed = np.stack(
        [-d_antihol(gamma_jet, j, n).value for j in range(n)], axis=-4
    )
    # stacking put j in front of i: (..., j, i, k, l) -> (..., i, j, k, l)
    rmixed = np.swapaxes(rmixed, -4, -3)
    lowered = np.einsum("...ijkr,...rl->...ijkl", rmixed, h_jet.value)
    return CurvatureJet(
        points=np.asarray(points, dtype=np.float64),
        h=h_jet.value,
        hinv=hinv_jet.value,
        gamma=gamma,
        torsion=tors,
        curvature=lowered,
    )


def curvature_tensor(spec: MetricSpec, points: np.ndarray) -> CurvatureJet:
    """Full curvature apparatus at a batch of points."""
    h_jet, hinv_jet, gamma_jet = connection_jets(spec, points, order=2)
    return curvature_from_jets(points, h_jet, hinv_jet, gamma_jet)


def first_ricci(
    spec: MetricSpec, points: np.ndarray, route: str = "contract"
) -> np.ndarray:
    """First curvature trace; ``route='logdet'`` recomputes it as
    ``- d_i dbar_j log det H`` (an independent pipeline used by the
    cross-check invariants)."""
    if route == "contract":
        return curvature_tensor(spec, points).first_trace
    if route != "logdet":
        raise ValueError(f"unknown route {route!r}")
    n = spec.n
    h_jet = spec.matrix_jet(points, 2)
    det = jdet(h_jet)
    if float(np.max(np.abs(det.value.imag))) > 1e-10 * float(
        np.max(np.abs(det.value.real))
    ):
        raise MetricNotPositive("metric determinant is not real")
    logdet = jlog(det.real)
    rows = []
    for i in range(n):
        di = d_hol(logdet, i, n)
        rows.append(
            np.stack([-d_antihol(di, j, n).value for j in range(n)], axis=-1)
        )
    return np.stack(rows, axis=-2)


def second_ricci(spec: MetricSpec, points: np.ndarray) -> np.ndarray:
    """Second curvature trace ``g^{k lbar} R_{k lbar i jbar}``."""
    return curvature_tensor(spec, points).second_trace


def chern_scalar(spec: MetricSpec, points: np.ndarray) -> np.ndarray:
    """Scalar curvature of the canonical connection (real array)."""
    return curvature_tensor(spec, points).scalar


def general_trace(
    tilde: MetricSpec, spec: MetricSpec, points: np.ndarray
) -> np.ndarray:
    """Trace of the curvature of ``spec`` against the metric ``tilde``:
    ``T_{i jbar} = tilde^{k lbar} R(spec)_{k lbar i jbar}``.

    This Hermitian (1,1)-array is the quantity whose positivity the
    deformation pipeline certifies.  With ``tilde == spec`` it reduces to
    :func:`second_ricci`.
    """
    cj = curvature_tensor(spec, points)
    tmat = tilde.matrix(points)
    tinv = inverse_transpose(tmat)
    return np.einsum("...kl,...klij->...ij", tinv, cj.curvature)


def kahler_defect(spec: MetricSpec, points: np.ndarray) -> float:
    """Max deviation of ``d_i g_{j lbar}`` from ``i <-> j`` symmetry
    (zero exactly for Kahler metrics)."""
    n = spec.n
    h_jet = spec.matrix_jet(points, 1)
    dh = np.stack([d_hol(h_jet, i, n).value for i in range(n)], axis=-4)
    # axes: (..., i, j, l); antisymmetrize in (i, j)
    dh = np.moveaxis(dh, -4, -3)
    return float(np.max(np.abs(dh - np.swapaxes(dh, -3, -2))))


def rm_norm_sq(cj: CurvatureJet) -> np.ndarray:
    """Pointwise squared norm of the curvature tensor, all four indices
    contracted with the metric (whitened-frame Frobenius norm)."""
    w = _whiteners(cj.h)
    wc = np.conj(w)
    white = np.einsum(
        "...ai,...bj,...ck,...dl,...ijkl->...abcd", w, wc, w, wc, cj.curvature
    )
    return np.einsum("...abcd,...abcd->...", white, np.conj(white)).real


def torsion_norm_sq(cj: CurvatureJet) -> np.ndarray:
    """Pointwise squared norm of the torsion (lower indices whitened with
    the inverse factor, upper index with the factor itself)."""
    w = _whiteners(cj.h)
    chol = np.linalg.inv(w)
    white = np.einsum("...ai,...bj,...kc,...ijk->...abc", w, w, chol, cj.torsion)
    return np.einsum("...abc,...abc->...", white, np.conj(white)).real


def curvature_sup_norm(spec: MetricSpec, points: np.ndarray) -> float:
    """``sup (|Rm| + |T|^2)`` over the batch -- the normalisation
    constant used before global deformation scheduling."""
    cj = curvature_tensor(spec, points)
    combo = np.sqrt(np.maximum(rm_norm_sq(cj), 0.0)) + torsion_norm_sq(cj)
    return float(np.max(combo))
