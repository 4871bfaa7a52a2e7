"""Constructive conformal deformation toward strict trace positivity.

Pipeline, bottom to top:

- :class:`BumpProfile` -- the flat-to-any-order cutoff ``e^{-1/s}`` with
  exact closed-form first and second derivatives (exactly zero for
  ``s <= 0``).
- :class:`BumpField` -- the compactly supported exponent ``profile(rho)``
  composed with a ball field from :mod:`hermdeform.distance`, differentiated
  exactly in the jet algebra, bit-zero outside the ball.
- :func:`choose_mu` -- dyadic search for the annulus fraction ``mu`` whose
  certificate polynomial stays positive on the annulus range, decided by
  exact endpoint/vertex evaluation of the quadratic.
- :func:`normalize` -- curvature-sup rescaling of the reference metric so
  the grid sup of ``|Rm| + |T|^2`` is at most 1.
- :func:`local_deform` -- one conformal bump step ``g1 = e^{-+ t F} g0``
  with ``t`` chosen by bisection against a C^k budget, an annulus
  positivity margin, and a measured non-negativity guard; verified against
  the exact first-order update law
  ``e^{+- t F} . trace(g1) = trace(g0) +- t LapF . g0``.
- :func:`cover_annulus` -- greedy geodesic covering of a stage annulus by
  balls whose inner regions stay inside the already-certified region.
- :func:`global_deform` -- the staged induction: seed ball of strict
  positivity, annulus covers, sequential budgeted local steps with
  measured re-verification, and an auditable :class:`DeformationPlan`.

Sign convention: ``sign="positive"`` deforms by ``g1 = e^{-tF} g0`` and
pushes the reference-traced curvature up by ``t LapF`` in its own metric
pencil; ``sign="negative"`` uses ``e^{+tF}`` and pushes down.  All margins
and classifications are pencil eigenvalues of the trace against the
*current* metric, in which the bump shift is an exact scalar shift.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .chern import curvature_sup_norm, general_trace
from .core.fields import ConstantField, ScalarField, ScaledField
from .core.jets import Jet, jet_constant
from .core.metrics import MetricSpec, conformal_scale
from .distance import (
    DistanceField,
    _direction_net,
    build_rho,
    distance_many,
    estimate_cn,
    injectivity_lower_bound,
    point_toward,
    real_metric,
)
from .errors import (
    BudgetExhausted,
    CertificationError,
    CoverageFailure,
    JetOrderError,
    NoValidMu,
    PositivityLost,
)
from .positivity import ck_distance, classify, whiten_pencil

__all__ = [
    "BumpProfile",
    "BUMP",
    "BumpField",
    "bump_laplacian",
    "bracket_values",
    "bracket_is_positive",
    "choose_mu",
    "normalize",
    "DeformationStep",
    "local_deform",
    "step_identity_residual",
    "cover_annulus",
    "GlobalSchedule",
    "StageRecord",
    "DeformationPlan",
    "global_deform",
    "MARGIN_FLOOR_FACTOR",
    "NONLINEARITY_SAFETY",
    "CROSS_CHECK_REL",
]

# Margin floor on the inner half-shell, as a multiple of r^2.
MARGIN_FLOOR_FACTOR = 1e-8
# The measured trace dip may not exceed this multiple of its linear rate.
NONLINEARITY_SAFETY = 2.0
# Max relative mismatch between the exact update law and the full
# curvature pipeline at the accepted step size.
CROSS_CHECK_REL = 1e-8

_MU_GRID = 256
_MU_SHRINK = 0.9
_PROBE_T = 1e-3
_BISECT_ITERS = 50
_GROW_MAX = 60
_T_CAP = 64.0
_STAGE_FLAG_LIMIT = 64
_STAGE_HARD_CAP = 200
# Below this rho the profile is flushed to exact zero: e^{-1/s} underflows
# long before (f < 5e-324 for s < 1/745) and the guard keeps the f'' form
# 1/s^4 - 2/s^3 from manufacturing inf * 0.
_BUMP_EXACT_ZERO = 1e-8


# ---------------------------------------------------------------------------
# bump profile and bump field
# ---------------------------------------------------------------------------


class BumpProfile:
    """The cutoff ``e^{-1/s}`` (``s > 0``; exactly 0 otherwise) with exact
    first and second derivatives.  All three evaluators are vectorised and
    return exact 0.0 wherever ``s`` is at or below the underflow guard."""

    @staticmethod
    def _masked(s: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        arr = np.asarray(s, dtype=np.float64)
        mask = arr > _BUMP_EXACT_ZERO
        safe = np.where(mask, arr, 1.0)
        return arr, mask, safe

    def f(self, s):
        _, mask, safe = self._masked(s)
        out = np.where(mask, np.exp(-1.0 / safe), 0.0)
        return out if out.ndim else float(out)

    def fp(self, s):
        _, mask, safe = self._masked(s)
        out = np.where(mask, np.exp(-1.0 / safe) / safe**2, 0.0)
        return out if out.ndim else float(out)

    def fpp(self, s):
        _, mask, safe = self._masked(s)
        core = np.exp(-1.0 / safe) * (1.0 / safe**4 - 2.0 / safe**3)
        out = np.where(mask, core, 0.0)
        return out if out.ndim else float(out)


BUMP = BumpProfile()


@dataclass(frozen=True)
class BumpField:
    """Scalar field ``profile(rho)`` for a clamped ball field ``rho``.

    Jets (orders 0..2) come from composing the profile's Taylor
    coefficients with the ball field's jets inside the algebra, so the
    coordinate coefficients agree exactly with the chain rule.  Outside
    the ball every coefficient is exactly 0.0, which keeps conformal
    scaling by this exponent bit-identical there.
    """

    field: DistanceField
    profile: BumpProfile = BUMP
    label: str = "bump"

    def jet(self, points: np.ndarray, order: int) -> Jet:
        if order > 2:
            raise JetOrderError(
                f"bump field provides jets to order 2, requested {order}"
            )
        rho_jet = self.field.rho.jet(points, order)
        rho0 = rho_jet.value.real
        c0 = self.profile.f(rho0)
        out = jet_constant(rho_jet.table, np.asarray(c0, dtype=np.complex128))
        if order >= 1:
            delta = rho_jet - jet_constant(rho_jet.table, rho_jet.value)
            out = out + delta * np.asarray(self.profile.fp(rho0))
            if order >= 2:
                out = out + (delta * delta) * (
                    0.5 * np.asarray(self.profile.fpp(rho0))
                )
        return out

    def values(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(self.profile.f(self.field.rho_values(points)))


def bump_laplacian(
    bump: BumpField, points: np.ndarray
) -> np.ndarray:
    """Reference-metric complex Hessian trace of the bump exponent.

    Chain rule through the ball field: ``fp(rho) * lap(rho) +
    fpp(rho) * |grad rho|^2`` where both the Laplacian and the squared
    gradient are the *complex-form* quantities (the ball field reports
    4x those, hence the /4).  This is the exact per-point slope of the
    pencil eigenvalues of the traced curvature under the bump flow.
    """
    pts = np.asarray(points, dtype=np.float64)
    rho = bump.field.rho_values(pts)
    lap = bump.field.tilde_laplacian.values(pts) / 4.0
    grad = bump.field.grad_norm_sq.values(pts) / 4.0
    return np.asarray(bump.profile.fp(rho)) * lap + np.asarray(
        bump.profile.fpp(rho)
    ) * grad


# ---------------------------------------------------------------------------
# annulus fraction selection
# ---------------------------------------------------------------------------


def bracket_values(s, r: float, c_n: float):
    """Annulus positivity certificate ``4(r^2-s) - 8s(r^2-s) - c_n s^2``
    evaluated at ball-field values ``s`` (a downward-shifted quadratic
    whose positivity on ``(0, mu(2-mu) r^2]`` certifies the bump
    Laplacian's sign on the annulus)."""
    s = np.asarray(s, dtype=np.float64)
    out = 4.0 * (r * r - s) - 8.0 * s * (r * r - s) - c_n * s * s
    return out if out.ndim else float(out)


def bracket_is_positive(r: float, c_n: float, mu: float) -> bool:
    """Exact feasibility of ``mu``: is the certificate strictly positive on
    the whole annulus range ``(0, mu(2-mu) r^2]``?

    The certificate is the quadratic ``q(s) = (8-c_n) s^2 - (4+8r^2) s
    + 4r^2`` with ``q(0) = 4r^2 > 0``; positivity on the interval is
    decided by the right endpoint plus, when the parabola opens upward,
    the interior vertex.
    """
    s_star = mu * (2.0 - mu) * r * r
    if not bracket_values(s_star, r, c_n) > 0.0:
        return False
    lead = 8.0 - c_n
    if lead > 0.0:
        vertex = (4.0 + 8.0 * r * r) / (2.0 * lead)
        if 0.0 < vertex < s_star and not bracket_values(vertex, r, c_n) > 0.0:
            return False
    return True


def choose_mu(r: float, c_n: float) -> float:
    """Largest dyadic annulus fraction ``mu = j/256 <= 1/2`` whose
    certificate stays strictly positive on the annulus range, then shrunk
    by 0.9 for margin.  Raises :class:`NoValidMu` when even ``1/256``
    fails (comparison constant too large for this radius)."""
    if not 0.0 < r <= 1.0:
        raise ValueError(f"radius must be in (0, 1], got {r}")
    if c_n < 0.0:
        raise ValueError(f"comparison constant must be >= 0, got {c_n}")
    for j in range(_MU_GRID // 2, 0, -1):
        mu = j / _MU_GRID
        if bracket_is_positive(r, c_n, mu):
            # single correctly-rounded division so the dyadic-times-0.9
            # result is reproducible bit-for-bit
            return 9 * j / (10 * _MU_GRID)
    raise NoValidMu(
        f"no annulus fraction down to 1/{_MU_GRID} certifies the bracket "
        f"at radius {r} with comparison constant {c_n:.6g}; shrink the "
        "ball radius"
    )


# ---------------------------------------------------------------------------
# curvature-sup normalization
# ---------------------------------------------------------------------------


def normalize(
    tilde: MetricSpec,
    points: Optional[np.ndarray] = None,
    res: Optional[int] = None,
) -> tuple[MetricSpec, float]:
    """Rescale the reference metric so the grid sup of ``|Rm| + |T|^2``
    is at most 1.  Both quantities scale like ``1/c`` under ``c * g``,
    so the scale is exactly the measured sup (when above 1; metrics
    already at or below 1 are returned unchanged with scale 1).
    Returns ``(scaled metric, scale)``."""
    if points is None:
        if res is None:
            res = 24 if tilde.chart.real_dim == 2 else 6
        points = tilde.chart.sample_grid(res)
    sup = curvature_sup_norm(tilde, points)
    if sup <= 1.0:
        return tilde, 1.0
    scaled = conformal_scale(
        tilde, ConstantField(math.log(sup)), label=f"{tilde.name}*sup_scale"
    )
    return scaled, float(sup)


# ---------------------------------------------------------------------------
# one local bump step
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DeformationStep:
    """Record of one executed conformal bump step."""

    center: tuple
    radius: float
    mu: float
    t: float
    sign: str
    F: ScalarField
    eps_share: float
    eps_effective: float
    c_n: float
    ck_measured: float
    annulus_margin: float
    halfshell_margin: float
    ball_min_eigen: float
    identity_residual: float
    sample_count: int

    def to_dict(self) -> dict:
        return {
            "center": [float(c) for c in self.center],
            "radius": self.radius,
            "mu": self.mu,
            "t": self.t,
            "sign": self.sign,
            "eps_share": self.eps_share,
            "eps_effective": self.eps_effective,
            "c_n": self.c_n,
            "ck_measured": self.ck_measured,
            "annulus_margin": self.annulus_margin,
            "halfshell_margin": self.halfshell_margin,
            "ball_min_eigen": self.ball_min_eigen,
            "identity_residual": self.identity_residual,
            "sample_count": self.sample_count,
        }


def _sign_factor(sign: str) -> float:
    if sign == "positive":
        return 1.0
    if sign == "negative":
        return -1.0
    raise ValueError(f"sign must be 'positive' or 'negative', got {sign!r}")


def _ball_lattice(
    tilde: MetricSpec,
    fld: DistanceField,
    per_dim: int,
) -> np.ndarray:
    """Chart-coordinate lattice filtered to the open metric ball.

    The coordinate box is sized from the real metric at the center with a
    1.5 safety factor; containment in the ball is decided by the measured
    squared distance, so curvature drift of the metric only changes which
    lattice points survive, never the certificate's honesty.
    """
    center = fld.center
    dim = tilde.chart.real_dim
    g = real_metric(tilde, center[None, :])[0]
    lam_min = float(np.linalg.eigvalsh(g)[0].real)
    w = 1.5 * fld.radius / math.sqrt(lam_min)
    axes = [np.linspace(c - w, c + w, per_dim) for c in center]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dim)
    mesh = mesh[tilde.chart.contains(mesh)]
    d2 = fld.d2_unclamped(mesh)
    return mesh[d2 < fld.radius**2]


def _annulus_net(
    tilde: MetricSpec,
    fld: DistanceField,
    mu: float,
    directions: int = 16,
    radii: int = 12,
) -> np.ndarray:
    """Dedicated annulus samples: a seeded metric-unit direction net times
    radial fractions spanning the annulus band, plus extra fractions
    targeting the inner half-shell; points are kept by their measured
    distance band, so curved metrics stay honestly sampled."""
    center, r = fld.center, fld.radius
    dirs = _direction_net(tilde, center, directions)
    span = np.linspace(1.0 - mu, 1.0, radii, endpoint=False)
    shell = np.sqrt(
        np.linspace(
            1.0 - mu * (2.0 - mu), 1.0 - 0.5 * mu * (2.0 - mu), 5
        )
    )
    fracs = np.unique(np.concatenate([span, shell]))
    cand = (
        center[None, None, :]
        + dirs[:, None, :] * (fracs[None, :, None] * r)
    ).reshape(-1, center.size)
    cand = cand[tilde.chart.contains(cand)]
    d2 = fld.d2_unclamped(cand)
    band = (d2 >= (1.0 - mu) ** 2 * r * r) & (d2 < r * r)
    return cand[band]


def _subset(points: np.ndarray, limit: int) -> np.ndarray:
    if len(points) <= limit:
        return points
    idx = np.unique(np.linspace(0, len(points) - 1, limit).astype(int))
    return points[idx]


@dataclass(frozen=True)
class _LocalResult:
    spec: MetricSpec
    t: float
    step: Optional[DeformationStep]
    bump: Optional[BumpField]


def _local_deform_full(
    g0: MetricSpec,
    tilde: MetricSpec,
    p: np.ndarray,
    r: float,
    eps_share: float,
    k: int = 2,
    sign: str = "positive",
    *,
    per_dim: Optional[int] = None,
    injectivity: Optional[float] = None,
    fld: Optional[DistanceField] = None,
    mu: Optional[float] = None,
    c_n: Optional[float] = None,
    margin_protect: Optional[float] = None,
) -> _LocalResult:
    s = _sign_factor(sign)
    if eps_share < 0.0:
        raise ValueError("eps_share must be >= 0")
    p = np.asarray(p, dtype=np.float64)
    if fld is None:
        fld = build_rho(tilde, p, r, injectivity=injectivity)
    if c_n is None:
        c_n = estimate_cn(fld).c_n
    if mu is None:
        mu = choose_mu(min(r, 1.0), c_n)
    elif not bracket_is_positive(r, c_n, mu):
        raise NoValidMu(
            f"prescribed annulus fraction {mu} fails the bracket at radius "
            f"{r} with comparison constant {c_n:.6g}"
        )
    if per_dim is None:
        per_dim = 32 if tilde.chart.real_dim == 2 else 10

    if eps_share == 0.0:
        return _LocalResult(g0, 0.0, None, BumpField(fld))

    # --- sample sets --------------------------------------------------
    ball_pts = _ball_lattice(tilde, fld, per_dim)
    net_pts = _annulus_net(tilde, fld, mu)
    all_pts = (
        np.concatenate([ball_pts, net_pts], axis=0)
        if len(ball_pts)
        else net_pts
    )
    if len(all_pts) == 0:
        raise CertificationError(
            "certification grid is empty on the deformation ball; "
            "raise the lattice resolution"
        )
    rho_vals = fld.rho_values(all_pts)
    d2 = fld.d2_unclamped(all_pts)
    r2 = r * r
    rho_star = mu * (2.0 - mu) * r2
    bump = BumpField(fld)
    f_vals = bump.values(all_pts)
    ann_mask = (d2 >= (1.0 - mu) ** 2 * r2) & (d2 < r2)
    active_ann = ann_mask & (f_vals > 0.0)
    halfshell = (rho_vals >= 0.5 * rho_star) & (rho_vals <= rho_star)
    if not active_ann.any() or not halfshell.any():
        raise CertificationError(
            "annulus sample set is empty; raise the lattice resolution"
        )

    # --- exact per-point machinery -------------------------------------
    trace0 = general_trace(tilde, g0, all_pts)
    g0_mat = g0.matrix(all_pts)
    lam0 = whiten_pencil(s * trace0, g0_mat)[..., 0].real
    shift = bump_laplacian(bump, all_pts)
    scale0 = float(np.max(np.abs(lam0))) if lam0.size else 0.0
    tol_pre = 1e-9 * max(1.0, scale0)
    m0 = float(lam0.min())
    if m0 < -tol_pre:
        raise PositivityLost(
            f"input trace is not non-negative on the sampled ball "
            f"(min pencil eigenvalue {m0:.3e} < -{tol_pre:.3e}); refine "
            "the grid or fix the precondition"
        )

    def min_ball_eigen(t: float) -> float:
        # Pencil eigenvalues against the *deformed* metric shift exactly
        # by t * bump Laplacian, for either sign.
        return float(np.min(lam0 + t * shift))

    ck_pts = _subset(all_pts, 384)

    def spec_at(t: float) -> MetricSpec:
        return conformal_scale(
            g0, ScaledField(bump, -s * t), label=f"{g0.name}*bump"
        )

    def ck_at(t: float, pts: np.ndarray) -> float:
        return ck_distance(spec_at(t), g0, pts, k=k, tilde=tilde)

    # --- measured linear rates ------------------------------------------
    ck_ref = ck_at(_PROBE_T, ck_pts)
    if ck_ref <= 0.0:
        raise CertificationError(
            "bump exponent is numerically invisible on the sample set; "
            "raise the lattice resolution"
        )
    rate = ck_ref / _PROBE_T
    dip_rate = max(1e-12, (m0 - min_ball_eigen(_PROBE_T)) / ck_ref)

    eps_eff = eps_share
    t_protect = math.inf
    if margin_protect is not None and margin_protect > 0.0:
        eps_eff = min(eps_eff, margin_protect / (2.0 * dip_rate))
        # Exact pointwise protection: wherever the bump pushes eigenvalues
        # down, the step may consume at most half that point's margin.
        # The update law is exact, so this cap is exact on the lattice.
        down = shift < 0.0
        if down.any():
            t_protect = float(
                np.min((lam0[down] + tol_pre) / (-2.0 * shift[down]))
            )

    def feasible(t: float) -> bool:
        if t > t_protect:
            return False
        ck = ck_at(t, ck_pts)
        if ck > eps_eff:
            return False
        allowance = tol_pre + NONLINEARITY_SAFETY * dip_rate * ck
        return min_ball_eigen(t) >= -allowance

    # --- bracket the largest feasible t ---------------------------------
    t_lo = eps_eff / rate
    grew = 0
    while not feasible(t_lo):
        t_lo *= 0.5
        grew += 1
        if grew > _GROW_MAX:
            raise PositivityLost(
                "no step size satisfies the non-negativity guard; the "
                "sampled ball's trace degrades faster than its measured "
                "linear rate (grid too coarse or precondition violated)"
            )
    t_hi = t_lo
    grew = 0
    while t_hi < _T_CAP and feasible(2.0 * t_hi):
        t_hi *= 2.0
        grew += 1
        if grew > _GROW_MAX:
            break
    t_bad = 2.0 * t_hi
    for _ in range(_BISECT_ITERS):
        mid = 0.5 * (t_hi + t_bad)
        if mid >= _T_CAP or not feasible(mid):
            t_bad = mid
        else:
            t_hi = mid
    t_star = t_hi

    # --- C^k at full resolution (subset may have under-measured) --------
    ck_full = ck_at(t_star, all_pts)
    tries = 0
    while ck_full > eps_eff and tries < 40:
        t_star *= 0.9
        ck_full = ck_at(t_star, all_pts)
        tries += 1
    if ck_full > eps_eff:
        raise BudgetExhausted(
            f"C^{k} budget {eps_eff:.3e} unreachable (measured {ck_full:.3e} "
            f"at step {t_star:.3e})"
        )

    # --- margin gate at the accepted step --------------------------------
    eigs = lam0 + t_star * shift
    ann_min = float(eigs[active_ann].min())
    half_min = float(eigs[halfshell].min())
    floor = MARGIN_FLOOR_FACTOR * r2
    if not ann_min > 0.0 or half_min < floor:
        raise BudgetExhausted(
            f"budget eps_share={eps_share:.3e} forces step {t_star:.3e} "
            f"below the margin floor: annulus min {ann_min:.3e} "
            f"(need > 0), half-shell min {half_min:.3e} (need >= "
            f"{floor:.3e})"
        )
    ball_min = float(eigs.min())

    # --- cross-check the exact update law vs the curvature pipeline ------
    g1 = spec_at(t_star)
    sub = _subset(all_pts, 64)
    trace_full = general_trace(tilde, g1, sub)
    f_sub = bump.values(sub)
    shift_sub = bump_laplacian(bump, sub)
    trace0_sub = general_trace(tilde, g0, sub)
    g0_sub = g0.matrix(sub)
    lhs = np.exp(s * t_star * f_sub)[..., None, None] * trace_full
    rhs = trace0_sub + (s * t_star * shift_sub)[..., None, None] * g0_sub
    resid = float(np.max(np.abs(lhs - rhs)))
    rel = resid / max(1.0, float(np.max(np.abs(rhs))))
    if rel > CROSS_CHECK_REL:
        raise CertificationError(
            f"exact update law disagrees with the curvature pipeline "
            f"(relative residual {rel:.3e} > {CROSS_CHECK_REL:.1e})"
        )

    step = DeformationStep(
        center=tuple(float(c) for c in p),
        radius=float(r),
        mu=float(mu),
        t=float(t_star),
        sign=sign,
        F=bump,
        eps_share=float(eps_share),
        eps_effective=float(eps_eff),
        c_n=float(c_n),
        ck_measured=float(ck_full),
        annulus_margin=ann_min,
        halfshell_margin=half_min,
        ball_min_eigen=ball_min,
        identity_residual=rel,
        sample_count=int(len(all_pts)),
    )
    return _LocalResult(g1, float(t_star), step, bump)


def local_deform(
    g0: MetricSpec,
    tilde: MetricSpec,
    p: np.ndarray,
    r: float,
    eps_share: float,
    k: int = 2,
    sign: str = "positive",
    **kwargs,
) -> tuple[MetricSpec, float]:
    """One conformal bump step ``g1 = e^{-+ t F} g0`` on the ball
    ``B(p, r)``, with ``t`` the largest bisection value satisfying the
    C^k budget, the annulus positivity margin, and the measured
    non-negativity guard.  Returns ``(g1, t)``.

    Keyword overrides: ``per_dim`` (lattice resolution), ``injectivity``,
    ``fld`` (prebuilt ball field), ``mu``, ``c_n``, ``margin_protect``
    (cap the budget so the trace dip stays below half this margin).
    """
    res = _local_deform_full(g0, tilde, p, r, eps_share, k, sign, **kwargs)
    return res.spec, res.t


def step_identity_residual(
    g0: MetricSpec,
    tilde: MetricSpec,
    step_bump: BumpField,
    t: float,
    sign: str,
    points: np.ndarray,
) -> float:
    """Sup residual of the exact update law at arbitrary points:
    ``e^{+- t F} trace(g(t)) - trace(g0) -+ t LapF . g0``, with the
    deformed trace computed through the full curvature pipeline."""
    s = _sign_factor(sign)
    pts = np.asarray(points, dtype=np.float64)
    g_t = conformal_scale(g0, ScaledField(step_bump, -s * t))
    f_vals = step_bump.values(pts)
    lhs = np.exp(s * t * f_vals)[..., None, None] * general_trace(
        tilde, g_t, pts
    )
    rhs = general_trace(tilde, g0, pts) + (
        s * t * bump_laplacian(step_bump, pts)
    )[..., None, None] * g0.matrix(pts)
    return float(np.max(np.abs(lhs - rhs)))


# ---------------------------------------------------------------------------
# annulus covering
# ---------------------------------------------------------------------------


def cover_annulus(
    tilde: MetricSpec,
    p: np.ndarray,
    r_m: float,
    r_next: float,
    r0: float,
    mu: float,
    grid: Optional[np.ndarray] = None,
    res: Optional[int] = None,
) -> list[np.ndarray]:
    """Greedy covering of the annulus grid points ``r_m < d(p, x) <=
    r_next`` by balls of radius ``r0/(1-mu)`` whose centers stay within
    ``r_m - r0`` of ``p``.

    Each uncovered point ``x`` spawns a center: ``x`` itself when it is
    already within ``r_m - r0``, otherwise the point at distance
    ``r_m - r0 - delta`` along the minimizing geodesic toward ``x``
    (``delta`` = a quarter of the spare reach ``mu r0 / ((1-mu)(2-mu))``,
    which keeps every spawned ball able to reach its own target).
    """
    p = np.asarray(p, dtype=np.float64)
    if grid is None:
        if res is None:
            res = 24 if tilde.chart.real_dim == 2 else 6
        grid = tilde.chart.sample_grid(res)
    grid = np.asarray(grid, dtype=np.float64)
    d = distance_many(tilde, p, grid)
    targets = grid[(d > r_m) & (d <= r_next)]
    if len(targets) == 0:
        return []
    cover_r = r0 / (1.0 - mu)
    reach_cap = r_m - r0
    delta = 0.25 * mu * r0 / ((1.0 - mu) * (2.0 - mu))
    centers: list[np.ndarray] = []
    uncovered = np.ones(len(targets), dtype=bool)
    max_iter = 10 * len(targets)
    iters = 0
    while uncovered.any():
        iters += 1
        if iters > max_iter:
            raise CoverageFailure(
                f"{int(uncovered.sum())} annulus grid points remain "
                f"uncovered after {max_iter} iterations; geometry or "
                "resolution mismatch"
            )
        x = targets[int(np.argmax(uncovered))]
        if float(distance_many(tilde, p, x[None, :])[0]) > reach_cap:
            center = point_toward(tilde, p, x, max(reach_cap - delta, 0.0))
        else:
            center = x
        centers.append(np.asarray(center, dtype=np.float64))
        dc = distance_many(tilde, center, targets)
        uncovered &= dc > cover_r
    return centers


# ---------------------------------------------------------------------------
# global staged deformation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GlobalSchedule:
    """Radii and budget ledger for the staged deformation."""

    seed: tuple
    r0: float
    mu: float
    eps: float
    k: int
    sign: str

    def radius(self, m: int) -> float:
        return (1.0 + m * self.mu / (2.0 - self.mu)) * self.r0

    def stage_budget(self, m: int) -> float:
        return self.eps * 2.0 ** (-(m + 1))

    def ball_budget(self, m: int, count: int) -> float:
        return self.eps * 2.0 ** (-(m + 2)) / max(count, 1)

    def to_dict(self) -> dict:
        return {
            "seed": [float(c) for c in self.seed],
            "r0": self.r0,
            "mu": self.mu,
            "eps": self.eps,
            "k": self.k,
            "sign": self.sign,
        }


@dataclass(frozen=True)
class StageRecord:
    index: int
    r_inner: float
    r_outer: float
    ball_budget: float
    steps: tuple
    verified_radius: float
    cumulative_ck: float

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "r_inner": self.r_inner,
            "r_outer": self.r_outer,
            "ball_budget": self.ball_budget,
            "steps": [s.to_dict() for s in self.steps],
            "verified_radius": self.verified_radius,
            "cumulative_ck": self.cumulative_ck,
        }


@dataclass(frozen=True)
class DeformationPlan:
    """Auditable record of a staged global deformation."""

    sign: str
    normalize_scale: float
    schedule: Optional[GlobalSchedule]
    stages: tuple
    total_ck: float
    eps: float
    c_n: float
    initial_classification: str
    final_classification: str
    final_min_eigen: float
    flags: tuple = ()

    @property
    def stage_count(self) -> int:
        return len(self.stages)

    def to_dict(self) -> dict:
        return {
            "sign": self.sign,
            "normalize_scale": self.normalize_scale,
            "schedule": self.schedule.to_dict() if self.schedule else None,
            "stages": [s.to_dict() for s in self.stages],
            "stage_count": self.stage_count,
            "total_ck": self.total_ck,
            "eps": self.eps,
            "c_n": self.c_n,
            "initial_classification": self.initial_classification,
            "final_classification": self.final_classification,
            "final_min_eigen": self.final_min_eigen,
            "flags": list(self.flags),
        }


def _strict_radius(
    d_seed: np.ndarray, strict: np.ndarray, fallback: float
) -> float:
    """Largest radius R such that every grid point within R of the seed
    has a strictly positive minimum eigenvalue (measured, not assumed)."""
    if strict.all():
        return float(d_seed.max())
    blocked = float(d_seed[~strict].min())
    return min(blocked * (1.0 - 1e-12), fallback)


def global_deform(
    g0: MetricSpec,
    tilde: MetricSpec,
    eps: float,
    k: int = 2,
    sign: str = "positive",
    *,
    grid: Optional[np.ndarray] = None,
    res: Optional[int] = None,
    per_dim: Optional[int] = None,
    seed_point: Optional[np.ndarray] = None,
) -> tuple[MetricSpec, DeformationPlan]:
    """Staged conformal deformation of a quasi-positive (resp.
    quasi-negative) traced curvature into a strictly positive (resp.
    negative) one.

    Stages: normalize the reference, seed a ball of strict positivity at
    the maximal-margin grid point, then repeatedly cover the next
    annulus with balls whose inner regions sit inside the certified
    region and run budgeted local bumps sequentially, re-measuring the
    certified radius after every stage.  Returns the final metric and
    the plan; the traced curvature updates ride the exact update law on
    the grid with the full pipeline cross-checked inside each step.

    ``seed_point`` overrides the seed-ball centre: the grid point
    nearest to it (in chart separation) is used instead of the
    maximal-margin point.  The seed ball must still verify strictly
    signed on the grid.
    """
    if eps <= 0.0:
        raise ValueError("eps must be positive")
    s = _sign_factor(sign)
    if grid is None:
        if res is None:
            res = 24 if tilde.chart.real_dim == 2 else 6
        grid = tilde.chart.sample_grid(res)
    grid = np.asarray(grid, dtype=np.float64)

    tilde_n, scale = normalize(tilde, points=grid)
    flags: list[str] = []

    trace_cur = general_trace(tilde_n, g0, grid)
    gmat_cur = g0.matrix(grid)
    lam = whiten_pencil(s * trace_cur, gmat_cur)[..., 0].real
    report0 = classify(s * trace_cur, gmat_cur, points=grid)
    if report0.classification == "positive":
        plan = DeformationPlan(
            sign=sign,
            normalize_scale=scale,
            schedule=None,
            stages=(),
            total_ck=0.0,
            eps=eps,
            c_n=0.0,
            initial_classification=report0.classification,
            final_classification=report0.classification,
            final_min_eigen=float(lam.min()),
            flags=(),
        )
        return g0, plan
    if report0.classification != "quasi-positive":
        raise CertificationError(
            f"input trace classifies as {report0.classification!r} under "
            f"sign={sign!r}; need quasi-positive "
            "(strictly signed somewhere, nowhere opposite)"
        )

    # --- seed ball -------------------------------------------------------
    if seed_point is None:
        seed = grid[int(np.argmax(lam))]
    else:
        sep = tilde_n.chart.chart_separation(
            np.asarray(seed_point, dtype=np.float64), grid
        )
        seed = grid[int(np.argmin(sep))]
        if lam[int(np.argmin(sep))] <= 0.0:
            raise CertificationError(
                "requested seed point sits where the traced curvature is "
                "not strictly signed; pick a point inside the signed region"
            )
    inj = injectivity_lower_bound(tilde_n, seed)
    r_cap = 0.25 * min(inj, 1.0)
    d_seed = distance_many(tilde_n, seed, grid)
    r0 = r_cap * 0.999
    while r0 > 1e-6 * r_cap:
        in_ball = d_seed <= r0
        if lam[in_ball].min() > 0.0:
            break
        r0 *= 0.8
    else:
        raise CertificationError(
            "no seed ball of strict positivity found above the resolution "
            "floor; refine the grid"
        )

    # --- annulus fraction: fixed point of mu -> choose_mu(r0/(1-mu)) -----
    mu = 0.25
    c_n = 0.0
    for _ in range(8):
        r_ball = r0 / (1.0 - mu)
        fld_probe = build_rho(tilde_n, seed, r_ball, injectivity=inj)
        c_n = estimate_cn(fld_probe).c_n
        mu_new = choose_mu(min(r_ball, 1.0), c_n)
        if abs(mu_new - mu) < 1e-12:
            break
        mu = mu_new
    # the loop may land on a 2-cycle between dyadics; make the final pair
    # self-consistent (smaller mu always stays feasible)
    r_ball = r0 / (1.0 - mu)
    while not bracket_is_positive(min(r_ball, 1.0), c_n, mu):
        mu *= 0.9
        r_ball = r0 / (1.0 - mu)

    schedule = GlobalSchedule(
        seed=tuple(float(c) for c in seed),
        r0=float(r0),
        mu=float(mu),
        eps=float(eps),
        k=int(k),
        sign=sign,
    )

    g_cur = g0
    stages: list[StageRecord] = []
    max_d = float(d_seed.max())
    verified_r = _strict_radius(d_seed, lam > 0.0, r0)
    budget_pts = _subset(grid, 256)
    total_ck = 0.0
    m = 0
    while schedule.radius(m) < max_d:
        if m >= _STAGE_HARD_CAP:
            raise CertificationError(
                f"stage count exceeded the hard cap {_STAGE_HARD_CAP}; "
                "the schedule is not converging on this grid"
            )
        r_m = schedule.radius(m)
        r_next = schedule.radius(m + 1)
        centers = cover_annulus(
            tilde_n, seed, r_m, r_next, r0, mu, grid=grid
        )
        steps: list[DeformationStep] = []
        if centers:
            ball_budget = schedule.ball_budget(m, len(centers))
            for l, center in enumerate(centers):
                region = d_seed <= verified_r
                margin_now = float(lam[region].min()) if region.any() else 0.0
                try:
                    result = _local_deform_full(
                        g_cur,
                        tilde_n,
                        center,
                        r_ball,
                        ball_budget,
                        k,
                        sign,
                        per_dim=per_dim,
                        mu=mu,
                        margin_protect=margin_now if margin_now > 0 else None,
                    )
                except (PositivityLost, BudgetExhausted, NoValidMu) as exc:
                    raise type(exc)(
                        f"stage {m}, ball {l} at "
                        f"{np.round(center, 6).tolist()}: {exc}"
                    ) from exc
                g_cur = result.spec
                steps.append(result.step)
                # exact update of the grid caches through this bump
                f_vals = result.bump.values(grid)
                shift = bump_laplacian(result.bump, grid)
                factor = np.exp(-s * result.t * f_vals)
                trace_cur = factor[..., None, None] * (
                    trace_cur
                    + (s * result.t * shift)[..., None, None] * gmat_cur
                )
                gmat_cur = factor[..., None, None] * gmat_cur
                lam = whiten_pencil(s * trace_cur, gmat_cur)[..., 0].real
                # the previously certified region must survive each ball
                region_min = float(lam[region].min()) if region.any() else 0.0
                if region.any() and not region_min > 0.0:
                    raise PositivityLost(
                        f"stage {m}, ball {l}: certified region lost "
                        f"strict positivity (min eigenvalue "
                        f"{region_min:.3e})"
                    )
        new_verified = _strict_radius(d_seed, lam > 0.0, verified_r)
        if centers and new_verified < r_m:
            # the supposedly certified inner region regressed
            flags.append(f"stage_{m}_verified_radius_regressed")
        verified_r = max(verified_r, new_verified)
        total_ck = ck_distance(g_cur, g0, budget_pts, k=k, tilde=tilde_n)
        ledger = eps * sum(2.0 ** (-(i + 1)) for i in range(m + 1))
        if total_ck > ledger:
            raise BudgetExhausted(
                f"stage {m}: measured C^{k} change {total_ck:.3e} exceeds "
                f"the ledger {ledger:.3e}"
            )
        stages.append(
            StageRecord(
                index=m,
                r_inner=r_m,
                r_outer=r_next,
                ball_budget=schedule.ball_budget(m, len(centers)) if centers
                else 0.0,
                steps=tuple(steps),
                verified_radius=verified_r,
                cumulative_ck=total_ck,
            )
        )
        m += 1
    if m > _STAGE_FLAG_LIMIT:
        flags.append(f"stage_count_{m}_exceeds_{_STAGE_FLAG_LIMIT}")

    report_final = classify(s * trace_cur, gmat_cur, points=grid)
    lam_final = whiten_pencil(s * trace_cur, gmat_cur)[..., 0].real
    if report_final.classification != "positive":
        flags.append(
            f"final_classification_{report_final.classification}"
        )
    # audit: the grid caches against the full pipeline at a subset
    sub_idx = np.unique(np.linspace(0, len(grid) - 1, 48).astype(int))
    trace_audit = general_trace(tilde_n, g_cur, grid[sub_idx])
    resid = float(np.max(np.abs(trace_audit - trace_cur[sub_idx])))
    rel = resid / max(1.0, float(np.max(np.abs(trace_audit))))
    if rel > CROSS_CHECK_REL:
        raise CertificationError(
            f"grid trace cache disagrees with the curvature pipeline "
            f"(relative residual {rel:.3e})"
        )
    if total_ck >= eps:
        raise BudgetExhausted(
            f"total C^{k} change {total_ck:.3e} reached the budget {eps:.3e}"
        )

    final_class = report_final.classification
    if sign == "negative" and final_class in ("positive", "quasi-positive"):
        # report in the caller's orientation
        final_class = {"positive": "negative",
                       "quasi-positive": "quasi-negative"}[final_class]
    init_class = report0.classification
    if sign == "negative":
        init_class = {"positive": "negative",
                      "quasi-positive": "quasi-negative"}.get(
            init_class, init_class
        )
    plan = DeformationPlan(
        sign=sign,
        normalize_scale=scale,
        schedule=schedule,
        stages=tuple(stages),
        total_ck=total_ck,
        eps=eps,
        c_n=float(c_n),
        initial_classification=init_class,
        final_classification=final_class,
        final_min_eigen=float(lam_final.min()),
        flags=tuple(flags),
    )
    return g_cur, plan
