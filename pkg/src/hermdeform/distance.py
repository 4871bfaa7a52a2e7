"""Geodesic distance, injectivity bounds, and the clamped ball field.

Everything here works with the *real* Riemannian structure underlying a
Hermitian metric (see :func:`hermdeform.core.metrics.real_metric_matrix`):
lengths, geodesics, and Laplacians are those of the ``2n``-dimensional
real metric, with the flat metric mapping to the Euclidean one.

Three computation tiers:

1. **Analytic fast paths** for the builtin geometries where the distance
   is known in closed form: the flat metric on box/torus charts (wrapped
   Euclidean, up to a constant conformal scale) and the scaling-invariant
   shell metric on annulus charts (a flat cylinder ``R x S^{2n-1}``
   modulo a log-radius translation).
2. **Generic shooting**: geodesic integration of the real geodesic ODE
   (adaptive RK45, local tolerance 1e-10) plus multi-start damped
   Gauss-Newton inversion of the exponential map.  Quotient charts are
   handled by integrating in the covering space and evaluating the
   connection through the deck maps -- valid because any metric defined
   on a quotient chart is deck-invariant by construction.
3. **Finite-difference fields**: the ball field ``rho = r^2 - d^2``
   (clamped to exactly 0 outside the ball) with gradient and Laplacian
   jets from central differences of the *unclamped* squared distance,
   which is smooth across the ball boundary.

Normalization fixed by the flat oracle: the reported squared gradient is
the real-metric norm ``grad(rho)^T G^{-1} grad(rho)`` (flat value
``4 d^2``, so the ball identity ``|grad rho|^2 = 4 (r^2 - rho)`` holds
with these units), and the reported Laplacian is normalised so the flat
value is exactly ``-4n`` (four times the complex mixed trace).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .core.charts import AnnulusChart, BoxChart, TorusChart
from .core.jets import Jet, JetOrderError, jet_table
from .core.metrics import MetricSpec, inverse_transpose, real_metric_matrix
from .errors import (
    ChartDomainError,
    EikonalViolation,
    IntegrationFailure,
    NotConverged,
)

__all__ = [
    "ODE_TOLERANCE",
    "DISTANCE_REL_TOL",
    "EIKONAL_REL_TOL",
    "INJECTIVITY_FALLBACK",
    "real_metric",
    "real_metric_derivatives",
    "christoffel_real",
    "tangent_norm",
    "unit_tangent",
    "geodesic_shoot",
    "geodesic_trajectory",
    "distance",
    "distance_many",
    "point_toward",
    "injectivity_lower_bound",
    "DistanceField",
    "build_rho",
    "LaplacianBound",
    "estimate_cn",
]

#: Local error tolerance of the geodesic integrator (both rtol and atol).
ODE_TOLERANCE = 1e-10
#: Relative accuracy target of the shooting distance inside the ball.
DISTANCE_REL_TOL = 1e-6
#: Relative tolerance of the build-time ball-identity assertion.
EIKONAL_REL_TOL = 1e-3
#: Conservative injectivity value returned when detection is inconclusive.
INJECTIVITY_FALLBACK = 0.05
#: Arclength horizon for loop / focal detection sweeps.
_DETECTION_HORIZON = 4.0
_NEWTON_MAX_ITER = 40
_CONSTANT_FIELD_TOL = 1e-12


# ---------------------------------------------------------------------------
# real-metric helpers
# ---------------------------------------------------------------------------


def real_metric(tilde: MetricSpec, points: np.ndarray) -> np.ndarray:
    """Real symmetric metric ``G`` on ``(x, y)`` coordinates, ``(*, 2n, 2n)``."""
    return real_metric_matrix(tilde.matrix(np.asarray(points, dtype=np.float64)))


def real_metric_derivatives(
    tilde: MetricSpec, points: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """``(G, dG)`` with ``dG[..., a, b, c] = d_a G_{bc}`` (exact jets)."""
    pts = np.asarray(points, dtype=np.float64)
    jet = tilde.matrix_jet(pts, 1)
    g = real_metric_matrix(jet.value)
    dg = np.stack(
        [real_metric_matrix(jet.partial(a).value) for a in range(tilde.chart.real_dim)],
        axis=-3,
    )
    return g, dg


def christoffel_real(tilde: MetricSpec, points: np.ndarray) -> np.ndarray:
    """Christoffel symbols ``Gamma^a_{bc}`` of the real metric,
    shape ``(*batch, 2n, 2n, 2n)`` with the upper index first."""
    g, dg = real_metric_derivatives(tilde, points)
    ginv = np.linalg.inv(g)
    # M[b, d, c] = d_b G_{dc} + d_c G_{db} - d_d G_{bc}
    m = (
        dg
        + np.swapaxes(dg, -3, -1)
        - np.swapaxes(dg, -3, -2)
    )
    return 0.5 * np.einsum("...ad,...bdc->...abc", ginv, m)


def tangent_norm(tilde: MetricSpec, points: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Real-metric length of tangent vectors ``v`` at ``points``."""
    g = real_metric(tilde, points)
    q = np.einsum("...a,...ab,...b->...", v, g, v)
    return np.sqrt(np.maximum(q.real, 0.0))


def unit_tangent(tilde: MetricSpec, point: np.ndarray, v: np.ndarray) -> np.ndarray:
    """``v`` rescaled to unit real-metric length."""
    nrm = tangent_norm(tilde, point, v)
    if np.any(nrm == 0.0):
        raise ValueError("cannot normalise a zero tangent vector")
    return v / nrm[..., None]


# ---------------------------------------------------------------------------
# covering-space evaluation and the geodesic integrator
# ---------------------------------------------------------------------------


def _cover_eval_points(chart, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Map covering-space points to the fundamental domain.

    Returns ``(w, c)`` with ``w`` in-domain and ``c`` the deck scale such
    that connection coefficients at ``q`` equal those at ``w`` divided by
    ``c`` (translation decks: ``c = 1``; scaling decks: ``c = |q|/|w|``).
    """
    if isinstance(chart, AnnulusChart):
        w = chart.wrap(q)
        c = np.linalg.norm(q, axis=-1) / np.linalg.norm(w, axis=-1)
        return w, c
    if isinstance(chart, TorusChart):
        return chart.wrap(q), np.ones(q.shape[:-1])
    return q, np.ones(q.shape[:-1])


def _flow_rhs(tilde: MetricSpec, k: int, dim: int) -> Callable:
    chart = tilde.chart

    def rhs(_t, y):
        state = y.reshape(k, 2 * dim)
        q = state[:, :dim]
        v = state[:, dim:]
        w, c = _cover_eval_points(chart, q)
        gamma = christoffel_real(tilde, w) / c[:, None, None, None]
        acc = -np.einsum("kabc,kb,kc->ka", gamma, v, v)
        return np.concatenate([v, acc], axis=1).ravel()

    return rhs


def _integrate_batch(
    tilde: MetricSpec,
    q0: np.ndarray,
    u0: np.ndarray,
    t_eval: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Integrate the geodesic flow for a batch of initial states over unit
    time (so the initial velocity doubles as the whole displacement).

    Returns the endpoint states ``(k, 4n)`` or, with ``t_eval``, the full
    trajectory ``(len(t_eval), k, 4n)``.  Raises
    :class:`IntegrationFailure` on solver breakdown or chart exit.
    """
    q0 = np.atleast_2d(np.asarray(q0, dtype=np.float64))
    u0 = np.atleast_2d(np.asarray(u0, dtype=np.float64))
    k, dim = q0.shape
    y0 = np.concatenate([q0, u0], axis=1).ravel()
    if np.max(np.abs(u0)) == 0.0:
        if t_eval is None:
            return np.concatenate([q0, u0], axis=1)
        return np.broadcast_to(
            np.concatenate([q0, u0], axis=1), (len(t_eval), k, 2 * dim)
        ).copy()
    try:
        sol = solve_ivp(
            _flow_rhs(tilde, k, dim),
            (0.0, 1.0),
            y0,
            method="RK45",
            rtol=ODE_TOLERANCE,
            atol=ODE_TOLERANCE,
            t_eval=t_eval,
        )
    except ChartDomainError as exc:
        raise IntegrationFailure(f"geodesic left the chart domain: {exc}") from exc
    if not sol.success:
        raise IntegrationFailure(f"geodesic integrator failed: {sol.message}")
    if not np.all(np.isfinite(sol.y)):
        raise IntegrationFailure("geodesic integrator produced non-finite state")
    if t_eval is None:
        return sol.y[:, -1].reshape(k, 2 * dim)
    return sol.y.T.reshape(len(sol.t), k, 2 * dim)


def geodesic_shoot(
    tilde: MetricSpec, p: np.ndarray, v: np.ndarray, s: float
) -> np.ndarray:
    """Endpoint of the geodesic from ``p`` with unit initial direction
    ``v`` after arclength ``s``, wrapped into the fundamental domain."""
    p = np.asarray(p, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if s < 0.0:
        raise ValueError("arclength must be non-negative")
    nrm = float(tangent_norm(tilde, p[None, :], v[None, :])[0])
    if abs(nrm - 1.0) > 1e-6:
        raise ValueError(
            f"initial direction must be unit length (got |v| = {nrm:.8f})"
        )
    end = _integrate_batch(tilde, p[None, :], (s * v)[None, :])[0]
    dim = tilde.chart.real_dim
    return tilde.chart.wrap(end[:dim])


def geodesic_trajectory(
    tilde: MetricSpec, p: np.ndarray, v: np.ndarray, s: float, samples: int = 512
) -> tuple[np.ndarray, np.ndarray]:
    """``(arclengths, covering-space points)`` along the geodesic --
    unwrapped, for loop and focal-point scanning."""
    p = np.asarray(p, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    t_eval = np.linspace(0.0, 1.0, samples)
    states = _integrate_batch(tilde, p[None, :], (s * v)[None, :], t_eval=t_eval)
    dim = tilde.chart.real_dim
    return s * t_eval, states[:, 0, :dim]


# ---------------------------------------------------------------------------
# analytic distance evaluators
# ---------------------------------------------------------------------------


def _constant_conformal_exponent(spec: MetricSpec) -> Optional[float]:
    """The constant value of the spec's conformal exponent, or None if the
    exponent varies (probed with exact first-order jets at grid points)."""
    if spec.phi is None:
        return 0.0
    try:
        grid = spec.chart.sample_grid(2)[:4]
        scatter = spec.chart.random_points(np.random.default_rng(7), 8)
        probes = np.concatenate([grid, scatter], axis=0)
    except ChartDomainError:
        return None
    jet = spec.phi.jet(probes, 1)
    vals = jet.value.real
    scale = 1.0 + float(np.max(np.abs(vals)))
    spread = float(np.max(vals) - np.min(vals))
    slopes = max(
        float(np.max(np.abs(jet.partial(a).value)))
        for a in range(spec.chart.real_dim)
    )
    if spread <= _CONSTANT_FIELD_TOL * scale and slopes <= _CONSTANT_FIELD_TOL * scale:
        return float(np.mean(vals))
    return None


class _FlatEvaluator:
    """Wrapped-Euclidean distance for the flat metric (times a constant
    conformal scale) on box or torus charts."""

    def __init__(self, tilde: MetricSpec, center: np.ndarray, exponent: float):
        self.tilde = tilde
        self.center = np.asarray(center, dtype=np.float64)
        self.factor = float(np.exp(exponent))

    def d2(self, xs: np.ndarray) -> np.ndarray:
        deltas = self.tilde.chart.wrapped_deltas(self.center, xs)
        best = np.min(np.sum(deltas**2, axis=-1), axis=-1)
        return self.factor * best

    def toward(self, x: np.ndarray, target: float) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        deltas = self.tilde.chart.wrapped_deltas(self.center, x[None, :])
        deltas = deltas.reshape(-1, x.shape[-1])
        norms = np.linalg.norm(deltas, axis=-1)
        delta = deltas[int(np.argmin(norms))]
        nrm = float(np.linalg.norm(delta))
        if nrm == 0.0:
            return self.center.copy()
        step = (target / np.sqrt(self.factor)) * delta / nrm
        return self.tilde.chart.wrap(self.center + step)


class _CylinderEvaluator:
    """Distance for the scaling-invariant shell metric (times a constant
    conformal scale): the geometry is a flat cylinder
    ``(log-radius line) x (unit sphere)`` modulo a log-scale translation."""

    def __init__(self, tilde: MetricSpec, center: np.ndarray, exponent: float):
        self.tilde = tilde
        self.center = np.asarray(center, dtype=np.float64)
        self.factor = float(np.exp(exponent))
        self.log_lam = tilde.chart.log_lam
        self.u0 = float(np.log(np.linalg.norm(self.center)))
        self.w0 = self.center / np.linalg.norm(self.center)

    def _split(self, xs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        r = np.linalg.norm(xs, axis=-1)
        return np.log(r), xs / r[..., None]

    def d2(self, xs: np.ndarray) -> np.ndarray:
        xs = np.asarray(xs, dtype=np.float64)
        u, w = self._split(xs)
        du = u - self.u0
        k = np.round(du / self.log_lam)
        du_min2 = np.min(
            np.stack(
                [(du - (k + j) * self.log_lam) ** 2 for j in (-1, 0, 1)], axis=-1
            ),
            axis=-1,
        )
        chord = np.linalg.norm(w - self.w0, axis=-1)
        theta = 2.0 * np.arcsin(np.clip(0.5 * chord, 0.0, 1.0))
        return self.factor * (du_min2 + theta**2)

    def toward(self, x: np.ndarray, target: float) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        u, w = self._split(x[None, :])
        u, w = float(u[0]), w[0]
        du = u - self.u0
        du -= self.log_lam * np.round(du / self.log_lam)
        chord = float(np.linalg.norm(w - self.w0))
        theta = float(2.0 * np.arcsin(np.clip(0.5 * chord, 0.0, 1.0)))
        total = np.hypot(du, theta)
        if total == 0.0:
            return self.tilde.chart.wrap(self.center)
        frac = (target / np.sqrt(self.factor)) / total
        u_new = self.u0 + frac * du
        if theta > 1e-14:
            # walk the great circle from w0 toward w
            t_dir = w - self.w0 * np.cos(theta)
            t_dir /= np.linalg.norm(t_dir)
            ang = frac * theta
            w_new = self.w0 * np.cos(ang) + t_dir * np.sin(ang)
        else:
            w_new = self.w0
        return self.tilde.chart.wrap(np.exp(u_new) * w_new)


class _ShootingEvaluator:
    """Multi-start shooting inversion of the exponential map for generic
    metrics; exact geodesics, damped Gauss-Newton on the endpoint."""

    def __init__(self, tilde: MetricSpec, center: np.ndarray):
        self.tilde = tilde
        self.center = np.asarray(center, dtype=np.float64)
        self.g_center = real_metric(tilde, self.center[None, :])[0]

    def _candidates(self, x: np.ndarray) -> list[np.ndarray]:
        chart = self.tilde.chart
        p = self.center
        if isinstance(chart, AnnulusChart):
            cands = [x * (chart.lam**k) - p for k in (-1, 0, 1)]
        else:
            deltas = chart.wrapped_deltas(p, x)
            deltas = deltas.reshape(-1, deltas.shape[-1])
            order = np.argsort(np.linalg.norm(deltas, axis=-1))
            cands = [deltas[i] for i in order[:4]]
        return [d for d in cands if np.linalg.norm(d) > 0.0] or [np.zeros_like(p)]

    def _chord_length(self, delta: np.ndarray) -> float:
        """Three-point quadrature of the metric length of the chord."""
        taus = np.array([0.0, 0.5, 1.0])
        pts = self.center + taus[:, None] * delta
        pts = self.tilde.chart.wrap(pts)
        speeds = tangent_norm(self.tilde, pts, np.broadcast_to(delta, pts.shape))
        return float((speeds[0] + 4.0 * speeds[1] + speeds[2]) / 6.0)

    def _solve_one(self, delta: np.ndarray) -> Optional[tuple[float, np.ndarray]]:
        """Newton-solve exp_p(u) = p + delta in the cover; returns the
        geodesic ``(length, initial velocity u)`` or None if unconverged."""
        p = self.center
        dim = p.shape[0]
        target = p + delta
        if np.linalg.norm(delta) == 0.0:
            return 0.0, np.zeros_like(p)
        s_est = self._chord_length(delta)
        v0 = unit_tangent(self.tilde, p, delta)
        u = v0 * s_est
        tol = 1e-9 * (1.0 + float(np.linalg.norm(delta)))
        fd = 1e-6 * (1.0 + float(np.linalg.norm(u)))

        def endpoint_batch(us: np.ndarray) -> np.ndarray:
            q0 = np.broadcast_to(p, us.shape).copy()
            return _integrate_batch(self.tilde, q0, us)[:, :dim]

        try:
            mis = endpoint_batch(u[None, :])[0] - target
        except IntegrationFailure:
            return None
        def length_of(vel: np.ndarray) -> float:
            return float(np.sqrt(np.einsum("a,ab,b->", vel, self.g_center, vel).real))

        for _ in range(_NEWTON_MAX_ITER):
            err = float(np.linalg.norm(mis))
            if err <= tol:
                return length_of(u), u
            # forward-difference Jacobian, batched into one integration
            probes = u[None, :] + fd * np.eye(dim)
            try:
                ends = endpoint_batch(np.concatenate([u[None, :], probes], axis=0))
            except IntegrationFailure:
                return None
            jac = (ends[1:] - ends[0]).T / fd
            try:
                step = np.linalg.lstsq(jac, -mis, rcond=None)[0]
            except np.linalg.LinAlgError:
                return None
            improved = False
            for damp in (1.0, 0.5, 0.25, 0.125, 0.0625):
                u_try = u + damp * step
                try:
                    mis_try = endpoint_batch(u_try[None, :])[0] - target
                except IntegrationFailure:
                    continue
                if np.linalg.norm(mis_try) < err:
                    u, mis = u_try, mis_try
                    improved = True
                    break
            if not improved:
                return None
        if float(np.linalg.norm(mis)) <= tol:
            return length_of(u), u
        return None

    def _solve_full(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        """Best converged (length, solved initial velocity) pair."""
        best = None
        best_u = None
        for delta in self._candidates(x):
            solved = self._solve_one(delta)
            if solved is not None and (best is None or solved[0] < best):
                best, best_u = solved
        if best is None:
            raise NotConverged(
                "shooting distance did not converge from any start; "
                "shrink the working radius"
            )
        return best, best_u

    def d2(self, xs: np.ndarray) -> np.ndarray:
        xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
        out = np.empty(xs.shape[0])
        for i, x in enumerate(xs):
            d, _ = self._solve_full(x)
            out[i] = d * d
        return out

    def toward(self, x: np.ndarray, target: float) -> np.ndarray:
        d, u = self._solve_full(np.asarray(x, dtype=np.float64))
        if d == 0.0:
            return self.tilde.chart.wrap(self.center)
        dim = self.center.shape[0]
        end = _integrate_batch(
            self.tilde, self.center[None, :], (u * (target / d))[None, :]
        )[0, :dim]
        return self.tilde.chart.wrap(end)


def _make_evaluator(tilde: MetricSpec, center: np.ndarray):
    center = np.asarray(center, dtype=np.float64)
    exponent = _constant_conformal_exponent(tilde)
    if exponent is not None and tilde.base == "flat" and isinstance(
        tilde.chart, (BoxChart, TorusChart)
    ):
        return _FlatEvaluator(tilde, center, exponent)
    if exponent is not None and tilde.base == "hopf_standard" and isinstance(
        tilde.chart, AnnulusChart
    ):
        return _CylinderEvaluator(tilde, center, exponent)
    return _ShootingEvaluator(tilde, center)


# ---------------------------------------------------------------------------
# public distance API
# ---------------------------------------------------------------------------


def distance(
    tilde: MetricSpec, p: np.ndarray, x: np.ndarray, method: str = "auto"
) -> float:
    """Geodesic distance between two chart points.

    ``method``: ``"auto"`` picks the closed form when the metric admits
    one, ``"analytic"`` requires it, ``"shooting"`` forces the generic
    exponential-map inversion (useful for cross-checks).
    """
    p = np.asarray(p, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if method == "auto":
        ev = _make_evaluator(tilde, p)
    elif method == "analytic":
        ev = _make_evaluator(tilde, p)
        if isinstance(ev, _ShootingEvaluator):
            raise ValueError("no analytic distance path for this metric")
    elif method == "shooting":
        ev = _ShootingEvaluator(tilde, p)
    else:
        raise ValueError(f"unknown method {method!r}")
    return float(np.sqrt(max(float(ev.d2(x[None, :])[0]), 0.0)))


def distance_many(
    tilde: MetricSpec, p: np.ndarray, xs: np.ndarray, method: str = "auto"
) -> np.ndarray:
    """Vectorised distances from one center to a batch of points."""
    if method == "shooting":
        ev = _ShootingEvaluator(tilde, np.asarray(p, dtype=np.float64))
    else:
        ev = _make_evaluator(tilde, p)
    return np.sqrt(np.maximum(ev.d2(np.asarray(xs, dtype=np.float64)), 0.0))


def point_toward(
    tilde: MetricSpec, p: np.ndarray, x: np.ndarray, target: float
) -> np.ndarray:
    """The point at distance ``target`` from ``p`` along the minimizing
    geodesic from ``p`` through ``x`` (wrapped)."""
    if target < 0.0:
        raise ValueError("target distance must be non-negative")
    ev = _make_evaluator(tilde, p)
    return ev.toward(np.asarray(x, dtype=np.float64), float(target))


# ---------------------------------------------------------------------------
# injectivity lower bound
# ---------------------------------------------------------------------------


def _direction_net(tilde: MetricSpec, p: np.ndarray, count: int) -> np.ndarray:
    """Deterministic unit-direction net at ``p`` (seeded, reproducible),
    always containing the radial/axis-aligned seed directions."""
    dim = tilde.chart.real_dim
    rng = np.random.default_rng(20240817)
    raw = rng.standard_normal((count, dim))
    seeds = [np.eye(dim)[a] for a in range(dim)]
    if isinstance(tilde.chart, AnnulusChart):
        seeds.append(np.asarray(p, dtype=np.float64))  # radial ray
    raw = np.concatenate([np.asarray(seeds), raw], axis=0)
    raw /= np.linalg.norm(raw, axis=-1, keepdims=True)
    g = real_metric(tilde, np.broadcast_to(p, raw.shape).copy())
    nrm = np.sqrt(np.einsum("ka,kab,kb->k", raw, g, raw).real)
    return raw / nrm[:, None]


def _loop_and_focal_scan(
    tilde: MetricSpec, p: np.ndarray, horizon: float, net_size: int
) -> Optional[float]:
    """Smallest detected half-loop length or focal arclength over the
    direction net, or None if nothing was detected within the horizon."""
    chart = tilde.chart
    dim = chart.real_dim
    p = np.asarray(p, dtype=np.float64)
    dirs = _direction_net(tilde, p, net_size)
    samples = 768
    fd = 1e-4
    best: Optional[float] = None
    for v in dirs:
        # the main ray plus transverse perturbations, integrated together
        basis = [w for w in np.eye(dim) if abs(float(w @ v)) < 0.999]
        perturbed = [unit_tangent(tilde, p, v + fd * w) for w in basis[: dim - 1]]
        k = 1 + len(perturbed)
        u0 = np.stack([v] + perturbed, axis=0) * horizon
        q0 = np.broadcast_to(p, (k, dim)).copy()
        t_eval = np.linspace(0.0, 1.0, samples)
        try:
            traj = _integrate_batch(tilde, q0, u0, t_eval=t_eval)
        except IntegrationFailure:
            continue
        arc = horizon * t_eval
        main = traj[:, 0, :dim]
        # --- loop detection: wrapped return to p after leaving it
        sep = chart.chart_separation(np.broadcast_to(p, main.shape), chart.wrap(main))
        away = arc > 0.2 * min(horizon, 1.0)
        close = sep < 5e-3
        hits = np.where(away & close)[0]
        if hits.size:
            i = int(hits[0])
            loop_len = arc[i] - sep[i]
            cand = 0.5 * loop_len * 0.999
            best = cand if best is None else min(best, cand)
        # --- focal detection: transverse spread collapse of the
        #     difference quotients (sign change of the frame determinant)
        if perturbed:
            jy = (traj[:, 1:, :dim] - main[:, None, :]) / fd
            tang = traj[:, 0, dim:]
            tang = tang / np.maximum(
                np.linalg.norm(tang, axis=-1, keepdims=True), 1e-300
            )
            frame = []
            for w in basis[: dim - 1]:
                proj = w - (tang @ w)[:, None] * tang
                proj /= np.maximum(np.linalg.norm(proj, axis=-1, keepdims=True), 1e-12)
                frame.append(proj)
            frame = np.stack(frame, axis=1)  # (T, dim-1, dim)
            mat = np.einsum("tjd,tkd->tjk", jy, frame)
            dets = np.linalg.det(mat)
            scale = np.max(np.abs(dets))
            if scale > 0:
                sign_flip = np.where(
                    (dets[:-1] * dets[1:] < 0)
                    & (arc[1:] > 0.05 * min(horizon, 1.0))
                )[0]
                if sign_flip.size:
                    i = int(sign_flip[0])
                    cand = float(arc[i]) * 0.999
                    best = cand if best is None else min(best, cand)
    return best


def injectivity_lower_bound(
    tilde: MetricSpec,
    p: np.ndarray,
    method: str = "auto",
    horizon: float = _DETECTION_HORIZON,
    net_size: int = 12,
) -> float:
    """Conservative lower bound for the injectivity radius at ``p``.

    Closed forms where the geometry admits them (half shortest lattice
    loop on flat tori; boundary clearance on boxes; the smaller of the
    sphere focal length and half the log-scale loop on the shell);
    otherwise a deterministic direction-net sweep detecting geodesic
    loops and focal collapses.  Falls back to ``INJECTIVITY_FALLBACK``
    with a warning when detection is inconclusive.
    """
    p = np.asarray(p, dtype=np.float64)
    chart = tilde.chart
    exponent = _constant_conformal_exponent(tilde)
    if method in ("auto", "analytic") and exponent is not None:
        scale = float(np.exp(0.5 * exponent))
        if tilde.base == "flat" and isinstance(chart, TorusChart):
            return scale * 0.5 * chart.shortest_lattice_vector()
        if tilde.base == "flat" and isinstance(chart, BoxChart):
            clearance = float(chart.boundary_clearance(p))
            return min(scale * clearance, horizon)
        if tilde.base == "hopf_standard" and isinstance(chart, AnnulusChart):
            return scale * min(np.pi, 0.5 * chart.log_lam)
    if method == "analytic":
        raise ValueError("no analytic injectivity path for this metric")
    detected = _loop_and_focal_scan(tilde, p, horizon, net_size)
    if detected is None:
        warnings.warn(
            "injectivity detection inconclusive within the horizon; "
            f"returning the fallback {INJECTIVITY_FALLBACK}",
            RuntimeWarning,
            stacklevel=2,
        )
        return INJECTIVITY_FALLBACK
    return float(detected)


# ---------------------------------------------------------------------------
# ball field rho = r^2 - d^2 and its finite-difference jets
# ---------------------------------------------------------------------------


class _FDScalar:
    """Scalar field backed by batched point evaluation plus, for the ball
    field itself, finite-difference first/second jets."""

    def __init__(
        self,
        values_fn: Callable[[np.ndarray], np.ndarray],
        jets_fn: Optional[Callable[[np.ndarray], tuple]] = None,
        label: str = "field",
    ):
        self._values = values_fn
        self._jets = jets_fn
        self.label = label

    def jet(self, points: np.ndarray, order: int) -> Jet:
        pts = np.asarray(points, dtype=np.float64)
        dim = pts.shape[-1]
        if order > 2 or (order > 0 and self._jets is None):
            raise JetOrderError(
                f"field {self.label!r} provides jets to order "
                f"{2 if self._jets else 0}, requested {order}"
            )
        table = jet_table(dim, order)
        coeffs = np.zeros((table.ncoeff,) + pts.shape[:-1], dtype=np.complex128)
        if order == 0:
            coeffs[0] = self._values(pts)
            return Jet(table, coeffs)
        value, grad, hess = self._jets(pts)
        coeffs[0] = value
        for a in range(dim):
            alpha = tuple(1 if i == a else 0 for i in range(dim))
            coeffs[table.index[alpha]] = grad[..., a]
        if order == 2:
            for a in range(dim):
                for b in range(a, dim):
                    alpha = tuple(
                        (1 if i == a else 0) + (1 if i == b else 0)
                        for i in range(dim)
                    )
                    # Taylor-normalised: c_alpha = d^alpha f / alpha!
                    factor = 0.5 if a == b else 1.0
                    coeffs[table.index[alpha]] = factor * hess[..., a, b]
        return Jet(table, coeffs)

    def values(self, points: np.ndarray) -> np.ndarray:
        return self._values(np.asarray(points, dtype=np.float64))

    def __repr__(self):
        return f"_FDScalar({self.label!r})"


@dataclass(frozen=True)
class DistanceField:
    """The clamped ball field ``rho = r^2 - d(center, .)^2``.

    ``rho`` is exactly 0 (value and jets) outside the ball; inside, jets
    come from central differences of the unclamped squared distance,
    which stays smooth across the ball boundary.  ``grad_norm_sq`` is the
    real-metric squared gradient of ``rho`` and ``tilde_laplacian`` the
    real-normalised Laplacian (flat oracle: ``-4n`` everywhere inside).
    """

    tilde: MetricSpec
    center: np.ndarray
    radius: float
    fd_step: float
    rho: _FDScalar = field(repr=False)
    grad_norm_sq: _FDScalar = field(repr=False)
    tilde_laplacian: _FDScalar = field(repr=False)
    _evaluator: object = field(repr=False)

    def d2_unclamped(self, points: np.ndarray) -> np.ndarray:
        return self._evaluator.d2(np.asarray(points, dtype=np.float64))

    def rho_values(self, points: np.ndarray) -> np.ndarray:
        return self.rho.values(points)

    def support_mask(self, points: np.ndarray) -> np.ndarray:
        return self.d2_unclamped(points) < self.radius**2


_FD_CHUNK = 20000


def _fd_d2_jets(evaluator, points: np.ndarray, step: float, order: int = 2):
    """Central-difference gradient (and Hessian for ``order=2``) of the
    unclamped squared distance, evaluated in one batched call (chunked
    to bound peak memory on large sweeps)."""
    pts = np.asarray(points, dtype=np.float64)
    batch = pts.shape[:-1]
    dim = pts.shape[-1]
    flat = pts.reshape(-1, dim)
    npts = flat.shape[0]
    if npts > _FD_CHUNK:
        parts = [
            _fd_d2_jets(evaluator, flat[i : i + _FD_CHUNK], step, order=order)
            for i in range(0, npts, _FD_CHUNK)
        ]
        center = np.concatenate([p[0] for p in parts]).reshape(batch)
        grad = np.concatenate([p[1] for p in parts]).reshape(batch + (dim,))
        if order < 2:
            return center, grad, None
        hess = np.concatenate([p[2] for p in parts]).reshape(batch + (dim, dim))
        return center, grad, hess
    stencil = [flat]
    for a in range(dim):
        e = np.zeros(dim)
        e[a] = step
        stencil.append(flat + e)
        stencil.append(flat - e)
    pair_index = {}
    if order >= 2:
        for a in range(dim):
            for b in range(a + 1, dim):
                ea = np.zeros(dim)
                ea[a] = step
                eb = np.zeros(dim)
                eb[b] = step
                pair_index[(a, b)] = len(stencil)
                stencil.append(flat + ea + eb)
                stencil.append(flat + ea - eb)
                stencil.append(flat - ea + eb)
                stencil.append(flat - ea - eb)
    allpts = np.concatenate(stencil, axis=0)
    vals = evaluator.d2(allpts)
    blocks = vals.reshape(-1, npts)
    center = blocks[0]
    grad = np.empty((npts, dim))
    hess = np.empty((npts, dim, dim)) if order >= 2 else None
    for a in range(dim):
        plus, minus = blocks[1 + 2 * a], blocks[2 + 2 * a]
        grad[:, a] = (plus - minus) / (2.0 * step)
        if order >= 2:
            hess[:, a, a] = (plus - 2.0 * center + minus) / step**2
    for (a, b), idx in pair_index.items():
        pp, pm, mp, mm = blocks[idx], blocks[idx + 1], blocks[idx + 2], blocks[idx + 3]
        mixed = (pp - pm - mp + mm) / (4.0 * step**2)
        hess[:, a, b] = mixed
        hess[:, b, a] = mixed
    return (
        center.reshape(batch),
        grad.reshape(batch + (dim,)),
        hess.reshape(batch + (dim, dim)) if order >= 2 else None,
    )


def build_rho(
    tilde: MetricSpec,
    p: np.ndarray,
    r: float,
    injectivity: Optional[float] = None,
    eikonal_check: bool = True,
) -> DistanceField:
    """Construct the clamped ball field at center ``p``, radius ``r``.

    Requires ``r < min(injectivity bound, 1)``; pass a precomputed
    ``injectivity`` to skip re-detection.  Jets use central differences
    of the unclamped squared distance at step ``min(1e-3, r/100)``; the
    ball identity ``|grad rho|^2 = 4 (r^2 - rho)`` is asserted on a
    deterministic sample set at build time (:class:`EikonalViolation`).
    """
    p = np.asarray(p, dtype=np.float64)
    tilde.chart.require_inside(p[None, :])
    if r < 0.0:
        raise ValueError("radius must be non-negative")
    if r > 0.0:
        inj = (
            float(injectivity)
            if injectivity is not None
            else injectivity_lower_bound(tilde, p)
        )
        cap = min(inj, 1.0)
        if not r < cap:
            raise ValueError(
                f"radius {r} must be below min(injectivity bound, 1) = {cap:.6f}"
            )
    evaluator = _make_evaluator(tilde, p)
    step = min(1e-3, r / 100.0) if r > 0.0 else 1e-3
    r2 = r * r

    def rho_values(pts: np.ndarray) -> np.ndarray:
        return np.maximum(r2 - evaluator.d2(pts), 0.0)

    def rho_jets(pts: np.ndarray, order: int = 2):
        value, grad_d2, hess_d2 = _fd_d2_jets(evaluator, pts, step, order=order)
        inside = value < r2
        rho_val = np.where(inside, r2 - value, 0.0)
        grad = np.where(inside[..., None], -grad_d2, 0.0)
        if order < 2:
            return rho_val, grad, None
        hess = np.where(inside[..., None, None], -hess_d2, 0.0)
        return rho_val, grad, hess

    def grad_norm_sq_values(pts: np.ndarray) -> np.ndarray:
        _, grad, _ = rho_jets(pts, order=1)
        ginv = np.linalg.inv(real_metric(tilde, pts))
        return np.einsum("...a,...ab,...b->...", grad, ginv, grad)

    def laplacian_values(pts: np.ndarray) -> np.ndarray:
        """Real-normalised mixed-trace Laplacian: contract the complex
        inverse metric with the complex-coordinate mixed Hessian, scaled
        so the flat value is exactly -4n."""
        _, _, hess = rho_jets(pts)
        n = tilde.n
        hinv = inverse_transpose(tilde.matrix(pts))
        xx = hess[..., :n, :n]
        yy = hess[..., n:, n:]
        xy = hess[..., :n, n:]
        yx = hess[..., n:, :n]
        mixed = (xx + yy) + 1j * (xy - yx)
        lap = np.einsum("...kl,...kl->...", hinv, mixed)
        return lap.real

    fld = DistanceField(
        tilde=tilde,
        center=p,
        radius=float(r),
        fd_step=step,
        rho=_FDScalar(rho_values, rho_jets, label="rho"),
        grad_norm_sq=_FDScalar(grad_norm_sq_values, label="grad_norm_sq"),
        tilde_laplacian=_FDScalar(laplacian_values, label="tilde_laplacian"),
        _evaluator=evaluator,
    )
    if eikonal_check and r > 0.0:
        _assert_eikonal(fld)
    return fld


def _field_samples(fld: DistanceField, directions: int, radii: int) -> np.ndarray:
    """Deterministic interior sample points: a seeded direction net times
    radial fractions, laid out in chart coordinates scaled to unit
    metric speed at the center."""
    dim = fld.tilde.chart.real_dim
    dirs = _direction_net(fld.tilde, fld.center, directions)
    fracs = (np.arange(radii) + 0.5) / radii
    offsets = dirs[None, :, :] * (fracs[:, None, None] * fld.radius)
    pts = fld.center + offsets.reshape(-1, dim)
    pts = fld.tilde.chart.wrap(pts)
    ok = fld.tilde.chart.contains(pts)
    return pts[ok]


def _assert_eikonal(fld: DistanceField) -> None:
    pts = _field_samples(fld, directions=10, radii=6)
    rho = fld.rho_values(pts)
    keep = rho > 0.01 * fld.radius**2
    if not np.any(keep):
        return
    pts = pts[keep]
    rho = rho[keep]
    grad_sq = fld.grad_norm_sq.values(pts)
    resid = float(np.max(np.abs(grad_sq - 4.0 * (fld.radius**2 - rho))))
    limit = EIKONAL_REL_TOL * fld.radius**2
    if resid > limit:
        raise EikonalViolation(
            f"ball identity violated: max |grad^2 - 4(r^2 - rho)| = "
            f"{resid:.3e} > {limit:.3e}; distance accuracy is insufficient"
        )


# ---------------------------------------------------------------------------
# Laplacian comparison constant
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LaplacianBound:
    """Empirical lower-bound constant: the field's Laplacian stays above
    ``-c_n`` at every certification sample (with the safety multiplier
    folded in)."""

    c_n: float
    safety: float
    min_laplacian: float
    sample_count: int

    def __post_init__(self):
        if self.safety < 1.0:
            raise ValueError("safety multiplier must be >= 1")
        if self.c_n < 0.0:
            raise ValueError("c_n must be non-negative")


def estimate_cn(
    fld: DistanceField,
    safety: float = 2.0,
    directions: int = 24,
    radii: int = 8,
) -> LaplacianBound:
    """Empirical Laplacian comparison constant over dense interior
    samples: ``c_n = safety * max(0, -min laplacian)``."""
    if safety < 1.0:
        raise ValueError("safety multiplier must be >= 1")
    if fld.radius == 0.0:
        return LaplacianBound(
            c_n=0.0, safety=float(safety), min_laplacian=0.0, sample_count=0
        )
    pts = _field_samples(fld, directions=directions, radii=radii)
    mask = fld.support_mask(pts)
    pts = pts[mask]
    if pts.shape[0] == 0:
        return LaplacianBound(
            c_n=0.0, safety=float(safety), min_laplacian=0.0, sample_count=0
        )
    lap = fld.tilde_laplacian.values(pts)
    low = float(np.min(lap))
    return LaplacianBound(
        c_n=float(safety) * max(0.0, -low),
        safety=float(safety),
        min_laplacian=low,
        sample_count=int(pts.shape[0]),
    )
