"""Geodesic distance, injectivity bounds, and the clamped ball field."""

import numpy as np
import pytest

from hermdeform.core.charts import AnnulusChart, BoxChart, TorusChart
from hermdeform.core.fields import ConstantField, JetFunctionField
from hermdeform.core.jets import JetOrderError, jlog, jsin
from hermdeform.core.metrics import MetricSpec, conformal_scale
from hermdeform.distance import (
    DistanceField,
    INJECTIVITY_FALLBACK,
    LaplacianBound,
    build_rho,
    christoffel_real,
    distance,
    distance_many,
    estimate_cn,
    geodesic_shoot,
    geodesic_trajectory,
    injectivity_lower_bound,
    point_toward,
    real_metric,
    tangent_norm,
    unit_tangent,
)
from hermdeform.errors import EikonalViolation, IntegrationFailure, NotConverged


def _flat_torus(n=2):
    return MetricSpec(chart=TorusChart(n=n), base="flat")


def _flat_box(n=2, half=1.0):
    return MetricSpec(
        chart=BoxChart(n=n, center=(0.0,) * (2 * n), half_widths=(half,) * (2 * n)),
        base="flat",
    )


def _shell(n=2, lam=2.0):
    return MetricSpec(chart=AnnulusChart(n=n, lam=lam), base="hopf_standard")


def _ripple_shell(lam=2.0, amplitude=0.1):
    """Shell metric with a deck-invariant, genuinely varying conformal
    factor (periodic in the log radius)."""
    scale = np.pi / np.log(lam)
    phi = JetFunctionField(
        lambda c: jsin(jlog(c[0] * c[0] + c[1] * c[1] + c[2] * c[2] + c[3] * c[3]) * scale)
        * amplitude,
        label="ripple",
    )
    return MetricSpec(chart=AnnulusChart(n=2, lam=lam), base="hopf_standard", phi=phi)


# ---------------------------------------------------------------------------
# real-metric plumbing
# ---------------------------------------------------------------------------


class TestRealMetric:
    def test_flat_real_metric_is_identity(self):
        spec = _flat_torus()
        pts = np.array([[0.1, -0.2, 0.3, 0.05]])
        g = real_metric(spec, pts)
        assert np.allclose(g[0], np.eye(4), atol=1e-15)

    def test_shell_real_metric_scales_inverse_square(self):
        spec = _shell()
        pts = np.array([[1.5, 0.0, 0.0, 0.0]])
        g = real_metric(spec, pts)
        assert np.allclose(g[0], np.eye(4) / 1.5**2, atol=1e-14)

    def test_flat_christoffels_vanish(self):
        spec = _flat_torus()
        pts = np.array([[0.1, -0.2, 0.3, 0.05], [0.0, 0.0, 0.0, 0.0]])
        gamma = christoffel_real(spec, pts)
        assert np.max(np.abs(gamma)) < 1e-14

    def test_shell_radial_christoffel_matches_cylinder(self):
        # on the shell, radial acceleration along a radial ray is v^2/r
        spec = _shell()
        p = np.array([[1.3, 0.0, 0.0, 0.0]])
        gamma = christoffel_real(spec, p)[0]
        # Gamma^0_{00} for the metric delta/r^2 equals -1/r at (r,0,0,0)
        assert gamma[0, 0, 0] == pytest.approx(-1.0 / 1.3, abs=1e-12)

    def test_unit_tangent_normalises(self):
        spec = _shell()
        p = np.array([1.2, 0.0, 0.0, 0.0])
        v = unit_tangent(spec, p, np.array([0.4, 0.3, 0.0, 0.1]))
        assert float(tangent_norm(spec, p[None, :], v[None, :])[0]) == pytest.approx(
            1.0, abs=1e-14
        )

    def test_unit_tangent_rejects_zero_vector(self):
        spec = _flat_torus()
        with pytest.raises(ValueError):
            unit_tangent(spec, np.zeros(4), np.zeros(4))


# ---------------------------------------------------------------------------
# geodesic shooting
# ---------------------------------------------------------------------------


class TestGeodesicShoot:
    def test_flat_torus_straight_line(self):
        spec = _flat_torus(n=1)
        p = np.array([0.1, 0.0])
        v = np.array([1.0, 0.0])
        end = geodesic_shoot(spec, p, v, 0.25)
        assert np.allclose(end, [0.35, 0.0], atol=1e-9)

    def test_flat_torus_full_period_returns_home(self):
        spec = _flat_torus(n=1)
        p = np.array([0.1, 0.05])
        v = np.array([1.0, 0.0])
        end = geodesic_shoot(spec, p, v, 1.0)
        assert np.allclose(end, p, atol=1e-8)

    def test_shell_radial_ray_stays_radial(self):
        spec = _shell()
        p = np.array([1.0, 0.0, 0.0, 0.0])
        v = unit_tangent(spec, p, p.copy())
        end = geodesic_shoot(spec, p, v, 0.4)
        deviation = np.linalg.norm(
            end / np.linalg.norm(end) - p / np.linalg.norm(p)
        )
        assert deviation < 1e-8
        assert np.linalg.norm(end) == pytest.approx(np.exp(0.4), rel=1e-8)

    def test_shell_wraps_into_fundamental_domain(self):
        spec = _shell(lam=2.0)
        p = np.array([1.9, 0.0, 0.0, 0.0])
        v = unit_tangent(spec, p, p.copy())
        end = geodesic_shoot(spec, p, v, 0.5)
        r = np.linalg.norm(end)
        assert 1.0 <= r < 2.0
        assert r == pytest.approx(1.9 * np.exp(0.5) / 2.0, rel=1e-8)

    def test_zero_arclength_returns_start(self):
        spec = _flat_torus()
        p = np.array([0.2, 0.1, -0.3, 0.0])
        v = np.array([1.0, 0.0, 0.0, 0.0])
        assert np.allclose(geodesic_shoot(spec, p, v, 0.0), p, atol=0)

    def test_non_unit_direction_rejected(self):
        spec = _flat_torus()
        with pytest.raises(ValueError):
            geodesic_shoot(spec, np.zeros(4), np.full(4, 0.9), 0.1)

    def test_negative_arclength_rejected(self):
        spec = _flat_torus()
        v = np.array([1.0, 0.0, 0.0, 0.0])
        with pytest.raises(ValueError):
            geodesic_shoot(spec, np.zeros(4), v, -0.1)

    def test_box_exit_raises_integration_failure(self):
        spec = _flat_box(half=0.5)
        p = np.array([0.4, 0.0, 0.0, 0.0])
        v = np.array([1.0, 0.0, 0.0, 0.0])
        with pytest.raises(IntegrationFailure):
            geodesic_shoot(spec, p, v, 0.5)

    def test_trajectory_monotone_radial_log(self):
        spec = _shell()
        p = np.array([1.0, 0.0, 0.0, 0.0])
        v = unit_tangent(spec, p, p.copy())
        arc, pts = geodesic_trajectory(spec, p, v, 0.6, samples=64)
        logs = np.log(np.linalg.norm(pts, axis=-1))
        assert np.allclose(logs, arc, atol=1e-7)


# ---------------------------------------------------------------------------
# distance
# ---------------------------------------------------------------------------


class TestDistance:
    def test_flat_torus_axis_pair(self):
        spec = _flat_torus(n=2)
        p = np.zeros(4)
        x = np.array([0.3, 0.0, 0.0, 0.0])
        assert distance(spec, p, x) == pytest.approx(0.3, abs=1e-15)

    def test_flat_torus_wraps_to_short_side(self):
        spec = _flat_torus(n=1)
        p = np.zeros(2)
        x = spec.chart.wrap(np.array([0.9, 0.0]))
        assert distance(spec, p, x) == pytest.approx(0.1, abs=1e-12)

    def test_shell_radial_pair_matches_log_integral(self):
        spec = _shell()
        p = np.array([1.1, 0.0, 0.0, 0.0])
        x = np.array([1.4, 0.0, 0.0, 0.0])
        assert distance(spec, p, x) == pytest.approx(np.log(1.4 / 1.1), rel=1e-12)

    def test_shell_radial_pair_wraps_through_scale_seam(self):
        # when the log-radius gap exceeds half the deck period the
        # minimizing geodesic passes through the identification
        spec = _shell(lam=2.0)
        p = np.array([1.1, 0.0, 0.0, 0.0])
        x = np.array([1.7, 0.0, 0.0, 0.0])
        expected = np.log(2.0) - np.log(1.7 / 1.1)
        assert distance(spec, p, x) == pytest.approx(expected, rel=1e-12)

    def test_shell_angular_pair_matches_sphere_angle(self):
        spec = _shell()
        r, ang = 1.3, 0.25
        p = np.array([r, 0.0, 0.0, 0.0])
        x = np.array([r * np.cos(ang), r * np.sin(ang), 0.0, 0.0])
        assert distance(spec, p, x) == pytest.approx(ang, rel=1e-12)

    def test_constant_conformal_scale_multiplies_lengths(self):
        base = _flat_torus(n=1)
        scaled = conformal_scale(base, ConstantField(0.6))
        p = np.zeros(2)
        x = np.array([0.2, 0.1])
        assert distance(scaled, p, x) == pytest.approx(
            np.exp(0.3) * distance(base, p, x), rel=1e-13
        )

    def test_shooting_matches_analytic_on_shell(self):
        spec = _shell()
        p = np.array([1.2, 0.0, 0.0, 0.0])
        x = np.array([1.4 * np.cos(0.15), 1.4 * np.sin(0.15), 0.1, 0.0])
        da = distance(spec, p, x, method="analytic")
        ds = distance(spec, p, x, method="shooting")
        assert ds == pytest.approx(da, rel=1e-6)

    def test_shooting_symmetry_on_varying_metric(self):
        spec = _ripple_shell()
        p = np.array([1.2, 0.0, 0.0, 0.0])
        x = np.array([1.3 * np.cos(0.1), 1.3 * np.sin(0.1), 0.05, 0.0])
        dpx = distance(spec, p, x)
        dxp = distance(spec, x, p)
        assert abs(dpx - dxp) <= 1e-6

    def test_shooting_consistency_with_shoot(self):
        # length of the returned geodesic equals the requested arclength
        spec = _shell()
        p = np.array([1.25, 0.0, 0.0, 0.0])
        v = unit_tangent(spec, p, np.array([0.5, 0.7, 0.2, -0.3]))
        s = 0.3
        end = geodesic_shoot(spec, p, v, s)
        assert distance(spec, p, end) == pytest.approx(s, rel=1e-4)

    def test_triangle_inequality_on_shell(self):
        spec = _shell()
        rng = np.random.default_rng(11)
        pts = spec.chart.random_points(rng, 6)
        for i in range(4):
            p, y, x = pts[i], pts[i + 1], pts[i + 2]
            assert distance(spec, p, x) <= (
                distance(spec, p, y) + distance(spec, y, x) + 1e-6
            )

    def test_distance_many_matches_scalar(self):
        spec = _flat_torus(n=2)
        p = np.array([0.1, 0.0, -0.2, 0.3])
        xs = spec.chart.random_points(np.random.default_rng(3), 10)
        batched = distance_many(spec, p, xs)
        singles = np.array([distance(spec, p, x) for x in xs])
        assert np.allclose(batched, singles, atol=1e-14)

    def test_unknown_method_rejected(self):
        spec = _flat_torus()
        with pytest.raises(ValueError):
            distance(spec, np.zeros(4), np.zeros(4), method="magic")

    def test_analytic_method_unavailable_on_varying_metric(self):
        spec = _ripple_shell()
        p = np.array([1.2, 0.0, 0.0, 0.0])
        with pytest.raises(ValueError):
            distance(spec, p, p, method="analytic")

    def test_point_toward_hits_requested_distance(self):
        spec = _shell()
        p = np.array([1.15, 0.0, 0.0, 0.0])
        x = np.array([1.4 * np.cos(0.2), 1.4 * np.sin(0.2), 0.0, 0.1])
        total = distance(spec, p, x)
        mid = point_toward(spec, p, x, 0.5 * total)
        assert distance(spec, p, mid) == pytest.approx(0.5 * total, rel=1e-9)
        # the midpoint lies on the minimizing geodesic
        assert distance(spec, p, mid) + distance(spec, mid, x) == pytest.approx(
            total, rel=1e-9
        )

    def test_point_toward_flat_torus_straight(self):
        spec = _flat_torus(n=1)
        p = np.zeros(2)
        x = np.array([0.4, 0.0])
        out = point_toward(spec, p, x, 0.1)
        assert np.allclose(out, [0.1, 0.0], atol=1e-14)

    def test_point_toward_negative_target_rejected(self):
        spec = _flat_torus()
        with pytest.raises(ValueError):
            point_toward(spec, np.zeros(4), np.zeros(4), -0.1)


# ---------------------------------------------------------------------------
# injectivity bounds
# ---------------------------------------------------------------------------


class TestInjectivity:
    def test_flat_torus_half_lattice(self):
        spec = _flat_torus(n=2)
        assert injectivity_lower_bound(spec, np.zeros(4)) == pytest.approx(0.5)

    def test_flat_box_boundary_clearance(self):
        spec = _flat_box(half=1.0)
        p = np.array([0.2, 0.0, 0.0, 0.0])
        assert injectivity_lower_bound(spec, p) == pytest.approx(0.8)

    def test_shell_analytic_value(self):
        spec = _shell(lam=2.0)
        p = np.array([1.2, 0.0, 0.0, 0.0])
        expected = min(np.pi, 0.5 * np.log(2.0))
        assert injectivity_lower_bound(spec, p) == pytest.approx(expected, abs=1e-12)

    def test_shell_net_detector_reproducible_and_conservative(self):
        spec = _shell(lam=2.0)
        p = np.array([1.2, 0.0, 0.0, 0.0])
        analytic = min(np.pi, 0.5 * np.log(2.0))
        a = injectivity_lower_bound(spec, p, method="net", net_size=6)
        b = injectivity_lower_bound(spec, p, method="net", net_size=6)
        assert a == b  # deterministic net, bitwise reproducible
        assert 0.0 < a <= analytic + 1e-9
        assert a == pytest.approx(analytic, abs=5e-3)

    def test_constant_scale_multiplies_bound(self):
        base = _flat_torus(n=1)
        scaled = conformal_scale(base, ConstantField(0.8))
        assert injectivity_lower_bound(scaled, np.zeros(2)) == pytest.approx(
            np.exp(0.4) * 0.5, rel=1e-13
        )

    def test_fallback_warns(self):
        # a tiny horizon makes every detector miss -> documented fallback
        spec = _ripple_shell(amplitude=0.02)
        p = np.array([1.2, 0.0, 0.0, 0.0])
        with pytest.warns(RuntimeWarning):
            value = injectivity_lower_bound(spec, p, horizon=0.05, net_size=1)
        assert value == INJECTIVITY_FALLBACK


# ---------------------------------------------------------------------------
# the ball field rho = r^2 - d^2
# ---------------------------------------------------------------------------


class TestBallField:
    def test_center_value_is_radius_squared(self):
        spec = _flat_torus(n=2)
        fld = build_rho(spec, np.zeros(4), 0.4)
        assert fld.rho_values(np.zeros((1, 4)))[0] == pytest.approx(0.16, abs=1e-15)

    def test_outside_ball_value_and_jets_vanish(self):
        spec = _flat_torus(n=2)
        fld = build_rho(spec, np.zeros(4), 0.3)
        far = np.array([[0.45, 0.45, 0.0, 0.0]])
        assert fld.rho_values(far)[0] == 0.0
        jet = fld.rho.jet(far, 2)
        assert np.max(np.abs(jet.coeffs)) == 0.0

    def test_flat_gradient_matches_closed_form(self):
        spec = _flat_torus(n=2)
        fld = build_rho(spec, np.zeros(4), 0.4)
        pts = np.array([[0.1, 0.05, -0.08, 0.02]])
        jet = fld.rho.jet(pts, 1)
        for a in range(4):
            assert jet.partial(a).value.real[0] == pytest.approx(
                -2.0 * pts[0, a], abs=1e-9
            )

    def test_flat_laplacian_is_minus_4n(self):
        for n in (1, 2):
            spec = _flat_torus(n=n)
            fld = build_rho(spec, np.zeros(2 * n), 0.35)
            pts = 0.1 * np.ones((1, 2 * n))
            lap = fld.tilde_laplacian.values(pts)[0]
            assert lap == pytest.approx(-4.0 * n, abs=1e-6)

    def test_flat_gradient_norm_identity_exact(self):
        spec = _flat_torus(n=2)
        fld = build_rho(spec, np.zeros(4), 0.4)
        pts = np.array([[0.12, -0.06, 0.09, 0.0], [0.2, 0.1, 0.0, 0.05]])
        rho = fld.rho_values(pts)
        grad_sq = fld.grad_norm_sq.values(pts)
        assert np.allclose(grad_sq, 4.0 * (0.16 - rho), atol=1e-8)

    def test_shell_ball_identity_within_gate(self):
        spec = _shell()
        p = np.array([1.2, 0.0, 0.0, 0.0])
        r = 0.3
        fld = build_rho(spec, p, r)
        rng = np.random.default_rng(5)
        offs = rng.standard_normal((20, 4))
        offs /= np.linalg.norm(offs, axis=-1, keepdims=True)
        pts = spec.chart.wrap(p + 0.6 * r * 1.2 * offs)  # metric speed ~1/1.2
        rho = fld.rho_values(pts)
        keep = rho > 0.01 * r**2
        resid = np.abs(fld.grad_norm_sq.values(pts) - 4.0 * (r**2 - rho))[keep]
        assert np.max(resid) <= 1e-3 * r**2

    def test_radius_zero_gives_empty_field(self):
        spec = _flat_torus(n=2)
        fld = build_rho(spec, np.zeros(4), 0.0)
        pts = np.array([[0.0, 0.0, 0.0, 0.0], [0.1, 0.0, 0.0, 0.0]])
        assert np.all(fld.rho_values(pts) == 0.0)
        assert not np.any(fld.support_mask(pts))

    def test_radius_above_injectivity_rejected(self):
        spec = _flat_torus(n=2)
        with pytest.raises(ValueError):
            build_rho(spec, np.zeros(4), 0.5)

    def test_radius_above_one_rejected(self):
        # large torus: injectivity 2 but the unit cap still binds
        chart = TorusChart(n=1, basis=((4.0, 0.0), (0.0, 4.0)))
        spec = MetricSpec(chart=chart, base="flat")
        with pytest.raises(ValueError):
            build_rho(spec, np.zeros(2), 1.2)

    def test_negative_radius_rejected(self):
        spec = _flat_torus(n=2)
        with pytest.raises(ValueError):
            build_rho(spec, np.zeros(4), -0.1)

    def test_injectivity_override_is_honoured(self):
        spec = _flat_torus(n=2)
        with pytest.raises(ValueError):
            build_rho(spec, np.zeros(4), 0.3, injectivity=0.2)

    def test_third_order_jets_rejected(self):
        spec = _flat_torus(n=2)
        fld = build_rho(spec, np.zeros(4), 0.3)
        with pytest.raises(JetOrderError):
            fld.rho.jet(np.zeros((1, 4)), 3)

    def test_value_only_fields_reject_first_order_jets(self):
        spec = _flat_torus(n=2)
        fld = build_rho(spec, np.zeros(4), 0.3)
        with pytest.raises(JetOrderError):
            fld.grad_norm_sq.jet(np.zeros((1, 4)), 1)
        # order-0 jets work
        jet = fld.tilde_laplacian.jet(np.array([[0.1, 0.0, 0.0, 0.0]]), 0)
        assert jet.value.real[0] == pytest.approx(-8.0, abs=1e-6)

    def test_eikonal_violation_surfaces(self):
        # corrupt the distance accuracy by monkeypatching: a wrong metric
        # pairing (inconsistent evaluator) must trip the build-time gate
        spec = _shell()
        p = np.array([1.2, 0.0, 0.0, 0.0])
        fld = build_rho(spec, p, 0.3, eikonal_check=False)

        class Wrong:
            def d2(self, pts):
                return 0.5 * fld.d2_unclamped(pts)  # wrong normalisation

        import hermdeform.distance as dmod

        broken = dmod.DistanceField(
            tilde=spec,
            center=p,
            radius=0.3,
            fd_step=fld.fd_step,
            rho=fld.rho,
            grad_norm_sq=fld.grad_norm_sq,
            tilde_laplacian=fld.tilde_laplacian,
            _evaluator=Wrong(),
        )
        # rebuilding with the correct evaluator passes the gate
        build_rho(spec, p, 0.3, eikonal_check=True)
        # a mismatched gradient scale fails it
        with pytest.raises(EikonalViolation):
            scaled = dmod.DistanceField(
                tilde=spec,
                center=p,
                radius=0.3,
                fd_step=fld.fd_step,
                rho=fld.rho,
                grad_norm_sq=dmod._FDScalar(
                    lambda pts: 0.5 * fld.grad_norm_sq.values(pts),
                    label="broken",
                ),
                tilde_laplacian=fld.tilde_laplacian,
                _evaluator=fld._evaluator,
            )
            dmod._assert_eikonal(scaled)
        assert broken.radius == 0.3  # the corrupted object itself is inert


# ---------------------------------------------------------------------------
# Laplacian comparison constant
# ---------------------------------------------------------------------------


class TestLaplacianBound:
    def test_flat_constant_is_8n_at_default_safety(self):
        for n in (1, 2):
            spec = _flat_torus(n=n)
            fld = build_rho(spec, np.zeros(2 * n), 0.35)
            bound = estimate_cn(fld, safety=2.0)
            assert bound.c_n == pytest.approx(8.0 * n, rel=1e-6)
            assert bound.min_laplacian == pytest.approx(-4.0 * n, abs=1e-6)

    def test_empty_support_gives_zero(self):
        spec = _flat_torus(n=2)
        fld = build_rho(spec, np.zeros(4), 0.0)
        bound = estimate_cn(fld)
        assert bound.c_n == 0.0
        assert bound.sample_count == 0

    def test_laplacian_never_below_minus_cn_on_samples(self):
        spec = _shell()
        p = np.array([1.2, 0.0, 0.0, 0.0])
        fld = build_rho(spec, p, 0.3)
        bound = estimate_cn(fld, safety=1.5)
        pts = np.asarray(
            [p * s for s in (1.01, 1.05, 1.1)]
            + [[1.2 * np.cos(a), 1.2 * np.sin(a), 0.0, 0.0] for a in (0.05, 0.1)]
        )
        lap = fld.tilde_laplacian.values(pts)
        mask = fld.support_mask(pts)
        assert np.all(lap[mask] >= -bound.c_n - 1e-9)

    def test_resampling_stability(self):
        spec = _shell()
        p = np.array([1.2, 0.0, 0.0, 0.0])
        fld = build_rho(spec, p, 0.3)
        coarse = estimate_cn(fld, safety=1.0, directions=24, radii=8)
        fine = estimate_cn(fld, safety=1.0, directions=48, radii=16)
        assert fine.c_n == pytest.approx(coarse.c_n, rel=0.10)

    def test_safety_below_one_rejected(self):
        spec = _flat_torus(n=2)
        fld = build_rho(spec, np.zeros(4), 0.3)
        with pytest.raises(ValueError):
            estimate_cn(fld, safety=0.5)
        with pytest.raises(ValueError):
            LaplacianBound(c_n=1.0, safety=0.5, min_laplacian=0.0, sample_count=1)
