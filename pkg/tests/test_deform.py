"""Bump-profile conformal deformation: local steps and the global stages."""

import json
import pathlib

import numpy as np
import pytest

from hermdeform.chern import general_trace
from hermdeform.core.charts import BoxChart, TorusChart
from hermdeform.core.fields import JetFunctionField
from hermdeform.core.jets import JetOrderError
from hermdeform.core.metrics import MetricSpec, conformal_scale
from hermdeform.deform import (
    BUMP,
    BumpField,
    BumpProfile,
    DeformationStep,
    GlobalSchedule,
    MARGIN_FLOOR_FACTOR,
    _local_deform_full,
    bracket_is_positive,
    bracket_values,
    bump_laplacian,
    choose_mu,
    cover_annulus,
    global_deform,
    local_deform,
    normalize,
    step_identity_residual,
)
from hermdeform.distance import build_rho, distance_many
from hermdeform.errors import (
    BudgetExhausted,
    CertificationError,
    CoverageFailure,
    NoValidMu,
    PositivityLost,
)
from hermdeform.positivity import ck_distance, classify, whiten_pencil

from instances import (
    RING_A2,
    ring_eigen_oracle,
    ring_grid,
    ring_instance,
)

FIXTURES = pathlib.Path(__file__).parent / "fixtures"


def _flat_box(n=1, half=1.0):
    return MetricSpec(
        chart=BoxChart(
            n=n, center=(0.0,) * (2 * n), half_widths=(half,) * (2 * n)
        ),
        base="flat",
    )


def _flat_torus(n=1):
    return MetricSpec(chart=TorusChart(n=n), base="flat")


def _hopf(n=2, lam=2.0):
    from hermdeform.core.charts import AnnulusChart

    return MetricSpec(chart=AnnulusChart(n=n, lam=lam), base="hopf_standard")


# ---------------------------------------------------------------------------
# bump profile
# ---------------------------------------------------------------------------


class TestBumpProfile:
    def test_frozen_samples(self):
        fix = json.loads((FIXTURES / "bump_oracle.json").read_text())
        for row in fix["samples"]:
            s = row["s"]
            assert BUMP.f(s) == pytest.approx(row["f"], abs=1e-15)
            assert BUMP.fp(s) == pytest.approx(row["fp"], abs=1e-15)
            assert BUMP.fpp(s) == pytest.approx(row["fpp"], abs=1e-14)

    def test_exact_zero_at_and_below_zero(self):
        for s in (0.0, -1e-12, -3.0):
            assert BUMP.f(s) == 0.0
            assert BUMP.fp(s) == 0.0
            assert BUMP.fpp(s) == 0.0

    def test_zero_limit_certified(self):
        # |f^{(k)}(s)| -> 0 monotonically as s drops through decades
        for fn in (BUMP.f, BUMP.fp, BUMP.fpp):
            vals = [abs(fn(10.0 ** (-j))) for j in range(1, 7)]
            assert all(b <= a for a, b in zip(vals, vals[1:]))
            assert vals[-1] == 0.0

    def test_no_nan_across_scales(self):
        s = np.concatenate(
            [np.logspace(-330, 2, 300), np.array([0.0, -1.0, 5e-324])]
        )
        for fn in (BUMP.f, BUMP.fp, BUMP.fpp):
            out = fn(s)
            assert np.all(np.isfinite(out))

    def test_vector_and_scalar_forms(self):
        arr = BUMP.f(np.array([0.5, 1.0]))
        assert arr.shape == (2,)
        assert isinstance(BUMP.f(1.0), float)

    def test_closed_forms(self):
        s = 0.37
        e = np.exp(-1.0 / s)
        assert BUMP.f(s) == pytest.approx(e, rel=1e-15)
        assert BUMP.fp(s) == pytest.approx(e / s**2, rel=1e-15)
        assert BUMP.fpp(s) == pytest.approx(
            e * (1 / s**4 - 2 / s**3), rel=1e-14
        )


# ---------------------------------------------------------------------------
# bump field (profile composed with the ball field)
# ---------------------------------------------------------------------------


class TestBumpField:
    def _field(self, r=0.5):
        tilde = _flat_box()
        fld = build_rho(tilde, np.zeros(2), r, injectivity=1.0)
        return tilde, BumpField(fld)

    def test_supported_exactly_in_ball(self):
        _, bump = self._field()
        outside = np.array([[0.6, 0.2], [0.9, -0.9], [0.0, 0.55]])
        assert np.all(bump.values(outside) == 0.0)
        jet = bump.jet(outside, 2)
        assert np.all(jet.coeffs == 0.0)

    def test_positive_inside(self):
        _, bump = self._field()
        inside = np.array([[0.0, 0.0], [0.2, 0.1]])
        assert np.all(bump.values(inside) > 0.0)

    def test_jet_matches_finite_differences(self):
        _, bump = self._field()
        pts = np.array([[0.15, 0.1], [-0.2, 0.25]])
        jet = bump.jet(pts, 2)
        h = 1e-5
        for a in range(2):
            e = np.zeros(2)
            e[a] = h
            fd = (bump.values(pts + e) - bump.values(pts - e)) / (2 * h)
            alpha = tuple(1 if i == a else 0 for i in range(2))
            got = jet.partial_value(alpha).real
            assert got == pytest.approx(fd, rel=2e-4, abs=1e-8)

    def test_order_three_rejected(self):
        _, bump = self._field()
        with pytest.raises(JetOrderError):
            bump.jet(np.zeros((1, 2)), 3)

    def test_laplacian_closed_form_flat(self):
        # flat oracle: complex-form lap(rho) = -n, |grad rho|^2 = r^2-rho
        tilde, bump = self._field(r=0.5)
        pts = np.array([[0.1, 0.05], [0.3, 0.2], [0.0, 0.45]])
        rho = bump.field.rho_values(pts)
        expected = BUMP.fp(rho) * (-1.0) + BUMP.fpp(rho) * (0.25 - rho)
        got = bump_laplacian(bump, pts)
        assert got == pytest.approx(expected, rel=1e-6, abs=1e-12)

    def test_laplacian_sign_structure(self):
        # negative at the ball center, positive on the certified annulus
        tilde, bump = self._field(r=0.5)
        center = np.zeros((1, 2))
        assert bump_laplacian(bump, center)[0] < 0.0
        annulus = np.array([[0.42, 0.0], [0.0, 0.48]])
        assert np.all(bump_laplacian(bump, annulus) > 0.0)


# ---------------------------------------------------------------------------
# annulus fraction search
# ---------------------------------------------------------------------------


class TestChooseMu:
    def test_frozen_oracle(self):
        fix = json.loads((FIXTURES / "bump_oracle.json").read_text())
        ov = fix["overlap_example"]
        mu = choose_mu(ov["radius"], ov["comparison_constant"])
        assert mu == ov["returned_mu"]
        assert mu == 9 * ov["grid_numerator"] / 2560
        # the accepted dyadic sits just below the closed-form supremum
        j = ov["grid_numerator"]
        assert j / 256 <= ov["mu_supremum"] < (j + 1) / 256

    def test_huge_comparison_constant(self):
        with pytest.raises(NoValidMu):
            choose_mu(1.0, 1e9)

    def test_postcondition_replay(self):
        for r, c_n in ((1.0, 0.0), (0.7, 3.0), (0.5, 8.0), (0.31, 16.0)):
            mu = choose_mu(r, c_n)
            assert 0.0 < mu < 0.5
            rho_star = mu * (2 - mu) * r * r
            sweep = np.linspace(1e-12, rho_star, 20001)
            assert np.all(bracket_values(sweep, r, c_n) > 0.0)
            assert bracket_is_positive(r, c_n, mu)

    def test_monotone_in_comparison_constant(self):
        mus = [choose_mu(0.8, c) for c in (0.0, 2.0, 8.0, 32.0)]
        assert all(b <= a for a, b in zip(mus, mus[1:]))

    def test_domain_validation(self):
        with pytest.raises(ValueError):
            choose_mu(0.0, 1.0)
        with pytest.raises(ValueError):
            choose_mu(1.5, 1.0)
        with pytest.raises(ValueError):
            choose_mu(0.5, -1.0)

    def test_bracket_root_crossing(self):
        # r=1, c_n=0: certificate 4(2s-1)(s-1) has its lower root at
        # s=0.5; feasibility flips as the annulus range crosses it
        r, c_n = 1.0, 0.0
        assert not bracket_is_positive(r, c_n, 0.31)  # range reaches 0.524
        assert bracket_is_positive(r, c_n, 0.29)  # range stops at 0.496


# ---------------------------------------------------------------------------
# curvature-sup normalization
# ---------------------------------------------------------------------------


class TestNormalize:
    def test_flat_scale_one(self):
        tilde = _flat_torus()
        out, scale = normalize(tilde)
        assert scale == 1.0
        assert out is tilde

    def test_hopf_scale_equals_grid_sup(self):
        from hermdeform.chern import curvature_sup_norm

        tilde = _hopf()
        pts = tilde.chart.sample_grid(6)
        out, scale = normalize(tilde, points=pts)
        assert scale == pytest.approx(curvature_sup_norm(tilde, pts), rel=1e-12)
        # scaling law: |Rm| ~ 1/c, |T|^2 ~ 1/c, so the scaled sup is 1
        assert curvature_sup_norm(out, pts) == pytest.approx(1.0, rel=1e-9)

    def test_double_resolution_agreement(self):
        from hermdeform.chern import curvature_sup_norm

        tilde = _hopf()
        s1 = curvature_sup_norm(tilde, tilde.chart.sample_grid(5))
        s2 = curvature_sup_norm(tilde, tilde.chart.sample_grid(10))
        assert abs(s2 - s1) <= 0.05 * max(s1, s2)

    def test_already_normalized(self):
        tilde = _hopf()
        pts = tilde.chart.sample_grid(6)
        out, _ = normalize(tilde, points=pts)
        again, scale = normalize(out, points=pts)
        assert abs(scale - 1.0) <= 1e-10
        assert again is out


# ---------------------------------------------------------------------------
# one local bump step
# ---------------------------------------------------------------------------


class TestLocalDeform:
    def test_flat_ball_strict_annulus_positivity(self):
        flat = _flat_box()
        res = _local_deform_full(
            flat, flat, np.zeros(2), 0.5, 1e-2, 2, "positive"
        )
        step = res.step
        assert res.t > 0.0
        assert step.annulus_margin > 0.0
        assert step.halfshell_margin >= MARGIN_FLOOR_FACTOR * 0.25
        assert step.ck_measured <= 1e-2
        # the budget is actually used (bisection maximizes t)
        assert step.ck_measured >= 0.9e-2

    def test_flat_ball_exact_eigenvalue_law(self):
        # deformed pencil eigenvalue == t * bump Laplacian, exactly, since
        # the flat input trace is zero; verified through the full pipeline
        flat = _flat_box()
        res = _local_deform_full(
            flat, flat, np.zeros(2), 0.5, 1e-2, 2, "positive"
        )
        g1, t, bump = res.spec, res.t, res.bump
        band = np.array(
            [[0.40, 0.0], [0.0, 0.44], [0.31, 0.31], [-0.42, 0.1]]
        )
        lam = whiten_pencil(
            general_trace(flat, g1, band), g1.matrix(band)
        )[..., 0].real
        oracle = t * bump_laplacian(bump, band)
        assert lam == pytest.approx(oracle, rel=1e-8)

    def test_bit_identical_outside(self):
        flat = _flat_box()
        g1, t = local_deform(flat, flat, np.zeros(2), 0.5, 1e-2)
        assert t > 0.0
        outside = np.array([[0.51, 0.0], [0.7, -0.6], [0.0, 0.9]])
        assert np.array_equal(g1.matrix(outside), flat.matrix(outside))
        j1 = g1.matrix_jet(outside, 2)
        j0 = flat.matrix_jet(outside, 2)
        assert np.array_equal(j1.coeffs, j0.coeffs)

    def test_zero_budget_edge(self):
        flat = _flat_box()
        g1, t = local_deform(flat, flat, np.zeros(2), 0.5, 0.0)
        assert t == 0.0
        assert g1 is flat

    def test_positivity_lost_on_bad_precondition(self):
        # conformal exponent s^2 has strictly negative traced curvature
        # near the ball, violating the non-negativity precondition
        flat = _flat_box()
        bad = conformal_scale(
            flat,
            JetFunctionField(
                lambda c: (c[0] * c[0] + c[1] * c[1])
                * (c[0] * c[0] + c[1] * c[1]),
                label="sq",
            ),
        )
        with pytest.raises(PositivityLost):
            local_deform(bad, flat, np.zeros(2), 0.5, 1e-2)

    def test_budget_exhausted_below_margin_floor(self):
        flat = _flat_box()
        with pytest.raises(BudgetExhausted):
            local_deform(flat, flat, np.zeros(2), 0.5, 1e-12)

    def test_sign_mirror(self):
        flat = _flat_box()
        rp = _local_deform_full(
            flat, flat, np.zeros(2), 0.5, 1e-2, 2, "positive"
        )
        rn = _local_deform_full(
            flat, flat, np.zeros(2), 0.5, 1e-2, 2, "negative"
        )
        # certification is sign-symmetric; t differs only at second order
        assert rn.t == pytest.approx(rp.t, rel=1e-3)
        assert rn.step.annulus_margin > 0.0
        pts = np.array([[0.2, 0.1], [0.05, -0.3]])
        prod = rp.spec.matrix(pts) * rn.spec.matrix(pts)
        assert np.abs(prod - 1.0).max() <= 1e-5
        # negative case certifies the trace *below* zero on the annulus
        band = np.array([[0.40, 0.0], [0.0, 0.44]])
        lam_max = whiten_pencil(
            general_trace(flat, rn.spec, band), rn.spec.matrix(band)
        )[..., -1].real
        assert np.all(lam_max < 0.0)

    def test_invalid_sign(self):
        flat = _flat_box()
        with pytest.raises(ValueError):
            local_deform(flat, flat, np.zeros(2), 0.5, 1e-2, sign="sideways")

    def test_step_identity_invariant(self):
        # the executed step obeys the exact first-order update law at
        # random annulus points, for the accepted t and others
        flat = _flat_box()
        res = _local_deform_full(
            flat, flat, np.zeros(2), 0.5, 1e-2, 2, "positive"
        )
        rng = np.random.default_rng(11)
        ang = rng.uniform(0, 2 * np.pi, 10)
        rad = rng.uniform(0.5 * (1 - res.step.mu) + 0.005, 0.499, 10)
        pts = np.stack([rad * np.cos(ang), rad * np.sin(ang)], axis=-1)
        for t in (0.0, res.t, 0.05):
            resid = step_identity_residual(
                flat, flat, res.bump, t, "positive", pts
            )
            assert resid <= 1e-6

    def test_two_complex_dimensions(self):
        flat = _flat_box(n=2)
        res = _local_deform_full(
            flat, flat, np.zeros(4), 0.5, 1e-2, 2, "positive",
            per_dim=9,
        )
        step = res.step
        assert step.c_n == pytest.approx(16.0, rel=1e-6)
        assert step.annulus_margin > 0.0
        assert step.identity_residual <= 1e-8
        # conformality: off-diagonal stays exactly zero for flat input
        pts = np.array([[0.2, 0.1, -0.1, 0.05]])
        m = res.spec.matrix(pts)[0]
        assert m[0, 1] == 0.0 and m[1, 0] == 0.0
        assert m[0, 0] == m[1, 1]

    def test_margin_protection_pointwise(self):
        # on the ring instance, a ball step told to protect the current
        # margin may consume at most half of any sample's eigenvalue
        g0, tilde, _ = ring_instance()
        center = np.array([0.05, 0.0])
        before_pts = np.array(
            [[0.25, 0.25], [0.2, 0.3], [0.1, 0.1], [0.0, 0.2]]
        )
        lam_before = whiten_pencil(
            general_trace(tilde, g0, before_pts), g0.matrix(before_pts)
        )[..., 0].real
        margin = float(lam_before.min())
        res = _local_deform_full(
            g0, tilde, center, 0.42, 0.05, 2, "positive",
            margin_protect=margin,
        )
        lam_after = whiten_pencil(
            general_trace(tilde, res.spec, before_pts),
            res.spec.matrix(before_pts),
        )[..., 0].real
        assert np.all(lam_after >= 0.49 * lam_before - 1e-12)

    def test_mu_override_validated(self):
        flat = _flat_box()
        with pytest.raises(NoValidMu):
            local_deform(
                flat, flat, np.zeros(2), 0.5, 1e-2, mu=0.49, c_n=60.0
            )

    def test_step_record_contents(self):
        flat = _flat_box()
        res = _local_deform_full(
            flat, flat, np.zeros(2), 0.5, 1e-2, 2, "positive"
        )
        step = res.step
        assert isinstance(step, DeformationStep)
        assert 0.0 < step.mu < 0.5
        assert step.sample_count > 100
        d = step.to_dict()
        json.dumps(d)
        assert d["t"] == res.t


# ---------------------------------------------------------------------------
# annulus covering
# ---------------------------------------------------------------------------


class TestCoverAnnulus:
    def test_empty_annulus(self):
        tilde = _flat_torus()
        p = np.array([0.25, 0.25])
        assert cover_annulus(tilde, p, 0.3, 0.3, 0.1, 0.25, res=24) == []

    def test_postcondition_replay_torus(self):
        # the band width matches one schedule increment mu/(2-mu) * r0,
        # which is what keeps every target reachable from within the
        # certified region
        tilde = _flat_torus()
        p = np.array([0.25, 0.25])
        r0, mu = 0.15, 0.25
        r_m = 0.25
        r_next = r_m + mu / (2 - mu) * r0
        grid = tilde.chart.sample_grid(48)
        centers = cover_annulus(tilde, p, r_m, r_next, r0, mu, grid=grid)
        assert 1 <= len(centers) <= 20
        d = distance_many(tilde, p, grid)
        targets = grid[(d > r_m) & (d <= r_next)]
        assert len(targets) > 20
        cover_r = r0 / (1 - mu)
        dc = np.stack(
            [distance_many(tilde, c, targets) for c in centers], axis=0
        )
        assert np.all(dc.min(axis=0) <= cover_r + 1e-15)
        # centers stay within r_m - r0 of the hub
        for c in centers:
            assert distance_many(tilde, p, c[None, :])[0] <= r_m - r0 + 1e-12

    def test_stage_band_box(self):
        tilde = _flat_box(half=1.0)
        p = np.zeros(2)
        r0, mu = 0.15, 0.25
        r_m = 0.3
        r_next = r_m + mu / (2 - mu) * r0
        ax = np.linspace(-0.5, 0.5, 41)
        grid = np.stack(
            np.meshgrid(ax, ax, indexing="ij"), axis=-1
        ).reshape(-1, 2)
        centers = cover_annulus(tilde, p, r_m, r_next, r0, mu, grid=grid)
        assert 1 <= len(centers) <= 25
        d = distance_many(tilde, p, grid)
        targets = grid[(d > r_m) & (d <= r_next)]
        dc = np.stack(
            [distance_many(tilde, c, targets) for c in centers], axis=0
        )
        assert np.all(dc.min(axis=0) <= r0 / (1 - mu) + 1e-15)

    def test_coverage_failure(self):
        tilde = _flat_box(half=1.0)
        p = np.zeros(2)
        ax = np.linspace(-0.5, 0.5, 21)
        grid = np.stack(
            np.meshgrid(ax, ax, indexing="ij"), axis=-1
        ).reshape(-1, 2)
        with pytest.raises(CoverageFailure):
            cover_annulus(tilde, p, 0.4, 0.45, 0.01, 0.1, grid=grid)

    def test_deterministic(self):
        tilde = _flat_torus()
        p = np.array([0.25, 0.25])
        r_next = 0.25 + 0.25 / 1.75 * 0.15
        grid = tilde.chart.sample_grid(48)
        a = cover_annulus(tilde, p, 0.25, r_next, 0.15, 0.25, grid=grid)
        b = cover_annulus(tilde, p, 0.25, r_next, 0.15, 0.25, grid=grid)
        assert len(a) == len(b)
        for x, y in zip(a, b):
            assert np.array_equal(x, y)


# ---------------------------------------------------------------------------
# global staged deformation
# ---------------------------------------------------------------------------


class TestGlobalSchedule:
    def test_radius_progression(self):
        sch = GlobalSchedule(
            seed=(0.0, 0.0), r0=0.25, mu=0.4, eps=0.5, k=2, sign="positive"
        )
        assert sch.radius(0) == 0.25
        inc = sch.radius(1) - sch.radius(0)
        assert inc == pytest.approx(0.4 / 1.6 * 0.25, rel=1e-12)
        assert sch.radius(3) - sch.radius(2) == pytest.approx(inc, rel=1e-12)

    def test_budget_split(self):
        sch = GlobalSchedule(
            seed=(0.0, 0.0), r0=0.25, mu=0.4, eps=0.8, k=2, sign="positive"
        )
        assert sch.stage_budget(0) == 0.4
        assert sch.stage_budget(2) == 0.1
        assert sch.ball_budget(0, 4) == 0.8 / 16
        # ledger sum stays strictly under the total
        total = sum(sch.stage_budget(m) for m in range(50))
        assert total < 0.8


@pytest.fixture(scope="module")
def ring_run():
    g0, tilde, grid = ring_instance()
    g1, plan = global_deform(g0, tilde, eps=0.5, grid=grid)
    return g0, tilde, grid, g1, plan


class TestGlobalDeform:
    def test_quasi_positive_becomes_positive(self, ring_run):
        g0, tilde, grid, g1, plan = ring_run
        assert plan.initial_classification == "quasi-positive"
        assert plan.final_classification == "positive"
        assert plan.stage_count >= 2
        assert plan.total_ck < plan.eps
        assert plan.flags == ()
        assert plan.final_min_eigen > 0.0
        # independent re-verification through the full pipeline
        rep = classify(
            general_trace(tilde, g1, grid), g1.matrix(grid), points=grid
        )
        assert rep.classification == "positive"

    def test_eigenvalue_oracle_on_input(self):
        g0, tilde, grid = ring_instance()
        lam = whiten_pencil(
            general_trace(tilde, g0, grid), g0.matrix(grid)
        )[..., 0].real
        assert lam == pytest.approx(ring_eigen_oracle(grid), abs=1e-12)
        rep = classify(general_trace(tilde, g0, grid), g0.matrix(grid))
        assert rep.classification == "quasi-positive"

    def test_negative_mirror(self):
        g0, tilde, grid = ring_instance("negative")
        g1, plan = global_deform(g0, tilde, eps=0.5, sign="negative",
                                 grid=grid)
        assert plan.initial_classification == "quasi-negative"
        assert plan.final_classification == "negative"
        lam_max = whiten_pencil(
            general_trace(tilde, g1, grid), g1.matrix(grid)
        )[..., -1].real
        assert np.all(lam_max < 0.0)

    def test_already_positive_zero_stages(self):
        tilde = _flat_box()
        g0 = conformal_scale(
            tilde,
            JetFunctionField(
                lambda c: (c[0] * c[0] + c[1] * c[1]) * (-1.0),
                label="strict",
            ),
        )
        grid = ring_grid()
        g1, plan = global_deform(g0, tilde, eps=0.1, grid=grid)
        assert plan.stage_count == 0
        assert g1 is g0
        assert plan.total_ck == 0.0
        assert plan.final_classification == "positive"

    def test_zero_trace_rejected(self):
        tilde = _flat_box()
        with pytest.raises(CertificationError):
            global_deform(tilde, tilde, eps=0.1, grid=ring_grid())

    def test_monotone_ledger(self, ring_run):
        _, _, _, _, plan = ring_run
        cks = [st.cumulative_ck for st in plan.stages]
        assert all(b >= a - 1e-15 for a, b in zip(cks, cks[1:]))
        for st in plan.stages:
            ledger = 0.5 * sum(
                2.0 ** (-(i + 1)) for i in range(st.index + 1)
            )
            assert st.cumulative_ck <= ledger

    def test_verified_radius_reaches_grid(self, ring_run):
        _, _, grid, _, plan = ring_run
        radii = [st.verified_radius for st in plan.stages]
        assert all(b >= a for a, b in zip(radii, radii[1:]))
        seed = np.asarray(plan.schedule.seed)
        d_max = float(
            np.linalg.norm(grid - seed[None, :], axis=-1).max()
        )
        assert radii[-1] >= d_max - 1e-9

    def test_conformality_of_output(self, ring_run):
        g0, _, grid, g1, _ = ring_run
        m0 = g0.matrix(grid)
        m1 = g1.matrix(grid)
        factor = (m1[..., 0, 0] / m0[..., 0, 0]).real
        assert np.all(factor > 0.0)
        resid = np.abs(m1 - factor[..., None, None] * m0).max()
        assert resid <= 1e-10

    def test_plan_serializable(self, ring_run):
        _, _, _, _, plan = ring_run
        blob = json.dumps(plan.to_dict())
        round_trip = json.loads(blob)
        assert round_trip["stage_count"] == plan.stage_count
        assert round_trip["stages"][0]["steps"]

    def test_tiny_budget_flags_weak_final_margin(self):
        # with a microscopic budget the run still completes and the
        # margins stay positive, but the final classification honestly
        # degrades to quasi-positive (margins below the zero tolerance)
        # and the plan says so instead of overclaiming
        g0, tilde, grid = ring_instance()
        g1, plan = global_deform(g0, tilde, eps=1e-9, grid=grid)
        assert plan.total_ck < 1e-9
        assert plan.final_min_eigen > 0.0
        assert any("final_classification" in f for f in plan.flags)

    def test_invalid_eps(self):
        g0, tilde, grid = ring_instance()
        with pytest.raises(ValueError):
            global_deform(g0, tilde, eps=0.0, grid=grid)


# ---------------------------------------------------------------------------
# catalogue obstructions (documented impossibilities)
# ---------------------------------------------------------------------------


class TestCatalogueObstructions:
    def test_torus_conformal_family_never_quasi_positive(self):
        """On a flat torus the traced curvature of e^psi * flat has
        pencil eigenvalue -lap(psi), whose average vanishes; random
        smooth exponents therefore classify indefinite (or zero), never
        quasi-positive."""
        from hermdeform.core.jets import jcos, jsin

        tilde = _flat_torus()
        grid = tilde.chart.sample_grid(16)
        rng = np.random.default_rng(3)
        seen = set()
        tau = 2 * np.pi
        for _ in range(6):
            a, b = rng.uniform(-0.5, 0.5, 2)
            ka, kb = rng.integers(1, 3, 2)

            def fn(c, a=a, b=b, ka=ka, kb=kb):
                return (
                    jsin(c[0] * (tau * ka)) * a
                    + jcos(c[1] * (tau * kb)) * b
                )

            g0 = conformal_scale(tilde, JetFunctionField(fn, label="rand"))
            rep = classify(
                general_trace(tilde, g0, grid), g0.matrix(grid)
            )
            seen.add(rep.classification)
            assert rep.classification not in (
                "quasi-positive",
                "positive",
                "quasi-negative",
                "negative",
            )
        assert "indefinite" in seen

    def test_hopf_self_trace_strictly_positive(self):
        """The shell metric's own traced curvature is already strictly
        positive (all pencil eigenvalues equal 1), so it needs no
        deformation; and since conformal bumps shift eigenvalues by a
        mean-zero Laplacian, the shell family offers no natural
        quasi-positive instance -- the constructed ring instance plays
        that role instead."""
        tilde = _hopf()
        pts = tilde.chart.sample_grid(5)
        rep = classify(general_trace(tilde, tilde, pts), tilde.matrix(pts))
        assert rep.classification == "positive"
        assert rep.min_eig == pytest.approx(1.0, rel=1e-9)
        assert rep.max_eig == pytest.approx(1.0, rel=1e-9)

    def test_shell_zero_stage_global(self):
        tilde = _hopf()
        pts = tilde.chart.sample_grid(5)
        g1, plan = global_deform(tilde, tilde, eps=0.1, grid=pts)
        assert plan.stage_count == 0
        assert g1 is tilde
        assert plan.final_classification == "positive"
