"""Pencil eigenvalues, sign classification, and whitened C^k distances."""

import numpy as np
import pytest

from hermdeform.chern import first_ricci, second_ricci
from hermdeform.core.charts import AnnulusChart, BoxChart
from hermdeform.core.fields import ConstantField, JetFunctionField
from hermdeform.core.metrics import conformal_scale, flat_metric, hopf_standard
from hermdeform.errors import MetricNotPositive
from hermdeform.positivity import (
    ck_distance,
    classify,
    min_eigen_field,
    whiten_pencil,
)


def _stack(mats):
    return np.asarray(mats, dtype=np.complex128)


def test_pencil_matches_scipy_reference():
    rng = np.random.default_rng(2)
    n, batch = 3, 40
    a = rng.standard_normal((batch, n, n)) + 1j * rng.standard_normal((batch, n, n))
    t = 0.5 * (a + np.conj(np.swapaxes(a, -1, -2)))
    b = rng.standard_normal((batch, n, n)) + 1j * rng.standard_normal((batch, n, n))
    h = b @ np.conj(np.swapaxes(b, -1, -2)) + 3 * np.eye(n)
    got = whiten_pencil(t, h)
    from scipy.linalg import eigh

    for i in range(batch):
        want = eigh(t[i], h[i], eigvals_only=True)
        np.testing.assert_allclose(got[i], want, atol=1e-10)


def test_min_eigen_field_diagonal_case():
    t = _stack([np.diag([2.0, 5.0]), np.diag([-1.0, 3.0])])
    h = _stack([np.eye(2), np.eye(2)])
    np.testing.assert_allclose(min_eigen_field(t, h), [2.0, -1.0], atol=1e-12)


def test_classify_vocabulary():
    eye = np.eye(2)
    h = np.broadcast_to(eye, (4, 2, 2)).astype(np.complex128)

    def rep(mats, **kw):
        return classify(_stack(mats), h[: len(mats)], **kw)

    assert rep([np.diag([1.0, 2.0]), np.diag([3.0, 1.0])]).classification == "positive"
    assert rep([-np.diag([1.0, 2.0]), -np.diag([3.0, 1.0])]).classification == "negative"
    assert rep([np.zeros((2, 2)), np.zeros((2, 2))]).classification == "zero"
    # nonnegative everywhere, definite at one sample -> quasi-positive
    r = rep([np.diag([0.0, 1.0]), np.diag([1.0, 2.0])])
    assert r.classification == "quasi-positive"
    assert r.num_definite_points == 1
    # degenerate at every sample -> nonnegative
    assert (
        rep([np.diag([0.0, 1.0]), np.diag([0.0, 2.0])]).classification
        == "nonnegative"
    )
    assert (
        rep([np.diag([0.0, -1.0]), -np.diag([1.0, 2.0])]).classification
        == "quasi-negative"
    )
    assert (
        rep([np.diag([-1.0, 1.0]), np.diag([1.0, 2.0])]).classification
        == "indefinite"
    )


def test_classify_tolerance_respects_scale():
    h = _stack([np.eye(2), np.eye(2)])
    # a dip of -1e-12 sits inside the relative tolerance (1e-9 * scale),
    # so with one definite sample the field is quasi-positive
    t = _stack([np.diag([1.0, -1e-12]), np.diag([1.0, 1.0])])
    r = classify(t, h)
    assert r.classification == "quasi-positive"
    # explicit tighter tolerance flips the dip into a genuine sign change
    r2 = classify(t, h, tol_zero=1e-14)
    assert r2.classification == "indefinite"


def test_classify_records_witness_points():
    h = _stack([np.eye(1), np.eye(1), np.eye(1)])
    t = _stack([[[2.0]], [[-3.0]], [[0.5]]])
    pts = np.array([[0.0, 0.0], [0.25, 0.5], [0.5, 0.25]])
    r = classify(t, h, points=pts)
    assert r.argmin_point == (0.25, 0.5)
    assert r.argmax_point == (0.0, 0.0)
    assert r.classification == "indefinite"


def test_hermiticity_gate():
    t = _stack([[[1.0, 0.5], [0.0, 1.0]]])  # not Hermitian
    h = _stack([np.eye(2)])
    with pytest.raises(MetricNotPositive):
        whiten_pencil(t, h)


def test_shell_traces_classify_as_expected():
    spec = hopf_standard(AnnulusChart(n=2, lam=2.0))
    pts = spec.chart.sample_grid(5)
    h = spec.matrix(pts)
    # second trace equals (n-1) g: strictly positive, min eig exactly 1
    r2 = classify(second_ricci(spec, pts), h, points=pts)
    assert r2.classification == "positive"
    assert r2.min_eig == pytest.approx(1.0, abs=1e-10)
    # first trace has an exact kernel direction at every point
    r1 = classify(first_ricci(spec, pts), h, points=pts)
    assert r1.classification == "nonnegative"
    assert r1.num_kernel_points == r1.num_samples
    assert r1.max_eig == pytest.approx(2.0, abs=1e-10)


def test_ck_distance_conformal_constant_fixture():
    """For m2 = e^c m1 with m1 flat: the whitened difference is
    (e^c - 1) I with all derivatives zero, so ck = |e^c - 1| sqrt(n)."""
    chart = BoxChart(n=2, center=(0, 0, 0, 0), half_widths=(1, 1, 1, 1))
    m1 = flat_metric(chart)
    c = 0.37
    m2 = conformal_scale(m1, ConstantField(c))
    pts = chart.sample_grid(3)
    want = abs(np.exp(c) - 1.0) * np.sqrt(2.0)
    for k in (0, 1, 2):
        got = ck_distance(m1, m2, pts, k=k)
        assert got == pytest.approx(want, rel=1e-12)


def test_ck_distance_sees_derivatives():
    chart = BoxChart(n=1, center=(0, 0), half_widths=(1, 1))
    m1 = flat_metric(chart)
    eps = 1e-3
    psi = JetFunctionField(lambda v: eps * v[0], label="eps*x1")
    m2 = conformal_scale(m1, psi)
    pts = chart.sample_grid(9)
    d0 = ck_distance(m1, m2, pts, k=0)
    d1 = ck_distance(m1, m2, pts, k=1)
    d2 = ck_distance(m1, m2, pts, k=2)
    # value layer is O(eps) on the box but the first-derivative layer is
    # ~eps everywhere; orders are nested and increasing here
    assert d0 <= d1 <= d2 + 1e-15
    assert d1 == pytest.approx(np.exp(eps) * eps, rel=1e-3)
    assert d2 >= d1


def test_ck_distance_zero_iff_same():
    chart = BoxChart(n=1, center=(0, 0), half_widths=(1, 1))
    m1 = flat_metric(chart)
    pts = chart.sample_grid(5)
    assert ck_distance(m1, m1, pts, k=2) == 0.0
