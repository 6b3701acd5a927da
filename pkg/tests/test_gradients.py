"""Tests for the analytic overlap-loss gradients.

The interesting points of this loss are its kinks: exact parameter equality,
disjoint footprints, faces that touch with zero gap, and a fully saturated
rotation weight. Each gets closed-form assertions here; generic correctness
away from the kinks is covered by finite differences and the magnitude audit.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bevbox import (
    Box3D,
    BoxParams8,
    Grad8,
    center_distance_term,
    finite_difference_grad,
    gradient_bound_audit,
    gradient_check,
    regression_sample_grad,
    regression_sample_loss,
    rwiou_loss,
    rwiou_loss_grad,
)
from bevbox.gradients import center_term_grad, random_overlapping_pair

GEOMETRY_COMPONENTS = ("d_x", "d_y", "d_z", "d_l", "d_w", "d_h")

# Equality-point geometry components cancel only mathematically; the two
# cancelling float terms can round differently and leave ulp-scale residue
# (measured up to 1.2e-16), so equality assertions use this tolerance.
EQUALITY_RESIDUE_TOL = 1e-12


def box_strategy():
    finite = {"allow_nan": False, "allow_infinity": False}
    return st.builds(
        Box3D,
        x=st.floats(-20, 20, **finite),
        y=st.floats(-20, 20, **finite),
        z=st.floats(-3, 3, **finite),
        l=st.floats(0.2, 8, **finite),
        w=st.floats(0.2, 8, **finite),
        h=st.floats(0.2, 8, **finite),
        theta=st.floats(-7, 7, **finite),
    )


def random_params(rng):
    return BoxParams8.from_box(Box3D(
        float(rng.uniform(-5, 5)), float(rng.uniform(-5, 5)),
        float(rng.uniform(-2, 2)), float(rng.uniform(0.6, 5)),
        float(rng.uniform(0.6, 5)), float(rng.uniform(0.6, 5)),
        float(rng.uniform(-math.pi, math.pi)),
    ))


UNIT_CUBE = BoxParams8.from_box(Box3D(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0))
PROBE = BoxParams8.from_box(Box3D(0.5, -1.2, 0.8, 3.7, 1.9, 1.4, 0.83))


class TestEqualityPoint:
    def test_loss_exactly_zero(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            params = random_params(rng)
            for alpha in (0.0, 0.3, 0.5, 1.0):
                assert rwiou_loss(params, params, alpha) == 0.0

    def test_sin_cos_components_equal_alpha(self):
        # sign(0) := +1 makes the one-sided yaw gradient +alpha on both
        # channels; the volume cancellations round, hence rel tol.
        for alpha in (0.25, 0.3, 0.5, 1.0):
            grad = rwiou_loss_grad(PROBE, PROBE, alpha)
            assert grad.d_s == pytest.approx(alpha, rel=1e-12)
            assert grad.d_c == pytest.approx(alpha, rel=1e-12)
            assert grad.d_s > 0.0 and grad.d_c > 0.0

    def test_geometry_components_cancel(self):
        rng = np.random.default_rng(12)
        for _ in range(100):
            params = random_params(rng)
            grad = rwiou_loss_grad(params, params, 0.5)
            for name in GEOMETRY_COMPONENTS:
                assert abs(getattr(grad, name)) <= EQUALITY_RESIDUE_TOL

    def test_alpha_zero_yaw_components_exactly_zero(self):
        grad = rwiou_loss_grad(PROBE, PROBE, 0.0)
        assert grad.d_s == 0.0
        assert grad.d_c == 0.0

    def test_sample_loss_zero_at_equality(self):
        value, grad = regression_sample_grad(PROBE, PROBE, 0.5)
        assert value == 0.0
        assert grad.d_s == pytest.approx(0.5, rel=1e-12)
        for name in GEOMETRY_COMPONENTS:
            assert abs(getattr(grad, name)) <= EQUALITY_RESIDUE_TOL


class TestDisjoint:
    def test_bev_disjoint_loss_one_grad_zero(self):
        pred = BoxParams8(20.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 1.0)
        assert rwiou_loss(pred, UNIT_CUBE, 0.5) == 1.0
        grad = rwiou_loss_grad(pred, UNIT_CUBE, 0.5)
        assert grad.as_array().tolist() == [0.0] * 8

    def test_z_disjoint_loss_one_grad_zero(self):
        pred = BoxParams8(0.0, 0.0, 10.0, 1.0, 1.0, 1.0, 0.0, 1.0)
        assert rwiou_loss(pred, UNIT_CUBE, 0.5) == 1.0
        grad = rwiou_loss_grad(pred, UNIT_CUBE, 0.5)
        assert grad.as_array().tolist() == [0.0] * 8


class TestTouchingFaces:
    # Gap exactly zero: the overlap clamp passes the derivative through, so
    # touching boxes still feel attraction even though the loss sits at 1.

    def test_touch_from_right(self):
        pred = BoxParams8(1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 1.0)
        assert rwiou_loss(pred, UNIT_CUBE, 0.0) == 1.0
        grad = rwiou_loss_grad(pred, UNIT_CUBE, 0.0)
        assert grad.d_x == 0.5
        assert grad.d_l < 0.0

    def test_touch_from_left(self):
        pred = BoxParams8(-1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 1.0)
        grad = rwiou_loss_grad(pred, UNIT_CUBE, 0.0)
        assert grad.d_x == -0.5


class TestShiftedCube:
    # Unit cubes, pred shifted +0.5 in x, alpha 0. By hand: overlap 0.5,
    # union 1.5, loss 1 - 1/3; d(loss)/dx = 8/9 and d(loss)/dl = -2/9.

    PRED = BoxParams8(0.5, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 1.0)

    def test_loss_value(self):
        assert rwiou_loss(self.PRED, UNIT_CUBE, 0.0) == pytest.approx(
            2.0 / 3.0, rel=1e-15)

    def test_center_gradient(self):
        grad = rwiou_loss_grad(self.PRED, UNIT_CUBE, 0.0)
        assert grad.d_x == pytest.approx(8.0 / 9.0, rel=1e-12)
        # within the overlap-regime magnitude bound 2 / l_t
        assert abs(grad.d_x) <= 2.0 + 1e-9

    def test_size_gradient(self):
        grad = rwiou_loss_grad(self.PRED, UNIT_CUBE, 0.0)
        assert grad.d_l == pytest.approx(-2.0 / 9.0, rel=1e-12)

    def test_aligned_axes_balanced(self):
        # y and z faces tie exactly; the averaged one-sided derivatives cancel.
        grad = rwiou_loss_grad(self.PRED, UNIT_CUBE, 0.0)
        assert abs(grad.d_y) <= EQUALITY_RESIDUE_TOL
        assert abs(grad.d_z) <= EQUALITY_RESIDUE_TOL


class TestRotationWeightClamp:
    def test_saturated_weight_kills_gradient(self):
        # alpha 1 and a sine delta of 4 drive the channel weight to the clamp
        # floor: zero overlap credit and a dead gradient everywhere.
        pred = BoxParams8(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 4.0, 1.0)
        assert rwiou_loss(pred, UNIT_CUBE, 1.0) == 1.0
        grad = rwiou_loss_grad(pred, UNIT_CUBE, 1.0)
        assert grad.as_array().tolist() == [0.0] * 8

    def test_just_inside_clamp_still_live(self):
        pred = BoxParams8(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.9, 1.0)
        assert 0.0 < rwiou_loss(pred, UNIT_CUBE, 1.0) < 1.0
        grad = rwiou_loss_grad(pred, UNIT_CUBE, 1.0)
        assert grad.d_s != 0.0


class TestCenterTerm:
    def test_coincident_centers_zero(self):
        target = BoxParams8.from_box(Box3D(1.0, 2.0, 0.5, 2.0, 2.0, 2.0, 0.4))
        pred = BoxParams8(1.0, 2.0, 0.5, 3.0, 1.5, 1.2, 0.3, 0.9)
        value, grad = center_term_grad(pred, target)
        assert value == 0.0
        assert grad.as_array().tolist() == [0.0] * 8

    def test_value_matches_geometry_term(self):
        rng = np.random.default_rng(13)
        for _ in range(50):
            pred, target = random_overlapping_pair(rng, alpha=0.5)
            value, _ = center_term_grad(pred, target)
            assert value == center_distance_term(pred, target)

    def test_finite_difference_agreement(self):
        rng = np.random.default_rng(14)
        for _ in range(20):
            pred, target = random_overlapping_pair(rng, alpha=0.5, margin=1e-3)
            _, grad = center_term_grad(pred, target)
            numeric = finite_difference_grad(
                pred, target, 0.5,
                loss_fn=lambda p, t, a: center_distance_term(p, t))
            assert np.allclose(grad.as_array(), numeric, rtol=1e-5, atol=1e-8)

    def test_yaw_components_identically_zero(self):
        rng = np.random.default_rng(15)
        for _ in range(50):
            pred, target = random_overlapping_pair(rng, alpha=0.5)
            _, grad = center_term_grad(pred, target)
            assert grad.d_s == 0.0
            assert grad.d_c == 0.0

    def test_sample_grad_is_componentwise_sum(self):
        rng = np.random.default_rng(16)
        for _ in range(30):
            pred, target = random_overlapping_pair(rng, alpha=0.5)
            value, grad = regression_sample_grad(pred, target, 0.5)
            manual = (rwiou_loss_grad(pred, target, 0.5)
                      + center_term_grad(pred, target)[1])
            assert np.array_equal(grad.as_array(), manual.as_array())
            assert value == regression_sample_loss(pred, target, 0.5)


class TestFiniteDifferenceAgreement:
    def test_gradient_check_passes(self):
        report = gradient_check(n_samples=500, seed=1)
        assert report.passed
        assert report.n_failures == 0

    def test_spot_agreement_away_from_breakpoints(self):
        rng = np.random.default_rng(17)
        for _ in range(25):
            pred, target = random_overlapping_pair(rng, alpha=0.5, margin=1e-3)
            analytic = rwiou_loss_grad(pred, target, 0.5).as_array()
            numeric = finite_difference_grad(pred, target, 0.5)
            assert np.allclose(analytic, numeric, rtol=1e-5, atol=1e-8)

    def test_report_is_deterministic(self):
        a = gradient_check(n_samples=50, seed=3)
        b = gradient_check(n_samples=50, seed=3)
        assert a.max_rel_err == b.max_rel_err
        assert a.max_abs_err == b.max_abs_err
        assert a.worst == b.worst

    def test_report_json_roundtrip(self):
        report = gradient_check(n_samples=50, seed=4)
        payload = report.to_json_dict()
        assert payload["passed"] is True
        assert payload["n_samples"] == 50
        assert set(payload) >= {
            "n_samples", "seed", "alpha", "rel_tol", "abs_floor",
            "max_abs_err", "max_rel_err", "n_failures", "worst", "passed",
        }

    def test_rejects_bad_alpha(self):
        with pytest.raises(ValueError):
            gradient_check(n_samples=10, seed=0, alpha=1.5)
        with pytest.raises(ValueError):
            rwiou_loss_grad(PROBE, PROBE, -0.1)


class TestMagnitudeBounds:
    def test_audit_passes(self):
        audit = gradient_bound_audit(n_samples=400, seed=2)
        assert audit.passed
        names = {regime.regime for regime in audit.regimes}
        assert names == {
            "sin_cos_channel", "center_overlap", "scale_center_aligned",
        }
        for regime in audit.regimes:
            assert regime.n_violations == 0
            assert regime.n_samples == 400

    def test_sin_cos_bound_direct(self):
        rng = np.random.default_rng(18)
        for alpha in (0.3, 0.5, 1.0):
            for _ in range(100):
                pred, target = random_overlapping_pair(rng, alpha=alpha)
                grad = rwiou_loss_grad(pred, target, alpha)
                assert abs(grad.d_s) <= alpha + 1e-9
                assert abs(grad.d_c) <= alpha + 1e-9

    def test_audit_json_roundtrip(self):
        audit = gradient_bound_audit(n_samples=50, seed=5)
        payload = audit.to_json_dict()
        assert payload["passed"] is True
        assert len(payload["regimes"]) == 3
        for regime in payload["regimes"]:
            assert regime["n_violations"] == 0


class TestProperties:
    @settings(max_examples=60, deadline=None)
    @given(box=box_strategy(), alpha=st.floats(0, 1))
    def test_self_loss_zero(self, box, alpha):
        params = BoxParams8.from_box(box)
        assert rwiou_loss(params, params, alpha) == 0.0

    @settings(max_examples=60, deadline=None)
    @given(b1=box_strategy(), b2=box_strategy(), alpha=st.floats(0, 1))
    def test_loss_range_and_finite_grads(self, b1, b2, alpha):
        pred = BoxParams8.from_box(b1)
        target = BoxParams8.from_box(b2)
        loss = rwiou_loss(pred, target, alpha)
        assert 0.0 <= loss <= 1.0
        grad = rwiou_loss_grad(pred, target, alpha)
        assert np.all(np.isfinite(grad.as_array()))

    @settings(max_examples=60, deadline=None)
    @given(b1=box_strategy(), b2=box_strategy())
    def test_sample_loss_range(self, b1, b2):
        pred = BoxParams8.from_box(b1)
        target = BoxParams8.from_box(b2)
        value = regression_sample_loss(pred, target, 0.5)
        assert 0.0 <= value < 2.0


class TestGrad8:
    def test_zeros_and_add(self):
        zero = Grad8.zeros()
        assert zero.as_array().tolist() == [0.0] * 8
        one = Grad8(1, 2, 3, 4, 5, 6, 7, 8)
        total = one + one
        assert total.as_array().tolist() == [2, 4, 6, 8, 10, 12, 14, 16]
