"""Tests for the finite-difference gradient verification suites."""

import time

import numpy as np
import pytest

from ptseg.gradcheck import (
    FD_STEP,
    GradCheckReport,
    ZERO_PREDICTION_EPSILON,
    _fd_error,
    _rel_err,
    check_center_loss_gradients,
    check_model_gradients,
    run_gradcheck,
    zero_coincidence_gradient,
)


@pytest.fixture(scope="module")
def reports():
    t0 = time.monotonic()
    out = run_gradcheck(seed=1)
    elapsed = time.monotonic() - t0
    return {r.name: r for r in out}, elapsed


class TestRunGradcheck:
    def test_produces_three_reports(self, reports):
        by_name, _ = reports
        assert set(by_name) == {"center-loss", "model-params", "zero-coincidence"}

    def test_all_suites_pass(self, reports):
        by_name, _ = reports
        failures = {n: r for n, r in by_name.items() if not r.passed}
        assert failures == {}

    def test_center_loss_sweep_covers_every_voxel_of_every_map(self, reports):
        by_name, _ = reports
        # 50 maps x (4*6*6) voxels, every entry finite-differenced
        assert by_name["center-loss"].n_checks == 50 * 4 * 6 * 6

    def test_center_loss_tolerance_is_pinned(self, reports):
        by_name, _ = reports
        assert by_name["center-loss"].tolerance == 1e-4

    def test_model_params_checks_twenty_parameters(self, reports):
        by_name, _ = reports
        r = by_name["model-params"]
        assert r.n_checks == 20
        assert r.tolerance == 1e-3

    def test_runtime_well_under_a_minute(self, reports):
        _, elapsed = reports
        assert elapsed < 60.0


class TestCenterLossCheck:
    def test_step_is_pinned(self):
        assert FD_STEP == 1e-5

    def test_zero_prediction_epsilon_dominates_step(self):
        # the all-zero-prediction maps are probed with the frozen step, so the
        # stability constant must sit far above it for the secant to be linear
        assert ZERO_PREDICTION_EPSILON >= 1000 * FD_STEP

    def test_small_sweep_passes(self):
        report = check_center_loss_gradients(seed=3, n_maps=8)
        assert report.passed
        assert report.n_checks == 8 * 4 * 6 * 6

    def test_different_seeds_both_pass(self):
        assert check_center_loss_gradients(seed=9, n_maps=6).passed


class TestModelCheck:
    def test_small_check_passes(self):
        report = check_model_gradients(seed=2, n_params=5)
        assert report.passed
        assert report.n_checks == 5


class TestZeroCoincidence:
    def test_gradient_is_exactly_zero(self):
        assert zero_coincidence_gradient() == 0.0

    def test_reported_with_tight_tolerance(self, reports):
        by_name, _ = reports
        r = by_name["zero-coincidence"]
        assert r.max_rel_err == 0.0
        assert r.tolerance == 1e-12


class TestReport:
    def test_passes_strictly_below_tolerance(self):
        assert GradCheckReport("x", 1, 0.0009, 1e-3).passed
        assert not GradCheckReport("x", 1, 0.001, 1e-3).passed
        assert not GradCheckReport("x", 1, 0.002, 1e-3).passed


class TestErrorMetrics:
    def test_rel_err_symmetric_scale(self):
        assert _rel_err(2.0, 1.0) == pytest.approx(0.5)
        assert _rel_err(1.0, 2.0) == pytest.approx(0.5)

    def test_rel_err_floor_guards_tiny_values(self):
        # both values far below the floor: denominator is the floor, not zero
        assert _rel_err(0.0, 0.0) == 0.0
        assert _rel_err(1e-12, 0.0) == pytest.approx(1e-4)

    def test_fd_error_inside_noise_floor_is_agreement(self):
        assert _fd_error(3e-10, -2e-10, noise=1e-9) == 0.0

    def test_fd_error_above_noise_floor_is_relative(self):
        # |1.0 - 1.1| / max(1.0, 1.1, 1e-9)
        assert _fd_error(1.0, 1.1, noise=1e-9) == pytest.approx(0.1 / 1.1)

    def test_fd_error_catches_gross_disagreement(self):
        assert _fd_error(-7.0, 4.2, noise=1e-8) > 1.0


class TestNoiseFloorIsNotALoophole:
    def test_sign_flip_on_measurable_gradient_fails(self):
        # a genuinely wrong gradient of ordinary size must never hide behind
        # the cancellation-noise allowance
        noise = 64 * np.finfo(np.float64).eps * 1.0 / (2 * 1e-6)
        assert noise < 1e-8
        assert _fd_error(1e-5, -1e-5, noise) == pytest.approx(2.0)
