"""
時間積分器のテスト
"""
import math

import numpy as np
import pytest

from diagnostics import state_energy
from error_handling import InvalidParameter, NonConvergence, StepSizeUnderflow
from integrators import (
    StepperConfig,
    Trajectory,
    default_reversal,
    integrate,
    one_step,
    reversibility_defect,
    step_implicit_midpoint,
    step_rk4,
)
from model import get_perturbation
from reduction import induced_field, reduced_field


def _oscillator(y):
    return np.array([y[1], -y[0]])


def _exact_oscillator(t):
    return np.array([math.cos(t), -math.sin(t)])


def _noisy_decay(amplitude, seed=0):
    """y' = −y に評価ごとの一様ノイズを足した場"""
    rng = np.random.default_rng(seed)

    def field(y):
        return -y + rng.uniform(-amplitude, amplitude, size=y.shape)
    return field


@pytest.mark.unit
class TestStepperConfig:

    def test_defaults(self):
        cfg = StepperConfig()
        assert cfg.method == "reference"
        assert cfg.h == 0.05

    @pytest.mark.error
    def test_unknown_method(self):
        with pytest.raises(InvalidParameter):
            StepperConfig("euler")

    @pytest.mark.error
    @pytest.mark.parametrize("h", [0.0, -0.1, math.nan])
    def test_bad_step(self, h):
        with pytest.raises(InvalidParameter):
            StepperConfig("rk4", h=h)

    def test_with_method_keeps_tolerances(self):
        cfg = StepperConfig("rk4", h=0.01, newton_tol=1e-10).with_method("implicit_midpoint")
        assert (cfg.method, cfg.h, cfg.newton_tol) == ("implicit_midpoint", 0.01, 1e-10)


@pytest.mark.unit
class TestSteps:
    """1ステップの公式"""

    def test_rk4_exponential(self):
        y = step_rk4(lambda y: y, [1.0], 0.1)
        assert y[0] == pytest.approx(1.1051708333333333, abs=1e-15)

    def test_midpoint_is_cayley_transform_on_linear_field(self):
        h = 0.1
        A = np.array([[0.0, 1.0], [-1.0, 0.0]])
        y0 = np.array([1.0, 0.0])
        cayley = np.linalg.solve(np.eye(2) - 0.5 * h * A, (np.eye(2) + 0.5 * h * A) @ y0)
        np.testing.assert_allclose(step_implicit_midpoint(_oscillator, y0, h, StepperConfig("implicit_midpoint")),
                                   cayley, atol=1e-13)

    def test_midpoint_conserves_quadratic_energy(self):
        cfg = StepperConfig("implicit_midpoint", h=0.1)
        y = np.array([1.0, 0.0])
        for _ in range(200):
            y = step_implicit_midpoint(_oscillator, y, cfg.h, cfg)
        assert y @ y == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.error
    def test_midpoint_non_convergence(self):
        cfg = StepperConfig("implicit_midpoint", newton_tol=1e-15, newton_max_iters=1)
        with pytest.raises(NonConvergence):
            step_implicit_midpoint(lambda y: np.sin(y) + y ** 3, [1.0], 0.5, cfg)

    def test_midpoint_accepts_stalled_update_below_noise_floor(self):
        h = 0.05
        y0 = np.array([1.0, 0.5, -0.3])
        cfg = StepperConfig("implicit_midpoint", h=h)
        z = step_implicit_midpoint(_noisy_decay(5e-10), y0, h, cfg)
        np.testing.assert_allclose(z, y0 * (1.0 - 0.5 * h) / (1.0 + 0.5 * h), atol=1e-9)

    @pytest.mark.error
    def test_midpoint_rejects_stall_far_above_tolerance(self):
        cfg = StepperConfig("implicit_midpoint", h=0.05)
        with pytest.raises(NonConvergence):
            step_implicit_midpoint(_noisy_decay(1e-7), np.array([1.0, 0.5, -0.3]), 0.05, cfg)

    def test_one_step_dispatch(self):
        cfg = StepperConfig("rk4", h=0.1)
        y0 = np.array([1.0, 0.0])
        np.testing.assert_array_equal(one_step(_oscillator, y0, 0.1, cfg), step_rk4(_oscillator, y0, 0.1))
        np.testing.assert_allclose(one_step(_oscillator, y0, 0.1, cfg.with_method("reference")),
                                   _exact_oscillator(0.1), atol=1e-11)


@pytest.mark.unit
class TestOrder:
    """固定刻み法の収束次数"""

    @pytest.mark.parametrize("method,order", [("rk4", 4), ("implicit_midpoint", 2)])
    def test_error_ratio(self, method, order):
        errors = []
        for h in (0.1, 0.05):
            trajectory = integrate(_oscillator, [1.0, 0.0], 1.0, StepperConfig(method, h=h), sample_dt=1.0)
            errors.append(np.max(np.abs(trajectory.final_state - _exact_oscillator(1.0))))
        assert errors[0] / errors[1] == pytest.approx(2 ** order, rel=0.1)


@pytest.mark.unit
class TestReversibility:
    """ρ ψ_h ρ ψ_h = id の欠損"""

    def test_midpoint_is_reversible(self, contact_spec):
        field = reduced_field(contact_spec)
        s = np.array([0.3, -0.2, 0.5, 0.4, 0.1])
        cfg = StepperConfig(h=0.2)
        assert reversibility_defect(field, "implicit_midpoint", s, 0.2, cfg) < 1e-10

    def test_rk4_is_not(self, contact_spec):
        field = reduced_field(contact_spec)
        s = np.array([0.3, -0.2, 0.5, 0.4, 0.1])
        assert reversibility_defect(field, "rk4", s, 0.2, StepperConfig(h=0.2)) > 1e-9

    def test_reversed_reference_trajectory_retraces(self, contact_spec):
        field = reduced_field(contact_spec)
        rho = default_reversal(5)
        cfg = StepperConfig("reference")
        s0 = np.array([0.3, -0.2, 0.5, 0.4, 0.1])
        forward = integrate(field, s0, 20.0, cfg, sample_dt=2.0)
        backward = integrate(field, rho * forward.final_state, 20.0, cfg, sample_dt=2.0)
        np.testing.assert_allclose(rho * backward.states[::-1], forward.states, atol=1e-8)
        assert np.max(np.abs(rho * backward.final_state - s0)) <= 1e-8

    def test_explicit_reversal(self):
        defect = reversibility_defect(_oscillator, "implicit_midpoint", [1.0, 0.5], 0.1,
                                      StepperConfig(), reversal=np.array([1.0, -1.0]))
        assert defect < 1e-12


@pytest.mark.unit
class TestIntegrate:

    def test_sampling_grid(self):
        trajectory = integrate(_oscillator, [1.0, 0.0], 2.0, StepperConfig("rk4", h=0.05), sample_dt=0.5)
        np.testing.assert_allclose(trajectory.times, [0.0, 0.5, 1.0, 1.5, 2.0], atol=1e-12)
        assert trajectory.method_label == "rk4"
        assert trajectory.metadata["steps"] == 40

    def test_reference_accuracy(self):
        trajectory = integrate(_oscillator, [1.0, 0.0], 20.0, StepperConfig("reference"), sample_dt=5.0)
        assert len(trajectory) == 5
        np.testing.assert_allclose(trajectory.final_state, _exact_oscillator(20.0), atol=1e-10)

    @pytest.mark.error
    def test_sample_dt_must_be_multiple_of_h(self):
        with pytest.raises(InvalidParameter):
            integrate(_oscillator, [1.0, 0.0], 1.0, StepperConfig("rk4", h=0.3), sample_dt=0.5)

    @pytest.mark.error
    def test_blow_up_underflows_step_size(self):
        with pytest.raises(StepSizeUnderflow):
            integrate(lambda y: y * y, [1.0], 2.0, StepperConfig("reference"), sample_dt=1.0)

    @pytest.mark.error
    def test_non_positive_duration(self):
        with pytest.raises(InvalidParameter):
            integrate(_oscillator, [1.0, 0.0], 0.0, StepperConfig("rk4"))

    def test_trajectory_rows(self):
        trajectory = Trajectory([0.0, 1.0], [[1.0, 2.0], [3.0, 4.0]])
        assert trajectory.to_rows() == [[0.0, 1.0, 2.0], [1.0, 3.0, 4.0]]
        assert trajectory.duration == 1.0

    @pytest.mark.error
    def test_trajectory_times_increasing(self):
        with pytest.raises(InvalidParameter):
            Trajectory([0.0, 0.0], [[1.0], [1.0]])

    @pytest.mark.error
    def test_duration_must_be_multiple_of_h(self):
        with pytest.raises(InvalidParameter):
            integrate(_oscillator, [1.0, 0.0], 1.0, StepperConfig("rk4", h=0.3), sample_dt=0.3)

    def test_duration_within_rounding_of_multiple(self):
        trajectory = integrate(_oscillator, [1.0, 0.0], 0.9, StepperConfig("rk4", h=0.3), sample_dt=0.3)
        assert trajectory.metadata["steps"] == 3
        assert trajectory.times[-1] == pytest.approx(0.9, abs=1e-15)


@pytest.mark.integration
class TestPerturbedMidpoint:
    """摂動系の誘導場を陰的中点則で長く回す"""

    @pytest.mark.slow
    def test_thousand_steps_on_induced_field(self, contact_spec):
        spec = contact_spec.with_perturbation(get_perturbation("p1_quadratic"), 1e-2)
        cfg = StepperConfig("implicit_midpoint", h=0.05)
        s0 = np.array([0.3, -0.2, 0.5, 0.4, 0.0])
        trajectory = integrate(induced_field(spec), s0, 50.0, cfg, sample_dt=5.0)
        assert trajectory.metadata["steps"] == 1000
        assert np.all(np.isfinite(trajectory.states))
        energy = np.array([state_energy(spec, y) for y in trajectory.states])
        assert np.max(np.abs(energy - energy[0])) < 1e-2
