"""
ドリフト・回転数・ポアンカレ断面・ε走査・周波数写像のテスト
"""
import math

import numpy as np
import pytest

from diagnostics import (
    SCAN_COLUMNS,
    TrendFit,
    drift_floor,
    frequency_map,
    invariant_drift,
    kam_scan,
    poincare_section,
    rotation_numbers,
    scan_initial_state,
    state_energy,
)
from error_handling import InsufficientGrid, InsufficientTrajectory, InvalidParameter, NoCrossings
from floquet import floquet_data, subsystem_orbit
from integrators import StepperConfig, integrate
from model import embed, get_perturbation, hamiltonian
from optimizations import CachedDataManager
from reduction import reduced_field


def _on_torus(orbit, theta):
    q3, p3 = orbit.theta_param(theta)
    return np.array([0.3, -0.2, q3, 0.4, p3])


@pytest.mark.unit
class TestTrendFit:
    """傾きの当てはめと有意性"""

    def test_exact_line_is_significant(self):
        times = np.arange(10.0)
        fit = TrendFit.fit(times, 1e-6 * times)
        assert fit.slope == pytest.approx(1e-6, rel=1e-9)
        assert fit.significant
        assert fit.ci_low <= fit.slope <= fit.ci_high

    def test_zero_series(self):
        fit = TrendFit.fit(np.arange(5.0), np.zeros(5))
        assert (fit.slope, fit.stderr, fit.significant) == (0.0, 0.0, False)

    def test_oscillation_is_not_significant(self):
        times = np.linspace(0.0, 100.0, 401)
        fit = TrendFit.fit(times, 1e-3 * np.sin(2 * math.pi * times))
        assert not fit.significant

    def test_change_below_floor_is_not_significant(self):
        times = np.linspace(0.0, 1000.0, 1001)
        values = 5e-15 * times
        assert TrendFit.fit(times, values).significant
        assert not TrendFit.fit(times, values, floor=1e-9).significant
        assert TrendFit.fit(times, 1e3 * values, floor=1e-9).significant

    def test_drift_floor_follows_method_tolerance(self):
        assert drift_floor(StepperConfig("implicit_midpoint", newton_tol=1e-12), 1000.0) == pytest.approx(1e-9)
        assert drift_floor(StepperConfig("reference", reference_tol=1e-10), 50.0) == pytest.approx(5e-9)

    @pytest.mark.error
    def test_needs_three_samples(self):
        with pytest.raises(InsufficientTrajectory):
            TrendFit.fit([0.0, 1.0], [0.0, 1.0])


@pytest.mark.integration
class TestInvariantDrift:
    """積分法ごとの不変量の偏差"""

    def test_reference_conserves_everything(self, contact_spec, contact_orbit):
        report = invariant_drift(contact_spec, _on_torus(contact_orbit, 0.1), StepperConfig("reference"), 100.0, 1.0)
        assert report.labels == ("H", "norm_u", "a", "b", "c")
        assert len(report.times) == 101
        assert report.max_drift("H") < 1e-9
        assert report.max_drift("norm_u") < 1e-9
        assert report.max_drift("b") < 1e-7
        assert report.max_drift("c") < 1e-7

    def test_midpoint_keeps_energy_bounded(self, contact_spec, contact_orbit):
        report = invariant_drift(contact_spec, _on_torus(contact_orbit, 0.1),
                                 StepperConfig("implicit_midpoint", h=0.05), 50.0, 1.0)
        assert report.max_drift("H") < 1e-2
        assert set(report.summary()) == set(report.labels)

    @pytest.mark.slow
    def test_unperturbed_midpoint_has_no_secular_trend(self, contact_spec, contact_orbit):
        report = invariant_drift(contact_spec, _on_torus(contact_orbit, 0.1),
                                 StepperConfig("implicit_midpoint", h=0.05), 1000.0, 1.0)
        assert not report.has_secular_trend(("H", "a", "b", "c"))

    def test_resonant_torus_tracks_only_energy(self, decoupled_spec):
        orbit = subsystem_orbit(decoupled_spec, 0.5)
        report = invariant_drift(decoupled_spec, _on_torus(orbit, 0.0), StepperConfig("reference"), 10.0, 1.0)
        assert report.labels == ("H", "norm_u", "a")
        assert math.isnan(report.max_drift("b"))

    def test_perturbed_energy_uses_lift(self, contact_spec):
        spec = contact_spec.with_perturbation(get_perturbation("q1_quartic"), 0.01)
        s = np.array([0.5, 0.0, 0.2, 0.3, 0.1])
        assert state_energy(spec, s) != hamiltonian(contact_spec, embed(contact_spec, s))
        assert state_energy(contact_spec, s) == hamiltonian(contact_spec, embed(contact_spec, s))


@pytest.mark.integration
class TestRotationNumbers:

    @pytest.mark.slow
    def test_recovers_floquet_frequencies(self, contact_spec, contact_orbit, contact_floquet):
        duration = 50 * contact_orbit.period_T3 + 1.0
        trajectory = integrate(reduced_field(contact_spec), _on_torus(contact_orbit, 0.05), duration,
                               StepperConfig("reference"), sample_dt=0.5)
        estimate = rotation_numbers(contact_spec, contact_orbit, contact_floquet, trajectory)
        assert estimate.omega_est == pytest.approx(contact_floquet.omega, abs=1e-8)
        assert estimate.xi_est == pytest.approx(contact_floquet.xi, abs=1e-6)
        assert estimate.xi_residual < 1e-5

    @pytest.mark.error
    def test_short_trajectory(self, contact_spec, contact_orbit, contact_floquet):
        trajectory = integrate(reduced_field(contact_spec), _on_torus(contact_orbit, 0.0), 10.0,
                               StepperConfig("reference"), sample_dt=0.5)
        with pytest.raises(InsufficientTrajectory):
            rotation_numbers(contact_spec, contact_orbit, contact_floquet, trajectory)


@pytest.mark.integration
class TestPoincareSection:
    """{θ = 0} への戻り"""

    def test_returns_every_period(self, contact_spec, contact_orbit, contact_floquet):
        duration = 10.5 * contact_orbit.period_T3
        trajectory = integrate(reduced_field(contact_spec), _on_torus(contact_orbit, 0.2), duration,
                               StepperConfig("reference"), sample_dt=0.01)
        section = poincare_section(contact_spec, trajectory, contact_orbit, contact_floquet)
        assert len(section) == 10
        gaps = np.diff([p.time for p in section.points])
        np.testing.assert_allclose(gaps, contact_orbit.period_T3, atol=1e-8)
        b_spread, c_spread = section.bc_spread()
        assert b_spread < 1e-7
        assert c_spread < 1e-7
        assert section.closest_phi_return(9) > 0.0

    @pytest.mark.error
    def test_no_crossing(self, contact_spec, contact_orbit):
        trajectory = integrate(reduced_field(contact_spec), _on_torus(contact_orbit, 0.1), 2.0,
                               StepperConfig("reference"), sample_dt=0.1)
        with pytest.raises(NoCrossings):
            poincare_section(contact_spec, trajectory, contact_orbit)

    @pytest.mark.error
    def test_equilibrium_never_crosses(self, contact_spec):
        trajectory = integrate(reduced_field(contact_spec), [0.3, 0.1, 0.0, 0.2, 0.0], 5.0,
                               StepperConfig("reference"), sample_dt=0.5)
        with pytest.raises(NoCrossings):
            poincare_section(contact_spec, trajectory)


@pytest.mark.integration
class TestKamScan:
    """ε 走査"""

    def _scan(self, spec, threads=1, cache=None):
        return kam_scan(
            spec, ["p1_quadratic"], [0.0, 1e-3], ["implicit_midpoint", "rk4"], T=10.0, seeds=[0],
            cfg=StepperConfig(h=0.05), sample_dt=1.0, threads=threads, cache=cache,
        )

    def test_rows_and_controls(self, contact_spec):
        result = self._scan(contact_spec)
        assert len(result.rows) == 4
        assert [row.sort_key for row in result.rows] == sorted(row.sort_key for row in result.rows)
        assert len(result.controls()) == 2
        for row in result.rows:
            assert row.verdict in ("bounded", "secular")
            assert len(row.as_row()) == len(SCAN_COLUMNS)
        midpoint = [row for row in result.rows if row.method == "implicit_midpoint"]
        assert all(row.rev_defect < 1e-10 for row in midpoint)

    def test_deterministic_across_threads(self, contact_spec):
        serial = self._scan(contact_spec, threads=1)
        parallel = self._scan(contact_spec, threads=2)
        assert [row.as_row() for row in serial.rows] == [row.as_row() for row in parallel.rows]

    def test_cache_reuses_torus(self, contact_spec):
        cache = CachedDataManager()
        self._scan(contact_spec, cache=cache)
        assert len(cache) >= 2
        assert ("torus", contact_spec.label, 0.5) in cache

    def test_initial_state_from_seed(self, contact_orbit):
        np.testing.assert_array_equal(scan_initial_state(contact_orbit, 3), scan_initial_state(contact_orbit, 3))
        s = scan_initial_state(contact_orbit, 3)
        assert 0.5 * (s[2] ** 2 + s[4] ** 2) == pytest.approx(0.5, abs=1e-12)

    @pytest.mark.error
    @pytest.mark.parametrize("kwargs", [
        {"epsilons": [1e-3]},
        {"methods": ["leapfrog"]},
        {"seeds": []},
    ])
    def test_invalid_grid(self, contact_spec, kwargs):
        arguments = {"perturbations": ["p1_quadratic"], "epsilons": [0.0], "methods": ["rk4"], "T": 5.0,
                     "seeds": [0]}
        arguments.update(kwargs)
        with pytest.raises(InvalidParameter):
            kam_scan(contact_spec, **arguments)


@pytest.mark.integration
class TestFrequencyMap:
    """(ω, ξ) の独立性"""

    def test_decoupled_is_dependent(self, decoupled_spec):
        grid = [0.0] + list(np.linspace(0.1, 1.0, 10))
        fmap = frequency_map(decoupled_spec, grid)
        assert fmap.skipped == (0.0,)
        assert len(fmap.entries) == 10
        assert fmap.verdict == "dependent"
        assert all(entry.resonant for entry in fmap.entries)

    def test_loader_replaces_cache(self, decoupled_spec):
        loaded = []

        def loader(a):
            loaded.append(a)
            return floquet_data(decoupled_spec, subsystem_orbit(decoupled_spec, a))

        cache = CachedDataManager()
        grid = list(np.linspace(0.1, 1.0, 10))
        fmap = frequency_map(decoupled_spec, grid, cache=cache, loader=loader)
        assert loaded == grid
        assert len(cache) == 0
        assert fmap.verdict == "dependent"

    @pytest.mark.slow
    def test_contact_map_structure(self, contact_spec):
        fmap = frequency_map(contact_spec, np.linspace(0.1, 2.0, 10))
        assert len(fmap.entries) == 10
        assert all(entry.omega == pytest.approx(1 / (2 * math.pi)) for entry in fmap.entries)
        assert fmap.verdict == "independent"
        assert fmap.to_dict()["verdict"] == fmap.verdict

    @pytest.mark.error
    def test_too_few_points(self, contact_spec):
        with pytest.raises(InsufficientGrid):
            frequency_map(contact_spec, [0.25, 0.5, 1.0])


@pytest.mark.slow
@pytest.mark.integration
class TestLongTimeStability:
    """可逆な摂動の下での長時間挙動（T = 10⁴, h = 0.05）"""

    def test_midpoint_bounded_rk4_drifts(self, contact_spec):
        result = kam_scan(
            contact_spec, ["p1_quadratic"], [0.0, 1e-2], ["implicit_midpoint", "rk4"], T=1e4, seeds=[0],
            cfg=StepperConfig(h=0.05), sample_dt=1.0, threads=2,
        )
        rows = {(row.epsilon, row.method): row for row in result.rows}
        floor = drift_floor(StepperConfig("implicit_midpoint"), 1e4)
        for epsilon in (0.0, 1e-2):
            midpoint = rows[(epsilon, "implicit_midpoint")]
            assert midpoint.verdict == "bounded"
            for name in ("H", "a", "b", "c"):
                assert midpoint.max_drift[name] < 1e-2
                slope, stderr = abs(midpoint.slope[name]), midpoint.slope_stderr[name]
                assert slope <= 5 * stderr or slope * 1e4 <= floor, (epsilon, name)
        for epsilon in (0.0, 1e-2):
            rk4 = rows[(epsilon, "rk4")]
            assert any(abs(rk4.slope[name]) > 5 * rk4.slope_stderr[name] for name in rk4.slope)

    def test_non_reversible_perturbation_is_flagged(self, contact_spec):
        """可逆性のない G では参照解でも永年的なドリフトが出る"""
        result = kam_scan(
            contact_spec, ["mixed_nonreversible"], [0.0, 1e-2], ["reference"], T=1e4, seeds=[0, 1, 2],
            sample_dt=1.0, threads=2,
        )
        perturbed = [row for row in result.rows if row.epsilon == 1e-2]
        assert len(perturbed) == 3
        assert any(row.verdict == "secular" for row in perturbed)
