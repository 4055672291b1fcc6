"""
系の定義・拘束の幾何・カタログのテスト
"""
import math

import numpy as np
import pytest

from error_handling import ConstraintViolation, DomainViolation, InvalidParameter
from model import (
    PERTURBATIONS,
    FullState,
    Params,
    ReducedState,
    SystemSpec,
    alpha1,
    alpha2,
    check_derivatives,
    constraint_residual,
    coupling_cvt,
    coupling_defect,
    coupling_polynomial,
    coupling_zero,
    embed,
    get_perturbation,
    get_preset,
    hamiltonian,
    make_coupling,
    make_subsystem,
    perturbation_defect,
    project,
    reversal_full,
    reversal_reduced,
    reversibility_defect_of_subsystem,
    skew_coordinates,
    subsystem_defect,
    subsystem_harmonic,
    subsystem_polynomial,
    subsystem_quartic,
)


def _decoupled_with_mass(m1):
    return SystemSpec(Params(m1=m1), coupling_zero(), subsystem_harmonic(), label="decoupled-m")


@pytest.mark.unit
class TestParams:
    """質量・ばね定数の検証"""

    def test_defaults_are_unit(self):
        p = Params()
        assert (p.m1, p.m2, p.k1, p.k2) == (1.0, 1.0, 1.0, 1.0)

    @pytest.mark.parametrize("field", ["m1", "m2", "k1", "k2"])
    def test_non_positive_rejected(self, field):
        """負またはゼロの値は不変条件の名前付きで拒否される"""
        with pytest.raises(InvalidParameter) as excinfo:
            Params(**{field: -1.0})
        assert f"{field} > 0" == excinfo.value.context["invariant"]

    def test_epsilon_without_perturbation_rejected(self, contact_spec):
        with pytest.raises(InvalidParameter):
            SystemSpec(contact_spec.params, contact_spec.coupling, contact_spec.subsystem, epsilon=0.1)

    def test_negative_epsilon_rejected(self, contact_spec):
        with pytest.raises(InvalidParameter):
            contact_spec.with_perturbation(get_perturbation("q1_quartic"), -1e-3)


@pytest.mark.unit
class TestAlpha:
    """α₁, α₂ の値と恒等式"""

    def test_decoupled_alpha1_is_sqrt_mass(self):
        spec = _decoupled_with_mass(2.0)
        for q3 in (-3.0, 0.0, 5.0):
            assert alpha1(spec, q3) == pytest.approx(math.sqrt(2.0), abs=1e-15)
            assert alpha2(spec, q3) == 0.0

    def test_contact_values(self, contact_spec):
        assert alpha1(contact_spec, 0.0) == 1.0
        assert alpha1(contact_spec, 1.0) == pytest.approx(1 / math.sqrt(2), abs=1e-15)
        assert alpha2(contact_spec, 1.0) == pytest.approx(-1 / math.sqrt(2), abs=1e-15)
        assert alpha2(contact_spec, -2.0) == pytest.approx(0.8944271909999159, abs=1e-15)

    def test_normalisation_and_constraint(self):
        spec = SystemSpec(Params(m1=2.0, m2=0.5, k1=3.0, k2=1.5), coupling_polynomial([0.1, 1.0, -0.3]),
                          subsystem_harmonic(), label="general")
        for q3 in np.linspace(-2.0, 2.0, 9):
            a1, a2 = alpha1(spec, q3), alpha2(spec, q3)
            f = spec.coupling.value(q3)
            assert a1 > 0
            assert a1 ** 2 / 2.0 + a2 ** 2 / 0.5 == pytest.approx(1.0, abs=1e-14)
            assert f * a1 / 2.0 + a2 / 0.5 == pytest.approx(0.0, abs=1e-14)

    @pytest.mark.parametrize("preset", ["contact_spec", "cvt_spec"])
    def test_derivative_identity(self, preset, request):
        """α₁α₁'/m₁ + α₂α₂'/m₂ = 0（中心差分）"""
        spec = request.getfixturevalue(preset)
        dq = 1e-5
        for q3 in np.linspace(-0.8, 0.8, 9):
            d1 = (alpha1(spec, q3 + dq) - alpha1(spec, q3 - dq)) / (2 * dq)
            d2 = (alpha2(spec, q3 + dq) - alpha2(spec, q3 - dq)) / (2 * dq)
            identity = alpha1(spec, q3) * d1 / spec.params.m1 + alpha2(spec, q3) * d2 / spec.params.m2
            assert abs(identity) < 1e-6

    def test_cvt_outside_domain(self, cvt_spec):
        with pytest.raises(DomainViolation):
            alpha1(cvt_spec, 1.0)
        with pytest.raises(DomainViolation):
            coupling_cvt().value(1.5)


@pytest.mark.unit
class TestChart:
    """embed / project と拘束残差"""

    def test_embed_examples(self, contact_spec):
        assert embed(contact_spec, (0, 0, 0, 1, 0)) == FullState(0, 0, 0, 1, 0, 0)
        full = embed(contact_spec, ReducedState(1, 1, 1, math.sqrt(2), 0))
        assert full.p1 == pytest.approx(1.0, abs=1e-15)
        assert full.p2 == pytest.approx(-1.0, abs=1e-15)

    def test_embed_with_mass(self):
        full = embed(_decoupled_with_mass(4.0), (0, 0, 5, 1, 0))
        assert (full.p1, full.p2) == (pytest.approx(2.0), 0.0)

    def test_project_examples(self, contact_spec):
        assert project(contact_spec, FullState(0, 0, 0, 1, 0, 0)) == ReducedState(0, 0, 0, 1, 0)
        reduced = project(contact_spec, FullState(1, 1, 1, 1, -1, 0))
        assert reduced.p == pytest.approx(math.sqrt(2), abs=1e-15)

    def test_project_off_manifold(self, contact_spec):
        with pytest.raises(ConstraintViolation):
            project(contact_spec, FullState(0, 0, 0, 1, 1, 0), tol=1e-10)

    def test_project_inverts_embed(self, cvt_spec):
        rng = np.random.default_rng(3)
        for _ in range(20):
            s = rng.uniform(-0.9, 0.9, size=5)
            np.testing.assert_allclose(project(cvt_spec, embed(cvt_spec, s)).as_array(), s, atol=1e-14)

    def test_constraint_residual(self, contact_spec):
        assert constraint_residual(contact_spec, (0, 0, 0, 1, 0, 0)) == 0.0
        assert constraint_residual(contact_spec, (0, 0, 1, 1, 0, 0)) == 1.0
        assert constraint_residual(contact_spec, (0, 0, 1, 1, -1, 0)) == 0.0


@pytest.mark.unit
class TestHamiltonian:
    """H_ε と歪座標"""

    def test_examples(self, contact_spec):
        assert hamiltonian(contact_spec, (1, 0, 0, 0, 0, 0)) == 0.5
        assert hamiltonian(contact_spec, (0, 0, 0, 1, 0, 1)) == 1.0
        perturbed = contact_spec.with_perturbation(get_perturbation("q1_quartic"), 0.01)
        assert hamiltonian(perturbed, (1, 0, 0, 0, 0, 0)) == pytest.approx(0.51, abs=1e-15)

    def test_skew_norm_matches_quadratic_part(self):
        spec = SystemSpec(Params(m1=1.5, m2=0.7, k1=2.0, k2=3.0), coupling_polynomial([0.0, 1.0]),
                          subsystem_harmonic(), label="general")
        rng = np.random.default_rng(11)
        for _ in range(10):
            s = rng.uniform(-1, 1, size=5)
            u = skew_coordinates(spec, s)
            expected = 0.5 * u @ u + spec.subsystem.energy(s[2], s[4])
            assert hamiltonian(spec, embed(spec, s)) == pytest.approx(expected, abs=1e-13)


@pytest.mark.unit
class TestReversal:

    def test_full(self):
        assert reversal_full((1, 2, 3, 4, 5, 6)) == FullState(1, 2, 3, -4, -5, -6)
        assert reversal_full((1, 2, 3, 0, 0, 0)) == FullState(1, 2, 3, 0, 0, 0)

    def test_reduced(self):
        assert reversal_reduced((1, 2, 3, 4, 5)) == ReducedState(1, 2, 3, -4, -5)

    def test_hamiltonian_is_even_in_momenta(self, contact_spec, cvt_spec):
        rng = np.random.default_rng(5)
        specs = [contact_spec, cvt_spec]
        specs += [contact_spec.with_perturbation(pert, 1e-2) for pert in PERTURBATIONS.values()
                  if pert is not None and pert.reversible_flag]
        for spec in specs:
            for _ in range(10):
                x = rng.uniform(-0.9, 0.9, size=6)
                assert hamiltonian(spec, reversal_full(x)) == pytest.approx(hamiltonian(spec, x), abs=1e-15)


@pytest.mark.unit
class TestCatalogue:
    """カタログの導関数の整合性"""

    def test_check_derivatives_detects_wrong_gradient(self):
        assert check_derivatives(lambda x: x[0] ** 2, lambda x: np.array([2 * x[0]]), [[1.0], [2.0]]) < 1e-8
        assert check_derivatives(lambda x: x[0] ** 2, lambda x: np.array([x[0]]), [[1.0]]) > 0.1

    def test_couplings(self):
        points = [-0.5, 0.0, 0.3, 0.8]
        for kind, coefficients in (("linear", ()), ("cvt", ()), ("zero", ()), ("polynomial", (0.5, -1.0, 2.0))):
            assert coupling_defect(make_coupling(kind, coefficients), points) < 1e-8

    def test_subsystems(self):
        points = [(-1.0, 0.5), (0.2, -0.3), (1.5, 1.0)]
        for subsystem in (subsystem_harmonic(2.0, 0.5), subsystem_quartic(), subsystem_polynomial([0.0, 0.0, 0.5, 0.1])):
            assert subsystem_defect(subsystem, points) < 1e-8
            assert reversibility_defect_of_subsystem(subsystem, points) == 0.0

    def test_perturbations(self):
        rng = np.random.default_rng(0)
        points = [rng.uniform(-1, 1, size=6) for _ in range(5)]
        for name, pert in PERTURBATIONS.items():
            if pert is None:
                continue
            assert perturbation_defect(pert, points) < 1e-8, name
            x = points[0]
            flipped = np.concatenate([x[:3], -x[3:]])
            assert (pert.G(flipped) == pert.G(x)) == pert.reversible_flag, name

    def test_unknown_names(self):
        with pytest.raises(InvalidParameter):
            get_preset("pendulum")
        with pytest.raises(InvalidParameter):
            get_perturbation("cubic")
        with pytest.raises(InvalidParameter):
            make_subsystem("polynomial")
