"""
Unit tests for the scaling core.
Tests KZ scales, growth exponents, scaling functions and case labels.
"""
import json
import math

import numpy as np
import pytest

from kzcoarsen import scaling
from kzcoarsen.models import (
    CoarseningCase,
    CriticalDivergence,
    CriticalExponents,
    GrowthRegime,
    MicroScales,
    PreconditionError,
    RampProtocol,
    ScalingModel,
)

TAU = 1000.0


def stop_at(exponents, x_s, tau=TAU, p=1.0):
    """Protocol whose stop lands at scaled time x_s, with its KZ scales."""
    kz = scaling.kz_scales(exponents, MicroScales(), RampProtocol(tau=tau, p=p))
    g_s = math.copysign(abs(x_s * kz.t_kz / tau) ** p, x_s)
    return RampProtocol(tau=tau, p=p, g_s=g_s), kz


class TestRegistry:
    """Test the exponent registry."""

    def test_default_registry_classes(self, registry):
        """Test the bundled registry carries the three Ising classes."""
        assert {'ising-2+1d', 'ising-2d-classical', 'ising-1+1d'} <= set(registry)
        assert registry['ising-2+1d'].nu == pytest.approx(0.629)

    def test_unknown_class(self, registry):
        """Test an unknown class name is rejected."""
        with pytest.raises(PreconditionError):
            scaling.get_exponents('potts-3', registry)

    def test_unknown_key_rejected(self, tmp_path):
        """Test registry entries with unknown keys are rejected."""
        path = tmp_path / 'registry.json'
        path.write_text(json.dumps({'bad': {'nu': 1, 'z': 1, 'nu_bar': 1, 'z_bar': 2, 'z_d': 2, 'd': 2, 'eta': 0.1}}))
        with pytest.raises(PreconditionError):
            scaling.load_registry(str(path))

    def test_invalid_exponent(self):
        """Test non-positive exponents are rejected at construction."""
        with pytest.raises(PreconditionError):
            CriticalExponents(nu=0.0, z=1, nu_bar=1, z_bar=2, z_d=2, d=2)


class TestKzScales:
    """Test freeze-out scales."""

    def test_power_laws(self, quantum_ising, micro):
        """Test t_KZ and xi_KZ scale as tau^(nu z/(nu z+1)) and tau^(nu/(nu z+1))."""
        kz = scaling.kz_scales(quantum_ising, micro, RampProtocol(tau=TAU))
        assert kz.t_kz == pytest.approx(TAU ** (0.629 / 1.629))
        assert kz.xi_kz == pytest.approx(TAU ** (0.629 / 1.629))

    @pytest.mark.parametrize('p', [1.0, 2.0, 3.0])
    def test_ramp_reaches_g_kz_at_t_kz(self, quantum_ising, micro, p):
        """Test g(t_KZ) equals g_KZ for every sweep power."""
        protocol = RampProtocol(tau=TAU, p=p)
        kz = scaling.kz_scales(quantum_ising, micro, protocol)
        assert scaling.ramp_g(protocol, kz.t_kz) == pytest.approx(kz.g_kz, rel=1e-12)

    def test_tau_below_t0(self, quantum_ising):
        """Test ramps faster than the microscopic time are rejected."""
        with pytest.raises(PreconditionError):
            scaling.kz_scales(quantum_ising, MicroScales(t0=10.0), RampProtocol(tau=5.0))

    def test_excess_energy(self, quantum_ising, micro):
        """Test the excess energy density is xi_KZ^-(d+z)."""
        kz = scaling.kz_scales(quantum_ising, micro, RampProtocol(tau=TAU))
        assert scaling.excess_energy_scale(quantum_ising, kz) == pytest.approx(kz.xi_kz ** -3.0)

    def test_units(self, quantum_ising):
        """Test lengths and times carry the microscopic units."""
        base = scaling.kz_scales(quantum_ising, MicroScales(), RampProtocol(tau=TAU))
        scaled = scaling.kz_scales(quantum_ising, MicroScales(l0=2.0, t0=1.0), RampProtocol(tau=TAU))
        assert scaled.xi_kz == pytest.approx(2.0 * base.xi_kz)
        assert scaled.g_kz == pytest.approx(base.g_kz)


class TestGrowthExponent:
    """Test the steady-ramp coarsening exponent."""

    def test_linear_ramp(self, quantum_ising):
        """Test p = 1 gives 0.1855 for the (2+1)D Ising class."""
        value, regime = scaling.growth_exponent(quantum_ising, 1.0)
        assert value == pytest.approx(0.1855, abs=1e-4)
        assert regime is GrowthRegime.GROWING

    def test_cubic_ramp(self, quantum_ising):
        """Test p = 3 gives -0.444 and a bounded regime."""
        value, regime = scaling.growth_exponent(quantum_ising, 3.0)
        assert value == pytest.approx(-0.444, abs=1e-3)
        assert regime is GrowthRegime.BOUNDED

    def test_logarithmic(self, chain_ising):
        """Test a vanishing exponent is flagged logarithmic."""
        value, regime = scaling.growth_exponent(chain_ising, 1.0)
        assert value == pytest.approx(0.0, abs=1e-12)
        assert regime is GrowthRegime.LOGARITHMIC

    def test_quantum_critical_factor(self, quantum_ising):
        """Test the fan crossing factor is f(+1)/f(-1)."""
        model = ScalingModel(quantum_ising, {'adiabatic': 0.5, 'coarsening': 2.0})
        assert scaling.quantum_critical_factor(model) == pytest.approx(4.0)


class TestScalingFunctionF:
    """Test the steady-ramp scaling function."""

    @pytest.mark.parametrize('x0', [-1.0, 0.0, 1.0])
    def test_continuity(self, quantum_ising, x0):
        """Test f is continuous at the regime boundaries."""
        model = ScalingModel(quantum_ising, {'adiabatic': 0.7, 'plateau': 1.3, 'coarsening': 2.1})
        eps = 1e-9
        assert scaling.eval_f(model, x0 - eps) == pytest.approx(scaling.eval_f(model, x0 + eps), rel=1e-6)

    def test_adiabatic_branch(self, model):
        """Test f follows |x|^-nu before freeze-out."""
        assert scaling.eval_f(model, -8.0) == pytest.approx(8.0 ** -0.629)

    def test_monotone_when_growing(self, model):
        """Test f increases past x = 1 in the growing regime."""
        values = [scaling.eval_f(model, x) for x in np.geomspace(1.0, 1e4, 50)]
        assert np.all(np.diff(values) > 0)
        assert values[-1] == pytest.approx(1e4 ** 0.1855, rel=1e-3)

    def test_bounded_saturates(self, model):
        """Test the bounded regime approaches f(+1) + saturation from below."""
        values = [scaling.eval_f(model, x, p=3.0) for x in np.geomspace(1.0, 1e8, 40)]
        assert np.all(np.diff(values) >= 0)
        assert values[-1] < 2.0
        assert values[-1] == pytest.approx(2.0, abs=1e-3)

    def test_logarithmic_growth(self, chain_ising):
        """Test the zero-exponent regime grows like log x."""
        model = ScalingModel(chain_ising)
        assert scaling.eval_f(model, math.e ** 2) == pytest.approx(3.0)

    def test_nan_rejected(self, model):
        """Test NaN input is rejected."""
        with pytest.raises(PreconditionError):
            scaling.eval_f(model, float('nan'))


class TestStoppedScalingFunction:
    """Test the stopped-ramp scaling function F(x, x_s)."""

    @pytest.mark.parametrize('x_s', [-3.0, -0.5, 0.5, 2.0, 10.0])
    def test_matches_f_before_stop(self, model, x_s):
        """Test F equals f for x <= x_s."""
        for x in np.linspace(-5.0, x_s, 17):
            assert scaling.eval_F(model, x, x_s) == scaling.eval_f(model, x)

    def test_indefinite(self, model):
        """Test x_s = None reproduces f everywhere."""
        assert scaling.eval_F(model, 50.0, None) == scaling.eval_f(model, 50.0)

    def test_adiabatic_stop_is_frozen(self, model):
        """Test a stop before freeze-out keeps the length fixed."""
        assert scaling.eval_F(model, 100.0, -2.0) == pytest.approx(scaling.eval_f(model, -2.0))

    @pytest.mark.parametrize('x_s', [1.5, 4.0, 20.0])
    def test_noncritical_continuity_and_growth(self, model, x_s):
        """Test post-stop coarsening starts from f(x_s) and keeps growing."""
        F_s = scaling.eval_f(model, x_s)
        assert scaling.eval_F(model, x_s * (1 + 1e-10), x_s) == pytest.approx(F_s, rel=1e-6)
        values = [scaling.eval_F(model, x, x_s) for x in np.geomspace(x_s, 1e3 * x_s, 30)[1:]]
        assert np.all(np.diff(values) > 0)

    def test_noncritical_late_exponent(self, model):
        """Test late post-stop growth follows x^(1/z_d)."""
        a = scaling.eval_F(model, 1e8, 2.0)
        b = scaling.eval_F(model, 1e9, 2.0)
        assert math.log10(b / a) == pytest.approx(0.5, abs=1e-3)

    def test_early_stop_plateau(self, model):
        """Test a stop inside the fan holds f(x_s) until x = 1, then grows."""
        F_s = scaling.eval_f(model, 0.5)
        assert scaling.eval_F(model, 0.9, 0.5) == pytest.approx(F_s)
        assert scaling.eval_F(model, 4.0, 0.5) == pytest.approx(F_s * 2.0)

    def test_classical_interlude_continuity(self, model_with_line):
        """Test F is continuous across the classical critical interval."""
        x_s = 3.5
        x_star = scaling.crossover_xstar(model_with_line, x_s)
        assert x_star > x_s
        for boundary in (x_s, x_star):
            left = scaling.eval_F(model_with_line, boundary * (1 - 1e-10), x_s)
            right = scaling.eval_F(model_with_line, boundary * (1 + 1e-10), x_s)
            assert left == pytest.approx(right, rel=1e-6)

    def test_disordered_stop_saturates(self, model_with_line):
        """Test a stop on the disordered side stops growing after x*."""
        x_s = 2.5
        x_star = scaling.crossover_xstar(model_with_line, x_s)
        late = scaling.eval_F(model_with_line, 10 * x_star, x_s)
        assert late == pytest.approx(scaling.eval_F(model_with_line, 2 * x_star, x_s))
        assert late > scaling.eval_f(model_with_line, x_s)


class TestCrossoverAndH:
    """Test x* and the thermal scaling function."""

    def test_xstar_diverges_at_line(self, model_with_line):
        """Test x* is infinite exactly on the classical line."""
        assert scaling.crossover_xstar(model_with_line, 3.0) == math.inf

    def test_xstar_power(self, model_with_line):
        """Test x* ~ |x_s - x_c|^(-nu_bar z_bar)."""
        assert scaling.crossover_xstar(model_with_line, 3.5) == pytest.approx(0.5 ** -2.17)

    def test_xstar_needs_line(self, model):
        """Test x* requires x_c."""
        with pytest.raises(PreconditionError):
            scaling.crossover_xstar(model, 1.0)

    def test_h_diverges_only_at_yc(self, model_with_line):
        """Test h is finite and positive away from y_c and raises on it."""
        for y in np.linspace(-10.0, 10.0, 41):
            if y == 3.0:
                continue
            value = scaling.eval_h(model_with_line, y)
            assert math.isfinite(value) and value > 0
        with pytest.raises(CriticalDivergence):
            scaling.eval_h(model_with_line, 3.0)

    def test_h_grows_towards_yc(self, model_with_line):
        """Test h increases on approach to the classical line."""
        assert scaling.eval_h(model_with_line, 2.999) > scaling.eval_h(model_with_line, 2.9)


class TestClassifyCase:
    """Test coarsening case labels."""

    def test_indefinite_ramp(self, quantum_ising, model_with_line):
        """Test a ramp that never stops is Case 1."""
        protocol = RampProtocol(tau=TAU)
        kz = scaling.kz_scales(quantum_ising, MicroScales(), protocol)
        assert scaling.classify_case(protocol, kz, model_with_line, 'ordered') is CoarseningCase.CASE1_QC_NONCRITICAL

    @pytest.mark.parametrize('x_s,side,expected', [
        (5.0, 'ordered', CoarseningCase.CASE1_QC_NONCRITICAL),
        (3.5, 'ordered', CoarseningCase.CASE2_QC_CLASSICAL_CRITICAL_NONCRITICAL),
        (3.0, 'critical', CoarseningCase.CASE3_QC_CLASSICAL_CRITICAL),
        (2.5, 'disordered', CoarseningCase.CASE4_QC_CLASSICAL_CRITICAL_DISORDERED),
        (0.5, 'disordered', CoarseningCase.CASE5_QC_DISORDERED),
        (-2.0, 'disordered', CoarseningCase.ADIABATIC),
    ])
    def test_cases(self, quantum_ising, model_with_line, x_s, side, expected):
        """Test representative stops land in each case."""
        protocol, kz = stop_at(quantum_ising, x_s)
        assert scaling.classify_case(protocol, kz, model_with_line, side) is expected

    def test_without_line(self, quantum_ising, model):
        """Test an unknown classical line gives Case 1 or Case 5."""
        protocol, kz = stop_at(quantum_ising, 2.0)
        assert scaling.classify_case(protocol, kz, model, 'ordered') is CoarseningCase.CASE1_QC_NONCRITICAL
        assert scaling.classify_case(protocol, kz, model, 'disordered') is CoarseningCase.CASE5_QC_DISORDERED

    def test_contradiction(self, quantum_ising, model_with_line):
        """Test an ordered label before x_c is rejected."""
        protocol, kz = stop_at(quantum_ising, 1.0)
        with pytest.raises(PreconditionError):
            scaling.classify_case(protocol, kz, model_with_line, 'ordered')

    def test_bad_side(self, quantum_ising, model):
        """Test an unknown side label is rejected."""
        protocol, kz = stop_at(quantum_ising, 2.0)
        with pytest.raises(PreconditionError):
            scaling.classify_case(protocol, kz, model, 'sideways')


class TestGrowthLaw:
    """Test the growth ODE and the hold law."""

    def test_hold_length_starts_at_stop(self):
        """Test the hold law returns l(t_s) at t_s."""
        assert scaling.hold_length(3.0, 10.0, 10.0, 2.0, 0.5, 2.0) == pytest.approx(3.0)

    def test_hold_length_diffusive(self):
        """Test the hold law grows like t^(1/z_d) late."""
        a = scaling.hold_length(1.0, 1e8, 0.0, 1.0, 1.0, 2.0)
        b = scaling.hold_length(1.0, 1e10, 0.0, 1.0, 1.0, 2.0)
        assert b / a == pytest.approx(10.0, rel=1e-6)

    def test_integrated_slope_matches_exponent(self, quantum_ising):
        """Test the integrated growth law reproduces the growth exponent."""
        t, ell = scaling.integrate_growth(quantum_ising, RampProtocol(tau=100.0), 1.0, 1e8, 1.0)
        tail = slice(int(0.8 * t.size), None)
        slope = np.polyfit(np.log(t[tail]), np.log(ell[tail]), 1)[0]
        assert slope == pytest.approx(0.1855, abs=5e-3)

    def test_integration_after_stop(self, quantum_ising):
        """Test growth after a stop becomes diffusive."""
        protocol = RampProtocol(tau=100.0, g_s=0.5)
        t, ell = scaling.integrate_growth(quantum_ising, protocol, 1.0, 1e9, 1.0)
        tail = slice(int(0.8 * t.size), None)
        slope = np.polyfit(np.log(t[tail]), np.log(ell[tail]), 1)[0]
        assert slope == pytest.approx(0.5, abs=5e-3)

    def test_bad_interval(self, quantum_ising):
        """Test the integration window must lie at positive times."""
        with pytest.raises(PreconditionError):
            scaling.integrate_growth(quantum_ising, RampProtocol(tau=100.0), -1.0, 10.0, 1.0)
