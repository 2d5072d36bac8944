"""
Unit tests for the free-fermion TFIM ramp simulator.
"""
import math

import numpy as np
import pytest
from scipy.linalg import expm

from kzcoarsen import tfim1d
from kzcoarsen.models import ChainSpec, PreconditionError

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)


class TestTwoLevelAlgebra:
    """Test the per-mode two-level helpers."""

    @pytest.mark.parametrize('g', [-3.0, -0.5, 0.0, 0.4, 1.0, 1.9])
    def test_ground_state_is_eigenvector(self, g):
        """Test (u, v) is the lower eigenvector of a tau^z + b tau^x."""
        k = np.linspace(0.05, math.pi - 0.05, 9)
        u, v = tfim1d.ground_state(k, g)
        a, b = tfim1d.mode_coefficients(k, g)
        energy = np.hypot(a, b)
        hu = a * u + b * v
        hv = b * u - a * v
        np.testing.assert_allclose(hu, -energy * u, atol=1e-12)
        np.testing.assert_allclose(hv, -energy * v, atol=1e-12)
        np.testing.assert_allclose(np.abs(u) ** 2 + np.abs(v) ** 2, 1.0, atol=1e-14)

    def test_excitation_probability_extremes(self):
        """Test the ground state has p = 0 and the excited state p = 1."""
        k = np.array([0.3, 1.2, 2.5])
        u, v = tfim1d.ground_state(k, 0.2)
        eu, ev = tfim1d.excited_state(k, 0.2)
        np.testing.assert_allclose(tfim1d.excitation_probability(k, 0.2, u, v), 0.0, atol=1e-14)
        np.testing.assert_allclose(tfim1d.excitation_probability(k, 0.2, eu, ev), 1.0, atol=1e-14)

    def test_exponential_matches_expm(self, rng):
        """Test the closed-form SU(2) exponential against scipy expm."""
        for _ in range(5):
            mz, mx, my = rng.normal(size=3)
            psi = rng.normal(size=2) + 1j * rng.normal(size=2)
            expected = expm(-1j * (mz * SIGMA_Z + mx * SIGMA_X + my * SIGMA_Y)) @ psi
            u, v = tfim1d._apply_exponential(mz, mx, my, psi[0], psi[1])
            np.testing.assert_allclose([u, v], expected, atol=1e-12)

    def test_exponential_of_zero(self):
        """Test a vanishing generator is the identity."""
        u, v = tfim1d._apply_exponential(0.0, 0.0, 0.0, 0.6 + 0j, 0.8j)
        assert complex(u) == pytest.approx(0.6)
        assert complex(v) == pytest.approx(0.8j)


class TestEndpoints:
    """Test ramp endpoint defaults and guards."""

    def test_default_endpoints(self):
        """Test g_start = -max(10 g_KZ, 1) and g_end = 1."""
        assert tfim1d.resolve_endpoints(ChainSpec(L=64, tau=100.0)) == (-1.0, 1.0)
        g_start, _ = tfim1d.resolve_endpoints(ChainSpec(L=64, tau=4.0))
        assert g_start == pytest.approx(-5.0)

    def test_second_transition_rejected(self):
        """Test ramps past g = 2 are rejected."""
        with pytest.raises(PreconditionError):
            tfim1d.resolve_endpoints(ChainSpec(L=64, tau=10.0, g_end=2.5))

    def test_chain_length_guard(self):
        """Test odd or tiny chains are rejected."""
        with pytest.raises(PreconditionError):
            ChainSpec(L=15, tau=10.0)
        with pytest.raises(PreconditionError):
            ChainSpec(L=4, tau=10.0)

    def test_momenta(self):
        """Test the even-parity momenta k = pi(2n-1)/L."""
        k = ChainSpec(L=8, tau=1.0).momenta
        np.testing.assert_allclose(k, np.pi * np.array([1, 3, 5, 7]) / 8)

    def test_time_inverse(self):
        """Test time_of inverts g_of."""
        for g in (-2.0, -0.3, 0.7):
            assert tfim1d.g_of(tfim1d.time_of(g, 50.0, 2.0), 50.0, 2.0) == pytest.approx(g)


class TestModeEvolution:
    """Test single-mode integration."""

    def test_k_range(self):
        """Test momenta outside (0, pi) are rejected."""
        spec = ChainSpec(L=64, tau=10.0)
        with pytest.raises(PreconditionError):
            tfim1d.mode_evolve(spec, 0.0)
        with pytest.raises(PreconditionError):
            tfim1d.mode_evolve(spec, math.pi)

    def test_landau_zener(self):
        """Test slow-mode excitations follow exp(-2 pi tau k^2)."""
        tau = 100.0
        spec = ChainSpec(L=64, tau=tau)
        k = np.linspace(0.01, 0.05, 8)
        p_k = np.array([tfim1d.mode_evolve(spec, kk) for kk in k])
        slope, intercept = np.polyfit(tau * k ** 2, np.log(p_k), 1)
        predicted = slope * tau * k ** 2 + intercept
        ss_res = np.sum((np.log(p_k) - predicted) ** 2)
        ss_tot = np.sum((np.log(p_k) - np.log(p_k).mean()) ** 2)
        assert 1 - ss_res / ss_tot > 0.999
        assert slope == pytest.approx(-2 * math.pi, rel=0.05)

    def test_adiabatic_high_k(self):
        """Test modes far from the gap minimum stay in the ground state."""
        assert tfim1d.mode_evolve(ChainSpec(L=64, tau=100.0), 2.5) < 1e-6


class TestRampSimulate:
    """Test the full-chain ramp."""

    def test_norm_conserved(self):
        """Test the unitary integrator keeps every mode normalized."""
        result = tfim1d.ramp_simulate(ChainSpec(L=32, tau=5.0))
        assert result.norm_drift < 1e-9

    def test_density_and_track(self):
        """Test the kink density is (2/L) sum p_k and the track ends on it."""
        result = tfim1d.ramp_simulate(ChainSpec(L=32, tau=5.0), n_checkpoints=8)
        assert result.n == pytest.approx(2.0 * result.p_k.sum() / 32)
        assert result.n_track.shape == (8,)
        assert result.n_track[-1] == pytest.approx(result.n)
        assert result.g_values[-1] == pytest.approx(1.0)
        assert 0 < result.n < 1
        assert result.ell == pytest.approx(1.0 / result.n)

    def test_slower_ramp_fewer_kinks(self):
        """Test a slower ramp leaves fewer kinks."""
        fast = tfim1d.ramp_simulate(ChainSpec(L=32, tau=2.0))
        slow = tfim1d.ramp_simulate(ChainSpec(L=32, tau=8.0))
        assert slow.n < fast.n

    def test_threads_do_not_change_result(self):
        """Test threaded batches give bit-identical densities."""
        spec = ChainSpec(L=256, tau=2.0)
        single = tfim1d.ramp_simulate(spec, threads=1, n_checkpoints=4)
        threaded = tfim1d.ramp_simulate(spec, threads=2, n_checkpoints=4)
        assert single.n == threaded.n
        np.testing.assert_array_equal(single.p_k, threaded.p_k)

    def test_sweep_needs_three_taus(self):
        """Test a tau sweep needs at least three ramp times."""
        with pytest.raises(PreconditionError):
            tfim1d.tau_sweep(ChainSpec(L=32, tau=1.0), [2.0, 4.0])


@pytest.mark.slow
class TestKibbleZurekAcceptance:
    """Acceptance runs for the defect-density exponent."""

    def test_linear_ramp_exponent(self):
        """Test n ~ tau^-1/2 for a linear ramp on L = 512."""
        _, fit = tfim1d.tau_sweep(ChainSpec(L=512, tau=25.0), [25, 50, 100, 200, 400], threads=4)
        assert fit.exponent == pytest.approx(-0.5, abs=0.03)

    def test_quadratic_ramp_exponent(self):
        """Test n ~ tau^-2/3 for a p = 2 ramp."""
        _, fit = tfim1d.tau_sweep(ChainSpec(L=512, tau=25.0, p=2.0), [25, 50, 100, 200, 400], threads=4)
        assert fit.exponent == pytest.approx(-2.0 / 3.0, abs=0.05)
