"""
Unit tests for the measurement layer: correlation lengths, defect densities,
power-law fits and scaling collapse.
"""
import math

import numpy as np
import pytest

from kzcoarsen import estimators
from kzcoarsen.models import NonOverlapError, PreconditionError, ScalingModel, UnresolvableLength
from kzcoarsen.scaling import eval_f, kz_exponents


def ornstein_zernike_field(side, xi, rng):
    """Real field whose structure factor is exactly 1/(1 + xi^2 q^2)."""
    q = 2.0 * np.pi * np.fft.fftfreq(side)
    q2 = q[:, np.newaxis] ** 2 + q[np.newaxis, :] ** 2
    spectrum = 1.0 / (1.0 + xi ** 2 * q2)
    noise = np.fft.fft2(rng.normal(size=(side, side)))
    phases = noise / np.abs(noise)
    return np.real(np.fft.ifft2(np.sqrt(side * side * spectrum) * phases))


def collapse_family(model, alpha, taus=(10.0, 100.0, 1000.0)):
    x = np.geomspace(0.05, 100.0, 40)
    f = np.array([eval_f(model, value) for value in x])
    return [(tau, tau ** alpha * x, tau ** alpha * f) for tau in taus]


@pytest.fixture
def master(quantum_ising):
    """Steady-ramp scaling function with a rising plateau-to-coarsening branch."""
    return ScalingModel(quantum_ising, amplitudes={'coarsening': 2.0})


class TestCorrelationLength:
    """Test the second-moment correlation length."""

    def test_imposed_length(self, rng):
        """Test a field with an imposed length of 8 on 256^2 is read back."""
        field = ornstein_zernike_field(256, 8.0, rng)
        assert estimators.second_moment_xi(field) == pytest.approx(8.0, rel=0.05)

    def test_staggered_channel(self, rng):
        """Test the staggered channel reads the same length off a staggered field."""
        field = ornstein_zernike_field(64, 4.0, rng)
        r, c = np.indices(field.shape)
        staggered = field * np.where((r + c) % 2 == 0, 1.0, -1.0)
        assert estimators.second_moment_xi(staggered, 'staggered') == pytest.approx(4.0, rel=1e-6)

    def test_uncorrelated_snapshots(self, rng):
        """Test random +-1 snapshots have xi below one lattice spacing."""
        snapshots = rng.choice(np.array([-1, 1]), size=(1000, 16, 16))
        assert estimators.second_moment_xi(snapshots) < 1.0

    def test_uncorrelated_small_ensemble(self):
        """Test a few random +-1 snapshots on a large lattice stay below one lattice spacing."""
        resolved = 0
        for seed in range(10):
            snapshots = np.random.default_rng(seed).choice(np.array([-1, 1]), size=(4, 64, 64))
            try:
                resolved += estimators.second_moment_xi(snapshots) < 1.0
            except UnresolvableLength:
                pass
        assert resolved >= 8

    def test_uncorrelated_single_snapshot_never_deficient(self):
        """Test a deficit of S(0) in a single random snapshot reads as a flat field."""
        for seed in range(10):
            snapshot = np.random.default_rng(seed).choice(np.array([-1, 1]), size=(128, 128))
            S = estimators.structure_factor(snapshot).S
            if S[0, 0] < 0.5 * (S[0, 1] + S[1, 0]):
                assert estimators.second_moment_xi(snapshot) == 0.0

    def test_noise_floor_tracks_ensemble(self):
        """Test the per-mode scatter falls as the ensemble grows."""
        rng = np.random.default_rng(11)
        small = estimators.structure_factor(rng.choice(np.array([-1, 1]), size=(2, 64, 64))).S
        large = estimators.structure_factor(rng.choice(np.array([-1, 1]), size=(200, 64, 64))).S
        assert estimators._mode_scatter(large, 200) < 0.1 * estimators._mode_scatter(small, 2)

    def test_noise_free_field_has_no_scatter(self, rng):
        """Test a field with exact shell amplitudes has no per-mode scatter."""
        S = estimators.structure_factor(ornstein_zernike_field(64, 4.0, rng)).S
        assert estimators._mode_scatter(S, 1) == pytest.approx(0.0, abs=1e-12)

    def test_density_matches_spin(self, rng):
        """Test occupations in [0, 1] are mapped onto +-1 fields."""
        spins = rng.choice(np.array([-1, 1]), size=(400, 16, 16))
        occupations = (spins + 1) // 2
        assert estimators.second_moment_xi(occupations, field_kind='density') == pytest.approx(
            estimators.second_moment_xi(spins))

    def test_saturated_peak(self):
        """Test a uniform configuration has no resolvable length."""
        with pytest.raises(UnresolvableLength):
            estimators.second_moment_xi(np.ones((16, 16)))

    def test_small_lattice(self, rng):
        """Test lattices below the minimum side are refused."""
        with pytest.raises(PreconditionError):
            estimators.second_moment_xi(rng.choice(np.array([-1, 1]), size=(4, 4)))

    def test_staggered_needs_even_sides(self, rng):
        """Test the staggered channel refuses odd dimensions."""
        with pytest.raises(PreconditionError):
            estimators.structure_factor(rng.normal(size=(9, 9)), 'staggered')

    def test_structure_factor_sum_rule(self, rng):
        """Test sum_q S(q) / N equals the mean squared field."""
        spins = rng.choice(np.array([-1, 1]), size=(16, 16))
        correlations = estimators.structure_factor(spins)
        assert correlations.S.sum() / spins.size == pytest.approx(1.0)
        assert correlations.C_r[0, 0] == pytest.approx(1.0)
        assert correlations.metadata['ensemble_size'] == 1


class TestDefectLength:
    """Test lengths from defect densities."""

    def test_ordered_and_checkerboard(self):
        """Test an ordered lattice has no defects and a checkerboard breaks every bond."""
        r, c = np.indices((8, 8))
        checkerboard = np.where((r + c) % 2 == 0, 1, -1)
        assert estimators.defect_length(np.ones((8, 8))) == math.inf
        assert estimators.defect_length(checkerboard) == pytest.approx(1.0)
        assert estimators.defect_length(checkerboard, 'staggered') == math.inf

    def test_chain_kinks(self):
        """Test a periodic chain with two kinks in four sites has length 2."""
        assert estimators.defect_length(np.array([1, 1, -1, -1])) == pytest.approx(2.0)

    def test_ensemble_average(self):
        """Test an ensemble averages densities before inverting."""
        stripe = np.ones((8, 8))
        stripe[:, :4] = -1
        assert estimators.defect_length([np.ones((8, 8)), stripe]) == pytest.approx(1.0 / (0.5 * 16 / 128))

    def test_rejects_non_spin_values(self):
        """Test configurations must be +-1."""
        with pytest.raises(PreconditionError):
            estimators.defect_length(np.zeros((8, 8)))


class TestPowerLawFit:
    """Test power-law fits and window helpers."""

    def test_exact_power_law(self):
        """Test an exact power law is recovered with zero spread."""
        t = np.geomspace(1.0, 1000.0, 20)
        fit = estimators.fit_power_law(t, 3.0 * t ** 0.5)
        assert fit.exponent == pytest.approx(0.5)
        assert fit.amplitude == pytest.approx(3.0)
        assert fit.goodness == pytest.approx(1.0)
        assert fit.stderr < 1e-10

    def test_noisy_power_law(self, rng):
        """Test a noisy power law with errors stays within its bootstrap spread."""
        t = np.geomspace(10.0, 1e4, 30)
        y = t ** 0.4 * np.exp(rng.normal(scale=0.05, size=t.size))
        fit = estimators.fit_power_law(t, y, sigma=0.05 * y, seed=3)
        assert fit.exponent == pytest.approx(0.4, abs=0.03)
        assert 0 < fit.stderr < 0.03
        again = estimators.fit_power_law(t, y, sigma=0.05 * y, seed=3)
        assert again.stderr == fit.stderr

    def test_window(self):
        """Test the window restricts the fitted points."""
        t = np.geomspace(1.0, 1e4, 41)
        fit = estimators.fit_power_law(t, t ** 0.25, window=(9.5, 1e4))
        assert fit.n_points == 31
        assert fit.window[0] == pytest.approx(10.0)

    def test_guards(self):
        """Test the point, decade and positivity guards."""
        t = np.geomspace(1.0, 1000.0, 5)
        with pytest.raises(PreconditionError):
            estimators.fit_power_law(t, t)
        t = np.geomspace(1.0, 3.0, 10)
        with pytest.raises(PreconditionError):
            estimators.fit_power_law(t, t)
        t = np.geomspace(1.0, 1000.0, 10)
        with pytest.raises(PreconditionError):
            estimators.fit_power_law(t, -t)

    def test_suggest_window_skips_transient(self):
        """Test the suggested window starts after an early transient."""
        t = np.geomspace(1.0, 1e4, 40)
        y = t ** 0.5 * (1.0 + 5.0 / t)
        window = estimators.suggest_window(t, y)
        assert window[0] > 1.0
        assert window[1] == pytest.approx(1e4)

    def test_mann_kendall(self):
        """Test a monotone series has a perfect trend statistic."""
        statistic, pvalue = estimators.mann_kendall(range(20), np.arange(20) ** 2)
        assert statistic == pytest.approx(1.0)
        assert pvalue < 1e-6


class TestCollapse:
    """Test the scaling-collapse optimizer."""

    def test_recovers_generating_exponents(self, master, quantum_ising):
        """Test a single-master family collapses at its generating exponents."""
        alpha_t, alpha_xi = kz_exponents(quantum_ising, 1.0)
        assert alpha_xi == pytest.approx(0.3861, abs=1e-4)
        result = estimators.optimize_collapse(collapse_family(master, alpha_xi))
        assert not result.degenerate
        assert result.alpha_xi == pytest.approx(alpha_xi, abs=0.02)
        assert result.alpha_t == pytest.approx(alpha_t, abs=0.02)
        assert math.isfinite(result.err_xi) and math.isfinite(result.err_t)

    def test_negative_control(self, master, quantum_ising):
        """Test curves from two different masters collapse far worse."""
        alpha = kz_exponents(quantum_ising, 1.0)[1]
        good = estimators.optimize_collapse(collapse_family(master, alpha))
        other = ScalingModel(quantum_ising, amplitudes={'coarsening': 4.0})
        mixed = collapse_family(master, alpha)
        mixed[1] = collapse_family(other, alpha)[1]
        bad = estimators.optimize_collapse(mixed)
        assert bad.residual > 10.0 * max(good.residual, 1e-12)

    def test_residual_rescaling_invariance(self, master):
        """Test a common rescaling of every curve leaves the residual unchanged."""
        family = collapse_family(master, 0.3)
        rescaled = [(tau, 2.0 * t, 3.7 * ell) for tau, t, ell in family]
        base = estimators.collapse_residual(family, 0.35, 0.25)
        assert estimators.collapse_residual(rescaled, 0.35, 0.25) == pytest.approx(base, rel=1e-6)

    def test_degenerate_family(self, master):
        """Test a family without tau spread is flagged as degenerate."""
        family = [(100.0, t, ell) for _, t, ell in collapse_family(master, 0.3)]
        result = estimators.optimize_collapse(family, grid_step=0.1)
        assert result.degenerate
        assert result.err_xi == math.inf

    def test_curve_guards(self, master):
        """Test too few curves and disjoint ranges are refused."""
        family = collapse_family(master, 0.3)
        with pytest.raises(PreconditionError):
            estimators.collapse_residual(family[:2], 0.3, 0.3)
        disjoint = [(10.0, np.array([1.0, 2.0]), np.array([1.0, 1.0])),
                    (100.0, np.array([10.0, 20.0]), np.array([1.0, 1.0])),
                    (1000.0, np.array([100.0, 200.0]), np.array([1.0, 1.0]))]
        with pytest.raises(NonOverlapError):
            estimators.collapse_residual(disjoint, 0.0, 0.0)
