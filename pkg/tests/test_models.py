"""
Unit tests for domain types and validation helpers.
Tests exponent tuples, ramp protocols, scaling models, Rydberg geometry and
the (is_valid, message) validators.
"""
import math

import numpy as np
import pytest

from kzcoarsen.models import (
    ArrayGeometry,
    ConfigError,
    CriticalExponents,
    DetuningMask,
    EngineError,
    MicroScales,
    ModeState,
    PreconditionError,
    RampProtocol,
    RydbergParams,
    ScalingModel,
)
from kzcoarsen.utils import (
    hash_bytes,
    seconds_between,
    spawn_seeds,
    validate_integer,
    validate_keys,
    validate_number,
    validate_number_list,
)


class TestCriticalExponents:
    """Test cases for exponent tuples."""

    def test_valid_tuple(self, quantum_ising):
        """Test registry entries load as valid tuples."""
        assert quantum_ising.nu == pytest.approx(0.629)
        assert quantum_ising.to_dict()['d'] == 2

    @pytest.mark.parametrize('field', ['nu', 'z', 'nu_bar', 'z_bar', 'z_d'])
    def test_rejects_non_positive(self, field):
        """Test every exponent must be positive."""
        values = {'nu': 1.0, 'z': 1.0, 'nu_bar': 1.0, 'z_bar': 2.0, 'z_d': 2.0, 'd': 2, field: 0.0}
        with pytest.raises(PreconditionError):
            CriticalExponents(**values)

    def test_rejects_fractional_dimension(self):
        """Test the spatial dimension is a positive integer."""
        with pytest.raises(PreconditionError):
            CriticalExponents(1.0, 1.0, 1.0, 2.0, 2.0, 1.5)


class TestRampProtocol:
    """Test cases for ramp protocols."""

    def test_stop_time(self):
        """Test t_s solves g(t_s) = g_s for both signs."""
        assert RampProtocol(tau=100.0, p=2.0, g_s=0.25).stop_time == pytest.approx(50.0)
        assert RampProtocol(tau=100.0, g_s=-0.5).stop_time == pytest.approx(-50.0)

    def test_indefinite(self):
        """Test an unset stop value means the ramp never stops."""
        protocol = RampProtocol(tau=10.0)
        assert protocol.indefinite
        assert protocol.stop_time == math.inf

    def test_guards(self):
        """Test tau, p and hold time bounds."""
        with pytest.raises(PreconditionError):
            RampProtocol(tau=0.0)
        with pytest.raises(PreconditionError):
            RampProtocol(tau=1.0, p=0.5)
        with pytest.raises(PreconditionError):
            RampProtocol(tau=1.0, t_hold=-1.0)
        with pytest.raises(PreconditionError):
            MicroScales(l0=0.0)


class TestScalingModel:
    """Test cases for scaling-function amplitudes."""

    def test_defaults_merged(self, quantum_ising):
        """Test unset amplitudes fall back to one."""
        model = ScalingModel(quantum_ising, amplitudes={'C': 2.5})
        assert model.amp('C') == 2.5
        assert model.amp('plateau') == 1.0

    def test_unknown_amplitude(self, quantum_ising):
        """Test amplitude names are checked."""
        with pytest.raises(PreconditionError):
            ScalingModel(quantum_ising, amplitudes={'plataeu': 1.0})

    def test_non_positive_amplitude(self, quantum_ising):
        """Test amplitudes must be positive."""
        with pytest.raises(PreconditionError):
            ScalingModel(quantum_ising, amplitudes={'coarsening': -1.0})

    def test_non_finite_line(self, quantum_ising):
        """Test the classical line location must be finite."""
        with pytest.raises(PreconditionError):
            ScalingModel(quantum_ising, x_c=math.nan)


class TestModeState:
    """Test suite for Bogoliubov mode amplitudes"""

    def test_norm(self):
        """Test the norm sums both amplitudes."""
        state = ModeState(k=0.5, u=complex(0.6, 0.0), v=complex(0.0, 0.8))
        assert state.norm == pytest.approx(1.0, abs=1e-12)


class TestRydbergGeometry:
    """Test cases for arrays, parameters and masks."""

    def test_coords_and_parity(self):
        """Test row-major coordinates and the checkerboard parity."""
        geometry = ArrayGeometry(2, 3, a=2.0)
        np.testing.assert_allclose(geometry.coords[4], [2.0, 2.0])
        np.testing.assert_array_equal(geometry.parity, [1, -1, 1, -1, 1, -1])

    def test_param_guards(self):
        """Test drive and interaction parameter bounds."""
        with pytest.raises(PreconditionError):
            RydbergParams(Omega=0.0, Delta=1.0, Rb_over_a=1.2)
        with pytest.raises(PreconditionError):
            RydbergParams(Omega=1.0, Delta=1.0, Rb_over_a=1.2, cutoff=0)
        with pytest.raises(PreconditionError):
            ArrayGeometry(0, 3)

    def test_central_domain(self, small_array):
        """Test the flipped domain sits in the middle of the array."""
        mask = DetuningMask.central_domain(small_array, 1, 1)
        assert mask.flipped.sum() == 1
        assert mask.flipped[1, 1]
        occupations = mask.occupations()
        assert occupations[4] == 0
        assert occupations[0] == 1

    def test_complement_and_detunings(self, small_array):
        """Test the complement registration and the light-shift pattern."""
        uniform = DetuningMask.uniform(small_array)
        flipped = uniform.complement()
        np.testing.assert_array_equal(uniform.occupations() + flipped.occupations(), 1)
        np.testing.assert_array_equal(uniform.local_detunings(2.0)[:2], [2.0, -2.0])


class TestErrors:
    """Test cases for the error hierarchy."""

    def test_config_error_collects(self):
        """Test a config error keeps every message."""
        error = ConfigError(['a: bad', 'b: worse'])
        assert error.errors == ['a: bad', 'b: worse']
        assert str(error) == 'a: bad; b: worse'

    def test_engine_error_stage(self):
        """Test an engine error names its stage."""
        error = EngineError('ising2d.protocol.schedule', 'too long')
        assert error.stage == 'ising2d.protocol.schedule'
        assert str(error).startswith('ising2d.protocol.schedule:')

    def test_precondition_is_value_error(self):
        """Test precondition failures are also ValueErrors."""
        assert issubclass(PreconditionError, ValueError)


class TestValidators:
    """Test cases for the (is_valid, message) validators."""

    def test_number(self):
        """Test bounds, types and optional values."""
        assert validate_number(1.5, 'x', minimum=0) == (True, None)
        assert validate_number(None, 'x', allow_none=True) == (True, None)
        assert validate_number(0, 'x', minimum=0, strict_min=True)[1] == 'x: must be > 0'
        assert validate_number(True, 'x')[0] is False
        assert validate_number(float('inf'), 'x')[1] == 'x: must be finite'
        assert validate_number(None, 'x')[1] == 'x: is required'

    def test_integer(self):
        """Test integer bounds and parity."""
        assert validate_integer(16, 'L', minimum=8, even=True) == (True, None)
        assert validate_integer(15, 'L', even=True)[1] == 'L: must be even'
        assert validate_integer(2.0, 'L')[0] is False

    def test_number_list(self):
        """Test list length and element bounds."""
        assert validate_number_list([1, 2, 3], 'taus', min_length=3) == (True, None)
        assert validate_number_list([1, -2], 'taus', minimum=0)[1] == 'taus[1]: must be >= 0'
        assert validate_number_list('1', 'taus')[0] is False

    def test_keys(self):
        """Test unknown keys are reported with their path."""
        assert validate_keys({'L': 1, 'colour': 2}, 'params', ('L',)) == ['params.colour: unknown key']


class TestProvenanceHelpers:
    """Test cases for hashing, seeding and timestamps."""

    def test_hash(self):
        """Test SHA-256 of known bytes."""
        assert hash_bytes(b'') == 'e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855'
        assert hash_bytes('abc') == hash_bytes(b'abc')

    def test_spawned_seeds(self):
        """Test derived seeds are reproducible and distinct."""
        seeds = spawn_seeds(42, 4)
        assert seeds == spawn_seeds(42, 4)
        assert len(set(seeds)) == 4

    def test_seconds_between(self):
        """Test elapsed seconds between offset-aware stamps."""
        assert seconds_between('2024-01-01T00:00:00+00:00', '2024-01-01T00:01:30+00:00') == 90.0
