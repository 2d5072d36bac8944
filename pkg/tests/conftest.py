"""
pytest configuration and fixtures for kzcoarsen tests.
"""
import json
import os

import numpy as np
import pytest
from click.testing import CliRunner

from kzcoarsen.main import create_app
from kzcoarsen.models import ArrayGeometry, MicroScales, RydbergParams, ScalingModel
from kzcoarsen.scaling import get_exponents, load_registry


@pytest.fixture(scope='session')
def app():
    """Create a toolkit instance in testing mode."""
    os.environ['KZC_ENV'] = 'testing'
    return create_app('testing')


@pytest.fixture(scope='function')
def runner():
    """Create a click CLI runner."""
    return CliRunner()


@pytest.fixture(scope='function')
def out_dir(tmp_path):
    """Fresh directory for one run."""
    path = tmp_path / 'run'
    return str(path)


@pytest.fixture(scope='function')
def write_config(tmp_path):
    """Write a JSON config document and return its path."""
    def _write(document, name='config.json'):
        path = tmp_path / name
        path.write_text(json.dumps(document, indent=2), encoding='utf-8')
        return str(path)
    return _write


@pytest.fixture(scope='session')
def registry():
    return load_registry()


@pytest.fixture(scope='session')
def quantum_ising(registry):
    """(2+1)D Ising exponents."""
    return get_exponents('ising-2+1d', registry)


@pytest.fixture(scope='session')
def chain_ising(registry):
    """(1+1)D Ising exponents."""
    return get_exponents('ising-1+1d', registry)


@pytest.fixture
def micro():
    return MicroScales()


@pytest.fixture
def model(quantum_ising):
    """Scaling model with unit amplitudes and no classical line."""
    return ScalingModel(quantum_ising)


@pytest.fixture
def model_with_line(quantum_ising):
    """Scaling model with a classical critical line at x_c = 3, y_c = 3."""
    return ScalingModel(quantum_ising, x_c=3.0, y_c=3.0)


@pytest.fixture
def small_array():
    """3x3 Rydberg array."""
    return ArrayGeometry(3, 3)


@pytest.fixture
def rydberg_params():
    return RydbergParams(Omega=1.0, Delta=1.5, Rb_over_a=1.2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
