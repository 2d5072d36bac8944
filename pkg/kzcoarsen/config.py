"""
Configuration management for the kzcoarsen toolkit.
Loads from environment variables so runs can be steered without code edits.
"""
import os
import tempfile
from dotenv import load_dotenv

# Load environment variables
load_dotenv()


def get_output_root():
    """Get the default output root, defaulting to ./runs next to the package."""
    root = os.getenv('KZC_OUTPUT_ROOT', '')
    if root:
        return root
    basedir = os.path.abspath(os.path.dirname(os.path.dirname(__file__)))
    return os.path.join(basedir, 'runs')


def get_registry_path():
    """Get the exponent registry path, defaulting to the bundled JSON file."""
    path = os.getenv('KZC_EXPONENT_REGISTRY', '')
    if path:
        return path
    return os.path.join(os.path.dirname(__file__), 'data', 'exponents.json')


class Config:
    """Base configuration."""

    ENV = os.getenv('KZC_ENV', 'development')

    # Output
    OUTPUT_ROOT = get_output_root()
    SCHEMA_VERSION = '1.0'

    # Exponent registry
    EXPONENT_REGISTRY = get_registry_path()

    # Workers
    THREADS = int(os.getenv('KZC_THREADS', '1'))

    # Logging
    LOG_LEVEL = os.getenv('KZC_LOG_LEVEL', 'INFO')
    LOG_FILE = os.getenv('KZC_LOG_FILE', 'logs/kzcoarsen.log')

    # Engine limits and numerical defaults
    KRYLOV_DIM = 20
    KRYLOV_TOL = 1e-10
    TFIM_RTOL = 1e-8
    BOOTSTRAP_RESAMPLES = 200


class DevelopmentConfig(Config):
    """Development configuration."""
    DEBUG = True
    TESTING = False


class ProductionConfig(Config):
    """Production configuration."""
    DEBUG = False
    TESTING = False
    LOG_LEVEL = os.getenv('KZC_LOG_LEVEL', 'WARNING')


class TestingConfig(Config):
    """Testing configuration."""
    DEBUG = False
    TESTING = True
    LOG_FILE = ''  # console only
    OUTPUT_ROOT = os.path.join(tempfile.gettempdir(), 'kzcoarsen-test-runs')


config_by_name = {
    'development': DevelopmentConfig,
    'production': ProductionConfig,
    'testing': TestingConfig,
    'default': DevelopmentConfig
}
