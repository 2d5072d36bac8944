"""
Toolkit factory and initialization.
"""
import logging
import os

from kzcoarsen import __version__
from kzcoarsen.config import config_by_name
from kzcoarsen.models import ConfigError, EngineError, KzcError

EXIT_OK = 0
EXIT_CONFIG_ERROR = 2
EXIT_ENGINE_ERROR = 3


class Toolkit:
    """
    Configured toolkit instance.
    Holds the config mapping, the package logger, the registered engines and
    the exception-to-exit-code handlers.
    """

    def __init__(self, name):
        self.name = name
        self.version = __version__
        self.config = {}
        self.logger = logging.getLogger(name)
        self.engines = {}
        self.error_handlers = []

    def register_engine(self, engine):
        if engine.name in self.engines:
            raise ValueError(f'engine {engine.name!r} registered twice')
        self.engines[engine.name] = engine

    def errorhandler(self, exc_type):
        """Register a handler mapping an exception type to an exit code."""
        def decorator(f):
            self.error_handlers.append((exc_type, f))
            return f
        return decorator

    def handle_error(self, error) -> int:
        """Dispatch to the first matching handler; unknown errors propagate."""
        for exc_type, handler in self.error_handlers:
            if isinstance(error, exc_type):
                return handler(error)
        raise error

    def get_task(self, engine, task):
        return self.engines[engine].tasks[task]

    def __repr__(self):
        return f'<Toolkit {self.name} {self.version} engines={sorted(self.engines)}>'


def create_app(config_name=None):
    """
    Application factory pattern.
    Creates and configures the toolkit.
    """
    if config_name is None:
        config_name = os.getenv('KZC_ENV', 'development')

    app = Toolkit('kzcoarsen')

    # Load configuration
    config_class = config_by_name.get(config_name, config_by_name['default'])
    app.config.update({key: getattr(config_class, key) for key in dir(config_class) if key.isupper()})

    # Configure logging
    configure_logging(app)

    # Register engines
    register_engines(app)

    # Register error handlers
    register_error_handlers(app)

    app.logger.debug(f'kzcoarsen {app.version} started in {config_name} mode')

    return app


def configure_logging(app, level=None):
    """Configure package logging; safe to call more than once."""
    log_level = getattr(logging, (level or app.config['LOG_LEVEL']).upper())

    for handler in list(app.logger.handlers):
        app.logger.removeHandler(handler)
        handler.close()

    # File handler
    log_file = app.config.get('LOG_FILE')
    if log_file:
        log_dir = os.path.dirname(log_file)
        if log_dir and not os.path.exists(log_dir):
            os.makedirs(log_dir)
        file_handler = logging.FileHandler(log_file)
        file_handler.setLevel(log_level)
        file_handler.setFormatter(logging.Formatter(
            '%(asctime)s %(levelname)s: %(message)s [in %(pathname)s:%(lineno)d]'
        ))
        app.logger.addHandler(file_handler)

    # Console handler
    console_handler = logging.StreamHandler()
    console_handler.setLevel(log_level)
    console_handler.setFormatter(logging.Formatter(
        '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    ))

    app.logger.addHandler(console_handler)
    app.logger.setLevel(log_level)


def register_engines(app):
    """Register the engine task tables."""
    from kzcoarsen.tasks.scaling import scaling_engine
    from kzcoarsen.tasks.tfim1d import tfim1d_engine
    from kzcoarsen.tasks.ising2d import ising2d_engine
    from kzcoarsen.tasks.rydberg import rydberg_engine
    from kzcoarsen.tasks.analysis import collapse_engine, estimate_engine

    app.register_engine(scaling_engine)
    app.register_engine(tfim1d_engine)
    app.register_engine(ising2d_engine)
    app.register_engine(rydberg_engine)
    app.register_engine(estimate_engine)
    app.register_engine(collapse_engine)


def register_error_handlers(app):
    """Register error handlers."""

    @app.errorhandler(ConfigError)
    def config_error(error):
        for message in error.errors:
            app.logger.error(f'Config error: {message}')
        return EXIT_CONFIG_ERROR

    @app.errorhandler(EngineError)
    def engine_error(error):
        app.logger.error(f'Engine failed in stage {error.stage!r}: {error}')
        return EXIT_ENGINE_ERROR

    @app.errorhandler(KzcError)
    def toolkit_error(error):
        app.logger.error(f'{type(error).__name__}: {error}')
        return EXIT_ENGINE_ERROR
