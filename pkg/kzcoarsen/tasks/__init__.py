"""
Engine task tables.
Each engine module declares an Engine and registers its tasks with the
@engine.task decorator; the toolkit factory registers the engines.
"""
import os
from dataclasses import dataclass, field
from typing import Callable, Optional

from kzcoarsen.utils import validate_keys


@dataclass
class Task:
    """One runnable task: handler, parameter defaults and a cross-field validator."""
    name: str
    handler: Callable
    defaults: dict = field(default_factory=dict)
    validator: Optional[Callable] = None
    description: str = ''

    def validate(self, params: dict, base_dir: str = '.') -> tuple:
        """
        Fill defaults and check a parameter block

        Returns:
            tuple: (filled params, list of "params.field: message" errors)
        """
        if not isinstance(params, dict):
            return {}, ['params: must be an object']
        errors = validate_keys(params, 'params', self.defaults)
        filled = dict(self.defaults)
        filled.update(params)
        if self.validator and not errors:
            errors.extend(self.validator(filled, base_dir))
        return filled, errors


class Engine:
    """Named table of tasks, registered on the toolkit like a blueprint."""

    def __init__(self, name):
        self.name = name
        self.tasks = {}

    def task(self, name, defaults=None, validator=None):
        """Register the decorated function as a task handler(ctx, params) -> summary dict."""
        def decorator(f):
            self.tasks[name] = Task(name, f, dict(defaults or {}), validator,
                                    (f.__doc__ or '').strip().splitlines()[0] if f.__doc__ else '')
            return f
        return decorator

    def __repr__(self):
        return f'<Engine {self.name} tasks={sorted(self.tasks)}>'


def collect(*checks) -> list:
    """Error messages of the failed (is_valid, message) checks."""
    return [message for ok, message in checks if not ok]


def resolve_path(path: str, base_dir: str) -> str:
    """Config-relative path resolution."""
    return path if os.path.isabs(path) else os.path.normpath(os.path.join(base_dir, path))


def check_file(path, name, base_dir, directory=False) -> tuple:
    """(is_valid, message) for a referenced input path."""
    if not isinstance(path, str) or not path:
        return False, f'{name}: must be a path'
    resolved = resolve_path(path, base_dir)
    exists = os.path.isdir(resolved) if directory else os.path.isfile(resolved)
    if not exists:
        return False, f'{name}: {"directory" if directory else "file"} not found: {resolved}'
    return True, None
