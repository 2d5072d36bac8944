"""
Run configs, execution and manifests.
A run is one engine task driven by a JSON config; every run directory holds
one manifest.json, the task's data files and a summary.json.
"""
import json
import logging
import os
import threading

import numba

from kzcoarsen.models import ENGINES, ConfigError, EngineError, KzcError, RunConfig, RunManifest
from kzcoarsen.tasks import resolve_path
from kzcoarsen.utils import (
    hash_bytes, hash_file, read_json, seconds_between, spawn_seeds, utc_now_iso,
    validate_integer, validate_keys, write_csv, write_json,
)

logger = logging.getLogger(__name__)

CONFIG_KEYS = ('engine', 'task', 'params', 'seeds', 'output_dir', 'snapshots')
MANIFEST = 'manifest.json'
SUMMARY = 'summary.json'


class RunContext:
    """What a task handler sees: output helpers, seeds, threads and config."""

    def __init__(self, app, run_config, out_dir, threads):
        self.app = app
        self.config = app.config
        self.logger = app.logger
        self.schema_version = app.config['SCHEMA_VERSION']
        self.run_config = run_config
        self.out_dir = out_dir
        self.seeds = list(run_config.seeds)
        self.snapshots = list(run_config.snapshots)
        self.threads = threads
        self.base_dir = os.path.dirname(os.path.abspath(run_config.source_path)) if run_config.source_path else '.'
        self.outputs = []
        self._lock = threading.Lock()

    def path(self, name):
        return os.path.join(self.out_dir, name)

    def record(self, name):
        """Add a written file to the output index."""
        with self._lock:
            if name not in self.outputs:
                self.outputs.append(name)

    def write_csv(self, name, header, rows):
        write_csv(self.path(name), header, rows)
        self.record(name)

    def write_json(self, name, payload):
        write_json(self.path(name), payload, self.schema_version)
        self.record(name)

    def stage_error(self, stage, message):
        return EngineError(f'{self.run_config.engine}.{self.run_config.task}.{stage}', message)


class MemoryContext(RunContext):
    """Context that keeps tables in memory; used for direct CLI evaluation."""

    def __init__(self, app, run_config, threads=1):
        super().__init__(app, run_config, '', threads)
        self.tables = {}

    def write_csv(self, name, header, rows):
        self.tables[name] = [dict(zip(header, row)) for row in rows]

    def write_json(self, name, payload):
        self.tables[name] = payload

    def path(self, name):
        raise EngineError(f'{self.run_config.engine}.{self.run_config.task}', 'binary outputs need a run directory')


# ============================================
# Validation
# ============================================

def _check_seeds(seeds) -> list:
    if not isinstance(seeds, list) or not seeds:
        return ['seeds: must be a non-empty list of integers']
    errors = []
    for i, seed in enumerate(seeds):
        ok, message = validate_integer(seed, f'seeds[{i}]', minimum=0)
        if not ok:
            errors.append(message)
    if not errors and len(set(seeds)) != len(seeds):
        errors.append('seeds: must be distinct')
    return errors


def _check_snapshots(snapshots) -> list:
    if not isinstance(snapshots, list):
        return ['snapshots: must be a list of non-negative integer times']
    errors = []
    for i, t in enumerate(snapshots):
        ok, message = validate_integer(t, f'snapshots[{i}]', minimum=0)
        if not ok:
            errors.append(message)
    return errors


def validate_config(path, app) -> RunConfig:
    """
    Load and fully validate a run config

    Args:
        path: JSON config file
        app: Configured toolkit (engine task tables)

    Returns:
        RunConfig: Defaults filled, cross-field constraints checked

    Raises:
        ConfigError: Every problem found, each as "field.path: message"
    """
    try:
        with open(path, 'rb') as f:
            raw = f.read()
    except OSError as e:
        raise ConfigError([f'config: cannot read {path}: {e.strerror}'])
    try:
        document = json.loads(raw.decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ConfigError([f'config: not valid JSON ({e})'])
    if not isinstance(document, dict):
        raise ConfigError(['config: top level must be an object'])

    errors = validate_keys(document, '', CONFIG_KEYS)
    engine, task_name = document.get('engine'), document.get('task')
    task = None
    if engine not in ENGINES:
        errors.append(f'engine: must be one of {", ".join(ENGINES)}, got {engine!r}')
    elif engine not in app.engines:
        errors.append(f'engine: {engine!r} is not registered')
    elif task_name not in app.engines[engine].tasks:
        errors.append(f'task: must be one of {", ".join(sorted(app.engines[engine].tasks))} '
                      f'for engine {engine}, got {task_name!r}')
    else:
        task = app.get_task(engine, task_name)

    seeds = document.get('seeds', [0])
    snapshots = document.get('snapshots', [])
    output_dir = document.get('output_dir', f'{engine}-{task_name}')
    errors.extend(_check_seeds(seeds))
    errors.extend(_check_snapshots(snapshots))
    if not isinstance(output_dir, str) or not output_dir:
        errors.append('output_dir: must be a non-empty path')

    params = {}
    if task is not None:
        params, param_errors = task.validate(document.get('params', {}), os.path.dirname(os.path.abspath(path)))
        errors.extend(param_errors)

    if errors:
        raise ConfigError(errors)

    logger.debug(f'Validated {path}: {engine}/{task_name}, {len(seeds)} seed(s)')
    return RunConfig(
        engine=engine,
        task=task_name,
        params=params,
        seeds=list(seeds),
        output_dir=output_dir,
        snapshots=sorted(set(snapshots)),
        source_path=os.path.abspath(path),
        source_bytes=raw,
    )


# ============================================
# Execution
# ============================================

def resolve_output_dir(run_config, app, out=None) -> str:
    """--out wins; a relative output_dir lands under the configured output root."""
    if out:
        return os.path.abspath(out)
    return os.path.abspath(resolve_path(run_config.output_dir, app.config['OUTPUT_ROOT']))


def _write_manifest(out_dir, manifest, schema_version):
    write_json(os.path.join(out_dir, MANIFEST), manifest.to_dict(schema_version), schema_version)


def run(run_config, app, seed_override=None, out=None, threads=None) -> str:
    """
    Execute a validated config

    The manifest is written before any output and rewritten with the output
    index once the task finishes. Data files and summary.json carry no
    timestamps, so identical config and seeds give byte-identical files.

    Args:
        run_config: From validate_config
        app: Configured toolkit
        seed_override: Master seed; replaces the config seeds with as many derived seeds
        out: Output directory override
        threads: Worker count (defaults to the THREADS setting)

    Returns:
        str: The run directory

    Raises:
        EngineError: Naming the failing stage
    """
    overrides = {}
    if seed_override is not None:
        run_config.seeds = spawn_seeds(seed_override, len(run_config.seeds))
        overrides['seed'] = seed_override
    if out:
        overrides['out'] = out
    threads = threads or app.config['THREADS']
    numba.set_num_threads(max(1, min(threads, numba.config.NUMBA_NUM_THREADS)))

    out_dir = resolve_output_dir(run_config, app, out)
    os.makedirs(out_dir, exist_ok=True)
    schema_version = app.config['SCHEMA_VERSION']
    manifest = RunManifest(
        config_hash=hash_bytes(run_config.source_bytes),
        version=app.version,
        seeds=run_config.seeds,
        engine=run_config.engine,
        task=run_config.task,
        started_at=utc_now_iso(),
        config_text=run_config.source_bytes.decode('utf-8'),
        overrides=overrides,
    )
    _write_manifest(out_dir, manifest, schema_version)
    app.logger.info(f'Run {run_config.engine}/{run_config.task} -> {out_dir} '
                    f'(seeds={run_config.seeds}, threads={threads})')

    ctx = RunContext(app, run_config, out_dir, threads)
    task = app.get_task(run_config.engine, run_config.task)
    stage = f'{run_config.engine}.{run_config.task}'
    try:
        summary = task.handler(ctx, run_config.params)
    except EngineError:
        manifest.status = 'failed'
        raise
    except (KzcError, ArithmeticError, ValueError, OSError) as e:
        manifest.status = 'failed'
        raise EngineError(stage, f'{type(e).__name__}: {e}') from e
    except Exception as e:
        manifest.status = 'failed'
        app.logger.exception(f'Unexpected failure in {stage}')
        raise EngineError(stage, f'unexpected {type(e).__name__}: {e}') from e
    finally:
        manifest.finished_at = utc_now_iso()
        manifest.wall_clock = seconds_between(manifest.started_at, manifest.finished_at)
        if manifest.status == 'failed':
            manifest.outputs = [{'file': name, 'sha256': hash_file(ctx.path(name))} for name in ctx.outputs]
            _write_manifest(out_dir, manifest, schema_version)

    ctx.write_json(SUMMARY, {'engine': run_config.engine, 'task': run_config.task,
                             'seeds': run_config.seeds, 'results': summary})
    manifest.status = 'ok'
    manifest.outputs = [{'file': name, 'sha256': hash_file(ctx.path(name))} for name in ctx.outputs]
    _write_manifest(out_dir, manifest, schema_version)
    app.logger.info(f'Run finished in {manifest.wall_clock:.2f}s, {len(manifest.outputs)} files')
    return out_dir


def report(run_dir) -> dict:
    """
    Digest of a finished run directory

    Returns:
        dict: schema version, engine/task, status, duration, seeds, outputs and results
    """
    manifest_path = os.path.join(run_dir, MANIFEST)
    if not os.path.isfile(manifest_path):
        raise ConfigError([f'run_dir: no {MANIFEST} in {run_dir}'])
    manifest = read_json(manifest_path)
    summary_path = os.path.join(run_dir, SUMMARY)
    summary = read_json(summary_path) if os.path.isfile(summary_path) else {}
    duration = None
    if manifest.get('finished_at'):
        duration = seconds_between(manifest['started_at'], manifest['finished_at'])
    return {
        'schema_version': manifest.get('schema_version'),
        'engine': manifest.get('engine'),
        'task': manifest.get('task'),
        'status': manifest.get('status'),
        'version': manifest.get('version'),
        'duration_seconds': duration,
        'seeds': manifest.get('seeds'),
        'outputs': [entry['file'] for entry in manifest.get('outputs', [])],
        'results': summary.get('results', {}),
    }


def evaluate(app, engine, task_name, params) -> dict:
    """
    Run a task in memory and return its summary and tables

    Raises:
        ConfigError: Parameters failed validation
    """
    task = app.get_task(engine, task_name)
    filled, errors = task.validate(params)
    if errors:
        raise ConfigError(errors)
    ctx = MemoryContext(app, RunConfig(engine=engine, task=task_name, params=filled, seeds=[0], output_dir=''))
    summary = task.handler(ctx, filled)
    return {'results': summary, **ctx.tables}
