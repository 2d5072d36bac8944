"""
Command-line interface.
One subcommand per module responsibility; config-driven runs write a run
directory, the scaling calculators also take direct options and print JSON.
"""
import json

import click

from kzcoarsen import runner
from kzcoarsen.main import configure_logging, create_app
from kzcoarsen.models import ConfigError, KzcError
from kzcoarsen.utils import _jsonable

SIMULATION_ENGINES = ('scaling', 'tfim1d', 'ising2d', 'rydberg')


def _emit(payload):
    click.echo(json.dumps(_jsonable(payload), indent=2, sort_keys=True))


def _fail(app, error):
    """Exit with the code the toolkit's error handlers assign."""
    raise SystemExit(app.handle_error(error))


def _run_config(app, path, engines, seed, out, threads, task=None):
    try:
        run_config = runner.validate_config(path, app)
        if run_config.engine not in engines:
            raise ConfigError([f'engine: this command runs {", ".join(engines)} configs, '
                               f'got {run_config.engine!r}'])
        if task is not None and run_config.task != task:
            raise ConfigError([f'task: this command runs the {task!r} task, got {run_config.task!r}'])
        run_dir = runner.run(run_config, app, seed_override=seed, out=out, threads=threads)
    except KzcError as e:
        _fail(app, e)
    click.echo(run_dir)


def _evaluate(app, task, params):
    try:
        _emit(runner.evaluate(app, 'scaling', task, params))
    except KzcError as e:
        _fail(app, e)


def _verbose(ctx, param, value):
    if value:
        configure_logging(ctx.obj, 'DEBUG')


def run_options(f):
    """--seed/--out/--threads/--verbose shared by the run subcommands."""
    f = click.option('--verbose', is_flag=True, expose_value=False, callback=_verbose, help='Debug logging.')(f)
    f = click.option('--threads', type=click.IntRange(min=1), default=None, help='Worker threads.')(f)
    f = click.option('--out', type=click.Path(file_okay=False), default=None,
                     help='Run directory (default: output_dir under KZC_OUTPUT_ROOT).')(f)
    f = click.option('--seed', type=click.IntRange(min=0), default=None,
                     help='Master seed; replaces the config seeds.')(f)
    return f


def scaling_options(f):
    f = click.option('--p', 'p', type=float, default=1.0, show_default=True, help='Sweep power.')(f)
    f = click.option('--class', 'class_name', default='ising-2+1d', show_default=True,
                     help='Universality class from the exponent registry.')(f)
    return f


@click.group()
@click.option('--verbose', '-v', is_flag=True, help='Debug logging.')
@click.option('--env', default=None, help='Configuration name (development, production, testing).')
@click.pass_context
def cli(ctx, verbose, env):
    """Kibble-Zurek and coarsening toolkit."""
    if ctx.obj is None:
        ctx.obj = create_app(env)
    if verbose:
        configure_logging(ctx.obj, 'DEBUG')


# ============================================
# Scaling calculators
# ============================================

@cli.command()
@click.option('--config', 'config_path', type=click.Path(dir_okay=False), default=None)
@click.option('--tau', 'taus', type=float, multiple=True, help='Ramp time (repeatable).')
@scaling_options
@run_options
@click.pass_obj
def scales(app, config_path, taus, class_name, p, seed, out, threads):
    """KZ freeze-out scales for one or more ramp times."""
    if config_path:
        return _run_config(app, config_path, ('scaling',), seed, out, threads, task='scales')
    _evaluate(app, 'scales', {'class': class_name, 'p': p, 'taus': list(taus or (1000.0,))})


@cli.command()
@click.option('--config', 'config_path', type=click.Path(dir_okay=False), default=None)
@scaling_options
@run_options
@click.pass_obj
def exponent(app, config_path, class_name, p, seed, out, threads):
    """Late-time coarsening exponent of a universality class."""
    if config_path:
        return _run_config(app, config_path, ('scaling',), seed, out, threads, task='exponent')
    _evaluate(app, 'exponent', {'class': class_name, 'p': p})


@cli.command()
@click.option('--config', 'config_path', type=click.Path(dir_okay=False), default=None)
@click.option('--tau', type=float, default=1000.0, show_default=True)
@click.option('--g-s', 'g_s', type=float, default=None, help='Stop value of g (omit for an indefinite ramp).')
@click.option('--side', type=click.Choice(['ordered', 'critical', 'disordered']), default='ordered',
              show_default=True, help='Side of the classical critical line the energy density stops on.')
@click.option('--x-c', 'x_c', type=float, default=None)
@scaling_options
@run_options
@click.pass_obj
def classify(app, config_path, tau, g_s, side, x_c, class_name, p, seed, out, threads):
    """Coarsening case of a ramp protocol."""
    if config_path:
        return _run_config(app, config_path, ('scaling',), seed, out, threads, task='classify')
    _evaluate(app, 'classify', {'class': class_name, 'p': p, 'tau': tau, 'g_s': g_s, 'side': side, 'x_c': x_c})


@cli.command(name='eval')
@click.option('--config', 'config_path', type=click.Path(dir_okay=False), default=None)
@click.option('--function', 'function', type=click.Choice(['f', 'F', 'h']), default='F', show_default=True)
@click.option('--x', 'points', type=float, multiple=True, help='Evaluation point (repeatable).')
@click.option('--x-s', 'x_s', type=float, default=None)
@click.option('--x-c', 'x_c', type=float, default=None)
@click.option('--y-c', 'y_c', type=float, default=None)
@scaling_options
@run_options
@click.pass_obj
def eval_command(app, config_path, function, points, x_s, x_c, y_c, class_name, p, seed, out, threads):
    """Evaluate f, F or h at scaled points."""
    if config_path:
        return _run_config(app, config_path, ('scaling',), seed, out, threads, task='eval')
    _evaluate(app, 'eval', {'class': class_name, 'p': p, 'function': function, 'points': list(points) or None,
                            'x_s': x_s, 'x_c': x_c, 'y_c': y_c})


# ============================================
# Config-driven runs
# ============================================

@cli.command()
@click.option('--config', 'config_path', type=click.Path(dir_okay=False), required=True)
@run_options
@click.pass_obj
def simulate(app, config_path, seed, out, threads):
    """Run a simulation engine config."""
    _run_config(app, config_path, SIMULATION_ENGINES, seed, out, threads)


@cli.command()
@click.option('--config', 'config_path', type=click.Path(dir_okay=False), required=True)
@run_options
@click.pass_obj
def estimate(app, config_path, seed, out, threads):
    """Fit exponents or correlation lengths from earlier outputs."""
    _run_config(app, config_path, ('estimate',), seed, out, threads)


@cli.command()
@click.option('--config', 'config_path', type=click.Path(dir_okay=False), required=True)
@run_options
@click.pass_obj
def collapse(app, config_path, seed, out, threads):
    """Optimize the scaling collapse of a curve family."""
    _run_config(app, config_path, ('collapse',), seed, out, threads)


@cli.command()
@click.argument('run_dir', type=click.Path(file_okay=False))
@click.pass_obj
def report(app, run_dir):
    """Summarize a finished run directory."""
    try:
        _emit(runner.report(run_dir))
    except KzcError as e:
        _fail(app, e)


def main():
    cli(prog_name='kzc')


if __name__ == '__main__':
    main()
