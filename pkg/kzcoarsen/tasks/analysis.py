"""
Offline estimator and collapse tasks over files written by earlier runs.
"""
import math
import os
from collections import defaultdict

import numpy as np

from kzcoarsen import estimators, ising2d
from kzcoarsen.models import PreconditionError, UnresolvableLength
from kzcoarsen.tasks import Engine, check_file, collect, resolve_path
from kzcoarsen.utils import read_csv_columns, validate_choice, validate_integer, validate_number

estimate_engine = Engine('estimate')
collapse_engine = Engine('collapse')


def _load_columns(path, names):
    columns = read_csv_columns(path)
    missing = [name for name in names if name and name not in columns]
    if missing:
        raise PreconditionError(f'{path}: missing column(s) {", ".join(missing)}; found {", ".join(columns)}')
    return columns


def _check_window(window, name) -> list:
    if window is None:
        return []
    if not isinstance(window, list) or len(window) != 2:
        return [f'{name}: must be [t_min, t_max]']
    return collect(validate_number(window[0], f'{name}[0]', minimum=0),
                   validate_number(window[1], f'{name}[1]', minimum=0))


# ============================================
# Estimate engine
# ============================================

def _n_boot(ctx, params):
    if params['n_boot'] is None:
        return ctx.config.get('BOOTSTRAP_RESAMPLES', 200)
    return params['n_boot']


def _validate_fit(params, base_dir):
    errors = collect(
        check_file(params['input'], 'params.input', base_dir),
        validate_integer(params['min_points'], 'params.min_points', minimum=2),
        validate_number(params['min_decades'], 'params.min_decades', minimum=0),
    ) + _check_window(params['window'], 'params.window')
    if params['n_boot'] is not None:
        errors.extend(collect(validate_integer(params['n_boot'], 'params.n_boot', minimum=0)))
    return errors


@estimate_engine.task('fit', defaults={
    'input': None,
    't_column': 't',
    'y_column': 'ell_mean',
    'sigma_column': None,
    'window': None,
    'n_boot': None,
    'min_points': 6,
    'min_decades': 1.0,
    'suggest': False,
}, validator=_validate_fit)
def fit_task(ctx, params):
    """Power-law fit of one column against another from a CSV table."""
    path = resolve_path(params['input'], ctx.base_dir)
    columns = _load_columns(path, (params['t_column'], params['y_column'], params['sigma_column']))
    t, y = columns[params['t_column']], columns[params['y_column']]
    sigma = columns[params['sigma_column']] if params['sigma_column'] else None
    keep = np.isfinite(t) & np.isfinite(y) & (t > 0) & (y > 0)
    if sigma is not None:
        keep &= np.isfinite(sigma) & (sigma > 0)
        sigma = sigma[keep]
    t, y = t[keep], y[keep]

    suggested = None
    if params['suggest']:
        suggested = estimators.suggest_window(t, y, params['min_points'], params['min_decades'])
    fit = estimators.fit_power_law(t, y, sigma=sigma,
                                   window=tuple(params['window']) if params['window'] else None,
                                   n_boot=_n_boot(ctx, params), seed=int(ctx.seeds[0]) if ctx.seeds else 0,
                                   min_points=params['min_points'], min_decades=params['min_decades'])
    trend_stat, trend_p = estimators.mann_kendall(t, y)
    ctx.write_json('fit.json', {**fit.to_dict(), 'suggested_window': suggested})
    return {'fit': fit.to_dict(), 'suggested_window': suggested,
            'mann_kendall': {'statistic': trend_stat, 'p_value': trend_p}}


def _validate_xi(params, base_dir):
    errors = collect(
        check_file(params['snapshots'], 'params.snapshots', base_dir, directory=True),
        validate_choice(params['order_parameter'], 'params.order_parameter', estimators.ORDER_PARAMETERS),
        validate_number(params['flat_tolerance'], 'params.flat_tolerance', minimum=0),
    )
    if not errors and not os.path.isfile(os.path.join(resolve_path(params['snapshots'], base_dir), 'index.json')):
        errors.append('params.snapshots: directory has no index.json')
    return errors


@estimate_engine.task('xi', defaults={
    'snapshots': None,
    'order_parameter': 'magnetization',
    'flat_tolerance': estimators.FLAT_TOLERANCE,
}, validator=_validate_xi)
def xi_task(ctx, params):
    """Ensemble second-moment length and defect length per snapshot time."""
    directory = resolve_path(params['snapshots'], ctx.base_dir)
    by_time = defaultdict(list)
    for entry in ising2d.read_snapshot_index(directory):
        by_time[int(entry['time'])].append(ising2d.read_snapshot(os.path.join(directory, entry['file'])))

    rows, unresolved = [], 0
    for t in sorted(by_time):
        snaps = by_time[t]
        try:
            xi = estimators.second_moment_xi(snaps, params['order_parameter'],
                                             flat_tolerance=params['flat_tolerance'])
        except UnresolvableLength as e:
            ctx.logger.warning(f't={t}: {e}')
            xi, unresolved = math.nan, unresolved + 1
        rows.append((t, xi, estimators.defect_length(snaps, params['order_parameter']), len(snaps)))
    ctx.write_csv('xi.csv', ('t', 'xi', 'ell_defect', 'n_snapshots'), rows)
    return {'n_times': len(rows), 'unresolved': unresolved}


# ============================================
# Collapse engine
# ============================================

def _validate_optimize(params, base_dir):
    errors = collect(
        check_file(params['input'], 'params.input', base_dir),
        validate_number(params['grid_step'], 'params.grid_step', minimum=0, strict_min=True, maximum=0.5),
    )
    bounds = params['bounds']
    if (not isinstance(bounds, list) or len(bounds) != 2
            or not all(isinstance(b, list) and len(b) == 2 for b in bounds)):
        errors.append('params.bounds: must be [[xi_min, xi_max], [t_min, t_max]]')
    elif any(lo >= hi for lo, hi in bounds):
        errors.append('params.bounds: each range must have min < max')
    return errors


@collapse_engine.task('optimize', defaults={
    'input': None,
    'tau_column': 'tau',
    't_column': 't',
    'ell_column': 'ell',
    'grid_step': 0.02,
    'bounds': [[0.0, 1.0], [0.0, 1.0]],
}, validator=_validate_optimize)
def optimize_task(ctx, params):
    """Exponents that best collapse a family of ell(t; tau) curves."""
    path = resolve_path(params['input'], ctx.base_dir)
    columns = _load_columns(path, (params['tau_column'], params['t_column'], params['ell_column']))
    tau, t, ell = columns[params['tau_column']], columns[params['t_column']], columns[params['ell_column']]
    keep = np.isfinite(ell) & (t > 0) & (ell > 0)
    curves = [(value, t[keep & (tau == value)], ell[keep & (tau == value)]) for value in np.unique(tau[keep])]
    result = estimators.optimize_collapse(curves, grid_step=params['grid_step'],
                                          bounds=tuple(tuple(b) for b in params['bounds']))
    ctx.write_json('collapse.json', {**result.to_dict(), 'taus': [c[0] for c in curves]})
    return result.to_dict()
