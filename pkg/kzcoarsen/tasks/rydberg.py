"""
Rydberg array engine tasks: detuning ramps, domain-wall quenches and domain-size scans.
"""
from kzcoarsen import rydberg
from kzcoarsen.models import ArrayGeometry, DetuningMask, RydbergParams
from kzcoarsen.tasks import Engine, collect
from kzcoarsen.utils import validate_integer, validate_number

rydberg_engine = Engine('rydberg')

ARRAY = {
    'rows': 4,
    'cols': 4,
    'Omega': 1.0,
    'Rb_over_a': 1.2,
    'cutoff': 2,
    'dt_max': 0.05,
    'n_samples': 20,
    'krylov_dim': None,
    'tol': None,
    'write_state': False,
}


def _check_array(params) -> list:
    errors = collect(
        validate_integer(params['rows'], 'params.rows', minimum=1),
        validate_integer(params['cols'], 'params.cols', minimum=1),
        validate_number(params['Omega'], 'params.Omega', minimum=0, strict_min=True),
        validate_number(params['Rb_over_a'], 'params.Rb_over_a', minimum=0, strict_min=True),
        validate_number(params['dt_max'], 'params.dt_max', minimum=0, strict_min=True),
        validate_integer(params['n_samples'], 'params.n_samples', minimum=1),
    )
    if params['cutoff'] is not None:
        errors.extend(collect(validate_integer(params['cutoff'], 'params.cutoff', minimum=1)))
    if params['krylov_dim'] is not None:
        errors.extend(collect(validate_integer(params['krylov_dim'], 'params.krylov_dim', minimum=2)))
    if params['tol'] is not None:
        errors.extend(collect(validate_number(params['tol'], 'params.tol', minimum=0, strict_min=True)))
    if not errors and params['rows'] * params['cols'] > rydberg.MAX_SITES:
        errors.append(f'params.rows: {params["rows"]}x{params["cols"]} = {params["rows"] * params["cols"]} sites '
                      f'exceeds the {rydberg.MAX_SITES}-site limit of exact state-vector evolution')
    return errors


def _geometry(params):
    return ArrayGeometry(params['rows'], params['cols'])


def _krylov(ctx, params):
    return (params['krylov_dim'] or ctx.config.get('KRYLOV_DIM', 20),
            params['tol'] or ctx.config.get('KRYLOV_TOL', 1e-10))


def _write_series(ctx, rows):
    ctx.write_csv('observables.csv', ('t', 'm_s', 'S_stag', 'excess', 'norm'),
                  [(r['time'], r['staggered_magnetization'], r['staggered_structure_factor'],
                    r['excess_density'], r['norm']) for r in rows])
    ctx.write_csv('densities.csv', ('t', 'site', 'n'),
                  [(r['time'], site, float(n)) for r in rows for site, n in enumerate(r['densities'])])


def _write_state(ctx, params, psi):
    if params['write_state']:
        rydberg.write_checkpoint(ctx.path('state.bin'), psi)
        ctx.record('state.bin')


def _check_domain(domain, params, name='params.domain') -> list:
    if not isinstance(domain, dict) or set(domain) != {'height', 'width'}:
        return [f'{name}: must be {{"height", "width"}}']
    return collect(
        validate_integer(domain['height'], f'{name}.height', minimum=1, maximum=params['rows']),
        validate_integer(domain['width'], f'{name}.width', minimum=1, maximum=params['cols']),
    )


# ============================================
# Tasks
# ============================================

def _validate_ramp(params, base_dir):
    return _check_array(params) + collect(
        validate_number(params['delta_start'], 'params.delta_start'),
        validate_number(params['delta_end'], 'params.delta_end'),
        validate_number(params['duration'], 'params.duration', minimum=0, strict_min=True),
        validate_number(params['hold'], 'params.hold', minimum=0),
    )


@rydberg_engine.task('ramp', defaults={**ARRAY, 'delta_start': -4.0, 'delta_end': 4.0,
                                       'duration': 10.0, 'hold': 0.0},
                     validator=_validate_ramp)
def ramp_task(ctx, params):
    """Detuning ramp from the disordered ground state, optionally held."""
    geometry = _geometry(params)
    drive = RydbergParams(params['Omega'], params['delta_start'] * params['Omega'],
                          params['Rb_over_a'], params['cutoff'])
    krylov_dim, tol = _krylov(ctx, params)
    result = rydberg.ramp_experiment(geometry, drive, params['delta_start'], params['delta_end'],
                                     params['duration'], hold=params['hold'], dt_max=params['dt_max'],
                                     n_samples=params['n_samples'], krylov_dim=krylov_dim, tol=tol)
    _write_series(ctx, result['rows'])
    _write_state(ctx, params, result['final_state'])
    return {'n_sites': geometry.n_sites,
            'final_structure_factor': result['final_structure_factor'],
            'final_staggered_magnetization': result['rows'][-1]['staggered_magnetization'],
            'max_norm_error': max(abs(r['norm'] - 1.0) for r in result['rows'])}


def _validate_quench(params, base_dir):
    return _check_array(params) + collect(
        validate_number(params['delta'], 'params.delta'),
        validate_number(params['duration'], 'params.duration', minimum=0, strict_min=True),
    ) + _check_domain(params['domain'], params)


@rydberg_engine.task('quench', defaults={**ARRAY, 'delta': 2.0, 'duration': 10.0,
                                         'domain': {'height': 2, 'width': 2}, 'n_samples': 40},
                     validator=_validate_quench)
def quench_task(ctx, params):
    """Domain-wall state evolved at fixed detuning."""
    geometry = _geometry(params)
    drive = RydbergParams(params['Omega'], params['delta'] * params['Omega'],
                          params['Rb_over_a'], params['cutoff'])
    mask = DetuningMask.central_domain(geometry, params['domain']['height'], params['domain']['width'])
    krylov_dim, tol = _krylov(ctx, params)
    result = rydberg.domain_wall_quench(geometry, drive, mask, params['duration'], dt_max=params['dt_max'],
                                        n_samples=params['n_samples'], krylov_dim=krylov_dim, tol=tol)
    _write_series(ctx, result['rows'])
    _write_state(ctx, params, result['final_state'])
    return {key: result[key] for key in ('mean_excess_density', 'initial_excess_density', 'final_excess_density')}


def _validate_scan(params, base_dir):
    errors = _check_array(params) + collect(
        validate_number(params['delta'], 'params.delta'),
        validate_number(params['duration'], 'params.duration', minimum=0, strict_min=True),
    )
    if not isinstance(params['sizes'], list) or not params['sizes']:
        return errors + ['params.sizes: must be a non-empty list of {"height", "width"}']
    for i, domain in enumerate(params['sizes']):
        errors.extend(_check_domain(domain, params, f'params.sizes[{i}]'))
    return errors


@rydberg_engine.task('scan', defaults={**ARRAY, 'delta': 2.0, 'duration': 10.0,
                                       'sizes': [{'height': 1, 'width': 1}, {'height': 2, 'width': 2}]},
                     validator=_validate_scan)
def scan_task(ctx, params):
    """Embedded domains of several sizes: does each relax or grow."""
    geometry = _geometry(params)
    drive = RydbergParams(params['Omega'], params['delta'] * params['Omega'],
                          params['Rb_over_a'], params['cutoff'])
    report = rydberg.domain_size_scan(geometry, drive, [(d['height'], d['width']) for d in params['sizes']],
                                      params['duration'], dt_max=params['dt_max'], n_samples=params['n_samples'])
    ctx.write_csv('scan.csv', ('height', 'width', 'initial_excess', 'final_excess', 'mean_excess', 'trend'),
                  [(e['height'], e['width'], e['initial_excess_density'], e['final_excess_density'],
                    e['mean_excess_density'], e['trend']) for e in report])
    return {'domains': report}
