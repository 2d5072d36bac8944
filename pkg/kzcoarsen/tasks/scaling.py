"""
Scaling engine tasks: KZ scales, growth exponents, case labels and scaling-function curves.
"""
import math

import numpy as np

from kzcoarsen import scaling
from kzcoarsen.models import CriticalExponents, MicroScales, PreconditionError, RampProtocol, ScalingModel
from kzcoarsen.tasks import Engine, collect
from kzcoarsen.utils import validate_choice, validate_integer, validate_number, validate_number_list

scaling_engine = Engine('scaling')

FUNCTIONS = ('f', 'F', 'h')
COMMON = {
    'class': 'ising-2+1d',
    'exponents': None,
    'p': 1.0,
}


def _check_common(params) -> list:
    errors = collect(validate_number(params['p'], 'params.p', minimum=1.0))
    if params['exponents'] is not None:
        block = params['exponents']
        if not isinstance(block, dict):
            errors.append('params.exponents: must be an object')
        else:
            allowed = ('nu', 'z', 'nu_bar', 'z_bar', 'z_d', 'd')
            errors.extend(f'params.exponents.{key}: unknown key' for key in block if key not in allowed)
            errors.extend(f'params.exponents.{key}: is required' for key in allowed if key not in block)
            errors.extend(collect(*(validate_number(block[key], f'params.exponents.{key}', minimum=0, strict_min=True)
                                    for key in allowed if key in block)))
    elif not isinstance(params['class'], str):
        errors.append('params.class: must be a registry name')
    return errors


def _check_amplitudes(params) -> list:
    block = params.get('amplitudes') or {}
    if not isinstance(block, dict):
        return ['params.amplitudes: must be an object']
    return collect(*(validate_number(value, f'params.amplitudes.{key}', minimum=0, strict_min=True)
                     for key, value in block.items()))


def resolve_exponents(params, registry_path=None) -> CriticalExponents:
    """Explicit exponents block wins over the registry class name."""
    if params.get('exponents'):
        return CriticalExponents(name='custom', **params['exponents'])
    return scaling.get_exponents(params['class'], scaling.load_registry(registry_path))


def build_model(params, exponents) -> ScalingModel:
    return ScalingModel(exponents, dict(params.get('amplitudes') or {}),
                        x_c=params.get('x_c'), y_c=params.get('y_c'))


# ============================================
# Tasks
# ============================================

def _validate_scales(params, base_dir):
    return _check_common(params) + collect(
        validate_number_list(params['taus'], 'params.taus', minimum=0, strict_min=True),
        validate_number(params['l0'], 'params.l0', minimum=0, strict_min=True),
        validate_number(params['t0'], 'params.t0', minimum=0, strict_min=True),
    )


@scaling_engine.task('scales', defaults={**COMMON, 'taus': [1000.0], 'l0': 1.0, 't0': 1.0},
                     validator=_validate_scales)
def scales_task(ctx, params):
    """KZ scales and excess energy for a list of ramp times."""
    exponents = resolve_exponents(params, ctx.config.get('EXPONENT_REGISTRY'))
    micro = MicroScales(params['l0'], params['t0'])
    rows = []
    for tau in params['taus']:
        kz = scaling.kz_scales(exponents, micro, RampProtocol(tau=tau, p=params['p']))
        rows.append((tau, kz.t_kz, kz.xi_kz, kz.g_kz, scaling.excess_energy_scale(exponents, kz)))
    ctx.write_csv('scales.csv', ('tau', 't_kz', 'xi_kz', 'g_kz', 'excess_energy'), rows)
    a_t, a_xi = scaling.kz_exponents(exponents, params['p'])
    return {'exponents': exponents.to_dict(), 'p': params['p'], 'alpha_t': a_t, 'alpha_xi': a_xi,
            'scales': [dict(zip(('tau', 't_kz', 'xi_kz', 'g_kz', 'excess_energy'), row)) for row in rows]}


@scaling_engine.task('exponent', defaults=dict(COMMON), validator=lambda p, _: _check_common(p))
def exponent_task(ctx, params):
    """Late-time growth exponent and its regime flag."""
    exponents = resolve_exponents(params, ctx.config.get('EXPONENT_REGISTRY'))
    value, regime = scaling.growth_exponent(exponents, params['p'])
    ctx.logger.info(f'growth exponent ({exponents.name}, p={params["p"]}) = {value:.6f} [{regime.value}]')
    return {'exponents': exponents.to_dict(), 'p': params['p'],
            'growth_exponent': value, 'regime': regime.value}


def _validate_classify(params, base_dir):
    return _check_common(params) + _check_amplitudes(params) + collect(
        validate_number(params['tau'], 'params.tau', minimum=0, strict_min=True),
        validate_number(params['g_s'], 'params.g_s', allow_none=True),
        validate_number(params['x_c'], 'params.x_c', allow_none=True),
        validate_choice(params['side'], 'params.side', scaling.STOP_SIDES),
    )


@scaling_engine.task('classify', defaults={**COMMON, 'tau': 1000.0, 'g_s': None, 'side': 'ordered',
                                           'x_c': None, 'amplitudes': {}},
                     validator=_validate_classify)
def classify_task(ctx, params):
    """Coarsening case of a (possibly stopped) ramp."""
    exponents = resolve_exponents(params, ctx.config.get('EXPONENT_REGISTRY'))
    protocol = RampProtocol(tau=params['tau'], p=params['p'], g_s=params['g_s'])
    kz = scaling.kz_scales(exponents, MicroScales(), protocol)
    case = scaling.classify_case(protocol, kz, build_model(params, exponents), params['side'])
    return {'case': case.value, 'x_s': protocol.stop_time / kz.t_kz, 'kz': kz.to_dict()}


def _validate_eval(params, base_dir):
    errors = _check_common(params) + _check_amplitudes(params) + collect(
        validate_choice(params['function'], 'params.function', FUNCTIONS),
        validate_number(params['x_s'], 'params.x_s', allow_none=True),
        validate_number(params['x_c'], 'params.x_c', allow_none=True),
        validate_number(params['y_c'], 'params.y_c', allow_none=True),
    )
    if params['points'] is None and params['grid'] is None:
        errors.append('params.points: either points or grid is required')
    if params['points'] is not None:
        errors.extend(collect(validate_number_list(params['points'], 'params.points')))
    if params['grid'] is not None:
        grid = params['grid']
        if not isinstance(grid, dict):
            errors.append('params.grid: must be an object')
        else:
            errors.extend(f'params.grid.{key}: unknown key' for key in grid
                          if key not in ('start', 'stop', 'num', 'spacing'))
            errors.extend(collect(
                validate_number(grid.get('start'), 'params.grid.start'),
                validate_number(grid.get('stop'), 'params.grid.stop'),
                validate_integer(grid.get('num'), 'params.grid.num', minimum=2),
                validate_choice(grid.get('spacing', 'linear'), 'params.grid.spacing', ('linear', 'log')),
            ))
    if params['function'] == 'h' and params['y_c'] is None:
        errors.append('params.y_c: required for function h')
    return errors


def _points(params):
    if params['points'] is not None:
        return [float(x) for x in params['points']]
    grid = params['grid']
    if grid.get('spacing', 'linear') == 'log':
        if grid['start'] <= 0 or grid['stop'] <= 0:
            raise PreconditionError('log grids need positive start and stop')
        return list(np.geomspace(grid['start'], grid['stop'], int(grid['num'])))
    return list(np.linspace(grid['start'], grid['stop'], int(grid['num'])))


@scaling_engine.task('eval', defaults={**COMMON, 'function': 'F', 'points': None, 'grid': None,
                                       'x_s': None, 'x_c': None, 'y_c': None, 'amplitudes': {}},
                     validator=_validate_eval)
def eval_task(ctx, params):
    """Tabulate f, F or h on a set of points."""
    exponents = resolve_exponents(params, ctx.config.get('EXPONENT_REGISTRY'))
    model = build_model(params, exponents)
    rows = []
    for x in _points(params):
        if params['function'] == 'f':
            value = scaling.eval_f(model, x, params['p'])
        elif params['function'] == 'F':
            value = scaling.eval_F(model, x, params['x_s'], params['p'])
        else:
            value = math.inf if x == model.y_c else scaling.eval_h(model, x)
        rows.append((x, value))
    ctx.write_csv('curve.csv', ('x', params['function']), rows)
    return {'function': params['function'], 'n_points': len(rows), 'x_s': params['x_s'],
            'exponents': exponents.to_dict()}


def _validate_integrate(params, base_dir):
    errors = _check_common(params) + collect(
        validate_number(params['tau'], 'params.tau', minimum=0, strict_min=True),
        validate_number(params['g_s'], 'params.g_s', minimum=0, strict_min=True, allow_none=True),
        validate_number(params['t_start'], 'params.t_start', minimum=0, strict_min=True),
        validate_number(params['t_end'], 'params.t_end', minimum=0, strict_min=True),
        validate_number(params['ell0'], 'params.ell0', minimum=0, strict_min=True),
        validate_number(params['c'], 'params.c', minimum=0, strict_min=True),
    )
    if not errors and params['t_end'] <= params['t_start']:
        errors.append('params.t_end: must exceed t_start')
    return errors


@scaling_engine.task('integrate', defaults={**COMMON, 'tau': 100.0, 'g_s': None, 't_start': 1.0,
                                            't_end': 1e4, 'ell0': 1.0, 'c': 1.0},
                     validator=_validate_integrate)
def integrate_task(ctx, params):
    """Integrate the growth law along the ordered side of a ramp."""
    exponents = resolve_exponents(params, ctx.config.get('EXPONENT_REGISTRY'))
    protocol = RampProtocol(tau=params['tau'], p=params['p'], g_s=params['g_s'])
    t, ell = scaling.integrate_growth(exponents, protocol, params['t_start'], params['t_end'],
                                      params['ell0'], params['c'])
    ctx.write_csv('growth.csv', ('t', 'ell'), zip(t, ell))
    tail = slice(int(0.8 * t.size), None)
    late_slope = float(np.polyfit(np.log(t[tail]), np.log(ell[tail]), 1)[0])
    predicted, regime = scaling.growth_exponent(exponents, params['p'])
    return {'late_log_slope': late_slope, 'growth_exponent': predicted, 'regime': regime.value}
