"""
TFIM chain engine tasks: one ramp, or a tau sweep with its defect-exponent fit.
"""
from kzcoarsen import tfim1d
from kzcoarsen.models import ChainSpec
from kzcoarsen.tasks import Engine, collect
from kzcoarsen.utils import validate_integer, validate_number, validate_number_list

tfim1d_engine = Engine('tfim1d')

CHAIN = {
    'L': 512,
    'p': 1.0,
    'g_start': None,
    'g_end': None,
    'rtol': None,
}


def _check_chain(params) -> list:
    errors = collect(
        validate_integer(params['L'], 'params.L', minimum=8, even=True),
        validate_number(params['p'], 'params.p', minimum=1.0),
        validate_number(params['g_start'], 'params.g_start', maximum=0, allow_none=True),
        validate_number(params['g_end'], 'params.g_end', minimum=0, strict_min=True, allow_none=True),
        validate_number(params['rtol'], 'params.rtol', minimum=0, strict_min=True, maximum=1e-4,
                        allow_none=True),
    )
    if params['g_start'] == 0:
        errors.append('params.g_start: must be < 0 (disordered phase)')
    if params['g_end'] is not None and not errors and params['g_end'] >= 2:
        errors.append('params.g_end: must be < 2 (second transition at g = 2)')
    return errors


def _rtol(ctx, params):
    return params['rtol'] or ctx.config.get('TFIM_RTOL', 1e-8)


def _validate_ramp(params, base_dir):
    return _check_chain(params) + collect(
        validate_number(params['tau'], 'params.tau', minimum=0, strict_min=True),
        validate_integer(params['n_checkpoints'], 'params.n_checkpoints', minimum=1),
    )


@tfim1d_engine.task('ramp', defaults={**CHAIN, 'tau': 100.0, 'n_checkpoints': 32}, validator=_validate_ramp)
def ramp_task(ctx, params):
    """Single ramp: mode occupations, kink density and its history."""
    spec = ChainSpec(L=params['L'], tau=params['tau'], p=params['p'],
                     g_start=params['g_start'], g_end=params['g_end'])
    result = tfim1d.ramp_simulate(spec, threads=ctx.threads, rtol=_rtol(ctx, params),
                                  n_checkpoints=params['n_checkpoints'])
    ctx.write_csv('modes.csv', ('k', 'p_k'), zip(result.k, result.p_k))
    ctx.write_csv('track.csv', ('t', 'g', 'n'), zip(result.times, result.g_values, result.n_track))
    summary = result.summary()
    summary['predicted_exponent'] = -params['p'] / (params['p'] + 1.0)
    return summary


def _validate_sweep(params, base_dir):
    errors = _check_chain(params) + collect(
        validate_number_list(params['taus'], 'params.taus', minimum=0, strict_min=True, min_length=3),
    )
    window = params['window']
    if window is not None and (not isinstance(window, list) or len(window) != 2):
        errors.append('params.window: must be [t_min, t_max]')
    return errors


@tfim1d_engine.task('sweep', defaults={**CHAIN, 'taus': [25.0, 50.0, 100.0, 200.0, 400.0], 'window': None},
                    validator=_validate_sweep)
def sweep_task(ctx, params):
    """Kink density over several ramp times and the fitted KZ exponent."""
    spec = ChainSpec(L=params['L'], tau=params['taus'][0], p=params['p'],
                     g_start=params['g_start'], g_end=params['g_end'])
    results, fit = tfim1d.tau_sweep(spec, params['taus'], threads=ctx.threads, rtol=_rtol(ctx, params),
                                    window=params['window'])
    ctx.write_csv('sweep.csv', ('tau', 'n', 'ell', 'norm_drift'),
                  [(r.tau, r.n, r.ell, r.norm_drift) for r in results])
    ctx.write_json('fit.json', fit.to_dict())
    return {
        'fit': fit.to_dict(),
        'predicted_exponent': -params['p'] / (params['p'] + 1.0),
        'max_norm_drift': max(r.norm_drift for r in results),
    }
