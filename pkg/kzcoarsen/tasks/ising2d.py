"""
2D kinetic Ising engine tasks: arbitrary protocols, the classical KZ ramp and the stop-depth check.
"""
import os

import numpy as np

from kzcoarsen import ising2d, scaling
from kzcoarsen.estimators import fit_power_law
from kzcoarsen.models import ONSAGER_TC, HoldSegment, RampSegment, ThermalProtocol
from kzcoarsen.tasks import Engine, collect
from kzcoarsen.utils import validate_choice, validate_integer, validate_number, validate_number_list

ising2d_engine = Engine('ising2d')

INITIAL = ('random', 'all-up', 'embedded-domain')
T_UNITS = ('J', 'Tc')


def default_times(total: int, count: int = 24) -> list:
    """Roughly geometric sweep times from 1 to total, plus t = 0."""
    grid = np.unique(np.round(np.geomspace(1, max(total, 1), count)).astype(int))
    return [0] + [int(t) for t in grid]


# ============================================
# Protocol parsing
# ============================================

def _check_segments(segments) -> list:
    if not isinstance(segments, list) or not segments:
        return ['params.segments: must be a non-empty list']
    errors = []
    for i, seg in enumerate(segments):
        name = f'params.segments[{i}]'
        if not isinstance(seg, dict):
            errors.append(f'{name}: must be an object')
            continue
        kind = seg.get('type')
        if kind == 'ramp':
            allowed = ('type', 'T_a', 'T_b', 'tau', 'p')
            errors.extend(collect(
                validate_number(seg.get('T_a'), f'{name}.T_a', minimum=0),
                validate_number(seg.get('T_b'), f'{name}.T_b', minimum=0),
                validate_integer(seg.get('tau'), f'{name}.tau', minimum=1),
                validate_number(seg.get('p', 1.0), f'{name}.p', minimum=1.0),
            ))
        elif kind == 'hold':
            allowed = ('type', 'T', 'duration')
            errors.extend(collect(
                validate_number(seg.get('T'), f'{name}.T', minimum=0),
                validate_integer(seg.get('duration'), f'{name}.duration', minimum=1),
            ))
        else:
            errors.append(f"{name}.type: must be 'ramp' or 'hold'")
            continue
        errors.extend(f'{name}.{key}: unknown key' for key in seg if key not in allowed)
    return errors


def build_protocol(params) -> ThermalProtocol:
    """ThermalProtocol from a validated parameter block."""
    scale = ONSAGER_TC if params['T_unit'] == 'Tc' else 1.0
    segments = []
    for seg in params['segments']:
        if seg['type'] == 'ramp':
            segments.append(RampSegment(seg['T_a'] * scale, seg['T_b'] * scale, int(seg['tau']), seg.get('p', 1.0)))
        else:
            segments.append(HoldSegment(seg['T'] * scale, int(seg['duration'])))
    mask = None
    if params['initial'] == 'embedded-domain':
        size = params['size']
        mask = np.zeros((size, size), dtype=bool)
        height, width = params['domain']['height'], params['domain']['width']
        r0, c0 = (size - height) // 2, (size - width) // 2
        mask[r0:r0 + height, c0:c0 + width] = True
    return ThermalProtocol(segments, initial=params['initial'], mask=mask)


# ============================================
# Tasks
# ============================================

def _validate_protocol(params, base_dir):
    errors = collect(
        validate_integer(params['size'], 'params.size', minimum=8),
        validate_choice(params['initial'], 'params.initial', INITIAL),
        validate_choice(params['T_unit'], 'params.T_unit', T_UNITS),
        validate_choice(params['dynamics'], 'params.dynamics', tuple(ising2d.DYNAMICS)),
    ) + _check_segments(params['segments'])
    if params['initial'] == 'embedded-domain':
        domain = params['domain']
        if not isinstance(domain, dict) or set(domain) != {'height', 'width'}:
            errors.append('params.domain: embedded-domain needs {"height", "width"}')
        elif not errors:
            errors.extend(collect(
                validate_integer(domain['height'], 'params.domain.height', minimum=1, maximum=params['size']),
                validate_integer(domain['width'], 'params.domain.width', minimum=1, maximum=params['size']),
            ))
    window = params['fit_window']
    if window is not None and (not isinstance(window, list) or len(window) != 2):
        errors.append('params.fit_window: must be [t_min, t_max]')
    return errors


@ising2d_engine.task('protocol', defaults={
    'size': 128,
    'segments': [{'type': 'hold', 'T': 0.5, 'duration': 1000}],
    'T_unit': 'Tc',
    'initial': 'random',
    'domain': None,
    'dynamics': 'glauber',
    'fit_window': None,
    'write_snapshots': False,
}, validator=_validate_protocol)
def protocol_task(ctx, params):
    """Ensemble coarsening curve under a temperature schedule."""
    protocol = build_protocol(params)
    times = ctx.snapshots or default_times(protocol.total_sweeps)
    if max(times) > protocol.total_sweeps:
        raise ctx.stage_error('schedule', f'snapshot time {max(times)} beyond the {protocol.total_sweeps}-sweep schedule')

    replicas = ising2d.run_ensemble(ctx.seeds, protocol, params['size'], times, ctx.threads, params['dynamics'])
    rows = ising2d.summarize_ensemble(replicas)
    ctx.write_csv('series.csv', ('t', 'ell_mean', 'ell_stderr', 'T', 'xi'), rows)

    if params['write_snapshots']:
        entries = []
        for seed_index, (seed, stream) in enumerate(zip(ctx.seeds, replicas)):
            for snap in stream:
                name = os.path.join('snapshots', f'seed{seed_index:03d}-t{snap.time:08d}.bin')
                ising2d.write_snapshot(ctx.path(name), snap)
                ctx.record(name)
                entries.append({'seed': seed, 'time': snap.time, 'file': os.path.basename(name)})
        ising2d.write_snapshot_index(ctx.path('snapshots'), entries, ctx.schema_version)
        ctx.record(os.path.join('snapshots', 'index.json'))

    summary = {'n_seeds': len(ctx.seeds), 'size': params['size'], 'total_sweeps': protocol.total_sweeps,
               'final_ell_mean': rows[-1][1], 'final_xi': rows[-1][4]}
    if params['fit_window'] is not None:
        t = np.array([row[0] for row in rows], dtype=float)
        ell = np.array([row[1] for row in rows])
        err = np.array([row[2] for row in rows])
        keep = (t > 0) & np.isfinite(ell)
        sigma = err[keep] if np.all(err[keep] > 0) else None
        fit = fit_power_law(t[keep], ell[keep], sigma=sigma, window=tuple(params['fit_window']))
        ctx.write_json('fit.json', fit.to_dict())
        summary['fit'] = fit.to_dict()
    return summary


def _validate_kz(params, base_dir):
    return collect(
        validate_integer(params['size'], 'params.size', minimum=8),
        validate_number_list(params['taus'], 'params.taus', minimum=1, min_length=1),
        validate_number(params['T_high'], 'params.T_high', minimum=1.0, strict_min=True),
    )


@ising2d_engine.task('kz', defaults={
    'size': 256,
    'taus': [100, 1000, 10000],
    'T_high': 2.0,
    'allow_small': False,
}, validator=_validate_kz)
def kz_task(ctx, params):
    """Cooling ramps from T_high*T_c to T_c and the fitted xi(tau) exponent."""
    result = ising2d.kz_ramp_experiment(ctx.seeds, params['taus'], size=params['size'], threads=ctx.threads,
                                        T_high=params['T_high'] * ONSAGER_TC, allow_small=params['allow_small'])
    ctx.write_csv('kz.csv', ('tau', 'xi', 'ell_defect', 'xi_chi'), result['rows'])
    classical = scaling.get_exponents('ising-2d-classical', scaling.load_registry(ctx.config.get('EXPONENT_REGISTRY')))
    summary = {'excluded_taus': result['excluded'], 'fit_length': result['fit_length'],
               'predicted_exponent': scaling.kz_exponents(classical, 1.0)[1]}
    if result['fit'] is not None:
        ctx.write_json('fit.json', result['fit'].to_dict())
        summary['fit'] = result['fit'].to_dict()
    return summary


def _validate_depth(params, base_dir):
    errors = collect(
        validate_integer(params['size'], 'params.size', minimum=8),
        validate_number_list(params['T_stops'], 'params.T_stops', minimum=0, min_length=2),
        validate_integer(params['tau'], 'params.tau', minimum=1),
        validate_integer(params['hold'], 'params.hold', minimum=1),
    )
    if not errors and any(T >= 1.0 for T in params['T_stops']):
        errors.append('params.T_stops: stop temperatures are in units of T_c and must be < 1')
    return errors


@ising2d_engine.task('depth', defaults={
    'size': 128,
    'T_stops': [0.8, 0.6, 0.4],
    'tau': 100,
    'hold': 1000,
}, validator=_validate_depth)
def depth_task(ctx, params):
    """Stop-depth comparison at matched hold time."""
    result = ising2d.quench_depth_experiment(ctx.seeds, [T * ONSAGER_TC for T in params['T_stops']],
                                             params['tau'], params['hold'], size=params['size'],
                                             threads=ctx.threads)
    rows = [(i, T_s / ONSAGER_TC, ell)
            for T_s, lengths in result['lengths'].items()
            for i, ell in enumerate(lengths)]
    ctx.write_csv('depth.csv', ('seed_index', 'T_stop_over_tc', 'ell'), rows)
    return {'orderings': [{**o, 'T_shallow': o['T_shallow'] / ONSAGER_TC, 'T_deep': o['T_deep'] / ONSAGER_TC}
                          for o in result['orderings']]}
