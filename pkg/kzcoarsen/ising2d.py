"""
Kinetic Monte Carlo for the 2D square-lattice Ising model under time-dependent
temperature schedules.

Single-spin-flip heat-bath (Glauber) dynamics in random site order; one sweep
is Lx*Ly attempted flips. The sweep kernels are compiled with numba and
release the GIL, so independent replicas run concurrently on threads. All
randomness for a sweep is drawn up front from the lattice's own numpy
Generator, which makes a run a pure function of its seed.
"""
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from numba import njit

from kzcoarsen.estimators import defect_length, fit_power_law, second_moment_xi
from kzcoarsen.models import (
    ONSAGER_TC,
    HoldSegment,
    LatticeSnapshot,
    PreconditionError,
    RampSegment,
    SpinLattice,
    ThermalProtocol,
    UnresolvableLength,
)
from kzcoarsen.utils import read_json, write_json

logger = logging.getLogger(__name__)

SNAPSHOT_MAGIC = b'KZSN'
SNAPSHOT_HEADER = np.dtype([
    ('magic', 'S4'),
    ('Lx', '<u4'),
    ('Ly', '<u4'),
    ('time', '<u8'),
    ('energy', '<f8'),
    ('magnetization', '<f8'),
    ('temperature', '<f8'),
])

MIN_KZ_SEEDS = 8
MIN_KZ_SIZE = 256
MIN_KZ_TAU = 10
ISING_ETA = 0.25
DEPTH_CLEANUP_SWEEPS = 2


# ============================================
# Sweep kernels
# ============================================

@njit(cache=True, nogil=True)
def _heat_bath_kernel(spins, order, uniforms, T):
    ly, lx = spins.shape
    for n in range(order.size):
        site = order[n]
        r = site // lx
        c = site % lx
        s = spins[r, c]
        field = (spins[(r + 1) % ly, c] + spins[(r + ly - 1) % ly, c]
                 + spins[r, (c + 1) % lx] + spins[r, (c + lx - 1) % lx])
        dE = 2.0 * s * field
        if T == 0.0:
            if dE < 0.0:
                prob = 1.0
            elif dE == 0.0:
                prob = 0.5
            else:
                prob = 0.0
        else:
            prob = 1.0 / (1.0 + math.exp(dE / T))
        if uniforms[n] < prob:
            spins[r, c] = -s


@njit(cache=True, nogil=True)
def _metropolis_kernel(spins, order, uniforms, T):
    ly, lx = spins.shape
    for n in range(order.size):
        site = order[n]
        r = site // lx
        c = site % lx
        s = spins[r, c]
        field = (spins[(r + 1) % ly, c] + spins[(r + ly - 1) % ly, c]
                 + spins[r, (c + 1) % lx] + spins[r, (c + lx - 1) % lx])
        dE = 2.0 * s * field
        if dE <= 0.0 or (T > 0.0 and uniforms[n] < math.exp(-dE / T)):
            spins[r, c] = -s


def _sweep(kernel, lattice: SpinLattice, T: float) -> SpinLattice:
    if not T >= 0:
        raise PreconditionError(f'temperature must be >= 0, got {T!r}')
    n_sites = lattice.Lx * lattice.Ly
    order = lattice.rng.permutation(n_sites)
    uniforms = lattice.rng.random(n_sites)
    kernel(lattice.spins, order, uniforms, float(T))
    lattice.sweeps += 1
    return lattice


def glauber_sweep(lattice: SpinLattice, T: float) -> SpinLattice:
    """
    One heat-bath sweep in random site order

    Flip probability is 1/(1 + exp(dE/T)); at T = 0 a flip is taken iff
    dE < 0, and with probability 1/2 when dE = 0.

    Args:
        lattice: Lattice to update in place
        T: Temperature in units of J

    Returns:
        SpinLattice: The same lattice, one sweep later
    """
    return _sweep(_heat_bath_kernel, lattice, T)


def metropolis_sweep(lattice: SpinLattice, T: float) -> SpinLattice:
    """One Metropolis sweep in random site order (equilibrium baseline)."""
    return _sweep(_metropolis_kernel, lattice, T)


DYNAMICS = {'glauber': glauber_sweep, 'metropolis': metropolis_sweep}


# ============================================
# Observables
# ============================================

def energy_per_site(spins) -> float:
    s = np.asarray(spins, dtype=np.int32)
    return float(-np.mean(s * (np.roll(s, -1, axis=0) + np.roll(s, -1, axis=1))))


def magnetization_per_site(spins) -> float:
    return float(np.mean(spins, dtype=np.float64))


def take_snapshot(lattice: SpinLattice, temperature=float('nan')) -> LatticeSnapshot:
    return LatticeSnapshot(
        time=lattice.sweeps,
        spins=lattice.spins.copy(),
        energy=energy_per_site(lattice.spins),
        magnetization=magnetization_per_site(lattice.spins),
        temperature=temperature,
    )


# ============================================
# Protocols
# ============================================

def initial_lattice(protocol: ThermalProtocol, Lx: int, Ly: int, seed: int) -> SpinLattice:
    """Build the starting lattice the protocol asks for."""
    if protocol.initial == 'all-up':
        return SpinLattice.all_up(Lx, Ly, seed)
    if protocol.initial == 'embedded-domain':
        return SpinLattice.embedded_domain(Lx, Ly, protocol.mask, seed)
    return SpinLattice.random(Lx, Ly, seed)


def linear_cooling(T_a: float, T_b: float, tau: int, hold: int = 0, initial: str = 'random') -> ThermalProtocol:
    """Linear ramp T_a -> T_b over tau sweeps, optionally followed by a hold at T_b."""
    segments = [RampSegment(T_a, T_b, int(tau))]
    if hold:
        segments.append(HoldSegment(T_b, int(hold)))
    return ThermalProtocol(segments, initial=initial)


def quench_and_hold(T: float, hold: int, initial: str = 'random') -> ThermalProtocol:
    """Instantaneous quench from the initial condition to T, then hold."""
    return ThermalProtocol([HoldSegment(T, int(hold))], initial=initial)


def _stream(lattice, protocol, times, sweep):
    total = protocol.total_sweeps
    pending = list(times)
    while pending and pending[0] == lattice.sweeps:
        yield take_snapshot(lattice, protocol.temperature_at(lattice.sweeps))
        pending.pop(0)
    while lattice.sweeps < total and pending:
        sweep(lattice, protocol.temperature_at(lattice.sweeps + 0.5))
        while pending and pending[0] == lattice.sweeps:
            yield take_snapshot(lattice, protocol.temperature_at(lattice.sweeps))
            pending.pop(0)


def run_protocol(lattice: SpinLattice, protocol: ThermalProtocol, snapshot_times, dynamics: str = 'glauber'):
    """
    Execute a temperature schedule and stream snapshots

    Sweep n (from time n to n+1) runs at the schedule's temperature at n + 1/2.

    Args:
        lattice: Starting lattice; its sweep counter is the schedule's clock
        protocol: ThermalProtocol to execute
        snapshot_times: Sweep times at which to emit snapshots
        dynamics: 'glauber' (default) or 'metropolis'

    Returns:
        generator of LatticeSnapshot
    """
    if dynamics not in DYNAMICS:
        raise PreconditionError(f'unknown dynamics {dynamics!r}')
    times = sorted({int(t) for t in snapshot_times})
    if any(int(t) != t for t in snapshot_times):
        raise PreconditionError('snapshot times must be whole sweeps')
    total = protocol.total_sweeps
    outside = [t for t in times if t < lattice.sweeps or t > total]
    if outside:
        raise PreconditionError(f'snapshot times {outside} fall outside the schedule [{lattice.sweeps}, {total}]')
    return _stream(lattice, protocol, times, DYNAMICS[dynamics])


# ============================================
# Ensembles
# ============================================

def _run_replica(args):
    seed, protocol, Lx, Ly, times, dynamics = args
    lattice = initial_lattice(protocol, Lx, Ly, seed)
    return list(run_protocol(lattice, protocol, times, dynamics))


def run_ensemble(seeds, protocol: ThermalProtocol, size, snapshot_times, threads: int = 1,
                 dynamics: str = 'glauber') -> list:
    """
    Run independent replicas of one protocol

    Returns:
        list: One snapshot list per seed, in seed order
    """
    Lx, Ly = (size, size) if isinstance(size, int) else size
    jobs = [(int(seed), protocol, Lx, Ly, list(snapshot_times), dynamics) for seed in seeds]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(_run_replica, jobs))
    return [_run_replica(job) for job in jobs]


def _ensemble_xi(snapshots, order_parameter='magnetization'):
    try:
        return second_moment_xi(snapshots, order_parameter)
    except UnresolvableLength as e:
        logger.debug(f'second-moment length unresolved: {e}')
        return float('nan')


def susceptibility_length(snapshots) -> float:
    """
    Length from the ensemble susceptibility, chi^(1/(2 - eta)) with chi = <M^2>/N

    Proportional to the correlation length near T_c, where a small ensemble
    leaves the second-moment ratio inside its noise floor.
    """
    chi = np.mean([float(np.sum(snap.spins, dtype=np.int64)) ** 2 / snap.spins.size for snap in snapshots])
    return float(chi) ** (1.0 / (2.0 - ISING_ETA))


def summarize_ensemble(replicas) -> list:
    """
    Per-time ensemble statistics of a set of replica snapshot streams

    Returns:
        list: Rows (t, ell_mean, ell_stderr, T, xi) with ell from the defect
            density and xi from the ensemble second moment
    """
    rows = []
    for column in zip(*replicas):
        lengths = np.array([defect_length(snap) for snap in column])
        finite = lengths[np.isfinite(lengths)]
        mean = float(np.mean(finite)) if finite.size else math.inf
        stderr = float(np.std(finite, ddof=1) / math.sqrt(finite.size)) if finite.size > 1 else 0.0
        rows.append((column[0].time, mean, stderr, column[0].temperature, _ensemble_xi(list(column))))
    return rows


def coarsening_series(seeds, protocol: ThermalProtocol, size, snapshot_times, threads: int = 1) -> dict:
    """
    Coarsening curve of an ensemble under one protocol

    Returns:
        dict: rows (t, ell_mean, ell_stderr, T, xi) and the raw replicas
    """
    logger.info(f'Ising ensemble: {len(seeds)} seeds, size {size}, {protocol.total_sweeps} sweeps')
    replicas = run_ensemble(seeds, protocol, size, snapshot_times, threads)
    return {'rows': summarize_ensemble(replicas), 'replicas': replicas}


def kz_ramp_experiment(seeds, tau_list, size: int = 256, threads: int = 1,
                       T_high: float = 2.0 * ONSAGER_TC, allow_small: bool = False) -> dict:
    """
    Classical KZ test: cool linearly from T_high to T_c and measure xi at the crossing

    Args:
        seeds: Replica seeds (>= 8 unless allow_small)
        tau_list: Ramp durations in sweeps
        size: Linear lattice size (>= 256 unless allow_small)
        threads: Replica workers
        T_high: Starting temperature
        allow_small: Downgrade the ensemble/lattice guards to warnings

    Returns:
        dict: rows (tau, xi, ell_defect, xi_chi), excluded taus, the length ~ tau^a fit (or None)
            and fit_length naming the length it used (second_moment or susceptibility)
    """
    if len(seeds) < MIN_KZ_SEEDS or size < MIN_KZ_SIZE:
        message = f'KZ ramp needs >= {MIN_KZ_SEEDS} seeds and size >= {MIN_KZ_SIZE}, got {len(seeds)} and {size}'
        if not allow_small:
            raise PreconditionError(message)
        logger.warning(message)

    rows, excluded = [], []
    for tau in sorted(int(t) for t in tau_list):
        if tau < MIN_KZ_TAU:
            logger.warning(f'tau={tau} sweeps is below {MIN_KZ_TAU}; excluded from the fit')
            excluded.append(tau)
            continue
        protocol = linear_cooling(T_high, ONSAGER_TC, tau)
        replicas = run_ensemble(seeds, protocol, size, [tau], threads)
        finals = [stream[-1] for stream in replicas]
        xi = _ensemble_xi(finals)
        ell = defect_length(finals)
        xi_chi = susceptibility_length(finals)
        if xi > size / 8:
            logger.warning(f'tau={tau}: xi={xi:.3g} exceeds L/8={size / 8:g}; finite-size contamination likely')
        logger.info(f'KZ ramp tau={tau}: xi={xi:.4g} ell_defect={ell:.4g} xi_chi={xi_chi:.4g}')
        rows.append((tau, xi, ell, xi_chi))

    fit, fit_length = None, 'second_moment'
    usable = [(row[0], row[1]) for row in rows if np.isfinite(row[1]) and row[1] > 0]
    if len(usable) < 3:
        logger.warning(f'{len(usable)} tau values resolved by the second moment; fitting the susceptibility length')
        fit_length = 'susceptibility'
        usable = [(row[0], row[3]) for row in rows if row[3] > 0]
    if len(usable) >= 3:
        taus, lengths = map(np.array, zip(*usable))
        fit = fit_power_law(taus, lengths, min_points=min(6, len(usable)),
                            min_decades=min(1.0, math.log10(taus.max() / taus.min())))
    else:
        logger.warning('Fewer than 3 usable tau values; no KZ fit')
    return {'rows': rows, 'excluded': excluded, 'fit': fit, 'fit_length': fit_length}


def quench_depth_experiment(seeds, T_stops, tau: int, hold: int, size: int = 128,
                            threads: int = 1, T_high: float = 2.0 * ONSAGER_TC) -> dict:
    """
    Stop-depth slowdown check

    Every run cools at the common rate T_c/tau per sweep from T_high, stops at
    its T_s, and holds for `hold` sweeps; the length at the end of the hold is
    compared seed by seed between neighbouring stop depths. A short
    zero-temperature hold before the measurement removes thermal walls.

    Returns:
        dict: lengths[T_s] per seed, and for each (shallow, deep) pair the
            fraction of seeds with ell_deep <= ell_shallow
    """
    T_stops = sorted((float(T) for T in T_stops), reverse=True)
    if any(T >= ONSAGER_TC for T in T_stops):
        raise PreconditionError('stop temperatures must lie in the ordered phase (T < T_c)')
    lengths = {}
    for T_s in T_stops:
        ramp = max(1, int(round(tau * (T_high - T_s) / ONSAGER_TC)))
        cooling = linear_cooling(T_high, T_s, ramp, hold=hold)
        protocol = ThermalProtocol(cooling.segments + [HoldSegment(0.0, DEPTH_CLEANUP_SWEEPS)])
        replicas = run_ensemble(seeds, protocol, size, [protocol.total_sweeps], threads)
        lengths[T_s] = [defect_length(stream[-1]) for stream in replicas]
        logger.info(f'Quench depth T_s={T_s:.4g}: mean ell={np.mean(lengths[T_s]):.4g}')

    orderings = []
    for shallow, deep in zip(T_stops, T_stops[1:]):
        wins = [d <= s for s, d in zip(lengths[shallow], lengths[deep])]
        orderings.append({'T_shallow': shallow, 'T_deep': deep, 'fraction': float(np.mean(wins))})
    return {'lengths': lengths, 'orderings': orderings}


# ============================================
# Snapshot files
# ============================================

def write_snapshot(path: str, snapshot: LatticeSnapshot) -> str:
    """
    Write one snapshot as a packed bitmap (bit set = spin up) after a fixed header

    Returns:
        str: The path written
    """
    ly, lx = snapshot.spins.shape
    header = np.array([(SNAPSHOT_MAGIC, lx, ly, snapshot.time, snapshot.energy,
                        snapshot.magnetization, snapshot.temperature)], dtype=SNAPSHOT_HEADER)
    bits = np.packbits((snapshot.spins > 0).ravel())
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'wb') as f:
        f.write(header.tobytes())
        f.write(bits.tobytes())
    return path


def read_snapshot(path: str) -> LatticeSnapshot:
    with open(path, 'rb') as f:
        raw = f.read()
    header = np.frombuffer(raw[:SNAPSHOT_HEADER.itemsize], dtype=SNAPSHOT_HEADER)[0]
    if header['magic'] != SNAPSHOT_MAGIC:
        raise PreconditionError(f'{path} is not a snapshot file')
    lx, ly = int(header['Lx']), int(header['Ly'])
    bits = np.frombuffer(raw[SNAPSHOT_HEADER.itemsize:], dtype=np.uint8)
    up = np.unpackbits(bits, count=lx * ly).reshape(ly, lx)
    return LatticeSnapshot(
        time=int(header['time']),
        spins=np.where(up == 1, 1, -1).astype(np.int8),
        energy=float(header['energy']),
        magnetization=float(header['magnetization']),
        temperature=float(header['temperature']),
    )


def write_snapshot_index(directory: str, entries, schema_version: str) -> str:
    """JSON index of snapshot files: one entry per (seed, time, file)."""
    return write_json(os.path.join(directory, 'index.json'), {'snapshots': list(entries)}, schema_version)


def read_snapshot_index(directory: str) -> list:
    return read_json(os.path.join(directory, 'index.json'))['snapshots']
