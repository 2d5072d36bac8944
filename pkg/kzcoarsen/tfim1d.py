"""
Free-fermion simulator for ramps across the 1D transverse-field Ising critical point.

The periodic chain H = -J sum s^x s^x - h sum s^z (J = 1, h = 1 - g) splits into
independent two-level problems, one per positive momentum k = pi(2n-1)/L of the
even-parity sector:

    H_k(t) = a_k(t) tau^z + b_k tau^x,   a_k = 2(h(t) - cos k),   b_k = 2 sin k

Each mode starts in its instantaneous ground state at g_start and is propagated
with a fourth-order commutator-free Magnus step (exactly unitary) under adaptive
step control. The excitation probability p_k is the overlap with the
instantaneous excited state at g_end; the kink density is n = (2/L) sum p_k.
"""
import dataclasses
import logging
import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from kzcoarsen.models import ChainSpec, IntegrationError, ModeState, PreconditionError, RampResult

logger = logging.getLogger(__name__)

MODE_BATCH = 64
SAFETY = 0.9
MAX_GROWTH = 5.0
MIN_SHRINK = 0.2
NORM_TOL = 1e-9
_GAUSS = math.sqrt(3.0) / 6.0


# ============================================
# Ramp geometry
# ============================================

def kz_gap_scale(tau: float, p: float = 1.0) -> float:
    """g_KZ = tau^(-p/(p+1)) for nu = z = 1."""
    return tau ** (-p / (p + 1.0))


def resolve_endpoints(spec: ChainSpec) -> tuple:
    """
    Fill default ramp endpoints

    g_start defaults to -max(10 g_KZ, 1); g_end defaults to 1 (h = 0), which
    keeps the ramp clear of the second transition at g = 2.

    Returns:
        tuple: (g_start, g_end)
    """
    g_start = spec.g_start
    if g_start is None:
        g_start = -max(10.0 * kz_gap_scale(spec.tau, spec.p), 1.0)
    g_end = 1.0 if spec.g_end is None else spec.g_end
    if not 0 < g_end < 2:
        raise PreconditionError(f'g_end must lie in (0, 2) to end in the ordered phase, got {g_end}')
    if g_end <= g_start:
        raise PreconditionError('g_end must exceed g_start')
    return g_start, g_end


def time_of(g: float, tau: float, p: float) -> float:
    """Inverse of g(t) = sign(t)|t/tau|^p."""
    return math.copysign(tau * abs(g) ** (1.0 / p), g)


def g_of(t, tau: float, p: float):
    """g(t) = sign(t)|t/tau|^p, vectorized."""
    return np.sign(t) * np.abs(t / tau) ** p


# ============================================
# Two-level algebra
# ============================================

def mode_coefficients(k, g):
    """(a_k, b_k) of the mode Hamiltonian at tuning parameter g."""
    k = np.asarray(k, dtype=float)
    a = 2.0 * ((1.0 - g) - np.cos(k))
    b = 2.0 * np.sin(k)
    return a, b


def ground_state(k, g) -> tuple:
    """
    Instantaneous ground state of a tau^z + b tau^x

    Returns:
        tuple: (u, v) complex arrays
    """
    a, b = mode_coefficients(k, g)
    a, b = np.broadcast_arrays(a, b)
    energy = np.hypot(a, b)
    # pick the branch that stays away from 0/0
    u = np.where(a >= 0, b, energy - a)
    v = np.where(a >= 0, -(a + energy), -b)
    norm = np.hypot(u, v)
    return (u / norm).astype(complex), (v / norm).astype(complex)


def excited_state(k, g) -> tuple:
    """Orthogonal partner (-v*, u*) of the ground state."""
    u, v = ground_state(k, g)
    return -np.conj(v), np.conj(u)


def excitation_probability(k, g, u, v):
    """|<e(g)|psi>|^2 for mode amplitudes (u, v)."""
    eu, ev = excited_state(k, g)
    return np.abs(np.conj(eu) * u + np.conj(ev) * v) ** 2


def _apply_exponential(mz, mx, my, u, v):
    """Apply exp(-i (mz s^z + mx s^x + my s^y)) to (u, v)."""
    theta = np.sqrt(mz * mz + mx * mx + my * my)
    safe = np.where(theta > 0, theta, 1.0)
    c = np.cos(theta)
    s = np.where(theta > 0, np.sin(theta) / safe, 1.0)
    # (m . sigma)(u, v)
    su = mz * u + (mx - 1j * my) * v
    sv = (mx + 1j * my) * u - mz * v
    return c * u - 1j * s * su, c * v - 1j * s * sv


# ============================================
# Integrator
# ============================================

def _magnus_step(k, t, dt, u, v, tau, p):
    """
    One fourth-order Magnus step plus the embedded midpoint estimate

    Returns:
        tuple: (u4, v4, error) where error is the max-norm distance to the
            second-order result
    """
    a1, b = mode_coefficients(k, g_of(t + (0.5 - _GAUSS) * dt, tau, p))
    a2, _ = mode_coefficients(k, g_of(t + (0.5 + _GAUSS) * dt, tau, p))
    mz = 0.5 * dt * (a1 + a2)
    mx = dt * b
    my = _GAUSS * dt * dt * b * (a2 - a1)
    u4, v4 = _apply_exponential(mz, mx, my, u, v)

    am, _ = mode_coefficients(k, g_of(t + 0.5 * dt, tau, p))
    u2, v2 = _apply_exponential(dt * am, dt * b, 0.0, u, v)
    error = np.maximum(np.abs(u4 - u2), np.abs(v4 - v2))
    return u4, v4, error


def integrate_modes(k, tau: float, p: float, g_start: float, g_end: float,
                    rtol: float = 1e-8, checkpoints=None) -> dict:
    """
    Propagate a batch of modes from g_start to g_end

    Every mode carries its own clock and step size; steps are clipped so that
    all modes land exactly on each checkpoint time.

    Args:
        k: Array of momenta
        tau: Ramp timescale
        p: Sweep power
        g_start: Initial tuning parameter (disordered side)
        g_end: Final tuning parameter
        rtol: Per-step error tolerance on the unit-norm amplitudes
        checkpoints: Increasing times in (t_start, t_end] at which to record p_k

    Returns:
        dict: u, v final amplitudes, p_k, and p_track (checkpoints x modes)
    """
    k = np.atleast_1d(np.asarray(k, dtype=float))
    t_start = time_of(g_start, tau, p)
    t_end = time_of(g_end, tau, p)
    marks = np.asarray([t_end] if checkpoints is None else checkpoints, dtype=float)
    if marks.size == 0 or marks[-1] != t_end:
        marks = np.append(marks, t_end)

    u, v = ground_state(k, g_start)
    t = np.full(k.shape, t_start)
    dt = np.full(k.shape, min(0.1, (t_end - t_start) / 100.0))
    min_dt = 1e-12 * (t_end - t_start)
    next_mark = np.zeros(k.shape, dtype=int)
    p_track = np.zeros((marks.size, k.size))
    active = np.ones(k.shape, dtype=bool)

    while np.any(active):
        idx = np.flatnonzero(active)
        target = marks[next_mark[idx]]
        step = np.minimum(dt[idx], target - t[idx])
        u_new, v_new, error = _magnus_step(k[idx], t[idx], step, u[idx], v[idx], tau, p)

        accept = error <= rtol
        scale = SAFETY * (rtol / np.maximum(error, 1e-300)) ** (1.0 / 3.0)
        scale = np.clip(scale, MIN_SHRINK, MAX_GROWTH)

        hit = idx[accept]
        u[hit] = u_new[accept]
        v[hit] = v_new[accept]
        t[hit] = t[hit] + step[accept]
        landed = hit[t[hit] >= marks[next_mark[hit]] - 1e-12 * abs(t_end - t_start)]
        for j in landed:
            t[j] = marks[next_mark[j]]
            g_here = g_of(t[j], tau, p)
            p_track[next_mark[j], j] = excitation_probability(k[j], g_here, u[j], v[j])
            next_mark[j] += 1
            if next_mark[j] == marks.size:
                active[j] = False

        # grow from the attempted step, never from a clipped one
        dt[idx] = np.where(accept, np.maximum(dt[idx], step) * scale, step * scale)
        stalled = idx[(~accept) & (dt[idx] < min_dt)]
        if stalled.size:
            bad = float(k[stalled[0]])
            logger.error(f'Step-size underflow for mode k={bad:.6g} at t={t[stalled[0]]:.6g}')
            raise IntegrationError(bad, f'step size fell below {min_dt:.3g} before reaching rtol={rtol}')

    p_final = np.clip(p_track[-1], 0.0, 1.0)
    return {'u': u, 'v': v, 'p_k': p_final, 'p_track': np.clip(p_track, 0.0, 1.0), 'times': marks}


# ============================================
# Public operations
# ============================================

def mode_evolve(spec: ChainSpec, k: float, rtol: float = 1e-8) -> float:
    """
    Excitation probability of a single momentum mode after the ramp

    Args:
        spec: Chain and ramp description
        k: Momentum in (0, pi)
        rtol: Per-step error tolerance

    Returns:
        float: p_k in [0, 1]
    """
    if not 0 < k < math.pi:
        raise PreconditionError(f'k must lie in (0, pi), got {k}')
    g_start, g_end = resolve_endpoints(spec)
    result = integrate_modes([k], spec.tau, spec.p, g_start, g_end, rtol=rtol)
    state = ModeState(k, complex(result['u'][0]), complex(result['v'][0]))
    if abs(state.norm - 1.0) > NORM_TOL:
        raise IntegrationError(k, f'mode norm drifted to {state.norm!r}')
    return float(result['p_k'][0])


def ramp_simulate(spec: ChainSpec, threads: int = 1, rtol: float = 1e-8,
                  n_checkpoints: int = 32) -> RampResult:
    """
    Ramp the full chain and measure its kink density

    Modes are integrated in fixed-size batches; batches may run on a thread
    pool but are always reduced in momentum order.

    Args:
        spec: Chain and ramp description
        threads: Worker count for mode batches
        rtol: Per-step error tolerance
        n_checkpoints: Number of evenly spaced times at which n(t) is recorded

    Returns:
        RampResult
    """
    g_start, g_end = resolve_endpoints(spec)
    t_start = time_of(g_start, spec.tau, spec.p)
    t_end = time_of(g_end, spec.tau, spec.p)
    checkpoints = np.linspace(t_start, t_end, n_checkpoints + 1)[1:]
    momenta = spec.momenta
    batches = [momenta[i:i + MODE_BATCH] for i in range(0, momenta.size, MODE_BATCH)]

    logger.info(f'TFIM ramp L={spec.L} tau={spec.tau} p={spec.p} '
                f'g: {g_start:.4g} -> {g_end:.4g} ({len(batches)} batches)')

    def work(batch):
        return integrate_modes(batch, spec.tau, spec.p, g_start, g_end,
                               rtol=rtol, checkpoints=checkpoints)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, batches))
    else:
        results = [work(batch) for batch in batches]

    p_k = np.concatenate([r['p_k'] for r in results])
    p_track = np.concatenate([r['p_track'] for r in results], axis=1)
    norms = np.concatenate([np.abs(r['u']) ** 2 + np.abs(r['v']) ** 2 for r in results])

    n = float(2.0 * np.sum(p_k) / spec.L)
    n_track = 2.0 * p_track.sum(axis=1) / spec.L
    norm_drift = float(np.max(np.abs(norms - 1.0)))
    ell = 1.0 / n if n > 0 else math.inf

    logger.info(f'TFIM ramp done: n={n:.6g} ell={ell:.6g} norm drift={norm_drift:.2e}')
    return RampResult(
        k=momenta, p_k=p_k, n=n, ell=ell, tau=spec.tau, p=spec.p, L=spec.L,
        times=checkpoints, g_values=g_of(checkpoints, spec.tau, spec.p),
        n_track=n_track, norm_drift=norm_drift,
    )


def tau_sweep(spec: ChainSpec, taus, threads: int = 1, rtol: float = 1e-8, window=None) -> tuple:
    """
    Repeat the ramp over several tau and fit n ~ tau^slope

    The chain's own tau is ignored; default endpoints are recomputed per tau.

    Returns:
        tuple: (list of RampResult, FitResult)
    """
    from kzcoarsen.estimators import fit_power_law

    taus = [float(tau) for tau in taus]
    if len(taus) < 3:
        raise PreconditionError('a tau sweep needs at least 3 values')
    results = []
    for tau in taus:
        results.append(ramp_simulate(dataclasses.replace(spec, tau=tau), threads=threads, rtol=rtol))

    densities = np.array([r.n for r in results])
    fit = fit_power_law(np.array(taus), densities, window=window,
                        min_points=min(6, len(taus)), min_decades=min(1.0, math.log10(max(taus) / min(taus))))
    logger.info(f'Defect exponent over tau={taus}: {fit.exponent:.4f} +- {fit.stderr:.4f}')
    return results, fit
