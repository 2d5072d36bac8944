"""
Scaling core.

Kibble-Zurek scales, coarsening growth exponents and the piecewise universal
scaling functions f_p(x), F(x, x_s) and h(y), plus the classification of a
stopped ramp into its sequence of coarsening regimes.

Everything here is a pure function of its arguments. Lengths are in units of
l0 and times in units of t0; x = t/t_KZ, x_s = t_s/t_KZ and y = g/g_KZ.
Neighbouring branches are amplitude-matched so every scaling function is
continuous; exactly on a boundary the left branch is used.
"""
import json
import logging
import math

import numpy as np
from scipy.integrate import solve_ivp

from kzcoarsen.models import (
    CoarseningCase,
    CriticalDivergence,
    CriticalExponents,
    GrowthRegime,
    KzScales,
    PreconditionError,
)

logger = logging.getLogger(__name__)

ZERO_EXPONENT_TOL = 1e-12
STOP_SIDES = ('ordered', 'critical', 'disordered')


# ============================================
# Exponent registry
# ============================================

def load_registry(path=None) -> dict:
    """
    Load a universality-class registry from JSON

    Args:
        path: JSON file mapping class names to exponent tuples; defaults to the
            configured registry

    Returns:
        dict: name -> CriticalExponents
    """
    if path is None:
        from kzcoarsen.config import get_registry_path
        path = get_registry_path()
    with open(path, 'r', encoding='utf-8') as f:
        raw = json.load(f)

    registry = {}
    for name, entry in raw.items():
        unknown = set(entry) - {'nu', 'z', 'nu_bar', 'z_bar', 'z_d', 'd'}
        if unknown:
            raise PreconditionError(f'registry entry {name!r} has unknown keys {sorted(unknown)}')
        registry[name] = CriticalExponents(name=name, **entry)
    logger.debug(f'Loaded {len(registry)} universality classes from {path}')
    return registry


def get_exponents(name: str, registry=None) -> CriticalExponents:
    """Look up a universality class by name."""
    registry = load_registry() if registry is None else registry
    if name not in registry:
        raise PreconditionError(f'unknown universality class {name!r}; known: {sorted(registry)}')
    return registry[name]


# ============================================
# Ramp geometry and equilibrium scales
# ============================================

def ramp_g(protocol, t: float) -> float:
    """Tuning parameter g(t) = sign(t)|t/tau|^p."""
    return math.copysign(abs(t / protocol.tau) ** protocol.p, t) if t else 0.0


def stop_time(protocol) -> float:
    """Time at which the ramp reaches g_s (+inf if it never stops)."""
    return protocol.stop_time


def xi_q(exponents: CriticalExponents, g: float) -> float:
    """Ground-state correlation length |g|^-nu."""
    return math.inf if g == 0 else abs(g) ** (-exponents.nu)


def gap(exponents: CriticalExponents, g: float) -> float:
    """Characteristic energy |g|^(nu z)."""
    return abs(g) ** (exponents.nu * exponents.z)


def kz_exponents(exponents: CriticalExponents, p: float = 1.0) -> tuple:
    """Powers of tau in (t_KZ, xi_KZ): p nu z/(p nu z + 1) and p nu/(p nu z + 1)."""
    denominator = p * exponents.nu * exponents.z + 1.0
    return p * exponents.nu * exponents.z / denominator, p * exponents.nu / denominator


def kz_scales(exponents, scales, protocol) -> KzScales:
    """
    Freeze-out scales of a ramp

    Args:
        exponents: Universality class
        scales: Microscopic units
        protocol: Ramp; only tau and p matter here

    Returns:
        KzScales: t_KZ (units of t0), xi_KZ (units of l0) and g_KZ
    """
    if protocol.tau < scales.t0:
        raise PreconditionError(
            f'tau = {protocol.tau} is below t0 = {scales.t0}; the scaling regime does not apply'
        )
    a_t, a_xi = kz_exponents(exponents, protocol.p)
    ratio = protocol.tau / scales.t0
    t_kz = scales.t0 * ratio ** a_t
    xi_kz = scales.l0 * ratio ** a_xi
    g_kz = (xi_kz / scales.l0) ** (-1.0 / exponents.nu)
    return KzScales(t_kz=t_kz, xi_kz=xi_kz, g_kz=g_kz)


def excess_energy_scale(exponents: CriticalExponents, kz: KzScales) -> float:
    """Excess energy density xi_KZ^-(d+z) left behind by the ramp (units J/l0^d)."""
    return kz.xi_kz ** (-(exponents.d + exponents.z))


# ============================================
# Growth exponents
# ============================================

def growth_exponent(exponents: CriticalExponents, p: float = 1.0) -> tuple:
    """
    Late-time growth exponent of l(t) during a steady power-law ramp

    Returns:
        tuple: (-p nu + (p nu z + 1)/z_d, GrowthRegime)
    """
    nu, z, z_d = exponents.nu, exponents.z, exponents.z_d
    value = -p * nu + (p * nu * z + 1.0) / z_d
    if abs(value) < ZERO_EXPONENT_TOL:
        return value, GrowthRegime.LOGARITHMIC
    if value > 0:
        return value, GrowthRegime.GROWING
    return value, GrowthRegime.BOUNDED


def quantum_critical_factor(model) -> float:
    """Growth factor f(+1)/f(-1) picked up while crossing the quantum critical fan."""
    return eval_f(model, 1.0) / eval_f(model, -1.0)


# ============================================
# Scaling functions
# ============================================

def _checked(value: float) -> float:
    if math.isnan(value) or value < 0:
        raise PreconditionError(f'scaling function produced an invalid length {value!r}')
    return value


def eval_f(model, x: float, p: float = 1.0) -> float:
    """
    Steady-ramp scaling function f_p(x) = l(t)/xi_KZ

    Args:
        model: ScalingModel carrying exponents and amplitudes
        x: Scaled time t/t_KZ
        p: Sweep power

    Returns:
        float: Scaled length
    """
    if math.isnan(x):
        raise PreconditionError('x is NaN')
    nu = model.exponents.nu
    f_minus = model.amp('adiabatic')
    f_zero = model.amp('plateau')
    f_plus = model.amp('coarsening')

    if x <= -1.0:
        return _checked(f_minus * (-x) ** (-p * nu))
    # log-linear through f(-1), f(0), f(+1)
    if x <= 0.0:
        return _checked(f_minus ** (-x) * f_zero ** (1.0 + x))
    if x <= 1.0:
        return _checked(f_zero ** (1.0 - x) * f_plus ** x)

    exponent, regime = growth_exponent(model.exponents, p)
    if regime is GrowthRegime.GROWING:
        return _checked(f_plus * x ** exponent)
    if regime is GrowthRegime.LOGARITHMIC:
        return _checked(f_plus * (1.0 + math.log(x)))
    # bounded: f(inf) - K x^exponent with f(inf) = f(+1) + K
    return _checked(f_plus + model.amp('saturation') * (1.0 - x ** exponent))


def crossover_xstar(model, x_s: float) -> float:
    """Scaled time x* ~ |x_s - x_c|^(-nu_bar z_bar) leaving classical critical coarsening."""
    if model.x_c is None:
        raise PreconditionError('crossover_xstar needs x_c to be set on the model')
    separation = abs(x_s - model.x_c)
    if separation == 0:
        return math.inf
    ex = model.exponents
    return model.amp('crossover') * separation ** (-ex.nu_bar * ex.z_bar)


def _has_classical_interval(model, x_s: float) -> bool:
    """Classical critical coarsening happens iff x* outlasts the quantum critical stage."""
    if model.x_c is None:
        return False
    return crossover_xstar(model, x_s) > max(x_s, 1.0)


def eval_F(model, x: float, x_s, p: float = 1.0) -> float:
    """
    Stopped-ramp scaling function F(x, x_s) = l(t)/xi_KZ

    Args:
        model: ScalingModel; x_c decides which side of the classical line the stop is on
        x: Scaled time t/t_KZ
        x_s: Scaled stop time, or None / +inf for an indefinite ramp
        p: Sweep power of the ramp before the stop

    Returns:
        float: Scaled length
    """
    if x_s is None:
        x_s = math.inf
    if math.isnan(x) or math.isnan(x_s):
        raise PreconditionError('x and x_s must not be NaN')
    if x <= x_s:
        return eval_f(model, x, p)

    ex = model.exponents
    F_s = eval_f(model, x_s, p)

    # stopped while still adiabatic: frozen at the ground-state length
    if x_s <= -1.0:
        return _checked(F_s)

    x_q = max(x_s, 1.0)  # end of quantum critical coarsening
    if model.x_c is not None:
        classical = _has_classical_interval(model, x_s)
        x_star = crossover_xstar(model, x_s)
        if x_s < model.x_c:
            if not classical or x <= x_q:
                return _checked(F_s)
            if x <= x_star:
                return _checked(F_s * (x / x_q) ** (1.0 / ex.z_bar))
            return _checked(F_s * (x_star / x_q) ** (1.0 / ex.z_bar))
        if classical:
            if x <= x_q:
                return _checked(F_s)
            if x <= x_star:
                return _checked(F_s * (x / x_q) ** (1.0 / ex.z_bar))
            F_star = F_s * (x_star / x_q) ** (1.0 / ex.z_bar)
            return _checked(F_star * (x / x_star) ** (1.0 / ex.z_d))

    # noncritical coarsening in the ordered phase
    if x_s > 1.0:
        nu, z, z_d = ex.nu, ex.z, ex.z_d
        C = model.amp('C')
        # C_s fixed by continuity with f at the stop
        C_s = C - F_s ** z_d * x_s ** (p * nu * z_d - p * nu * z - 1.0)
        prefactor = x_s ** (-p * nu + p * nu * z / z_d)
        return _checked(prefactor * (C * x - C_s * x_s) ** (1.0 / z_d))

    if x <= x_q:
        return _checked(F_s)
    return _checked(F_s * (x / x_q) ** (1.0 / ex.z_d))


def eval_h(model, y: float) -> float:
    """
    Scaled thermal correlation length h(y) = xi_th/xi_KZ along the ramp

    Args:
        model: ScalingModel with y_c set
        y: Scaled tuning parameter g/g_KZ

    Returns:
        float: Scaled length; raises CriticalDivergence exactly at y_c
    """
    if model.y_c is None:
        raise PreconditionError('eval_h needs y_c to be set on the model')
    if math.isnan(y):
        raise PreconditionError('y is NaN')
    if y == model.y_c:
        raise CriticalDivergence(f'h(y) diverges at y_c = {model.y_c}')

    ex = model.exponents
    h_minus = model.amp('h_adiabatic')
    h_zero = model.amp('h_plateau')
    h_plus = model.amp('h_ordered')
    if y <= -1.0:
        base = h_minus * (-y) ** (-ex.nu)
    elif y <= 0.0:
        base = h_minus ** (-y) * h_zero ** (1.0 + y)
    elif y <= 1.0:
        base = h_zero ** (1.0 - y) * h_plus ** y
    else:
        base = h_plus * y ** (-ex.nu)

    distance = y - model.y_c
    window = math.exp(-(distance / model.amp('h_width')) ** 2)
    critical = model.amp('h_critical') * abs(distance) ** (-ex.nu_bar) * window
    return _checked(base + critical)


# ============================================
# Classification
# ============================================

def classify_case(protocol, kz, model, stop_energy_side: str) -> CoarseningCase:
    """
    Label the sequence of coarsening regimes a protocol passes through

    Args:
        protocol: Ramp protocol; g_s = None means it never stops
        kz: KZ scales of the ramp (sets x_s = t_s/t_KZ)
        model: ScalingModel; x_c locates the classical critical line when known
        stop_energy_side: 'ordered', 'critical' or 'disordered'

    Returns:
        CoarseningCase
    """
    if stop_energy_side not in STOP_SIDES:
        raise PreconditionError(f'stop_energy_side must be one of {STOP_SIDES}')

    if protocol.indefinite:
        if stop_energy_side != 'ordered':
            raise PreconditionError('an indefinite ramp always ends on the ordered side')
        return CoarseningCase.CASE1_QC_NONCRITICAL

    x_s = protocol.stop_time / kz.t_kz
    x_c = model.x_c

    if x_c is not None:
        if stop_energy_side == 'ordered' and x_s < x_c:
            raise PreconditionError(f'stop x_s = {x_s:.4g} lies before x_c = {x_c:.4g} but side is ordered')
        if stop_energy_side == 'disordered' and x_s > x_c:
            raise PreconditionError(f'stop x_s = {x_s:.4g} lies past x_c = {x_c:.4g} but side is disordered')
        if stop_energy_side == 'critical' and not math.isclose(x_s, x_c, rel_tol=1e-9, abs_tol=1e-12):
            raise PreconditionError(f'stop x_s = {x_s:.4g} is not on the critical line x_c = {x_c:.4g}')

    if x_s <= -1.0:
        if stop_energy_side == 'ordered':
            raise PreconditionError('a stop before freeze-out cannot be on the ordered side')
        return CoarseningCase.ADIABATIC

    if stop_energy_side == 'critical' or (x_c is not None and x_s == x_c):
        return CoarseningCase.CASE3_QC_CLASSICAL_CRITICAL

    classical = _has_classical_interval(model, x_s)
    if stop_energy_side == 'ordered':
        case = (CoarseningCase.CASE2_QC_CLASSICAL_CRITICAL_NONCRITICAL if classical
                else CoarseningCase.CASE1_QC_NONCRITICAL)
    else:
        case = (CoarseningCase.CASE4_QC_CLASSICAL_CRITICAL_DISORDERED if classical
                else CoarseningCase.CASE5_QC_DISORDERED)
    logger.debug(f'x_s={x_s:.4g} side={stop_energy_side} -> {case.value}')
    return case


# ============================================
# Growth law
# ============================================

def hold_length(ell_s: float, t: float, t_s: float, xi_q_s: float, gap_s: float,
                z_d: float, c: float = 1.0) -> float:
    """
    Coarsening length after a stop deep in the ordered phase

    l(t) = [l(t_s)^z_d + c (t - t_s) xi_q(g_s)^z_d Delta(g_s)]^(1/z_d)
    """
    if t < t_s:
        raise PreconditionError('hold_length is defined for t >= t_s')
    return (ell_s ** z_d + c * (t - t_s) * xi_q_s ** z_d * gap_s) ** (1.0 / z_d)


def integrate_growth(exponents, protocol, t_start: float, t_end: float, ell0: float,
                     c: float = 1.0, n_points: int = 200) -> tuple:
    """
    Integrate dl/dt = c xi_q^z_d Delta / l^(z_d - 1) along the ordered side of a ramp

    The drive freezes at g_s once t passes the stop time, so the same call
    covers the ramp and the hold that follows it.

    Returns:
        tuple: (t, l) arrays on a geometric grid
    """
    if not 0 < t_start < t_end:
        raise PreconditionError('need 0 < t_start < t_end (ordered side of the ramp)')
    if ell0 <= 0:
        raise PreconditionError('ell0 must be positive')

    z_d = exponents.z_d
    t_s = protocol.stop_time

    def rate(t, ell):
        g = ramp_g(protocol, min(t, t_s))
        return [c * xi_q(exponents, g) ** z_d * gap(exponents, g) / ell[0] ** (z_d - 1.0)]

    t_eval = np.geomspace(t_start, t_end, n_points)
    solution = solve_ivp(rate, (t_start, t_end), [ell0], method='DOP853',
                         t_eval=t_eval, rtol=1e-10, atol=1e-12)
    if not solution.success:
        raise PreconditionError(f'growth integration failed: {solution.message}')
    return solution.t, solution.y[0]
