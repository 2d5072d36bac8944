"""
Measurement layer: correlation lengths from configurations, defect densities,
power-law fits with bootstrap errors and scaling-collapse optimisation.

Every function is pure; random resampling takes an explicit seed.
"""
import logging
import math

import numpy as np
from scipy import optimize, stats
from scipy.interpolate import BSpline

from kzcoarsen.models import (
    CollapseResult,
    CorrelationData,
    FitResult,
    LatticeSnapshot,
    NonOverlapError,
    PreconditionError,
    UnresolvableLength,
)

logger = logging.getLogger(__name__)

ORDER_PARAMETERS = ('magnetization', 'staggered')
FLAT_TOLERANCE = 0.25
MIN_ESTIMATOR_SIDE = 8
NOISE_SIGMAS = 3.0
SCATTER_SHELLS = 25
MIN_SCATTER_DOF = 4


# ============================================
# Input coercion
# ============================================

def _as_array(item, field_kind):
    if isinstance(item, LatticeSnapshot):
        item = item.spins
    arr = np.asarray(item, dtype=float)
    if field_kind == 'density':
        arr = 2.0 * arr - 1.0
    elif field_kind != 'spin':
        raise PreconditionError(f"field_kind must be 'spin' or 'density', got {field_kind!r}")
    return arr


def _as_fields(data, field_kind='spin') -> np.ndarray:
    """Stack one or many configurations into an (M, Ly, Lx) float array."""
    if isinstance(data, (list, tuple)):
        if not data:
            raise PreconditionError('empty ensemble')
        fields = np.stack([_as_array(item, field_kind) for item in data])
    else:
        fields = _as_array(data, field_kind)
        if fields.ndim == 2:
            fields = fields[np.newaxis]
    if fields.ndim != 3:
        raise PreconditionError(f'expected 2D configurations, got shape {fields.shape}')
    return fields


def _stagger(fields: np.ndarray) -> np.ndarray:
    """Multiply by (-1)^(r + c) so the Neel pattern moves to q = 0."""
    _, ly, lx = fields.shape
    if lx % 2 or ly % 2:
        raise PreconditionError('staggered channel needs even lattice dimensions')
    r, c = np.indices((ly, lx))
    return fields * np.where((r + c) % 2 == 0, 1.0, -1.0)


# ============================================
# Correlation lengths
# ============================================

def structure_factor(data, order_parameter: str = 'magnetization', field_kind: str = 'spin',
                     metadata=None) -> CorrelationData:
    """
    Ensemble-averaged structure factor and real-space correlations

    Args:
        data: Snapshot, array, or list of either
        order_parameter: 'magnetization' (q_op = 0) or 'staggered' (q_op = (pi, pi))
        field_kind: 'spin' for +-1 fields, 'density' for occupations in [0, 1]
        metadata: Source description carried into the result

    Returns:
        CorrelationData: S shifted so q_op sits at index (0, 0)
    """
    if order_parameter not in ORDER_PARAMETERS:
        raise PreconditionError(f'order_parameter must be one of {ORDER_PARAMETERS}')
    fields = _as_fields(data, field_kind)
    if order_parameter == 'staggered':
        fields = _stagger(fields)
    _, ly, lx = fields.shape
    n_sites = lx * ly
    amplitudes = np.fft.fft2(fields, axes=(1, 2))
    S = np.mean(np.abs(amplitudes) ** 2, axis=0) / n_sites
    C_r = np.real(np.fft.ifft2(S))
    return CorrelationData(
        S=S,
        qx=2.0 * np.pi * np.fft.fftfreq(lx),
        qy=2.0 * np.pi * np.fft.fftfreq(ly),
        C_r=C_r,
        metadata={'order_parameter': order_parameter, 'ensemble_size': fields.shape[0],
                  **(metadata or {})},
    )


def _mode_scatter(S, ensemble_size):
    """
    Relative per-mode variance of S from its spread within shells of equal |q|

    Falls back to Gaussian statistics (1 / ensemble size) when the low-q
    shells hold too few degenerate modes to estimate it.
    """
    ly, lx = S.shape
    ny = np.rint(np.fft.fftfreq(ly) * ly)[:, np.newaxis]
    nx = np.rint(np.fft.fftfreq(lx) * lx)[np.newaxis, :]
    qy = 2.0 * np.pi * ny / ly
    qx = 2.0 * np.pi * nx / lx
    n2 = nx ** 2 + ny ** 2
    half = (ny > 0) | ((ny == 0) & (nx > 0))
    select = half & (n2 >= 1) & (n2 <= SCATTER_SHELLS)
    q2 = np.broadcast_to(np.round(qx ** 2 + qy ** 2, 12), S.shape)[select]
    values = S[select]
    _, shell, counts = np.unique(q2, return_inverse=True, return_counts=True)
    means = np.bincount(shell, weights=values) / counts
    keep = means[shell] > 0
    dof = int(np.sum(counts[counts > 1] - 1))
    if dof < MIN_SCATTER_DOF or not np.any(keep):
        return 1.0 / ensemble_size
    deviations = values[keep] / means[shell][keep] - 1.0
    return float(np.sum(deviations ** 2) / dof)


def _xi_from_ratio(S0, S1, q1, side, noise, flat_tolerance):
    if S1 <= 0:
        raise UnresolvableLength('no weight at the first nonzero wavevector (saturated peak)')
    excess = S0 / S1 - 1.0
    floor = NOISE_SIGMAS * noise
    if abs(excess) <= floor:
        return 0.0
    if excess < 0:
        if excess >= -flat_tolerance:
            return 0.0
        raise UnresolvableLength(f'S(q_op) below S(q_op + q1) by {-excess:.3g}: no ordering peak')
    xi = math.sqrt(excess) / q1
    if xi > side / 4.0:
        raise UnresolvableLength(f'xi = {xi:.4g} exceeds L/4 = {side / 4.0:g} (finite-size saturation)')
    return xi


def second_moment_xi(data, order_parameter: str = 'magnetization', field_kind: str = 'spin',
                     flat_tolerance: float = FLAT_TOLERANCE) -> float:
    """
    Second-moment correlation length xi = (1/q1) sqrt(S(q_op)/S(q_op + q1) - 1)

    S is averaged over the ensemble before the ratio. An excess S(q_op)/S(q_op + q1) - 1
    within NOISE_SIGMAS standard deviations of zero, on either side, is read as an
    uncorrelated field (xi = 0). The standard deviation follows from the per-mode
    scatter of S: q_op is a real mode with twice the relative variance of a complex one.
    A deficit is also tolerated up to flat_tolerance.

    Args:
        data: Snapshot, array, or list of either (an ensemble)
        order_parameter: 'magnetization' or 'staggered'
        field_kind: 'spin' or 'density' (mapped to 2n - 1)
        flat_tolerance: Allowed deficit of S(q_op) against S(q_op + q1)

    Returns:
        float: Length in lattice units
    """
    correlations = structure_factor(data, order_parameter, field_kind)
    S = correlations.S
    ly, lx = S.shape
    if lx < MIN_ESTIMATOR_SIDE or ly < MIN_ESTIMATOR_SIDE:
        raise PreconditionError(f'lattice {lx}x{ly} is below the {MIN_ESTIMATOR_SIDE}-site minimum')

    scatter = _mode_scatter(S, correlations.metadata['ensemble_size'])
    S0 = S[0, 0]
    # S(q) = S(-q) for real fields, so each axis contributes one independent mode
    S1x, S1y = S[0, 1], S[1, 0]
    if lx == ly:
        noise = math.sqrt(2.0 * scatter + scatter / 2.0)
        return _xi_from_ratio(S0, 0.5 * (S1x + S1y), 2.0 * np.pi / lx, lx, noise, flat_tolerance)
    noise = math.sqrt(3.0 * scatter)
    xi_x = _xi_from_ratio(S0, S1x, 2.0 * np.pi / lx, lx, noise, flat_tolerance)
    xi_y = _xi_from_ratio(S0, S1y, 2.0 * np.pi / ly, ly, noise, flat_tolerance)
    return 0.5 * (xi_x + xi_y)


def wall_density(spins, order_parameter: str = 'magnetization') -> float:
    """Fraction of unsatisfied nearest-neighbour bonds (periodic) of one configuration."""
    arr = np.asarray(spins.spins if isinstance(spins, LatticeSnapshot) else spins)
    if not np.all(np.abs(arr) == 1):
        raise PreconditionError('defect_length needs a +-1 configuration')
    arr = arr.astype(np.int8)
    if arr.ndim == 1:
        if order_parameter == 'staggered':
            arr = arr * np.where(np.arange(arr.size) % 2 == 0, 1, -1).astype(np.int8)
        return float(np.mean(arr != np.roll(arr, -1)))
    if arr.ndim != 2:
        raise PreconditionError('configuration must be 1D or 2D')
    if order_parameter == 'staggered':
        arr = _stagger(arr[np.newaxis].astype(float))[0].astype(np.int8)
    broken = np.count_nonzero(arr != np.roll(arr, -1, axis=1)) + np.count_nonzero(arr != np.roll(arr, -1, axis=0))
    return broken / (2.0 * arr.size)


def defect_length(data, order_parameter: str = 'magnetization') -> float:
    """
    Length from the inverse defect density

    2D: inverse fraction of unsatisfied bonds; 1D: inverse kink density.
    A list is treated as an ensemble and its densities averaged first.

    Returns:
        float: Length in lattice units, math.inf for a defect-free configuration
    """
    items = data if isinstance(data, (list, tuple)) else [data]
    rho = float(np.mean([wall_density(item, order_parameter) for item in items]))
    return math.inf if rho == 0 else 1.0 / rho


# ============================================
# Power-law fits
# ============================================

def _select_window(t, y, sigma, window):
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if t.shape != y.shape or t.ndim != 1:
        raise PreconditionError('t and y must be 1D arrays of equal length')
    sigma = None if sigma is None else np.asarray(sigma, dtype=float)
    if window is not None:
        lo, hi = window
        keep = (t >= lo) & (t <= hi)
        t, y = t[keep], y[keep]
        sigma = None if sigma is None else sigma[keep]
    return t, y, sigma


def fit_power_law(t, y, sigma=None, window=None, n_boot: int = 200, seed: int = 0,
                  min_points: int = 6, min_decades: float = 1.0) -> FitResult:
    """
    Fit y = A t^exponent by weighted least squares in log-log space

    Args:
        t: Abscissa (time, tau, ...)
        y: Positive observable
        sigma: Optional absolute errors on y
        window: Optional inclusive (t_min, t_max)
        n_boot: Bootstrap resamples for the standard error
        seed: Bootstrap seed
        min_points: Minimum number of points inside the window
        min_decades: Minimum span of the window in decades of t

    Returns:
        FitResult
    """
    t, y, sigma = _select_window(t, y, sigma, window)
    if np.any(t <= 0) or np.any(y <= 0):
        raise PreconditionError('power-law fits need strictly positive t and y in the window')
    if min_points < 6 or min_decades < 1.0:
        logger.warning(f'Power-law fit with relaxed guard: min_points={min_points}, min_decades={min_decades:.3g}')
    if t.size < max(min_points, 2):
        raise PreconditionError(f'need at least {min_points} points, got {t.size}')
    decades = math.log10(t.max() / t.min())
    if decades < min_decades - 1e-9:
        raise PreconditionError(f'window spans {decades:.2f} decades, need {min_decades}')

    log_t = np.log(t)
    log_y = np.log(y)
    weights = None if sigma is None else y / np.maximum(sigma, 1e-300)

    slope, intercept = np.polyfit(log_t, log_y, 1, w=weights)

    w2 = np.ones_like(log_y) if weights is None else weights ** 2
    predicted = slope * log_t + intercept
    mean = np.sum(w2 * log_y) / np.sum(w2)
    ss_res = np.sum(w2 * (log_y - predicted) ** 2)
    ss_tot = np.sum(w2 * (log_y - mean) ** 2)
    goodness = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0

    rng = np.random.default_rng(seed)
    slopes = []
    for _ in range(n_boot):
        idx = rng.integers(0, t.size, t.size)
        if np.unique(log_t[idx]).size < 2:
            continue
        w = None if weights is None else weights[idx]
        slopes.append(np.polyfit(log_t[idx], log_y[idx], 1, w=w)[0])
    stderr = float(np.std(slopes, ddof=1)) if len(slopes) > 1 else 0.0

    return FitResult(
        exponent=float(slope),
        amplitude=float(math.exp(intercept)),
        stderr=stderr,
        window=(float(t.min()), float(t.max())),
        goodness=float(goodness),
        n_points=int(t.size),
    )


def suggest_window(t, y, min_points: int = 6, min_decades: float = 1.0):
    """
    Suggest a trailing fit window; logged, never applied

    Among windows that end at the last point and satisfy the point and decade
    guards, picks the one whose log-log line fits best (longest on ties).

    Returns:
        tuple or None: (t_min, t_max)
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    order = np.argsort(t)
    t, y = t[order], y[order]
    keep = (t > 0) & (y > 0)
    t, y = t[keep], y[keep]

    best, best_r2 = None, -np.inf
    for start in range(0, t.size - min_points + 1):
        tw, yw = t[start:], y[start:]
        if math.log10(tw[-1] / tw[0]) < min_decades:
            break
        x, z = np.log(tw), np.log(yw)
        slope, intercept = np.polyfit(x, z, 1)
        ss_tot = np.sum((z - z.mean()) ** 2)
        r2 = 1.0 - np.sum((z - slope * x - intercept) ** 2) / ss_tot if ss_tot > 0 else 1.0
        if r2 > best_r2 + 1e-12:
            best, best_r2 = (float(tw[0]), float(tw[-1])), r2

    if best is None:
        logger.warning('No trailing fit window satisfies the point/decade guards')
    else:
        logger.warning(f'Suggested fit window {best} (R^2={best_r2:.5f}); not applied')
    return best


def mann_kendall(t, y) -> tuple:
    """
    Mann-Kendall trend test (Kendall tau of y against t)

    Returns:
        tuple: (tau statistic, two-sided p-value)
    """
    result = stats.kendalltau(np.asarray(t, dtype=float), np.asarray(y, dtype=float))
    return float(result.statistic), float(result.pvalue)


# ============================================
# Scaling collapse
# ============================================

def _coerce_curves(curves):
    coerced = []
    for i, curve in enumerate(curves):
        if isinstance(curve, dict):
            tau, t, ell = curve['tau'], curve['t'], curve['ell']
        else:
            tau, t, ell = curve
        t = np.asarray(t, dtype=float)
        ell = np.asarray(ell, dtype=float)
        if not tau > 0 or np.any(t <= 0) or np.any(ell <= 0):
            raise PreconditionError(f'curve {i}: tau, t and ell must be strictly positive')
        if t.shape != ell.shape or t.size < 2:
            raise PreconditionError(f'curve {i}: need matching t/ell arrays with >= 2 points')
        coerced.append((float(tau), t, ell))
    if len(coerced) < 3:
        raise PreconditionError('a collapse needs at least 3 curves')
    return coerced


def _spline_basis(u, lo, hi, n_interior):
    interior = np.quantile(u, np.linspace(0, 1, n_interior + 2)[1:-1]) if n_interior else np.array([])
    interior = np.unique(interior[(interior > lo) & (interior < hi)])
    knots = np.concatenate([[lo] * 4, interior, [hi] * 4])
    return knots


def _design(u, knots):
    return BSpline.design_matrix(u, knots, 3).toarray()


def _sse(design, values):
    coef, *_ = np.linalg.lstsq(design, values, rcond=None)
    return float(np.sum((values - design @ coef) ** 2))


def collapse_residual(curves, alpha_xi: float, alpha_t: float, max_knots: int = 6) -> float:
    """
    Mismatch of a curve family after rescaling by tau^alpha_xi and tau^alpha_t

    Each curve becomes (log(t/tau^alpha_t), log(ell/tau^alpha_xi)) and is
    restricted to the range shared by all curves. A cubic least-squares
    B-spline through the pooled points is compared with the same basis fitted
    to each curve alone; the excess pooled error per point is returned.

    Args:
        curves: Sequence of (tau, t, ell) triples or dicts with those keys
        alpha_xi: Trial length exponent
        alpha_t: Trial time exponent
        max_knots: Upper bound on interior knots

    Returns:
        float: Residual >= 0; zero when the family collapses exactly
    """
    family = _coerce_curves(curves)
    scaled = [(np.log(t) - alpha_t * math.log(tau), np.log(ell) - alpha_xi * math.log(tau))
              for tau, t, ell in family]

    lo = max(u.min() for u, _ in scaled)
    hi = min(u.max() for u, _ in scaled)
    if not lo < hi:
        raise NonOverlapError(f'scaled ranges are disjoint for alpha=({alpha_xi:.3f}, {alpha_t:.3f})')

    pieces = []
    for u, w in scaled:
        keep = (u >= lo) & (u <= hi)
        if np.count_nonzero(keep) < 2:
            raise NonOverlapError('a curve has fewer than 2 points inside the common range')
        pieces.append((u[keep], w[keep]))

    pooled_u = np.concatenate([u for u, _ in pieces])
    pooled_w = np.concatenate([w for _, w in pieces])
    n_interior = int(min(max_knots, max(0, pooled_u.size // 10 - 1)))
    knots = _spline_basis(pooled_u, lo, hi, n_interior)

    pooled = _sse(_design(pooled_u, knots), pooled_w)
    baseline = sum(_sse(_design(u, knots), w) for u, w in pieces)
    return max(0.0, pooled - baseline) / pooled_u.size


def _safe_residual(curves, alpha_xi, alpha_t):
    try:
        return collapse_residual(curves, alpha_xi, alpha_t)
    except NonOverlapError:
        return np.inf


def _doubling_error(curves, best, axis, residual_min, bounds, step=1e-3, growth=1.25):
    """Distance along one axis at which the residual doubles, averaged over both sides."""
    threshold = 2.0 * residual_min + 1e-15
    distances = []
    for direction in (-1.0, 1.0):
        point = list(best)
        distance = 0.0
        increment = step
        while True:
            distance += increment
            increment *= growth
            point[axis] = best[axis] + direction * distance
            if not bounds[axis][0] <= point[axis] <= bounds[axis][1]:
                break
            if _safe_residual(curves, *point) >= threshold:
                break
        distances.append(distance)
    return float(np.mean(distances))


def optimize_collapse(curves, grid_step: float = 0.02, bounds=((0.0, 1.0), (0.0, 1.0))) -> CollapseResult:
    """
    Best collapse exponents by grid scan plus Nelder-Mead refinement

    Args:
        curves: Sequence of (tau, t, ell) triples or dicts
        grid_step: Spacing of the initial grid over (alpha_xi, alpha_t)
        bounds: Search box for (alpha_xi, alpha_t)

    Returns:
        CollapseResult; degenerate=True when the family carries no tau information
    """
    family = _coerce_curves(curves)
    grid_xi = np.arange(bounds[0][0], bounds[0][1] + 0.5 * grid_step, grid_step)
    grid_t = np.arange(bounds[1][0], bounds[1][1] + 0.5 * grid_step, grid_step)
    surface = np.array([[_safe_residual(family, a_xi, a_t) for a_t in grid_t] for a_xi in grid_xi])
    finite = surface[np.isfinite(surface)]
    if finite.size == 0:
        raise NonOverlapError('no trial exponents give overlapping scaled ranges')

    i, j = np.unravel_index(np.argmin(np.where(np.isfinite(surface), surface, np.inf)), surface.shape)
    start = (float(grid_xi[i]), float(grid_t[j]))

    taus = {tau for tau, _, _ in family}
    spread = finite.max() - finite.min()
    if len(taus) == 1 or spread <= 1e-12 * (1.0 + abs(finite.min())):
        logger.warning('Collapse is degenerate: residual is flat over the exponent grid')
        return CollapseResult(alpha_xi=start[0], alpha_t=start[1], err_xi=math.inf, err_t=math.inf,
                              residual=float(finite.min()), degenerate=True)

    def objective(params):
        a_xi, a_t = params
        if not (bounds[0][0] <= a_xi <= bounds[0][1] and bounds[1][0] <= a_t <= bounds[1][1]):
            return np.inf
        return _safe_residual(family, a_xi, a_t)

    refined = optimize.minimize(objective, np.array(start), method='Nelder-Mead',
                                options={'xatol': 1e-5, 'fatol': 1e-16, 'initial_simplex':
                                         np.array([start, (start[0] + grid_step, start[1]),
                                                   (start[0], start[1] + grid_step)])})
    best = tuple(float(v) for v in refined.x)
    residual = float(refined.fun)
    if not np.isfinite(residual) or residual > surface[i, j]:
        best, residual = start, float(surface[i, j])

    err_xi = _doubling_error(family, best, 0, residual, bounds)
    err_t = _doubling_error(family, best, 1, residual, bounds)
    logger.info(f'Collapse optimum alpha_xi={best[0]:.4f}+-{err_xi:.4f} '
                f'alpha_t={best[1]:.4f}+-{err_t:.4f} residual={residual:.3e}')
    return CollapseResult(alpha_xi=best[0], alpha_t=best[1], err_xi=err_xi, err_t=err_t,
                          residual=residual, degenerate=False)
