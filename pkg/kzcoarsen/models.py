"""
Domain types for the kzcoarsen toolkit.
Plain dataclasses; validation happens at construction so a bad value
fails where it is created, not deep inside an engine.
"""
import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np


# ============================================
# Exceptions
# ============================================

class KzcError(Exception):
    """Base class for every error raised by the toolkit."""


class PreconditionError(KzcError, ValueError):
    """An operation was called outside its domain of validity."""


class ConfigError(KzcError):
    """Run configuration failed validation; carries every problem found."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__('; '.join(self.errors))


class EngineError(KzcError):
    """An engine stage failed during a run."""

    def __init__(self, stage, message):
        self.stage = stage
        super().__init__(f'{stage}: {message}')


class IntegrationError(KzcError):
    """Mode integration could not reach the requested tolerance."""

    def __init__(self, k, message):
        self.k = k
        super().__init__(f'k={k!r}: {message}')


class KrylovConvergenceError(KzcError):
    """Krylov propagation did not converge at the configured subspace size."""


class CriticalDivergence(KzcError, ArithmeticError):
    """A scaling function was evaluated exactly on its singular point."""


class UnresolvableLength(KzcError):
    """A correlation length cannot be extracted from the data."""


class NonOverlapError(KzcError):
    """Rescaled curves share no common range."""


# ============================================
# Scaling core
# ============================================

@dataclass(frozen=True)
class CriticalExponents:
    """
    Exponent tuple defining a universality class plus its coarsening dynamics.
    Quantum exponents (nu, z), classical ones (nu_bar, z_bar), the noncritical
    coarsening exponent z_d and the spatial dimension d.
    """
    nu: float
    z: float
    nu_bar: float
    z_bar: float
    z_d: float
    d: int
    name: str = ''

    def __post_init__(self):
        for label in ('nu', 'z', 'nu_bar', 'z_bar', 'z_d'):
            value = getattr(self, label)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise PreconditionError(f'{label} must be a positive finite number, got {value!r}')
        if int(self.d) != self.d or self.d < 1:
            raise PreconditionError(f'd must be an integer >= 1, got {self.d!r}')

    def to_dict(self):
        return {
            'nu': self.nu, 'z': self.z, 'nu_bar': self.nu_bar,
            'z_bar': self.z_bar, 'z_d': self.z_d, 'd': int(self.d),
        }

    def __repr__(self):
        return f'<CriticalExponents {self.name or "anonymous"} nu={self.nu} z={self.z} z_d={self.z_d}>'


@dataclass(frozen=True)
class MicroScales:
    """Microscopic length and time units (lattice spacing, 1/J)."""
    l0: float = 1.0
    t0: float = 1.0

    def __post_init__(self):
        if not (self.l0 > 0 and self.t0 > 0):
            raise PreconditionError('l0 and t0 must be strictly positive')


@dataclass(frozen=True)
class RampProtocol:
    """
    Drive g(t) = sign(t)|t/tau|^p through the critical point at t = 0.
    g_s = None means the ramp never stops.
    """
    tau: float
    p: float = 1.0
    g_s: Optional[float] = None
    t_hold: Optional[float] = None

    def __post_init__(self):
        if not self.tau > 0:
            raise PreconditionError(f'tau must be positive, got {self.tau!r}')
        if not self.p >= 1:
            raise PreconditionError(f'p must be >= 1, got {self.p!r}')
        if self.t_hold is not None and self.t_hold < 0:
            raise PreconditionError('t_hold must be non-negative')

    @property
    def indefinite(self):
        return self.g_s is None

    @property
    def stop_time(self):
        """t_s such that g(t_s) = g_s; +inf for an indefinite ramp."""
        if self.g_s is None:
            return math.inf
        return math.copysign(self.tau * abs(self.g_s) ** (1.0 / self.p), self.g_s)


@dataclass(frozen=True)
class KzScales:
    """Freeze-out time, KZ correlation length and half-width of the nonadiabatic window."""
    t_kz: float
    xi_kz: float
    g_kz: float

    def to_dict(self):
        return {'t_kz': self.t_kz, 'xi_kz': self.xi_kz, 'g_kz': self.g_kz}


DEFAULT_AMPLITUDES = {
    'adiabatic': 1.0,       # f(-1)
    'plateau': 1.0,         # f(0)
    'coarsening': 1.0,      # f(+1)
    'saturation': 1.0,      # f(inf) - f(+1) for bounded growth
    'C': 1.0,               # post-stop noncritical coarsening rate
    'crossover': 1.0,       # prefactor of x*
    'h_adiabatic': 1.0,     # h(y) for y << -1
    'h_plateau': 1.0,       # h(0)
    'h_ordered': 1.0,       # h(y) for y >> 1
    'h_critical': 1.0,      # prefactor of |y - y_c|^-nu_bar
    'h_width': 1.0,         # extent of the classical critical window in y
}


@dataclass
class ScalingModel:
    """
    Piecewise universal scaling functions with their undetermined O(1) constants.
    x_c and y_c locate the classical critical line in scaled units; both are fit
    parameters and stay None until set.
    """
    exponents: CriticalExponents
    amplitudes: dict = field(default_factory=dict)
    x_c: Optional[float] = None
    y_c: Optional[float] = None

    def __post_init__(self):
        unknown = set(self.amplitudes) - set(DEFAULT_AMPLITUDES)
        if unknown:
            raise PreconditionError(f'unknown amplitude(s): {sorted(unknown)}')
        merged = dict(DEFAULT_AMPLITUDES)
        merged.update(self.amplitudes)
        for key, value in merged.items():
            if not (math.isfinite(value) and value > 0):
                raise PreconditionError(f'amplitude {key!r} must be positive, got {value!r}')
        self.amplitudes = merged
        for label in ('x_c', 'y_c'):
            value = getattr(self, label)
            if value is not None and not math.isfinite(value):
                raise PreconditionError(f'{label} must be finite when set')

    def amp(self, key):
        return self.amplitudes[key]


class CoarseningCase(enum.Enum):
    """Sequence of coarsening regimes a protocol passes through."""
    CASE1_QC_NONCRITICAL = 'Case1_QC_Noncritical'
    CASE2_QC_CLASSICAL_CRITICAL_NONCRITICAL = 'Case2_QC_ClassicalCritical_Noncritical'
    CASE3_QC_CLASSICAL_CRITICAL = 'Case3_QC_ClassicalCritical'
    CASE4_QC_CLASSICAL_CRITICAL_DISORDERED = 'Case4_QC_ClassicalCritical_Disordered'
    CASE5_QC_DISORDERED = 'Case5_QC_Disordered'
    ADIABATIC = 'Adiabatic'


class GrowthRegime(enum.Enum):
    GROWING = 'growing'
    LOGARITHMIC = 'logarithmic'
    BOUNDED = 'bounded'


# ============================================
# 1D transverse-field Ising chain
# ============================================

@dataclass(frozen=True)
class ChainSpec:
    """
    Periodic TFIM chain ramped from g_start (disordered, g < 0) to g_end (ordered).
    g is the distance from criticality: h/J = 1 - g.
    """
    L: int
    tau: float
    p: float = 1.0
    g_start: Optional[float] = None
    g_end: Optional[float] = None

    def __post_init__(self):
        if int(self.L) != self.L or self.L < 8 or self.L % 2:
            raise PreconditionError(f'L must be an even integer >= 8, got {self.L!r}')
        if not self.tau > 0:
            raise PreconditionError('tau must be positive')
        if not self.p >= 1:
            raise PreconditionError('p must be >= 1')
        if self.g_start is not None and self.g_start >= 0:
            raise PreconditionError('g_start must lie in the disordered phase (g < 0)')
        if self.g_end is not None and self.g_start is not None and self.g_end <= self.g_start:
            raise PreconditionError('g_end must exceed g_start')

    @property
    def momenta(self):
        """Positive momenta of the even-parity sector, k = pi(2n-1)/L."""
        n = np.arange(1, self.L // 2 + 1)
        return np.pi * (2 * n - 1) / self.L


@dataclass
class ModeState:
    """Bogoliubov amplitudes of one momentum pair."""
    k: float
    u: complex
    v: complex

    @property
    def norm(self):
        return abs(self.u) ** 2 + abs(self.v) ** 2


@dataclass
class RampResult:
    """Outcome of one chain ramp."""
    k: np.ndarray
    p_k: np.ndarray
    n: float
    ell: float
    tau: float
    p: float
    L: int
    times: np.ndarray
    g_values: np.ndarray
    n_track: np.ndarray
    norm_drift: float

    def summary(self):
        return {
            'n': self.n, 'ell': self.ell, 'tau': self.tau, 'p': self.p, 'L': self.L,
            'norm_drift': self.norm_drift,
        }


# ============================================
# 2D kinetic Ising
# ============================================

ONSAGER_TC = 2.0 / math.log(1.0 + math.sqrt(2.0))


@dataclass
class SpinLattice:
    """Periodic Lx x Ly array of +-1 spins with its own random stream."""
    Lx: int
    Ly: int
    spins: np.ndarray
    seed: int
    sweeps: int = 0
    rng: np.random.Generator = field(default=None, repr=False)

    def __post_init__(self):
        if self.spins.shape != (self.Ly, self.Lx):
            raise PreconditionError('spin array shape must be (Ly, Lx)')
        if not np.all(np.abs(self.spins) == 1):
            raise PreconditionError('spins must be exactly +-1')
        self.spins = self.spins.astype(np.int8)
        if self.rng is None:
            self.rng = np.random.default_rng(self.seed)

    @classmethod
    def all_up(cls, Lx, Ly, seed=0):
        return cls(Lx, Ly, np.ones((Ly, Lx), dtype=np.int8), seed)

    @classmethod
    def random(cls, Lx, Ly, seed=0):
        rng = np.random.default_rng(seed)
        spins = rng.choice(np.array([-1, 1], dtype=np.int8), size=(Ly, Lx))
        return cls(Lx, Ly, spins, seed, rng=rng)

    @classmethod
    def embedded_domain(cls, Lx, Ly, mask, seed=0):
        """All-up background with the masked region flipped down."""
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (Ly, Lx):
            raise PreconditionError('domain mask shape must be (Ly, Lx)')
        spins = np.where(mask, -1, 1).astype(np.int8)
        return cls(Lx, Ly, spins, seed)

    def __repr__(self):
        return f'<SpinLattice {self.Lx}x{self.Ly} seed={self.seed} sweeps={self.sweeps}>'


@dataclass(frozen=True)
class RampSegment:
    """Temperature ramp T_a -> T_b over tau sweeps with power p."""
    T_a: float
    T_b: float
    tau: int
    p: float = 1.0

    @property
    def duration(self):
        return self.tau

    def temperature(self, s):
        """Temperature at elapsed time s within the segment."""
        return self.T_a + (self.T_b - self.T_a) * (s / self.tau) ** self.p


@dataclass(frozen=True)
class HoldSegment:
    """Fixed temperature for a number of sweeps."""
    T: float
    duration: int

    def temperature(self, s):
        return self.T


@dataclass
class ThermalProtocol:
    """Piecewise temperature schedule plus the initial condition."""
    segments: list
    initial: str = 'random'  # random, all-up, embedded-domain
    mask: Optional[np.ndarray] = None

    def __post_init__(self):
        if not self.segments:
            raise PreconditionError('protocol needs at least one segment')
        for seg in self.segments:
            temps = (seg.T_a, seg.T_b) if isinstance(seg, RampSegment) else (seg.T,)
            if any(t < 0 for t in temps):
                raise PreconditionError('temperatures must be >= 0')
            if int(seg.duration) != seg.duration or seg.duration <= 0:
                raise PreconditionError('segment durations must be positive integers (sweeps)')
        if self.initial not in ('random', 'all-up', 'embedded-domain'):
            raise PreconditionError(f'unknown initial condition {self.initial!r}')
        if self.initial == 'embedded-domain' and self.mask is None:
            raise PreconditionError('embedded-domain initial condition needs a mask')

    @property
    def total_sweeps(self):
        return int(sum(seg.duration for seg in self.segments))

    def temperature_at(self, t):
        """Temperature at sweep time t (segments are half-open [start, end))."""
        start = 0.0
        for seg in self.segments:
            if t < start + seg.duration:
                return seg.temperature(t - start)
            start += seg.duration
        return self.segments[-1].temperature(self.segments[-1].duration)


@dataclass
class LatticeSnapshot:
    """Spin configuration at a sweep time stamp."""
    time: int
    spins: np.ndarray
    energy: float
    magnetization: float
    temperature: float = float('nan')

    def __repr__(self):
        return f'<LatticeSnapshot t={self.time} e={self.energy:.4f} m={self.magnetization:.4f}>'


# ============================================
# Rydberg arrays
# ============================================

@dataclass(frozen=True)
class ArrayGeometry:
    """Open rows x cols square array; site index is row-major."""
    rows: int
    cols: int
    a: float = 1.0

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise PreconditionError('rows and cols must be >= 1')
        if not self.a > 0:
            raise PreconditionError('lattice spacing must be positive')

    @property
    def n_sites(self):
        return self.rows * self.cols

    @property
    def coords(self):
        r, c = np.divmod(np.arange(self.n_sites), self.cols)
        return np.column_stack([r * self.a, c * self.a]).astype(float)

    @property
    def parity(self):
        """(-1)^(row + col) per site."""
        r, c = np.divmod(np.arange(self.n_sites), self.cols)
        return np.where((r + c) % 2 == 0, 1, -1)


@dataclass(frozen=True)
class RydbergParams:
    """Drive and interaction parameters; V0 follows from R_b = (V0/Omega)^(1/6)."""
    Omega: float
    Delta: float
    Rb_over_a: float
    cutoff: Optional[int] = 2  # neighbour shells kept; None keeps every pair

    def __post_init__(self):
        if not self.Omega > 0:
            raise PreconditionError('Omega must be positive')
        if not self.Rb_over_a > 0:
            raise PreconditionError('Rb_over_a must be positive')
        if self.cutoff is not None and self.cutoff < 1:
            raise PreconditionError('cutoff must be >= 1 or None')

    def V0(self, a=1.0):
        return self.Omega * (self.Rb_over_a * a) ** 6


@dataclass
class StateVector:
    """Amplitudes over the 2^N occupation basis; bit i of the index is site i."""
    amplitudes: np.ndarray
    time: float = 0.0

    @property
    def n_sites(self):
        return int(self.amplitudes.size).bit_length() - 1

    @property
    def norm(self):
        return float(np.sqrt(np.vdot(self.amplitudes, self.amplitudes).real))

    def copy(self):
        return StateVector(self.amplitudes.copy(), self.time)


@dataclass
class DetuningMask:
    """Sites whose antiferromagnetic registration is flipped relative to the background."""
    flipped: np.ndarray

    def __post_init__(self):
        self.flipped = np.asarray(self.flipped, dtype=bool)
        if self.flipped.ndim != 2:
            raise PreconditionError('mask must be a rows x cols array')

    @classmethod
    def uniform(cls, geometry):
        return cls(np.zeros((geometry.rows, geometry.cols), dtype=bool))

    @classmethod
    def central_domain(cls, geometry, height, width):
        """Rectangular flipped domain centred in the array."""
        flipped = np.zeros((geometry.rows, geometry.cols), dtype=bool)
        r0 = (geometry.rows - height) // 2
        c0 = (geometry.cols - width) // 2
        if r0 < 0 or c0 < 0:
            raise PreconditionError('domain larger than the array')
        flipped[r0:r0 + height, c0:c0 + width] = True
        return cls(flipped)

    def complement(self):
        return DetuningMask(~self.flipped)

    def occupations(self):
        """Target Rydberg occupations: background Neel on even sites, opposite inside the mask."""
        rows, cols = self.flipped.shape
        r, c = np.indices((rows, cols))
        even = (r + c) % 2 == 0
        return np.where(self.flipped, ~even, even).astype(np.int8).ravel()

    def local_detunings(self, amplitude=1.0):
        """Light-shift pattern imprinting the mask: +amplitude where an excitation is wanted."""
        return np.where(self.occupations() == 1, amplitude, -amplitude).astype(float)


# ============================================
# Estimators
# ============================================

@dataclass
class CorrelationData:
    """Ensemble-averaged structure factor and radial correlations."""
    S: np.ndarray
    qx: np.ndarray
    qy: np.ndarray
    C_r: np.ndarray
    metadata: dict = field(default_factory=dict)


@dataclass
class FitResult:
    """Power-law fit y = A t^exponent."""
    exponent: float
    amplitude: float
    stderr: float
    window: tuple
    goodness: float
    n_points: int

    def to_dict(self):
        return {
            'exponent': self.exponent, 'amplitude': self.amplitude, 'stderr': self.stderr,
            'window': list(self.window), 'r_squared': self.goodness, 'n_points': self.n_points,
        }


@dataclass
class CollapseResult:
    """Best collapse exponents with their uncertainties."""
    alpha_xi: float
    alpha_t: float
    err_xi: float
    err_t: float
    residual: float
    degenerate: bool = False

    def to_dict(self):
        return {
            'alpha_xi': self.alpha_xi, 'alpha_t': self.alpha_t,
            'err_xi': self.err_xi, 'err_t': self.err_t,
            'residual': self.residual, 'degenerate': self.degenerate,
        }


# ============================================
# Runs
# ============================================

ENGINES = ('scaling', 'tfim1d', 'ising2d', 'rydberg', 'estimate', 'collapse')


@dataclass
class RunConfig:
    """Validated run configuration; exactly one engine per run."""
    engine: str
    task: str
    params: dict
    seeds: list
    output_dir: str
    snapshots: list = field(default_factory=list)
    source_path: Optional[str] = None
    source_bytes: bytes = b''

    def __repr__(self):
        return f'<RunConfig {self.engine}/{self.task} seeds={self.seeds}>'


@dataclass
class RunManifest:
    """Provenance record written before any output of a run."""
    config_hash: str
    version: str
    seeds: list
    engine: str
    task: str
    started_at: str
    config_text: str
    finished_at: Optional[str] = None
    wall_clock: Optional[float] = None
    status: str = 'running'
    outputs: list = field(default_factory=list)
    overrides: dict = field(default_factory=dict)

    def to_dict(self, schema_version):
        return {
            'schema_version': schema_version,
            'config_hash': self.config_hash,
            'version': self.version,
            'engine': self.engine,
            'task': self.task,
            'seeds': list(self.seeds),
            'overrides': self.overrides,
            'started_at': self.started_at,
            'finished_at': self.finished_at,
            'wall_clock_seconds': self.wall_clock,
            'status': self.status,
            'outputs': list(self.outputs),
            'config': self.config_text,
        }
