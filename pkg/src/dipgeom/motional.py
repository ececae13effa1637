"""Harmonic motional states, thermal disorder of J and the quality factor.

Both molecules sit in identical harmonic traps whose principal axes are the
lab axes (x, y radial in the focal plane, z along the tweezer beam).  Diagonal
matrix elements of the dipolar kernel over product motional states are
computed by Gauss-Hermite quadrature.  Because the kernel depends only on the
relative coordinate ``u = q1 - q2`` on each axis, the centre-of-mass integral
is done exactly by an inner Gauss-Hermite rule (its integrand is a polynomial
times a Gaussian) and the outer rule runs over ``u``.  This is the full
six-dimensional tensor-product rule with one factor evaluated in closed form.
"""

from __future__ import annotations

import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple

import numpy as np
from scipy import constants

from .dipolar import ArrayGeometry, DipoleSpec, coupling_constant, dipolar_kernel
from .errors import ConvergenceError, DomainError, OverlapRiskError

OVERLAP_FACTOR = 5.0  # bond-direction extent must stay below separation / 5
TOTAL_EXTENT_FACTOR = 2.0  # full 3D extent must stay below separation / 2
CONVERGENCE_RTOL = 1e-6


@dataclass(frozen=True)
class TrapParams:
    """Angular trap frequencies (rad/s) and particle mass (kg)."""

    omega_x: float
    omega_y: float
    omega_z: float
    mass: float

    def __post_init__(self):
        if not all(v > 0 for v in (self.omega_x, self.omega_y, self.omega_z, self.mass)):
            raise DomainError("trap frequencies and mass must be positive")

    @classmethod
    def from_khz(cls, radial_khz: float, axial_khz: float, mass_u: float) -> "TrapParams":
        """Trap with ``omega = 2 pi f`` for frequencies given in kHz."""
        w_r = 2 * math.pi * radial_khz * 1e3
        w_a = 2 * math.pi * axial_khz * 1e3
        return cls(w_r, w_r, w_a, mass_u * constants.atomic_mass)

    @property
    def omegas(self) -> tuple[float, float, float]:
        return (self.omega_x, self.omega_y, self.omega_z)

    @property
    def anisotropy(self) -> float:
        """``omega_radial^2 / omega_axial^2`` (radial taken as the x/y mean)."""
        w_r = 0.5 * (self.omega_x + self.omega_y)
        return w_r**2 / self.omega_z**2


def oscillator_width(trap: TrapParams, axis: str) -> float:
    """Ground-state rms width ``sqrt(hbar / (2 m omega))`` along ``axis`` (m)."""
    omega = dict(zip("xyz", trap.omegas))[axis]
    return math.sqrt(constants.hbar / (2.0 * trap.mass * omega))


def _widths(trap: TrapParams) -> np.ndarray:
    return np.array([oscillator_width(trap, a) for a in "xyz"])


class MotionalOccupation(NamedTuple):
    """Harmonic quantum numbers of one molecule."""

    nx: int = 0
    ny: int = 0
    nz: int = 0


@dataclass(frozen=True)
class ThermalSpec:
    """Mean thermal occupation per axis (0 means the motional ground state)."""

    nbar_x: float
    nbar_y: float
    nbar_z: float

    def __post_init__(self):
        if min(self.nbar_x, self.nbar_y, self.nbar_z) < 0:
            raise DomainError("mean occupations must be non-negative")

    @property
    def nbars(self) -> tuple[float, float, float]:
        return (self.nbar_x, self.nbar_y, self.nbar_z)

    @classmethod
    def from_temperature(cls, trap: TrapParams, temperature: float) -> "ThermalSpec":
        """Bose-Einstein occupations of the three trap axes at one temperature (K)."""
        if temperature < 0:
            raise DomainError("temperature must be non-negative")
        if temperature == 0:
            return cls(0.0, 0.0, 0.0)
        beta = constants.hbar / (constants.k * temperature)
        return cls(*(1.0 / math.expm1(beta * w) for w in trap.omegas))

    @classmethod
    def equal_temperature(cls, trap: TrapParams, nbar_z: float) -> "ThermalSpec":
        """Occupations at the temperature that gives ``nbar_z`` on the axial axis."""
        if nbar_z < 0:
            raise DomainError("nbar_z must be non-negative")
        if nbar_z == 0:
            return cls(0.0, 0.0, 0.0)
        temperature = constants.hbar * trap.omega_z / (constants.k * math.log1p(1.0 / nbar_z))
        return cls.from_temperature(trap, temperature)


def sample_occupations(thermal: ThermalSpec, rng: np.random.Generator, size: int) -> np.ndarray:
    """``size`` independent draws, shape ``(size, 3)``.

    Each axis is geometric: ``P(n) = (1 / (nbar + 1)) (nbar / (nbar + 1))^n``.
    """
    out = np.empty((size, 3), dtype=np.int64)
    for k, nbar in enumerate(thermal.nbars):
        if nbar == 0:
            out[:, k] = 0
        else:
            out[:, k] = rng.geometric(1.0 / (nbar + 1.0), size=size) - 1
    return out


def sample_occupation(thermal: ThermalSpec, rng: np.random.Generator) -> MotionalOccupation:
    return MotionalOccupation(*(int(n) for n in sample_occupations(thermal, rng, 1)[0]))


# -- quadrature -------------------------------------------------------------


@lru_cache(maxsize=None)
def _gauss_hermite(order: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.hermite.hermgauss(order)
    # enforce exact mirror symmetry of the rule
    x = 0.5 * (x - x[::-1])
    w = 0.5 * (w + w[::-1])
    return x, w


def _hermite_functions_sq(n: int, xi: np.ndarray) -> np.ndarray:
    """``H_n(xi)^2 / (2^n n! sqrt(pi))`` via the normalised three-term recurrence."""
    h_prev = np.zeros_like(xi)
    h = np.full_like(xi, math.pi**-0.25)
    for k in range(n):
        h_prev, h = h, math.sqrt(2.0 / (k + 1)) * xi * h - math.sqrt(k / (k + 1)) * h_prev
    return h * h


@lru_cache(maxsize=4096)
def _relative_rule(n1: int, n2: int, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes (in units of the ground-state width) and weights for ``u = q1 - q2``.

    ``sum_k w_k f(sigma * nodes_k)`` equals ``<n1 n2| f(q1 - q2) |n1 n2>``
    for one axis, with the centre-of-mass integral done exactly.
    """
    x, w = _gauss_hermite(order)
    y, v = _gauss_hermite(n1 + n2 + 2)
    # xi_1 = q1 / (sqrt2 sigma) = (x + y)/sqrt2, xi_2 = q2 / (sqrt2 sigma) = (y - x)/sqrt2
    xi1 = (x[:, None] + y[None, :]) / math.sqrt(2.0)
    xi2 = (y[None, :] - x[:, None]) / math.sqrt(2.0)
    inner = (_hermite_functions_sq(n1, xi1) * _hermite_functions_sq(n2, xi2)) @ v
    return 2.0 * x, w * inner


def _extents(occ, widths: np.ndarray, direction: np.ndarray) -> tuple[float, float]:
    """Classical turning-point extent projected on ``direction`` and in full 3D."""
    ext = widths * np.sqrt(2.0 * np.asarray(occ, dtype=float) + 1.0)
    return float(np.linalg.norm(ext * direction)), float(np.linalg.norm(ext))


def check_overlap(occ1, occ2, widths: np.ndarray, bond: np.ndarray) -> None:
    r = float(np.linalg.norm(bond))
    along, total = zip(*(_extents(o, widths, bond / r) for o in (occ1, occ2)))
    if max(along) >= r / OVERLAP_FACTOR:
        raise OverlapRiskError(
            f"extent along the bond {max(along):.3e} m exceeds separation/{OVERLAP_FACTOR:g}"
        )
    if max(total) >= r / TOTAL_EXTENT_FACTOR:
        raise OverlapRiskError(
            f"wavefunction extent {max(total):.3e} m exceeds separation/{TOTAL_EXTENT_FACTOR:g}"
        )


def _kernel_average(bond: np.ndarray, axis: np.ndarray, occ1, occ2, widths, order: int) -> float:
    rules = [_relative_rule(int(a), int(b), order) for a, b in zip(occ1, occ2)]
    (ux, wx), (uy, wy), (uz, wz) = rules
    vec = np.empty((len(ux), len(uy), len(uz), 3))
    vec[..., 0] = bond[0] + widths[0] * ux[:, None, None]
    vec[..., 1] = bond[1] + widths[1] * uy[None, :, None]
    vec[..., 2] = bond[2] + widths[2] * uz[None, None, :]
    f = dipolar_kernel(vec, axis)
    return float(np.einsum("ijk,i,j,k->", f, wx, wy, wz))


def default_quad_order(occ1, occ2) -> int:
    return int(max(a + b for a, b in zip(occ1, occ2))) + 12


def quantum_matrix_element(occ1, occ2, geometry: ArrayGeometry, trap: TrapParams,
                           dipole: DipoleSpec, quad_order: int | None = None,
                           i: int = 0, j: int = 1, check_convergence: bool = True) -> float:
    """Diagonal matrix element ``J(n1; n2)`` in Hz for molecules ``i`` and ``j``.

    ``quad_order`` is the number of relative-coordinate nodes per axis; it
    must exceed the largest ``n1 + n2`` by at least 8 (default: +12).  With
    ``check_convergence`` the order is raised by 4 and the two results must
    agree to 1e-6 relative; the higher-order value is returned.
    """
    occ1 = MotionalOccupation(*occ1)
    occ2 = MotionalOccupation(*occ2)
    if min(occ1) < 0 or min(occ2) < 0:
        raise DomainError("quantum numbers must be non-negative")
    widths = _widths(trap)
    bond = geometry.bond(i, j)
    check_overlap(occ1, occ2, widths, bond)
    need = max(a + b for a, b in zip(occ1, occ2)) + 8
    if quad_order is None:
        quad_order = default_quad_order(occ1, occ2)
    if quad_order < need:
        raise DomainError(f"quad_order {quad_order} too small; need at least {need}")

    axis = geometry.quantization_axis
    c = coupling_constant(dipole)
    value = c * _kernel_average(bond, axis, occ1, occ2, widths, quad_order)
    if check_convergence:
        better = c * _kernel_average(bond, axis, occ1, occ2, widths, quad_order + 4)
        if abs(better - value) > CONVERGENCE_RTOL * abs(better):
            raise ConvergenceError(
                f"quadrature orders {quad_order} and {quad_order + 4} differ by "
                f"{abs(better - value) / abs(better):.2e} relative"
            )
        value = better
    return value


class MatrixElementCache:
    """Thread-safe memo of matrix elements keyed by occupations and geometry."""

    def __init__(self):
        self._data: dict = {}
        self._lock = threading.Lock()

    def __len__(self):
        return len(self._data)

    @staticmethod
    def key(occ1, occ2, geometry, trap, dipole, quad_order=None):
        return (tuple(occ1), tuple(occ2), geometry.key(), trap, dipole, quad_order)

    def get(self, occ1, occ2, geometry, trap, dipole, quad_order=None) -> float:
        k = self.key(occ1, occ2, geometry, trap, dipole, quad_order)
        with self._lock:
            if k in self._data:
                return self._data[k]
        value = quantum_matrix_element(occ1, occ2, geometry, trap, dipole, quad_order)
        with self._lock:
            self._data.setdefault(k, value)
        return value


_default_cache = MatrixElementCache()


@dataclass
class CouplingDistribution:
    samples: np.ndarray  # Hz
    mean: float
    std_dev: float
    occupations: np.ndarray | None = field(default=None, repr=False)  # (n, 2, 3)

    @classmethod
    def from_samples(cls, samples, occupations=None) -> "CouplingDistribution":
        samples = np.asarray(samples, dtype=float)
        if samples.size == 0:
            raise DomainError("empty coupling distribution")
        return cls(samples, float(samples.mean()), float(samples.std()), occupations)

    @property
    def relative_width(self) -> float:
        return self.std_dev / abs(self.mean)

    @property
    def standard_error(self) -> float:
        return self.std_dev / math.sqrt(len(self.samples))


def coupling_distribution(geometry: ArrayGeometry, trap: TrapParams, thermal: ThermalSpec,
                          dipole: DipoleSpec, n_samples: int, seed: int = 0, workers: int = 1,
                          cache: MatrixElementCache | None = None) -> CouplingDistribution:
    """Thermal ensemble of pair couplings.

    Occupations for both molecules are drawn from one Philox stream keyed by
    ``seed``; distinct occupation pairs are evaluated once (optionally on a
    thread pool) and then mapped back, so the sample list does not depend on
    ``workers``.
    """
    if n_samples < 100:
        raise DomainError("n_samples must be at least 100")
    cache = _default_cache if cache is None else cache
    rng = np.random.Generator(np.random.Philox(key=seed))
    occ = sample_occupations(thermal, rng, 2 * n_samples).reshape(n_samples, 2, 3)

    flat = occ.reshape(n_samples, 6)
    unique, inverse = np.unique(flat, axis=0, return_inverse=True)
    pairs = [(tuple(int(v) for v in u[:3]), tuple(int(v) for v in u[3:])) for u in unique]

    def evaluate(p):
        return cache.get(p[0], p[1], geometry, trap, dipole)

    if workers > 1 and len(pairs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            values = list(pool.map(evaluate, pairs))
    else:
        values = [evaluate(p) for p in pairs]
    samples = np.asarray(values)[np.ravel(inverse)]
    return CouplingDistribution.from_samples(samples, occ)


def exchange_contrast(dist: CouplingDistribution, times) -> np.ndarray:
    """Ensemble exchange signal ``C(t) = mean_k cos(2 pi J_k t)``."""
    times = np.atleast_1d(np.asarray(times, dtype=float))
    values, counts = np.unique(dist.samples, return_counts=True)
    # integer counts summed before dividing keep C(0) exactly 1
    weights = counts.astype(float)
    total = float(counts.sum())
    out = np.empty_like(times)
    # chunk over time to bound memory for long grids
    for start in range(0, len(times), 4096):
        t = times[start:start + 4096]
        out[start:start + 4096] = (np.cos(2 * math.pi * np.outer(t, values)) @ weights) / total
    return out


@dataclass
class QualityFactor:
    q: float
    tau: float  # s
    mean_coupling: float  # Hz
    lower_bound: bool  # True when the envelope never reached 1/e
    distribution: CouplingDistribution = field(repr=False)


def damping_time(dist: CouplingDistribution, max_periods: float = 1000.0,
                 points_per_period: int = 64) -> tuple[float, bool]:
    """First 1/e crossing of the |C(t)| envelope.

    The envelope is built from local maxima of ``|C(t)|`` sampled at
    ``points_per_period`` per mean oscillation period and linearly
    interpolated.  Returns ``(tau, lower_bound)``.
    """
    target = math.exp(-1.0)
    dt = 1.0 / (abs(dist.mean) * points_per_period)
    n_total = int(round(max_periods * points_per_period))
    chunk = 100 * points_per_period
    # scan in chunks and stop at the first crossing; a two-sample overlap keeps
    # maxima at chunk boundaries detectable
    last_t, last_env = 0.0, 1.0
    start = 0
    while start < n_total:
        stop = min(start + chunk, n_total)
        idx = np.arange(max(start - 1, 0), stop + 2)
        idx = idx[idx <= n_total]
        t = idx * dt
        a = np.abs(exchange_contrast(dist, t))
        peaks = np.flatnonzero((a[1:-1] >= a[:-2]) & (a[1:-1] > a[2:])) + 1
        peaks = peaks[(idx[peaks] > start) | (start == 0)]
        for t1, e1 in zip(t[peaks], a[peaks]):
            if e1 < target:
                return float(last_t + (last_env - target) * (t1 - last_t) / (last_env - e1)), False
            last_t, last_env = t1, e1
        start = stop
    return float(n_total * dt), True


def quality_factor(geometry: ArrayGeometry, trap: TrapParams, thermal: ThermalSpec,
                   dipole: DipoleSpec, n_samples: int, seed: int = 0, workers: int = 1,
                   max_periods: float = 1000.0) -> QualityFactor:
    """``Q = tau |<J>|`` for the thermally disordered pair."""
    dist = coupling_distribution(geometry, trap, thermal, dipole, n_samples, seed, workers)
    if dist.mean == 0:
        raise DomainError("mean coupling vanishes; Q undefined")
    tau, flagged = damping_time(dist, max_periods)
    return QualityFactor(tau * abs(dist.mean), tau, dist.mean, flagged, dist)
