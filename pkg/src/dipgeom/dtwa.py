"""Discrete truncated Wigner sampling of XY spin dynamics.

Each trajectory starts from a discrete phase-space point of the +x coherent
state and evolves classically under

    ds_i/dt = B_i x s_i,    B_i = 2 pi sum_j J_ij (s_j^x, s_j^y, 0)

which is the Heisenberg equation of motion of H = sum_{i<j} J_ij (S^x_i S^x_j + S^y_i S^y_j)
with J in Hz.  Collective observables are averages over trajectories.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import DomainError, IntegrationError

DEFAULT_N_TRAJ = 4000
MAX_ROTATION = 0.02  # rad per RK4 step
CHUNK_SIZE = 250
JACKKNIFE_GROUPS = 20
CONTRAST_FLOOR = 1e-3


@dataclass(frozen=True, eq=False)
class CouplingSchedule:
    """Piecewise-constant couplings.

    ``matrices[k]`` (Hz) acts for ``durations[k]``.  If ``reference_hz`` is
    set, durations and sample times are dimensionless multiples of
    ``1 / reference_hz``; otherwise they are seconds.
    """

    matrices: tuple[np.ndarray, ...]
    durations: tuple[float, ...]
    reference_hz: float | None = None

    def __post_init__(self):
        mats = tuple(np.asarray(m, dtype=float) for m in self.matrices)
        durs = tuple(float(d) for d in self.durations)
        if not mats or len(mats) != len(durs):
            raise DomainError("need one duration per coupling matrix")
        n = mats[0].shape[0]
        for m in mats:
            if m.shape != (n, n):
                raise DomainError("all coupling matrices must be N x N with the same N")
            scale = max(np.max(np.abs(m)), 1.0)
            if np.max(np.abs(m - m.T)) > 1e-12 * scale:
                raise DomainError("coupling matrix is not symmetric")
            if np.any(np.diag(m) != 0):
                raise DomainError("coupling matrix must have a zero diagonal")
        if any(not d > 0 for d in durs):
            raise DomainError("segment durations must be positive")
        if self.reference_hz is not None and not self.reference_hz > 0:
            raise DomainError("reference_hz must be positive")
        object.__setattr__(self, "matrices", mats)
        object.__setattr__(self, "durations", durs)

    @classmethod
    def static(cls, matrix, duration: float, reference_hz: float | None = None) -> "CouplingSchedule":
        return cls((matrix,), (duration,), reference_hz)

    @property
    def n_spins(self) -> int:
        return self.matrices[0].shape[0]

    @property
    def total_duration(self) -> float:
        return float(sum(self.durations))

    def scaled_matrices(self) -> list[np.ndarray]:
        """Matrices in units matching the durations (cycles per time unit)."""
        k = 1.0 if self.reference_hz is None else 1.0 / self.reference_hz
        return [m * k for m in self.matrices]

    def permuted(self, perm) -> "CouplingSchedule":
        """Relabel spins: new spin ``a`` is old spin ``perm[a]``."""
        p = np.asarray(perm)
        return CouplingSchedule(tuple(m[np.ix_(p, p)] for m in self.matrices), self.durations,
                                self.reference_hz)

    def repeated(self, total: float) -> "CouplingSchedule":
        """Cycle through the segments until ``total`` is covered, truncating the last."""
        mats, durs, t = [], [], 0.0
        period = self.total_duration
        n_full = int(total // period)
        for _ in range(n_full):
            mats.extend(self.matrices)
            durs.extend(self.durations)
        t = n_full * period
        for m, d in zip(self.matrices, self.durations):
            if total - t <= 1e-12 * total:
                break
            step = min(d, total - t)
            mats.append(m)
            durs.append(step)
            t += step
        return CouplingSchedule(tuple(mats), tuple(durs), self.reference_hz)

    def to_json(self) -> str:
        return json.dumps({
            "reference_hz": self.reference_hz,
            "segments": [{"duration": d, "matrix": m.ravel().tolist()}
                         for m, d in zip(self.matrices, self.durations)],
        })


def all_to_all(n_spins: int, coupling_hz: float = 1.0) -> np.ndarray:
    if n_spins < 2:
        raise DomainError("need at least two spins")
    m = np.full((n_spins, n_spins), float(coupling_hz))
    np.fill_diagonal(m, 0.0)
    return m


@dataclass
class SpinTrajectorySet:
    n_spins: int
    n_traj: int
    seed: int
    times: np.ndarray  # (T,)
    collective: np.ndarray  # (M, T, 3) per-trajectory collective spin
    max_norm_drift: float
    max_sz_drift: float

    @property
    def mean_spin(self) -> np.ndarray:
        return self.collective.mean(axis=0)


@dataclass
class SqueezingResult:
    times: np.ndarray
    xi2: np.ndarray
    xi2_stderr: np.ndarray
    mean_spin: np.ndarray  # (T, 3)
    spin_stderr: np.ndarray  # (T, 3)
    contrast_loss: np.ndarray  # (T,) bool
    n_spins: int
    n_traj: int
    seed: int
    max_norm_drift: float = float("nan")
    max_sz_drift: float = float("nan")
    min_index: int = field(init=False)

    def __post_init__(self):
        usable = np.where(self.contrast_loss, np.inf, self.xi2)
        self.min_index = int(np.argmin(usable))

    @property
    def min_xi2(self) -> float:
        return float(self.xi2[self.min_index])

    @property
    def min_xi2_stderr(self) -> float:
        return float(self.xi2_stderr[self.min_index])

    @property
    def min_time(self) -> float:
        return float(self.times[self.min_index])

    @property
    def min_at_horizon(self) -> bool:
        return self.min_index == len(self.times) - 1

    def summary(self) -> dict:
        return {"N": self.n_spins, "n_traj": self.n_traj, "seed": self.seed,
                "min_xi2": self.min_xi2, "min_xi2_stderr": self.min_xi2_stderr,
                "time_of_min": self.min_time, "min_at_horizon": self.min_at_horizon,
                "max_norm_drift": self.max_norm_drift, "max_sz_drift": self.max_sz_drift}

    def rows(self):
        for k, t in enumerate(self.times):
            yield (float(t), float(self.xi2[k]), *map(float, self.mean_spin[k]),
                   float(self.xi2_stderr[k]), *map(float, self.spin_stderr[k]))

    CSV_HEADER = ("time", "xi2", "Sx", "Sy", "Sz", "xi2_stderr", "Sx_stderr", "Sy_stderr", "Sz_stderr")


def initial_spins(seed: int, traj_indices, n_spins: int, spin_labels=None) -> np.ndarray:
    """Discrete Wigner samples of the +x coherent state, shape ``(3, M, N)``.

    Trajectory ``m`` draws from its own Philox stream keyed by ``seed`` with
    the trajectory index in the counter, so a trajectory's spins do not depend
    on how trajectories are grouped.  Spin ``i`` reads draw ``spin_labels[i]``.
    """
    labels = np.arange(n_spins) if spin_labels is None else np.asarray(spin_labels)
    traj_indices = np.asarray(traj_indices)
    s = np.empty((3, len(traj_indices), n_spins))
    s[0] = 0.5
    for row, m in enumerate(traj_indices):
        bitgen = np.random.Philox(key=int(seed) % 2**64, counter=[0, 0, 0, int(m)])
        draws = np.random.Generator(bitgen).integers(0, 2, size=(len(labels), 2))
        s[1, row] = draws[labels, 0] - 0.5
        s[2, row] = draws[labels, 1] - 0.5
    return s


def _rhs(s: np.ndarray, w: np.ndarray) -> np.ndarray:
    bx = s[0] @ w
    by = s[1] @ w
    return np.stack((by * s[2], -bx * s[2], bx * s[1] - by * s[0]))


def _rk4(s: np.ndarray, w: np.ndarray, h: float, n_steps: int) -> np.ndarray:
    for _ in range(n_steps):
        k1 = _rhs(s, w)
        k2 = _rhs(s + 0.5 * h * k1, w)
        k3 = _rhs(s + 0.5 * h * k2, w)
        k4 = _rhs(s + h * k3, w)
        s = s + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(s)):
        raise IntegrationError("non-finite spin components")
    return s


def _timeline(schedule: CouplingSchedule, sample_times: np.ndarray, max_rotation: float):
    """Integration intervals ``(segment, length, n_steps, sample_index_or_None)``."""
    mats = schedule.scaled_matrices()
    # |B_i| <= 2 pi sum_j |J_ij| |s_j| with |s_j| = sqrt(3)/2 conserved
    bmax = [2 * math.pi * np.max(np.sum(np.abs(m), axis=1)) * math.sqrt(3) / 2 for m in mats]
    bounds = np.cumsum((0.0,) + schedule.durations)
    plan = []
    t = 0.0
    k = 0
    seg = 0
    while k < len(sample_times):
        target = sample_times[k]
        while seg < len(mats) - 1 and bounds[seg + 1] <= t + 1e-12 * max(1.0, abs(t)):
            seg += 1
        seg_end = bounds[seg + 1] if seg < len(mats) - 1 else math.inf
        stop = min(target, seg_end)
        length = stop - t
        if length > 0:
            n = max(1, math.ceil(length * bmax[seg] / max_rotation))
            plan.append((seg, length, n, None))
        t = stop
        if stop == target:
            plan.append((seg, 0.0, 0, k))
            k += 1
    return mats, plan


def _run_chunk(args):
    (seed, traj, n_spins, labels, weights, plan, n_times) = args
    s = initial_spins(seed, traj, n_spins, labels)
    norm0 = np.sqrt(np.sum(s * s, axis=0))
    sz0 = s[2].sum(axis=1)
    out = np.empty((len(traj), n_times, 3))
    norm_drift = 0.0
    sz_drift = 0.0
    for seg, length, n, sample in plan:
        if sample is None:
            s = _rk4(s, weights[seg], length / n, n)
            continue
        out[:, sample, :] = s.sum(axis=2).T
        norm_drift = max(norm_drift, float(np.max(np.abs(np.sqrt(np.sum(s * s, axis=0)) - norm0) / norm0)))
        sz_drift = max(sz_drift, float(np.max(np.abs(s[2].sum(axis=1) - sz0))) / (n_spins / 2))
    return out, norm_drift, sz_drift


def dtwa_evolve(schedule: CouplingSchedule, n_traj: int = DEFAULT_N_TRAJ, seed: int = 0, sample_times=None,
                workers: int = 1, spin_labels=None, max_rotation: float = MAX_ROTATION,
                chunk_size: int = CHUNK_SIZE) -> SpinTrajectorySet:
    """Evolve ``n_traj`` discrete-Wigner trajectories through ``schedule``.

    Uses fixed-step RK4 with the step chosen per interval so that the largest
    possible precession angle per step is below ``max_rotation``.  The bound
    depends only on the coupling matrices, so the step sequence (and hence the
    output) is independent of ``workers`` and of the trajectory grouping.
    After the last segment the final couplings remain on.
    """
    if n_traj < 1:
        raise DomainError("n_traj must be positive")
    if sample_times is None:
        sample_times = np.linspace(0.0, schedule.total_duration, 101)
    times = np.asarray(sample_times, dtype=float)
    if times.ndim != 1 or times.size == 0 or times[0] < 0 or np.any(np.diff(times) <= 0):
        raise DomainError("sample_times must be non-negative and strictly increasing")
    if not 0 < max_rotation <= 0.05:
        raise DomainError("max_rotation must lie in (0, 0.05]")
    n = schedule.n_spins
    mats, plan = _timeline(schedule, times, max_rotation)
    weights = [2 * math.pi * m for m in mats]
    chunks = [np.arange(a, min(a + chunk_size, n_traj)) for a in range(0, n_traj, chunk_size)]
    jobs = [(seed, c, n, spin_labels, weights, plan, len(times)) for c in chunks]
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_chunk, jobs))
    else:
        results = [_run_chunk(j) for j in jobs]
    collective = np.concatenate([r[0] for r in results], axis=0)
    return SpinTrajectorySet(n, n_traj, seed, times, collective,
                             max(r[1] for r in results), max(r[2] for r in results))


def _xi2_from_moments(coll: np.ndarray, n_spins: int):
    """Wineland parameter and mean spin for ``coll`` of shape (M, T, 3)."""
    mean = coll.mean(axis=0)
    norm = np.linalg.norm(mean, axis=1)
    dev = coll - mean
    cov = np.einsum("mti,mtj->tij", dev, dev) / (coll.shape[0] - 1)
    xi2 = np.empty(len(mean))
    for t in range(len(mean)):
        nhat = mean[t] / norm[t] if norm[t] > 0 else np.array([1.0, 0.0, 0.0])
        trial = np.eye(3)[np.argmin(np.abs(nhat))]
        e1 = np.cross(nhat, trial)
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(nhat, e1)
        basis = np.stack((e1, e2))
        perp = basis @ cov[t] @ basis.T
        lam = np.linalg.eigvalsh(perp)[0]
        xi2[t] = n_spins * lam / norm[t] ** 2 if norm[t] > 0 else np.inf
    return xi2, mean, norm


def squeezing_parameter(traj: SpinTrajectorySet, groups: int = JACKKNIFE_GROUPS) -> SqueezingResult:
    """Wineland parameter at every sample time with delete-one-group jackknife errors."""
    m = traj.n_traj
    if m < 100:
        raise DomainError("squeezing estimates need at least 100 trajectories")
    coll = traj.collective
    xi2, mean, norm = _xi2_from_moments(coll, traj.n_spins)
    edges = np.linspace(0, m, groups + 1).astype(int)
    jk = []
    for g in range(groups):
        keep = np.concatenate((coll[: edges[g]], coll[edges[g + 1]:]), axis=0)
        jk.append(_xi2_from_moments(keep, traj.n_spins)[0])
    jk = np.array(jk)
    finite = np.all(np.isfinite(jk), axis=0)
    jk_err = np.full(len(xi2), np.inf)
    jk_err[finite] = np.sqrt((groups - 1) / groups * np.sum((jk[:, finite] - jk[:, finite].mean(axis=0)) ** 2, axis=0))
    spin_err = coll.std(axis=0, ddof=1) / math.sqrt(m)
    contrast_loss = norm < CONTRAST_FLOOR * traj.n_spins / 2
    return SqueezingResult(traj.times, xi2, jk_err, mean, spin_err, contrast_loss,
                           traj.n_spins, traj.n_traj, traj.seed, traj.max_norm_drift, traj.max_sz_drift)


def oat_wineland(n_spins: int, chi_t):
    """Wineland parameter of one-axis twisting ``H = chi S_z^2`` from a +x coherent state."""
    n = n_spins
    mu = 2.0 * np.asarray(chi_t, dtype=float)
    a = 1.0 - np.cos(mu) ** (n - 2)
    b = 4.0 * np.sin(mu / 2) * np.cos(mu / 2) ** (n - 2)
    xi2_s = 1.0 + (n - 1) / 4.0 * (a - np.sqrt(a * a + b * b))
    contrast = np.cos(mu / 2) ** (n - 1)
    return xi2_s / contrast**2


def oat_optimum(n_spins: int) -> tuple[float, float]:
    """``(chi t, xi2)`` at the first minimum of :func:`oat_wineland`."""
    from scipy.optimize import minimize_scalar

    # the first minimum sits well inside chi t < N^{-1/2}
    hi = 2.0 / math.sqrt(n_spins)
    grid = np.linspace(1e-6, hi, 4001)
    k = int(np.argmin(oat_wineland(n_spins, grid)))
    lo_b, hi_b = grid[max(k - 1, 0)], grid[min(k + 1, len(grid) - 1)]
    res = minimize_scalar(lambda x: float(oat_wineland(n_spins, x)), bounds=(lo_b, hi_b),
                          method="bounded", options={"xatol": 1e-12})
    return float(res.x), float(res.fun)


def mean_coupling(schedule: CouplingSchedule) -> float:
    """Time-averaged mean off-diagonal coupling in schedule units."""
    avg = sum(m * d for m, d in zip(schedule.scaled_matrices(), schedule.durations)) / schedule.total_duration
    n = avg.shape[0]
    return float(avg[~np.eye(n, dtype=bool)].mean())


def auto_horizon(schedule: CouplingSchedule, factor: float = 3.0) -> float:
    """Initial search horizon in schedule units.

    ``factor`` times the one-axis-twisting optimum for the mean coupling,
    capped at two local periods ``2 / max_i sum_j |J_ij|`` so that
    short-ranged schedules, whose optimum comes much earlier, start small.
    """
    jbar = abs(mean_coupling(schedule))
    if jbar == 0:
        raise DomainError("schedule has no net coupling")
    chi_t, _ = oat_optimum(schedule.n_spins)
    row = max(float(np.max(np.sum(np.abs(m), axis=1))) for m in schedule.scaled_matrices())
    return min(factor * chi_t / (math.pi * jbar), 2.0 / row)


def squeeze_schedule(schedule: CouplingSchedule, n_traj: int = DEFAULT_N_TRAJ, seed: int = 0,
                     horizon: float | None = None, n_samples: int = 121, workers: int = 1,
                     max_extensions: int = 5) -> SqueezingResult:
    """Repeat ``schedule`` periodically up to ``horizon`` and locate the best squeezing.

    Without an explicit horizon, one is estimated from the mean coupling and
    doubled while the minimum sits on the last sample.
    """
    auto = horizon is None
    horizon = auto_horizon(schedule) if auto else float(horizon)
    if not horizon > 0:
        raise DomainError("horizon must be positive")
    for _ in range(max_extensions + 1):
        full = schedule.repeated(horizon) if schedule.total_duration < horizon else schedule
        times = np.linspace(0.0, horizon, n_samples)
        result = squeezing_parameter(dtwa_evolve(full, n_traj, seed, times, workers))
        if not (auto and result.min_at_horizon):
            break
        horizon *= 2.0
    return result


@dataclass(frozen=True)
class ScalingFit:
    exponent: float
    stderr: float
    ci95: tuple[float, float]
    intercept: float


def scaling_fit(results) -> ScalingFit:
    """Least-squares slope of ``log xi2_min`` against ``log N``."""
    pts = sorted((int(n), float(x)) for n, x in results)
    if len(pts) < 4:
        raise DomainError("need at least four system sizes")
    ns = np.array([p[0] for p in pts], dtype=float)
    xs = np.array([p[1] for p in pts])
    if np.any(xs <= 0) or not np.all(np.isfinite(xs)):
        raise DomainError("squeezing values must be positive and finite")
    if ns.max() / ns.min() < 8:
        raise DomainError("system sizes must span at least a factor of 8")
    fit = stats.linregress(np.log(ns), np.log(xs))
    tq = stats.t.ppf(0.975, len(pts) - 2)
    return ScalingFit(float(fit.slope), float(fit.stderr),
                      (float(fit.slope - tq * fit.stderr), float(fit.slope + tq * fit.stderr)),
                      float(fit.intercept))
