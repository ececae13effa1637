"""Geometric echo sequences on a square array.

Half of the molecules (a checkerboard sublattice) are displaced between
steps while the field is rotated in the array plane.  A sequence cancels the
leading axial dephasing of a bond when the duration-weighted mean of
``A_z2(theta_i) / r_i^2`` vanishes; its effective coupling is the
duration-weighted mean of the exact couplings.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from skimage.measure import find_contours

from .dipolar import (
    ArrayGeometry,
    DipoleSpec,
    coupling_constant,
    exact_coupling,
    sensitivity_coefficient,
)
from .errors import CollisionRiskError, DomainError

DEFAULT_BASE_AXIS = (math.sqrt(0.5), math.sqrt(0.5), 0.0)
NEAREST_NEIGHBOURS = ((1, 0), (0, 1), (-1, 0), (0, -1))


@dataclass(frozen=True, eq=False)
class EchoStep:
    displacement: np.ndarray  # (2,), m, applied to the mobile sublattice
    dipole_axis: np.ndarray  # (3,)
    duration: float  # s

    def __post_init__(self):
        disp = np.asarray(self.displacement, dtype=float)
        axis = np.asarray(self.dipole_axis, dtype=float)
        if disp.shape != (2,):
            raise DomainError("displacement must be a 2-vector")
        if axis.shape != (3,) or abs(np.linalg.norm(axis) - 1.0) > 1e-12:
            raise DomainError("dipole_axis must be a unit 3-vector")
        if not self.duration > 0:
            raise DomainError("step duration must be positive")
        object.__setattr__(self, "displacement", disp)
        object.__setattr__(self, "dipole_axis", axis)


@dataclass(frozen=True, eq=False)
class EchoSequence:
    steps: tuple[EchoStep, ...]
    base_geometry: ArrayGeometry
    mobile: np.ndarray  # bool mask over base_geometry.positions
    spacing: float | None = None
    centre: int | None = None  # index of the reference (static) molecule

    def __post_init__(self):
        if not self.steps:
            raise DomainError("an echo sequence needs at least one step")
        object.__setattr__(self, "steps", tuple(self.steps))
        object.__setattr__(self, "mobile", np.asarray(self.mobile, dtype=bool))

    @property
    def total_duration(self) -> float:
        return sum(s.duration for s in self.steps)

    def step_geometry(self, k: int) -> ArrayGeometry:
        step = self.steps[k]
        pos = self.base_geometry.positions.copy()
        pos[self.mobile, :2] += step.displacement
        return ArrayGeometry(pos, step.dipole_axis)

    def nearest_neighbour_bonds(self) -> list[tuple[int, int]]:
        """The four bonds from the central molecule to its lattice neighbours."""
        if self.centre is None or self.spacing is None:
            raise DomainError("sequence has no designated central molecule")
        pos = self.base_geometry.positions
        out = []
        for dx, dy in NEAREST_NEIGHBOURS:
            target = pos[self.centre] + self.spacing * np.array([dx, dy, 0.0])
            j = int(np.argmin(np.linalg.norm(pos - target, axis=1)))
            out.append((self.centre, j))
        return out


def _bond_angle_and_length(geometry: ArrayGeometry, bond) -> tuple[float, float]:
    i, j = bond
    vec = geometry.bond(i, j)
    r = float(np.linalg.norm(vec))
    if r == 0:
        raise DomainError(f"molecules {i} and {j} coincide")
    if abs(vec[2]) > 1e-12 * r or abs(geometry.quantization_axis[2]) > 1e-12:
        raise DomainError("axial sensitivity needs the bond and dipole axis in the array plane")
    return geometry.angle(i, j), r


def averaged_axial_sensitivity(seq: EchoSequence, bond=(0, 1)) -> float:
    """Duration-weighted mean of ``A_z2(theta_i) / r_i^2`` (1/m^2)."""
    total = 0.0
    for k, step in enumerate(seq.steps):
        theta, r = _bond_angle_and_length(seq.step_geometry(k), bond)
        total += sensitivity_coefficient("z2", theta) * step.duration / r**2
    return total / seq.total_duration


def effective_coupling(seq: EchoSequence, bond, dipole: DipoleSpec) -> float:
    """Duration-weighted mean of the exact coupling of ``bond`` (Hz)."""
    total = 0.0
    for k, step in enumerate(seq.steps):
        total += exact_coupling(seq.step_geometry(k), dipole, *bond) * step.duration
    return total / seq.total_duration


def total_axial_sensitivity(seq: EchoSequence) -> float:
    """Sum of the averaged sensitivities of the central molecule's four bonds."""
    return sum(averaged_axial_sensitivity(seq, b) for b in seq.nearest_neighbour_bonds())


def _rot90(k: int) -> np.ndarray:
    c, s = [(1, 0), (0, 1), (-1, 0), (0, -1)][k % 4]
    return np.array([[c, -s], [s, c]], dtype=float)


def _min_mobile_static_distance(r0: np.ndarray, spacing: float) -> np.ndarray:
    """Closest approach of a displaced mobile site to a static site.

    ``r0`` may carry leading grid dimensions, shape ``(..., 2)``.
    """
    offsets = spacing * np.array(NEAREST_NEIGHBOURS, dtype=float)
    return np.min(np.linalg.norm(r0[..., None, :] - offsets, axis=-1), axis=-1)


def square_lattice(spacing: float, size: int = 5, axis=DEFAULT_BASE_AXIS) -> tuple[ArrayGeometry, np.ndarray, int]:
    """``size x size`` patch in the x-y plane, checkerboard mobility mask and centre index."""
    if size < 3 or size % 2 == 0:
        raise DomainError("size must be an odd integer >= 3")
    half = size // 2
    ij = np.array([(i, j) for j in range(-half, half + 1) for i in range(-half, half + 1)])
    pos = np.column_stack([spacing * ij, np.zeros(len(ij))])
    mobile = (ij.sum(axis=1) % 2) != 0
    centre = int(np.flatnonzero((ij == 0).all(axis=1))[0])
    return ArrayGeometry(pos, np.asarray(axis, dtype=float)), mobile, centre


def square_echo_sequence(r0, cycle_time: float, spacing: float, base_dipole_axis=DEFAULT_BASE_AXIS,
                         size: int = 5) -> EchoSequence:
    """Four-step echo: step ``k`` displaces the mobile sublattice by ``R(k 90deg) r0``
    and rotates the in-plane dipole axis by ``k 90deg``.

    Over a cycle every nearest-neighbour bond direction sees the same multiset
    of (angle, length) configurations.  Raises :class:`CollisionRiskError` if a
    displaced molecule comes closer than ``spacing / 2`` to a static one.
    """
    r0 = np.asarray(r0, dtype=float)
    if not cycle_time > 0:
        raise DomainError("cycle_time must be positive")
    b0 = np.asarray(base_dipole_axis, dtype=float)
    if abs(np.linalg.norm(b0) - 1.0) > 1e-12 or abs(b0[2]) > 1e-12:
        raise DomainError("base_dipole_axis must be an in-plane unit vector")
    if _min_mobile_static_distance(r0, spacing) < 0.5 * spacing * (1 - 1e-12):
        raise CollisionRiskError(f"displacement {r0} brings molecules closer than spacing/2")
    geometry, mobile, centre = square_lattice(spacing, size, b0)
    steps = []
    for k in range(4):
        rot = _rot90(k)
        axis = np.append(rot @ b0[:2], 0.0)
        steps.append(EchoStep(rot @ r0, axis, cycle_time / 4.0))
    return EchoSequence(tuple(steps), geometry, mobile, spacing, centre)


@dataclass
class DecouplingMap:
    x0: np.ndarray  # (nx,), m
    y0: np.ndarray  # (ny,), m
    j_eff: np.ndarray  # (ny, nx), Hz, bond from the centre to its +x neighbour
    sensitivity: np.ndarray  # (ny, nx), 1/m^2, summed over the four bonds
    valid: np.ndarray  # (ny, nx) bool
    contours: list[np.ndarray] = field(default_factory=list)  # each (k, 2) in m
    spacing: float = 0.0
    base_dipole_axis: tuple = DEFAULT_BASE_AXIS

    def contour_points(self) -> np.ndarray:
        if not self.contours:
            return np.empty((0, 2))
        return np.vstack(self.contours)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x0", "y0", "J_eff_Hz", "sensitivity_per_m2"])
            for iy, y in enumerate(self.y0):
                for ix, x in enumerate(self.x0):
                    w.writerow([repr(float(x)), repr(float(y)), repr(float(self.j_eff[iy, ix])),
                                repr(float(self.sensitivity[iy, ix]))])


def _cycle_fields(r0: np.ndarray, spacing: float, base_axis: np.ndarray):
    """Vectorised total sensitivity and one-bond kernel average over a grid of ``r0``.

    Returns ``(sensitivity, kernel)`` with the kernel in 1/m^3 (multiply by
    the coupling constant for Hz).
    """
    sens = np.zeros(r0.shape[:-1])
    kern = np.zeros(r0.shape[:-1])
    for k in range(4):
        rot = _rot90(k)
        disp = r0 @ rot.T
        axis = rot @ base_axis[:2]
        for n, (dx, dy) in enumerate(NEAREST_NEIGHBOURS):
            bond = disp + spacing * np.array([dx, dy], dtype=float)
            r2 = np.einsum("...i,...i->...", bond, bond)
            cos2 = (bond @ axis) ** 2 / r2
            sens += sensitivity_coefficient("z2", np.arccos(np.sqrt(np.clip(cos2, 0.0, 1.0)))) / r2
            if n == 0:
                kern += (1.0 - 3.0 * cos2) / (r2 * np.sqrt(r2))
    return sens / 4.0, kern / 4.0


def decoupling_map(spacing: float, dipole: DipoleSpec, resolution: int = 128,
                   base_dipole_axis=DEFAULT_BASE_AXIS) -> DecouplingMap:
    """Effective coupling and total axial sensitivity over ``r0`` in ``[-a/2, a/2]^2``.

    The zero contour of the sensitivity is extracted by marching squares with
    linear interpolation along grid edges.
    """
    if resolution < 64:
        raise DomainError("resolution must be at least 64")
    base = np.asarray(base_dipole_axis, dtype=float)
    if abs(np.linalg.norm(base) - 1.0) > 1e-12 or abs(base[2]) > 1e-12:
        raise DomainError("base_dipole_axis must be an in-plane unit vector")
    x0 = np.linspace(-spacing / 2, spacing / 2, resolution)
    y0 = np.linspace(-spacing / 2, spacing / 2, resolution)
    grid = np.stack(np.meshgrid(x0, y0, indexing="xy"), axis=-1)
    valid = _min_mobile_static_distance(grid, spacing) >= 0.5 * spacing * (1 - 1e-12)
    sens, kern = _cycle_fields(grid, spacing, base)
    j_eff = coupling_constant(dipole) * kern
    sens = np.where(valid, sens, np.nan)
    j_eff = np.where(valid, j_eff, np.nan)

    dx = x0[1] - x0[0]
    dy = y0[1] - y0[0]
    contours = []
    for c in find_contours(sens, 0.0):
        # find_contours returns (row, col) = (y index, x index)
        contours.append(np.column_stack([x0[0] + c[:, 1] * dx, y0[0] + c[:, 0] * dy]))
    return DecouplingMap(x0, y0, j_eff, sens, valid, contours, spacing, tuple(base))


def sequence_sensitivity(r0, spacing: float, base_dipole_axis=DEFAULT_BASE_AXIS) -> float:
    """Total four-bond sensitivity for a single ``r0`` via the public sequence API."""
    seq = square_echo_sequence(r0, 1.0, spacing, base_dipole_axis)
    return total_axial_sensitivity(seq)


def refine_contour_point(point, dmap: DecouplingMap, tol: float = 1e-15) -> np.ndarray:
    """Bisect the sensitivity along the grid edge that ``point`` lies on."""
    x, y = map(float, point)
    ix = (x - dmap.x0[0]) / (dmap.x0[1] - dmap.x0[0])
    iy = (y - dmap.y0[0]) / (dmap.y0[1] - dmap.y0[0])
    if abs(iy - round(iy)) < abs(ix - round(ix)):
        k = int(np.floor(ix))
        k = min(max(k, 0), len(dmap.x0) - 2)
        a, b = np.array([dmap.x0[k], y]), np.array([dmap.x0[k + 1], y])
    else:
        k = int(np.floor(iy))
        k = min(max(k, 0), len(dmap.y0) - 2)
        a, b = np.array([x, dmap.y0[k]]), np.array([x, dmap.y0[k + 1]])

    def f(p):
        s, _ = _cycle_fields(p[None, :], dmap.spacing, np.asarray(dmap.base_dipole_axis))
        return float(s[0])

    fa, fb = f(a), f(b)
    if np.sign(fa) == np.sign(fb):
        return np.asarray(point, dtype=float)
    for _ in range(200):
        m = 0.5 * (a + b)
        fm = f(m)
        if np.linalg.norm(b - a) < tol * dmap.spacing or fm == 0:
            break
        if np.sign(fm) == np.sign(fa):
            a, fa = m, fm
        else:
            b = m
    return 0.5 * (a + b)
