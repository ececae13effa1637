"""Point-dipole spin-exchange coupling and its sensitivity to displacements.

Conventions used throughout the package:

* couplings are ordinary frequencies in Hz (energy / h); angular frequencies
  appear only inside the time integrators;
* ``J > 0`` for a pair perpendicular to the quantization axis and ``J < 0``
  for a pair along it, i.e. ``J = C (1 - 3 cos^2 theta) / r^3``;
* angles are radians.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import mpmath
import numpy as np
from scipy import constants
from scipy.spatial.distance import pdist

from .errors import DomainError, NoRootError, PrecisionError, UnsupportedTermError

DEBYE = 1e-21 / constants.c  # C m
MAGIC_ANGLE = math.acos(1.0 / math.sqrt(5.0))
NULL_ANGLE = math.acos(1.0 / math.sqrt(3.0))

AXES = ("x", "y", "z")


@dataclass(frozen=True)
class DipoleSpec:
    """Lab-frame transition dipole moment (Debye) of a two-level rotational qubit."""

    lab_frame_dipole: float
    species_label: str = ""

    def __post_init__(self):
        if not self.lab_frame_dipole > 0:
            raise DomainError(f"lab-frame dipole must be positive, got {self.lab_frame_dipole}")

    @property
    def dipole_si(self) -> float:
        return self.lab_frame_dipole * DEBYE


@dataclass(frozen=True)
class Species:
    label: str
    rotating_frame_dipole: float  # Debye
    lab_frame_dipole: float  # Debye
    mass_u: float
    reference_coupling_hz: float  # tabulated J(90 deg) at 2 um

    @property
    def dipole(self) -> DipoleSpec:
        return DipoleSpec(self.lab_frame_dipole, self.label)

    @property
    def mass(self) -> float:
        return self.mass_u * constants.atomic_mass


# Masses are for the usual isotopologues (40Ca19F, 23Na133Cs, 87Rb133Cs, 40K87Rb, 23Na87Rb).
SPECIES = {
    s.label: s
    for s in (
        Species("CaF", 3.07, 1.0, 58.9610, 38.0),
        Species("NaCs", 4.6, 2.7, 155.8953, 275.0),
        Species("RbCs", 1.2, 0.7, 219.8147, 18.0),
        Species("KRb", 0.57, 0.3, 126.8732, 3.4),
        Species("NaRb", 3.3, 1.9, 109.8990, 136.0),
    )
}


def get_species(label: str) -> Species:
    try:
        return SPECIES[label]
    except KeyError:
        raise DomainError(f"unknown species {label!r}; known: {sorted(SPECIES)}") from None


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


@dataclass(frozen=True, eq=False)
class ArrayGeometry:
    """Molecule positions (m) and the quantization-axis direction.

    The lab frame follows the trap convention: ``x`` and ``y`` span the focal
    (array) plane and ``z`` is the tweezer propagation axis.
    """

    positions: np.ndarray
    quantization_axis: np.ndarray

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.positions, dtype=float))
        axis = np.asarray(self.quantization_axis, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise DomainError(f"positions must have shape (n, 3), got {pos.shape}")
        if axis.shape != (3,) or abs(np.linalg.norm(axis) - 1.0) > 1e-12:
            raise DomainError("quantization_axis must be a unit 3-vector")
        if len(pos) > 1 and not np.all(pdist(pos) > 0):
            raise DomainError("molecule positions must be distinct")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "quantization_axis", axis)

    def __len__(self):
        return len(self.positions)

    def bond(self, i: int = 0, j: int = 1) -> np.ndarray:
        """Separation vector from molecule ``i`` to molecule ``j``."""
        return self.positions[j] - self.positions[i]

    def separation(self, i: int = 0, j: int = 1) -> float:
        return float(np.linalg.norm(self.bond(i, j)))

    def angle(self, i: int = 0, j: int = 1) -> float:
        """Angle between the bond and the quantization axis, in [0, pi]."""
        c = np.dot(self.bond(i, j), self.quantization_axis) / self.separation(i, j)
        return float(np.arccos(np.clip(c, -1.0, 1.0)))

    def key(self) -> tuple:
        return (self.positions.tobytes(), self.quantization_axis.tobytes())


def pair_geometry(theta: float, separation: float, axis=(1.0, 0.0, 0.0)) -> ArrayGeometry:
    """Two molecules in the focal plane whose bond makes ``theta`` with ``axis``.

    With the default ``axis = x`` this is the trap layout where ``z`` is
    perpendicular to both the bond and the quantization axis.
    """
    if not separation > 0:
        raise DomainError("separation must be positive")
    axis = _unit(axis)
    if abs(axis[2]) > 1e-12:
        raise DomainError("pair_geometry expects an in-plane quantization axis")
    perp = np.array([-axis[1], axis[0], 0.0])
    bond = separation * (math.cos(theta) * axis + math.sin(theta) * perp)
    return ArrayGeometry(np.array([np.zeros(3), bond]), axis)


def angular_factor(theta):
    """``1 - 3 cos^2 theta``; works elementwise on arrays."""
    c = np.cos(theta)
    return 1.0 - 3.0 * c * c


def coupling_constant(dipole: DipoleSpec) -> float:
    """``C = d^2 / (2 pi eps0 h)`` in Hz m^3, so that ``J(90 deg) = C / r^3``."""
    return dipole.dipole_si**2 / (2.0 * math.pi * constants.epsilon_0 * constants.h)


def coupling_strength_hz(dipole: DipoleSpec, separation: float) -> float:
    """Spin-exchange frequency of a pair perpendicular to the field, in Hz."""
    if not separation > 0:
        raise DomainError(f"separation must be positive, got {separation}")
    return coupling_constant(dipole) / separation**3


def dipolar_kernel(bonds, axis) -> np.ndarray:
    """``(1 - 3 cos^2 theta) / r^3`` for an array of bond vectors ``(..., 3)``."""
    bonds = np.asarray(bonds, dtype=float)
    r2 = np.einsum("...i,...i->...", bonds, bonds)
    proj = bonds @ np.asarray(axis, dtype=float)
    return (1.0 - 3.0 * proj * proj / r2) / (r2 * np.sqrt(r2))


def exact_coupling(geometry: ArrayGeometry, dipole: DipoleSpec, i: int = 0, j: int = 1) -> float:
    """Coupling in Hz between molecules ``i`` and ``j`` at their actual positions."""
    bond = geometry.bond(i, j)
    if not np.any(bond):
        raise DomainError("coincident positions")
    return float(coupling_constant(dipole) * dipolar_kernel(bond, geometry.quantization_axis))


@dataclass(frozen=True)
class SensitivityTerm:
    axis: str
    order: int

    def __post_init__(self):
        if self.axis not in AXES:
            raise UnsupportedTermError(f"axis must be one of {AXES}, got {self.axis!r}")
        if self.order < 1:
            raise UnsupportedTermError("order must be a positive integer")

    @classmethod
    def parse(cls, text: str) -> "SensitivityTerm":
        """``"z2"`` -> ``SensitivityTerm("z", 2)``."""
        text = text.strip().lower()
        try:
            return cls(text[0], int(text[1:]))
        except (IndexError, ValueError):
            raise UnsupportedTermError(f"cannot parse sensitivity term {text!r}") from None

    def __str__(self):
        return f"{self.axis}{self.order}"


# Closed forms of the even-order coefficients for a bond in the x-y plane at
# angle theta to the field along x.  The z^4 row carries an overall minus sign
# relative to the commonly printed table; the sign here is the one obtained by
# expanding the kernel (A_z4(0) = -45/4, verifiable by finite differences).
_CLOSED_FORMS = {
    ("x", 2): lambda t: -3.0 / 16.0 * (9.0 + 20.0 * np.cos(2 * t) + 35.0 * np.cos(4 * t)),
    ("y", 2): lambda t: 3.0 / 16.0 * (-3.0 + 35.0 * np.cos(4 * t)),
    ("z", 2): lambda t: 3.0 / 4.0 * (3.0 + 5.0 * np.cos(2 * t)),
    ("z", 4): lambda t: -15.0 / 16.0 * (5.0 + 7.0 * np.cos(2 * t)),
}

CLOSED_FORM_TERMS = tuple(SensitivityTerm(a, n) for a, n in _CLOSED_FORMS)


def _as_term(term) -> SensitivityTerm:
    return term if isinstance(term, SensitivityTerm) else SensitivityTerm.parse(term)


def sensitivity_coefficient(term, theta):
    """Dimensionless Taylor coefficient ``A_{axis,order}(theta)``.

    Only the four tabulated terms have closed forms; anything else raises
    :class:`UnsupportedTermError` (use :func:`numeric_sensitivity`).
    """
    term = _as_term(term)
    try:
        f = _CLOSED_FORMS[(term.axis, term.order)]
    except KeyError:
        raise UnsupportedTermError(f"no closed form for term {term}") from None
    return f(theta)


@lru_cache(maxsize=None)
def _central_weights(order: int, half_width: int) -> tuple:
    """Exact central finite-difference weights on the points -p..p."""
    pts = range(-half_width, half_width + 1)
    n = len(pts)
    # Vandermonde system sum_k w_k k^m = m! delta_{m, order}, solved in rationals.
    a = [[Fraction(k) ** m for k in pts] for m in range(n)]
    b = [Fraction(math.factorial(order) if m == order else 0) for m in range(n)]
    for col in range(n):
        piv = next(r for r in range(col, n) if a[r][col] != 0)
        a[col], a[piv] = a[piv], a[col]
        b[col], b[piv] = b[piv], b[col]
        for r in range(n):
            if r != col and a[r][col] != 0:
                f = a[r][col] / a[col][col]
                a[r] = [x - f * y for x, y in zip(a[r], a[col])]
                b[r] -= f * b[col]
    return tuple(b[i] / a[i][i] for i in range(n))


def numeric_sensitivity(axis: str, order: int, geometry: ArrayGeometry, step: float | None = None,
                        i: int = 0, j: int = 1, dps: int = 40) -> float:
    """Finite-difference estimate of the order-``order`` expansion coefficient.

    The bond ``r = p_j - p_i`` is displaced by ``delta`` along lab ``axis`` and
    ``g(delta) = r^3 (1 - 3 cos^2 theta) / |r + delta|^3`` is differentiated with
    a central stencil (5 points for orders 1-2, 7 for 3-4, wider above).  The
    result is scaled by ``r^order / order!``.  Evaluation runs in ``dps``-digit
    arithmetic so roundoff does not limit the high-order stencils.
    """
    if axis not in AXES:
        raise UnsupportedTermError(f"axis must be one of {AXES}")
    if order < 1:
        raise UnsupportedTermError("order must be a positive integer")
    r = geometry.separation(i, j)
    if step is None:
        step = 1e-3 * r
    if not 0 < step < 1e-2 * r:
        raise PrecisionError(f"step/separation = {step / r:.3g}; must lie in (0, 1e-2)")

    half = (order + 3) // 2
    weights = _central_weights(order, half)
    with mpmath.workdps(dps):
        bond = [mpmath.mpf(float(c)) for c in geometry.bond(i, j)]
        b = [mpmath.mpf(float(c)) for c in geometry.quantization_axis]
        rr = mpmath.mpf(r)
        h = mpmath.mpf(step)
        k_axis = AXES.index(axis)

        def g(delta):
            v = list(bond)
            v[k_axis] += delta
            n2 = sum(c * c for c in v)
            proj = sum(c * e for c, e in zip(v, b))
            return rr**3 * (1 - 3 * proj * proj / n2) / (n2 * mpmath.sqrt(n2))

        deriv = mpmath.fsum(
            mpmath.mpf(w.numerator) / w.denominator * g(k * h)
            for k, w in zip(range(-half, half + 1), weights)
        ) / h**order
        return float(deriv * rr**order / mpmath.factorial(order))


def find_sensitivity_zero(term, bracket, tol: float = 1e-12, max_iter: int = 200) -> float:
    """Bisect the closed-form coefficient for a zero inside ``bracket``."""
    term = _as_term(term)
    lo, hi = map(float, bracket)
    f_lo = sensitivity_coefficient(term, lo)
    f_hi = sensitivity_coefficient(term, hi)
    if f_lo == 0.0:
        return lo
    if f_hi == 0.0:
        return hi
    if np.sign(f_lo) == np.sign(f_hi):
        raise NoRootError(f"A_{term} has no sign change on [{lo}, {hi}]")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        f_mid = sensitivity_coefficient(term, mid)
        if abs(f_mid) < tol or hi - lo < 4 * np.finfo(float).eps * max(1.0, abs(mid)):
            return mid
        if np.sign(f_mid) == np.sign(f_lo):
            lo, f_lo = mid, f_mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
