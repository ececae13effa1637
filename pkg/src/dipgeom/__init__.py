"""Geometry-engineered dipolar interactions between trapped polar molecules.

Submodules:

* :mod:`dipgeom.dipolar` - point-dipole couplings and displacement sensitivities
* :mod:`dipgeom.motional` - motional-state matrix elements, thermal disorder, quality factor
* :mod:`dipgeom.echo` - geometric echo sequences on square arrays
* :mod:`dipgeom.dtwa` - discrete truncated Wigner spin dynamics and squeezing
* :mod:`dipgeom.schedules` - rearrangement protocols and their coupling schedules
"""

from .dipolar import (
    MAGIC_ANGLE,
    ArrayGeometry,
    DipoleSpec,
    SensitivityTerm,
    angular_factor,
    coupling_strength_hz,
    exact_coupling,
    find_sensitivity_zero,
    get_species,
    numeric_sensitivity,
    pair_geometry,
    sensitivity_coefficient,
)
from .errors import DipgeomError

__all__ = [
    "MAGIC_ANGLE",
    "ArrayGeometry",
    "DipoleSpec",
    "DipgeomError",
    "SensitivityTerm",
    "angular_factor",
    "coupling_strength_hz",
    "exact_coupling",
    "find_sensitivity_zero",
    "get_species",
    "numeric_sensitivity",
    "pair_geometry",
    "sensitivity_coefficient",
]
