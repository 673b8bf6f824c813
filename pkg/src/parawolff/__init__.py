"""Parabolic nonlinear Wolff potentials, p-Laplacian test solutions and the
Kilpelainen-Maly level iteration, at desk scale."""

from .measure import (
    AtomList,
    Cylinder,
    GridDensity,
    SignedMeasure,
    SpatialAtoms,
    SpatialGridDensity,
    SpatialLebesgue,
    TimeProduct,
    ball_mass,
    cylinder_mass,
    load_measure,
)
from .potential import (
    PotentialParams,
    dp,
    eps_p,
    i_p,
    parabolic_potential,
    riesz_integral,
    wolff_potential,
)

__version__ = "0.1.0"
