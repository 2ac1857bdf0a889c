"""Pseudo-spectral mild-solution solver for simplified nematic liquid-crystal flow."""

__version__ = "0.1.0"

from .fields import (
    StatePair,
    VectorField,
    derivative_norm,
    director_nonlinearity,
    momentum_nonlinearity,
    sobolev_inf_norm,
    sup_norm,
)
from .solver import (
    MarchError,
    PicardDivergence,
    PicardNonConvergence,
    PicardRecord,
    SolverConfig,
    SolverConstants,
    SolverError,
    Trajectory,
    duhamel_map,
    existence_time_estimate,
    march,
    picard_solve,
    solver_constants,
)
from .spectral import (
    SpectralGrid,
    curl,
    dealias,
    divergence,
    gradient,
    heat_semigroup,
    laplacian,
    leray_project,
    make_grid,
)

__all__ = [
    "SpectralGrid", "make_grid", "heat_semigroup", "leray_project", "gradient", "divergence", "curl",
    "laplacian", "dealias", "VectorField", "StatePair", "sup_norm", "sobolev_inf_norm", "derivative_norm",
    "momentum_nonlinearity", "director_nonlinearity", "SolverConfig", "SolverConstants", "PicardRecord",
    "Trajectory", "duhamel_map", "picard_solve", "existence_time_estimate", "solver_constants", "march",
    "SolverError", "PicardNonConvergence", "PicardDivergence", "MarchError",
]
