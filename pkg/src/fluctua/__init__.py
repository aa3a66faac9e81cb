"""Fluctuation-induced free energies and forces between voxelized bodies.

Two bodies, each a cloud of voxels with a local (possibly anisotropic)
susceptibility, couple linearly to a shared fluctuating scalar medium.
Integrating the medium out leaves an effective free energy

    F_eff = T sum'_n tr ln[1 + omega_n^2 chi(i omega_n) G0(omega_n)]

over Matsubara frequencies omega_n = 2 pi n T (primed: n = 0 carries
weight 1/2 and vanishes identically here because of the omega^2 factor).
The distance-dependent part and its derivative give the induced force.
Everything is validated against an exact microscopic lattice model in
which medium and matter are kept explicit and the same free energy is
read off a Schur-complement factorization of one big Gaussian form.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigurationError,
    DivergentSeriesError,
    FluctuaError,
    ModelError,
    NumericsError,
    SingularModeError,
    ZeroModeError,
)
from .model import (
    Body,
    ConstantSusceptibility,
    CouplingSpectrum,
    FieldKernelSpec,
    FreeEnergyResult,
    LorentzOscillator,
    MatsubaraGrid,
    Scene,
    TabulatedSusceptibility,
    make_matsubara_grid,
    validate_scene,
)
from .engine import (
    free_energy_eff,
    free_energy_zero_temperature,
    induced_force,
    interaction_free_energy,
)

__all__ = [
    "__version__",
    "Body",
    "ConfigurationError",
    "ConstantSusceptibility",
    "CouplingSpectrum",
    "DivergentSeriesError",
    "FieldKernelSpec",
    "FluctuaError",
    "FreeEnergyResult",
    "LorentzOscillator",
    "MatsubaraGrid",
    "ModelError",
    "NumericsError",
    "Scene",
    "SingularModeError",
    "TabulatedSusceptibility",
    "ZeroModeError",
    "free_energy_eff",
    "free_energy_zero_temperature",
    "induced_force",
    "interaction_free_energy",
    "make_matsubara_grid",
    "validate_scene",
]
