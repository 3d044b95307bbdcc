"""greenlab: Green kernels, Green-energy statistics and Wasserstein
distances to the uniform measure on the flat torus and the unit sphere."""

__version__ = "0.1.0"

from .rng import RandomStream
from .surfaces import FlatTorus, UnitSphere, WeightedPointSet, get_surface
from .greenfn import (SphereGreen, TorusEwald, TorusFourierOracle,
                      ConstantShiftKernel, Sigma2Report, default_kernel,
                      mean_zero_residual, fourier_mode_check,
                      near_diagonal_sup, sigma2)

__all__ = [
    "RandomStream", "FlatTorus", "UnitSphere", "WeightedPointSet",
    "get_surface", "SphereGreen", "TorusEwald", "TorusFourierOracle",
    "ConstantShiftKernel", "Sigma2Report", "default_kernel",
    "mean_zero_residual", "fourier_mode_check", "near_diagonal_sup", "sigma2",
]
