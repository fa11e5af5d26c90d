"""Discrete-velocity toolkit for the incompressible Navier-Stokes-Fourier
limit of the Boltzmann equation with in-flow boundary data."""

from .velocity import (GridSpec, VelocityGrid, DistributionField, GridError,
                       build_grid, maxwellian, project_null, norm)
from .collision import (CollisionOperator, TransportCoefficients,
                        build_nu, build_kernel, nu_hard_sphere)
from .gamma import GammaOperator

__version__ = "0.1.0"
