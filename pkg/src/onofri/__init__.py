"""Numerical verification of Euclidean and spherical Onofri-type inequalities.

The package evaluates the energies, free energies and transport quantities
involved in the duality between the Onofri inequality and a renormalised
free energy on balls B_R, checks the closed forms attached to the reference
densities mu_n, and runs the fast diffusion flow and the constrained
minimisation whose stationary points are the extremals.
"""

from .densities import ModelDensity, closed_form_suite, mu, theta
from .duality import basic_identity_suite, duality_gap, epsilon_max, epsilon_objective
from .functionals import (
    DensityFunction,
    GridFunction,
    constraint_scale,
    corollary_check,
    free_energy_2d,
    free_energy_nd,
    onofri_deficit_2d,
    onofri_deficit_nd,
    onofri_energy_2d,
    onofri_energy_nd,
    sphere_onofri,
)
from .geometry import DiskGrid, RadialGrid, SphereGrid, omega
from .pde import euler_lagrange_residual, fd_evolve, fd_step, minimize_onofri
from .transport import discrete_ot_oracle, lemma1_check, monge_ampere_residual, radial_brenier

__version__ = "0.1.0"
