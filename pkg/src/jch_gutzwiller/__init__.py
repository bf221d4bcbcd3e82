"""Gutzwiller mean-field ground states of Jaynes-Cummings-Hubbard lattices in a uniform
synthetic magnetic field, with the perturbative Mott-superfluid boundary."""

from .boundary import BoundaryPoint, boundary_curve, critical_kappa, r_coefficient
from .jc import (CavityParams, DressedLevel, LobeDegeneracyError, SiteBasis, build_site_basis,
                 dressed_levels, lobe_interval, mott_lobe_index)
from .lattice import (CommensurabilityError, Gauge, HoppingMatrix, LatticeSpec,
                      build_hopping_matrix, gauge_transform, harper_max_eigenvalue,
                      max_hopping_eigenvalue)
from .observables import (OrderField, VorticityField, coherence, delta_psi, excitation_density,
                          point_pattern_stats, vortex_lattice_stats, vorticity)
from .solver import (GutzwillerState, SolverConfig, SolverReport, quasi_newton_relax, scf_sweep,
                     site_effective_hamiltonian, solve_ground_state, total_energy,
                     truncation_weight)

__version__ = "0.1.0"
