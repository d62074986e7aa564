"""Sequentially generated states on 2D lattices: construction, exact
contraction, variational optimization and correlation analysis."""

__version__ = "0.1.0"

from .contraction import energy, environment, expect_local, norm
from .lattice import Hamiltonian, HamiltonianTerm, LatticeSpec, build_hamiltonian, exact_ground
from .optimizer import EnergyTrace, OptimizerOptions, best_of_restarts, optimize
from .state import SGSParams, SGSState, cluster_state, new_sgs, random_sgs, to_peps, to_statevector

__all__ = [
    "EnergyTrace",
    "Hamiltonian",
    "HamiltonianTerm",
    "LatticeSpec",
    "OptimizerOptions",
    "SGSParams",
    "SGSState",
    "best_of_restarts",
    "build_hamiltonian",
    "cluster_state",
    "energy",
    "environment",
    "exact_ground",
    "expect_local",
    "new_sgs",
    "norm",
    "optimize",
    "random_sgs",
    "to_peps",
    "to_statevector",
]
