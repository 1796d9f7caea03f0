"""Taylor-Hood finite element matrices for incompressible flow problems.

The assembled operators are exported as plain sparse matrices plus a
quadratic convection tensor, so that solvers, model reduction and control
design can work on ``M, A, J, H`` without a finite element library.
"""

from .assembly import FlowSystem, assemble_cavity
from .control import ControlConfig, ControlOperators, assemble_control
from .fileio import read_bundle, write_bundle
from .mesh import build_cavity_mesh, build_dofmap
from .problems import setup_cavity
from .solvers import (SteadyOptions, TransientOptions, simulate, solve_steady_continuation,
                      solve_steady_ns, solve_stokes)
from .sparse import ConvTensor, SparseMatrix, apply_kron, linearize_left, linearize_right

__version__ = "0.1.0"

__all__ = [
    "FlowSystem", "assemble_cavity", "ControlConfig", "ControlOperators",
    "assemble_control", "read_bundle", "write_bundle", "build_cavity_mesh",
    "build_dofmap", "setup_cavity", "SteadyOptions", "TransientOptions", "simulate",
    "solve_steady_continuation", "solve_steady_ns", "solve_stokes", "ConvTensor",
    "SparseMatrix", "apply_kron", "linearize_left", "linearize_right",
]
