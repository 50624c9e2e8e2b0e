"""Tetrahedral meshing and linear finite elements for diffusion problems.

The package builds layered meshes of simple solids, refines them by
longest-edge bisection, equalises element volumes with a Metropolis
scheme, and solves Laplace, diffusion and Poisson-Nernst-Planck problems
on the result.
"""

from .geometry import GeometryError, Mesh, Node, ShapeCoeffs, shape_coeffs, tet_volume
from .meshgen import Cone, Cube, Cylinder, DomainSpec, RefineConfig, Sphere, build_initial_mesh, refine_to_target
from .metropolis import MetropolisConfig, global_anneal, total_energy
from .delaunay import ImproveConfig, improve_pass
from .fem import FieldVector, SparseSystem, apply_forced_bc, element_matrices, linear_solve
from .solvers import (
    FieldState,
    PNPBoundary,
    PhysicalParams,
    TimeScheme,
    average_flux,
    compute_flux,
    newton_pnp_step,
    plane_boundary,
    solve_diffusion,
    solve_electrodiffusion,
    solve_laplace,
)
from .pipeline import OptimizeConfig, generate_mesh, optimize_mesh
from .io import read_mesh, write_mesh, write_vtk

__version__ = "0.1.0"
