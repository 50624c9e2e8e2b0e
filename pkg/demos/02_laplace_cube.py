"""Laplace equation on the cube [0, pi]^3 against its Fourier series.

One face (x = pi) is held at 1 and the rest at 0. The exact solution is
a double series in sin(ky y) sin(kz z) sinh(k x). Edges where the hot
face meets a cold one take the mean of the two values.

Run with ``python3 demos/02_laplace_cube.py``.
"""

import numpy as np

from tetrodiff import Cube, DomainSpec, RefineConfig, build_initial_mesh, plane_boundary, refine_to_target, solve_laplace
from tetrodiff.oracles import laplace_cube_oracle, relative_difference

for h0 in (0.6, 0.45, 0.35):
    mesh = build_initial_mesh(DomainSpec(Cube(), 3, 4))
    refine_to_target(mesh, RefineConfig(h0))
    bc = plane_boundary(mesh, [(0, np.pi, 1.0)], rest=0.0)
    phi = np.asarray(solve_laplace(mesh, bc))

    inner = np.flatnonzero(~mesh.outer)
    exact = laplace_cube_oracle(mesh.points[inner])
    rd = relative_difference(phi[inner], exact)
    centre = laplace_cube_oracle(np.full(3, np.pi / 2))
    print(f"h0 {h0:.2f}: {mesh.n_nodes:5d} nodes, relative difference {rd.mean:+.4f} +- {rd.std:.4f}, "
          f"exact centre value {centre:.4f}")
