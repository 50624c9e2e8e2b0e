"""Potential of an outside point charge inside the unit ball.

The boundary takes the value 1/|p - q| of a unit charge at q = (0, 0, 2 pi).
That function is harmonic in the ball, so it is also the exact interior
solution. Any callable of a point can serve as boundary data.

Run with ``python3 demos/03_point_charge.py``.
"""

import numpy as np

from tetrodiff import DomainSpec, MetropolisConfig, OptimizeConfig, RefineConfig, Sphere, generate_mesh, solve_laplace
from tetrodiff.oracles import point_charge_oracle

h0 = 0.4
mesh = generate_mesh(DomainSpec(Sphere()), RefineConfig(h0),
                     OptimizeConfig(MetropolisConfig(h0, global_steps=4, seed=3), rounds=1)).mesh
phi = np.asarray(solve_laplace(mesh, point_charge_oracle))

inner = np.flatnonzero(~mesh.outer)
exact = point_charge_oracle(mesh.points[inner])
rel = np.abs(phi[inner] - exact) / np.abs(exact)
print(f"{mesh.n_nodes} nodes, {len(inner)} inner")
print(f"relative error: median {np.median(rel):.2e}, max {rel.max():.2e}")
print(f"{np.mean(rel <= 0.05):.1%} of inner nodes within 5%")

# the potential grows towards the charge along the z axis
for z in (-0.5, 0.0, 0.5):
    i = inner[np.argmin(np.linalg.norm(mesh.points[inner] - [0, 0, z], axis=1))]
    print(f"  node near z={z:+.1f}: {phi[i]:.5f} (exact {point_charge_oracle(mesh.points[i]):.5f})")
