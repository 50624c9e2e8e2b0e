"""Diffusion of the lowest cube eigenmode, backward Euler vs Crank-Nicolson.

u0 = sin x sin y sin z on [0, pi]^3 with u = 0 on the boundary decays as
exp(-3 t). Backward Euler multiplies the mode by 1/(1 + 3 dt) per step and
Crank-Nicolson by (1 - 1.5 dt)/(1 + 1.5 dt). The discrete eigenvalue
differs slightly from 3, so both carry a spatial error too.

Run with ``python3 demos/04_diffusion.py``.
"""

import numpy as np

from tetrodiff import Cube, DomainSpec, RefineConfig, TimeScheme, build_initial_mesh, refine_to_target, solve_diffusion

mesh = build_initial_mesh(DomainSpec(Cube(), 3, 4))
refine_to_target(mesh, RefineConfig(0.3))
x, y, z = mesh.points.T
u0 = np.sin(x) * np.sin(y) * np.sin(z)
centre = np.argmin(np.linalg.norm(mesh.points - np.pi / 2, axis=1))
print(f"{mesh.n_nodes} nodes; centre node at {np.round(mesh.points[centre], 3)}")

dt, steps = 0.05, 10
for name, beta in (("backward Euler", 1.0), ("Crank-Nicolson", 0.5)):
    traj = solve_diffusion(u0, mesh, 1.0, TimeScheme(dt, beta, steps), lambda p: 0.0)
    ratio = traj.values[-1][centre] / u0[centre]
    print(f"{name:>15}: u(t={traj.times[-1]:.2f}) / u0 at centre = {ratio:.5f}")
print(f"{'exact':>15}: {np.exp(-3 * dt * steps):.5f}")
