"""Two ionic species relaxing between charged walls.

Both species start at zero inside the cube. The face z = pi is held at 2
and every other face at 1, for n+, n- and the potential alike. With
equal diffusivities and mobilities the species stay equal, so the charge
density vanishes and the potential stays harmonic. Each step solves the
coupled nonlinear system with Newton's method.

Run with ``python3 demos/05_electrodiffusion.py``.
"""

import numpy as np

from tetrodiff import (
    Cube,
    DomainSpec,
    FieldState,
    PhysicalParams,
    PNPBoundary,
    RefineConfig,
    TimeScheme,
    average_flux,
    build_initial_mesh,
    compute_flux,
    plane_boundary,
    refine_to_target,
    solve_electrodiffusion,
)

mesh = build_initial_mesh(DomainSpec(Cube(), 3, 4))
refine_to_target(mesh, RefineConfig(0.5))
bc = plane_boundary(mesh, [(2, np.pi, 2.0)], rest=1.0)
boundary = PNPBoundary(dict(bc), dict(bc), dict(bc))
params = PhysicalParams(D_plus=0.05, D_minus=0.05, k_plus=0.05, k_minus=0.05)
zero = np.zeros(mesh.n_nodes)

states = solve_electrodiffusion(FieldState(zero, zero, zero), mesh, params, TimeScheme(0.01, 1.0, 20), boundary)

print(f"{mesh.n_nodes} nodes")
for prev, s in zip(states[:-1], states[1:]):
    if s.step_index % 5 == 0 or s.step_index == 1:
        print(f"step {s.step_index:2d}: max|dn+| {np.abs(s.n_plus - prev.n_plus).max():.4f}, "
              f"max|n+ - n-| {np.abs(s.n_plus - s.n_minus).max():.1e}, "
              f"Newton iterations {len(s.residual_trace) - 1}")

flux = compute_flux(states[-1], mesh, params, "plus")
j = average_flux(flux, mesh, (np.pi / 2,) * 3, 0.8)
print(f"flux of n+ averaged near the centre: ({j[0]:+.1e}, {j[1]:+.1e}, {j[2]:+.1e})")
