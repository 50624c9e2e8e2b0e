"""Build a sphere mesh and watch the volume spread shrink.

The layered initial mesh is refined by longest-edge bisection until no
element exceeds the critical volume. Bisection halves volumes, so the
result mixes two volume levels. Alternating Metropolis annealing and
Delaunay flips then pulls volumes towards the target V0.

Flips are chosen by the empty-circumsphere test alone and ignore volume.
They can therefore leave a few nearly flat interior elements, which the
minimum of V/V0 shows. A closing anneal follows the last flip pass.

Run with ``python3 demos/01_mesh_optimisation.py``.
"""

import numpy as np

from tetrodiff import DomainSpec, MetropolisConfig, OptimizeConfig, RefineConfig, Sphere, generate_mesh
from tetrodiff.meshgen import target_volume
from tetrodiff.pipeline import in_band_fraction

h0 = 0.3
v0 = target_volume(h0)


def describe(stage, mesh):
    r = mesh.volumes / v0
    print(f"{stage:>14}: {mesh.n_elements:5d} elements, V/V0 in [{r.min():.2f}, {r.max():.2f}], "
          f"in band {in_band_fraction(mesh, v0):.3f}")


# the callback sees the mesh after every stage; bisection steps are skipped
stages = iter(["initial", "anneal 1", "flips 1", "anneal 2", "flips 2", "closing anneal"])


refined = {}


def callback(stage, mesh):
    if stage == "divide":
        # remember the statistics; the last division is the refined mesh
        refined["line"] = (mesh.n_elements, mesh.volumes / v0)
        return
    if stage == "anneal" and "line" in refined:
        n, r = refined.pop("line")
        print(f"{'refined':>14}: {n:5d} elements, V/V0 in [{r.min():.2f}, {r.max():.2f}], "
              f"in band {np.mean((r >= 0.5) & (r <= 1.5)):.3f}")
    describe(next(stages), mesh)


result = generate_mesh(
    DomainSpec(Sphere()),
    RefineConfig(h0),
    OptimizeConfig(MetropolisConfig(h0, global_steps=6, seed=1), rounds=2),
    callback=callback,
)

mesh = result.mesh
print(f"energy {result.energy_before:.4g} -> {result.energy_after:.4g} "
      f"({result.energy_after / result.energy_before:.2f} of the refined mesh)")
print(f"enclosed volume {mesh.total_volume:.4f} (ball: {4 * np.pi / 3:.4f})")
for i, rep in enumerate(result.flip_reports):
    print(f"flip pass {i}: {rep.flips_3to2} 3->2, {rep.flips_4to4} 4->4, {rep.slivers_removed} slivers")
