"""Command-line entry point: ``tetrodiff mesh`` and ``tetrodiff solve``.

Options can also come from a ``--config`` file of ``key = value`` lines
(``#`` starts a comment); keys are the long option names with dashes or
underscores. Command-line flags override the file.
"""

from __future__ import annotations

import argparse
import ast
import json
import logging
import math
import operator
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import io as tio
from .delaunay import ImproveConfig, improve_pass
from .meshgen import Cone, Cube, Cylinder, DomainSpec, RefineConfig, Sphere, build_initial_mesh, refine_to_target
from .metropolis import MetropolisConfig, global_anneal, total_energy
from .oracles import (
    SeriesConfig,
    diffusion_cube_oracle,
    laplace_cube_oracle,
    point_charge_oracle,
    relative_difference,
)
from .pipeline import in_band_fraction
from .solvers import (
    FieldState,
    PNPBoundary,
    PhysicalParams,
    TimeScheme,
    average_flux,
    compute_flux,
    plane_boundary,
    solve_diffusion,
    solve_electrodiffusion,
    solve_laplace,
)

logger = logging.getLogger("tetrodiff")


class ConfigError(ValueError):
    pass


_OPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
        ast.Div: operator.truediv, ast.Pow: operator.pow, ast.USub: operator.neg, ast.UAdd: operator.pos}
_NAMES = {"pi": math.pi, "e": math.e}


def parse_number(text: str) -> float:
    """Arithmetic expression over numbers, ``pi`` and ``e`` (``"pi/2"``, ``"2*pi"``)."""

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return float(node.value)
        if isinstance(node, ast.Name) and node.id in _NAMES:
            return _NAMES[node.id]
        if isinstance(node, ast.BinOp) and type(node.op) in _OPS:
            return _OPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _OPS:
            return _OPS[type(node.op)](ev(node.operand))
        raise ValueError(f"unsupported expression {text!r}")

    try:
        return ev(ast.parse(text.strip(), mode="eval"))
    except SyntaxError:
        raise ValueError(f"not a number: {text!r}") from None


def _number(text: str) -> float:
    try:
        return parse_number(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _point(text: str) -> tuple[float, float, float]:
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected x,y,z, got {text!r}")
    return tuple(_number(p) for p in parts)


def _plane(text: str) -> tuple[int, float, float]:
    """``AXIS=POS:VALUE``, e.g. ``x=pi:1``."""
    try:
        lhs, value = text.split(":")
        axis, pos = lhs.split("=")
        return "xyz".index(axis.strip().lower()), parse_number(pos), parse_number(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected AXIS=POSITION:VALUE, got {text!r}") from None


# -- configuration file --------------------------------------------------------


def read_config(path) -> list[tuple[int, str, str]]:
    entries = []
    with open(path) as fh:
        for no, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{no}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            entries.append((no, key.replace("-", "_"), value.strip().strip('"').strip("'")))
    return entries


def _apply_config(parser: argparse.ArgumentParser, sub: argparse.ArgumentParser,
                  args: argparse.Namespace, argv: Sequence[str]) -> argparse.Namespace:
    """Re-parse ``argv`` with config-file values installed as defaults."""
    if not getattr(args, "config", None):
        return args
    actions = {a.dest: a for a in sub._actions if a.dest not in ("help", "config")}
    defaults = {}
    for no, key, value in read_config(args.config):
        if key not in actions:
            raise ConfigError(f"{args.config}:{no}: unknown key {key!r}")
        action = actions[key]
        try:
            if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
                v = value.lower() in ("1", "true", "yes", "on")
                defaults[key] = v if isinstance(action, argparse._StoreTrueAction) else not v
            elif isinstance(action, argparse._AppendAction):
                conv = action.type or str
                defaults[key] = [conv(v.strip()) for v in value.split(";") if v.strip()]
            else:
                conv = action.type or str
                v = conv(value)
                if action.choices is not None and v not in action.choices:
                    raise ValueError(f"{v!r} not in {list(action.choices)}")
                defaults[key] = v
        except (ValueError, argparse.ArgumentTypeError) as exc:
            raise ConfigError(f"{args.config}:{no}: bad value for {key!r}: {exc}") from None
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


# -- mesh command --------------------------------------------------------------


def _shape(args):
    if args.shape == "cube":
        a = args.extent
        return Cube(0.0, a, 0.0, a, 0.0, a)
    if args.shape == "cylinder":
        return Cylinder(radius=args.radius, zmin=0.0, zmax=args.height)
    if args.shape == "sphere":
        return Sphere(radius=args.radius)
    return Cone(base_radius=args.radius, zmin=0.0, zmax=args.height)


def _anneal_worker(payload):
    mesh, mcfg = payload
    _, rep = global_anneal(mesh, mcfg)
    return mesh, rep


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("TETRODIFF_THREADS", "1")))
    except ValueError:
        raise ConfigError("TETRODIFF_THREADS must be an integer") from None


def cmd_mesh(args) -> int:
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    ring = args.ring_nodes if args.ring_nodes is not None else (4 if args.shape == "cube" else 8)
    spec = DomainSpec(_shape(args), args.layers, ring)
    rcfg = RefineConfig(args.h0, critical_volume=None if args.vcrit is None else args.vcrit * RefineConfig(args.h0).v0,
                        max_divisions=args.max_divisions)
    v0 = rcfg.v0
    mesh = build_initial_mesh(spec)
    stats = refine_to_target(mesh, rcfg, spec.shape)
    e_before = total_energy(mesh, v0)
    band_before = in_band_fraction(mesh, v0)
    report = {"shape": args.shape, "h0": args.h0, "V0": v0, "critical_volume": rcfg.critical_volume,
              "divisions": stats.divisions, "seed": args.seed}
    energy_rows, flip_rows = [], []
    if args.optimize:
        ks = "random" if args.ks == "random" else float(args.ks)
        # flips ignore volumes, so a closing anneal follows the last flip pass
        closing = 1 if args.delaunay and args.rounds > 0 else 0
        for r in range(args.rounds + closing):
            seeds = [args.seed + r * max(1, args.starts) + s for s in range(max(1, args.starts))]
            cfgs = [MetropolisConfig(args.h0, k_s=ks, t_max=args.tmax, t_scale=args.tscale, eta=args.eta, local_sweeps=args.local_sweeps,
                                     global_steps=args.global_steps, seed=s, shuffle=args.shuffle) for s in seeds]
            if len(cfgs) == 1:
                results = [_anneal_worker((mesh, cfgs[0]))]
            else:
                payload = [(mesh.copy(), c) for c in cfgs]
                with ProcessPoolExecutor(max_workers=min(_threads(), len(cfgs))) as pool:
                    results = list(pool.map(_anneal_worker, payload))
            best = min(range(len(results)), key=lambda i: (results[i][1].total_energy, i))
            mesh, rep = results[best]
            mesh.domain = spec.shape
            energy_rows.extend((r, *row) for row in rep.trace)
            if args.delaunay and r < args.rounds:
                _, frep = improve_pass(mesh, ImproveConfig(min_volume=rcfg.critical_volume))
                flip_rows.extend((r, *row) for row in frep.rows)
    mesh.validate()
    meta = {"shape": args.shape, "h0": args.h0}
    tio.write_mesh(mesh, out.with_suffix(".tm"), seed=args.seed, meta=meta)
    tio.write_vtk(mesh, out.with_suffix(".vtk"), cell_data={"V_over_V0": mesh.volumes / v0},
                  title=f"tetrodiff {args.shape} h0={args.h0} seed={args.seed}")
    tio.write_histogram(mesh.volumes / v0, f"{out}_volume_hist.csv", "V/V0", seed=args.seed)
    tio.write_histogram(mesh.edge_lengths() / args.h0, f"{out}_edge_hist.csv", "L/h0", seed=args.seed)
    if args.optimize:
        with open(f"{out}_energy.csv", "w") as fh:
            fh.write(f"# seed={args.seed}\nround,step,T,E,accept_rate\n")
            for row in energy_rows:
                fh.write(",".join(f"{v:.17g}" if isinstance(v, float) else str(v) for v in row) + "\n")
        if args.delaunay:
            with open(f"{out}_flips.csv", "w") as fh:
                fh.write(f"# seed={args.seed}\nround,pass,flips_3to2,flips_4to4,slivers_removed\n")
                for row in flip_rows:
                    fh.write(",".join(str(v) for v in row) + "\n")
    report.update(nodes=mesh.n_nodes, elements=mesh.n_elements, volume=mesh.total_volume,
                  energy_before=e_before, energy_after=total_energy(mesh, v0),
                  in_band_before=band_before, in_band_after=in_band_fraction(mesh, v0))
    print(json.dumps(report, sort_keys=True))
    return 0


# -- solve command -------------------------------------------------------------


def _boundary(mesh, args) -> dict[int, float]:
    outer = np.flatnonzero(mesh.outer)
    values = plane_boundary(mesh, args.bc_plane or [], args.bc_rest, args.bc_junction)
    if args.bc_oracle == "point-charge":
        for i, v in zip(outer, point_charge_oracle(mesh.points[outer], args.charge)):
            values.setdefault(int(i), float(v))
    missing = sorted(set(outer.tolist()) - set(values))
    if missing:
        raise ConfigError(f"no boundary value for {len(missing)} outer nodes, e.g. {missing[:10]} "
                          "(add --bc-rest or more --bc-plane entries)")
    return values


def _oracle_values(mesh, args, t: float = 0.0) -> Optional[np.ndarray]:
    cfg = SeriesConfig(args.series_terms)
    if args.oracle == "cube-series":
        if args.problem == "laplace":
            phi0 = args.bc_plane[0][2] if args.bc_plane else 1.0
            return laplace_cube_oracle(mesh.points, phi0, cfg)
        initial = "polynomial" if args.initial == "polynomial" else "constant"
        return diffusion_cube_oracle(mesh.points, t, args.amplitude, args.D, cfg, initial)
    if args.oracle == "point-charge":
        return point_charge_oracle(mesh.points, args.charge)
    return None


def _write_oracle(mesh, args, numerical: np.ndarray, anal: np.ndarray, out: Path, report: dict) -> None:
    inner = np.flatnonzero(~mesh.outer)
    rd = relative_difference(numerical[inner], anal[inner])
    with open(f"{out}_oracle.csv", "w") as fh:
        fh.write(f"# seed={args.seed}\n# nodes=inner\nnode,x,y,z,numerical,analytical,rel_diff\n")
        for k, i in enumerate(inner):
            p = mesh.points[i]
            fh.write(f"{i},{p[0]:.17g},{p[1]:.17g},{p[2]:.17g},{numerical[i]:.17g},{anal[i]:.17g},"
                     f"{rd.values[k]:.17g}\n")
    report.update(rel_diff_mean=rd.mean, rel_diff_std=rd.std, oracle_nodes=int(len(inner)))


def _initial(mesh, args) -> np.ndarray:
    x, y, z = mesh.points.T
    if args.initial == "polynomial":
        return args.amplitude * x * (np.pi - x) * y * (np.pi - y) * z * (np.pi - z)
    if args.initial == "mode":
        return args.amplitude * np.sin(x) * np.sin(y) * np.sin(z)
    if args.initial == "cylinder":
        r = np.hypot(x, y)
        return args.amplitude * np.abs((r - r.max()) * z * (z - np.pi))
    return np.full(mesh.n_nodes, args.amplitude)


def cmd_solve(args) -> int:
    mesh = tio.read_mesh(args.mesh)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    report = {"problem": args.problem, "seed": args.seed, "nodes": mesh.n_nodes}
    bc = _boundary(mesh, args)
    if args.problem == "laplace":
        phi = np.asarray(solve_laplace(mesh, bc))
        tio.write_node_csv(mesh, f"{out}_field.csv", {"phi": phi}, seed=args.seed)
        tio.write_vtk(mesh, out.with_suffix(".vtk"), point_data={"phi": phi})
        anal = _oracle_values(mesh, args)
        if anal is not None:
            _write_oracle(mesh, args, phi, anal, out, report)
    elif args.problem == "diffusion":
        steps = args.steps if args.steps is not None else int(round(args.t / args.dt))
        scheme = TimeScheme(args.dt, args.beta, steps)
        traj = solve_diffusion(_initial(mesh, args), mesh, args.D, scheme, bc, snapshot_every=args.snapshot_every)
        cols = {f"t={t:.6g}": v for t, v in zip(traj.times, traj.values)}
        tio.write_node_csv(mesh, f"{out}_trajectory.csv", cols, seed=args.seed)
        final = traj.values[-1]
        axis, pos = args.profile_axis, args.profile_at
        sel = np.flatnonzero(np.abs(mesh.points[:, "xyz".index(axis)] - pos) <= args.profile_tol)
        tio.write_node_csv(mesh, f"{out}_profile.csv", {"u": final}, seed=args.seed, nodes=sel,
                           meta={"plane": f"{axis}={pos:.17g}", "t": traj.times[-1]})
        tio.write_vtk(mesh, out.with_suffix(".vtk"), point_data={"u": final})
        report.update(steps=steps, t=traj.times[-1])
        anal = _oracle_values(mesh, args, traj.times[-1])
        if anal is not None:
            _write_oracle(mesh, args, final, anal, out, report)
    else:
        steps = args.steps if args.steps is not None else int(round(args.tend / args.dt))
        scheme = TimeScheme(args.dt, 1.0, steps)
        params = PhysicalParams(D_plus=args.D, D_minus=args.D_minus if args.D_minus is not None else args.D,
                                k_plus=args.k, k_minus=args.k_minus if args.k_minus is not None else args.k,
                                z=args.z, e_charge=args.e_charge, eps=args.eps)
        bcs = PNPBoundary(dict(bc), dict(bc), dict(bc))
        zero = np.zeros(mesh.n_nodes)
        states = solve_electrodiffusion(FieldState(zero, zero, zero), mesh, params, scheme, bcs,
                                        jacobian=args.jacobian)
        final = states[-1]
        with open(f"{out}_steps.csv", "w") as fh:
            fh.write(f"# seed={args.seed}\nstep,t,newton_iterations,max_abs_nplus_minus_nminus,max_abs_dnplus\n")
            for a, b in zip(states[:-1], states[1:]):
                fh.write(f"{b.step_index},{b.time:.17g},{len(b.residual_trace) - 1},"
                         f"{np.abs(b.n_plus - b.n_minus).max():.17g},{np.abs(b.n_plus - a.n_plus).max():.17g}\n")
        with open(f"{out}_snapshots.csv", "w") as fh:
            fh.write(f"# seed={args.seed}\nstep,t,node,x,y,z,n_plus,n_minus,phi\n")
            for st in states:
                if st.step_index % args.snapshot_every and st is not final:
                    continue
                for i, p in enumerate(mesh.points):
                    fh.write(f"{st.step_index},{st.time:.17g},{i},{p[0]:.17g},{p[1]:.17g},{p[2]:.17g},"
                             f"{st.n_plus[i]:.17g},{st.n_minus[i]:.17g},{st.phi[i]:.17g}\n")
        tio.write_node_csv(mesh, f"{out}_state.csv", {"n_plus": final.n_plus, "n_minus": final.n_minus,
                                                      "phi": final.phi}, seed=args.seed, meta={"t": final.time})
        flux = compute_flux(final, mesh, params, "plus")
        cent = mesh.points[mesh.tets].mean(axis=1)
        tio.write_element_csv(f"{out}_flux.csv", {"cx": cent[:, 0], "cy": cent[:, 1], "cz": cent[:, 2],
                                                  "jx": flux.jx, "jy": flux.jy, "jz": flux.jz}, seed=args.seed)
        tio.write_vtk(mesh, out.with_suffix(".vtk"),
                      point_data={"n_plus": final.n_plus, "n_minus": final.n_minus, "phi": final.phi},
                      cell_data={"flux_plus": flux.j})
        center = 0.5 * (mesh.points.min(axis=0) + mesh.points.max(axis=0))
        zs = mesh.points[mesh.tets][:, :, 2]
        mid = (zs.min(axis=1) <= center[2]) & (zs.max(axis=1) >= center[2])
        report.update(center_flux=average_flux(flux, mesh, center, args.flux_radius).tolist(),
                      midplane_max_abs_jz=float(np.abs(flux.jz[mid]).max()) if mid.any() else 0.0)
        report.update(steps=steps, t=final.time,
                      electroneutrality=float(max(np.abs(s.n_plus - s.n_minus).max() for s in states)))
    print(json.dumps(report, sort_keys=True))
    return 0


# -- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tetrodiff", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    m = sub.add_parser("mesh", help="generate and optionally optimise a mesh")
    m.add_argument("--config")
    m.add_argument("--shape", choices=["cube", "cylinder", "sphere", "cone"], default="cube")
    m.add_argument("--extent", type=_number, default=math.pi, help="cube side length")
    m.add_argument("--radius", type=_number, default=1.0)
    m.add_argument("--height", type=_number, default=math.pi)
    m.add_argument("--layers", type=int, default=3)
    m.add_argument("--ring-nodes", type=int, default=None,
                   help="outer nodes per layer edge (default 4 for the cube, 8 otherwise)")
    m.add_argument("--h0", type=_number, required=True)
    m.add_argument("--vcrit", type=_number, default=None, help="critical volume as a fraction of V0")
    m.add_argument("--max-divisions", type=int, default=None)
    m.add_argument("--optimize", action="store_true")
    m.add_argument("--rounds", type=int, default=4)
    m.add_argument("--global-steps", type=int, default=8)
    m.add_argument("--local-sweeps", type=int, default=2)
    m.add_argument("--eta", type=_number, default=0.9)
    m.add_argument("--tmax", type=_number, default=None)
    m.add_argument("--tscale", type=_number, default=1e-3, help="T_max as a multiple of the local-energy spread")
    m.add_argument("--ks", default="random")
    m.add_argument("--shuffle", action="store_true")
    m.add_argument("--no-delaunay", dest="delaunay", action="store_false")
    m.add_argument("--starts", type=int, default=1, help="independent annealing runs per round")
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out", default="mesh")

    s = sub.add_parser("solve", help="solve a problem on a stored mesh")
    s.add_argument("problem", choices=["laplace", "diffusion", "pnp"])
    s.add_argument("--config")
    s.add_argument("--mesh", required=True)
    s.add_argument("--out", default="solution")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--bc-plane", type=_plane, action="append", help="AXIS=POSITION:VALUE, repeatable")
    s.add_argument("--bc-rest", type=_number, default=None, help="value on all other outer nodes")
    s.add_argument("--bc-junction", choices=["mean", "first"], default="mean",
                   help="value on nodes shared by several boundary faces")
    s.add_argument("--bc-oracle", choices=["point-charge"], default=None)
    s.add_argument("--charge", type=_point, default=(0.0, 0.0, 2.0 * math.pi))
    s.add_argument("--oracle", choices=["cube-series", "point-charge"], default=None)
    s.add_argument("--series-terms", type=int, default=101)
    s.add_argument("--D", type=_number, default=1.0)
    s.add_argument("--D-minus", type=_number, default=None)
    s.add_argument("--k", type=_number, default=0.0)
    s.add_argument("--k-minus", type=_number, default=None)
    s.add_argument("--z", type=_number, default=1.0)
    s.add_argument("--e-charge", type=_number, default=1.0)
    s.add_argument("--eps", type=_number, default=1.0)
    s.add_argument("--beta", type=_number, default=1.0)
    s.add_argument("--dt", type=_number, default=0.01)
    s.add_argument("--t", type=_number, default=0.19, help="diffusion end time")
    s.add_argument("--tend", type=_number, default=0.39, help="electrodiffusion end time")
    s.add_argument("--steps", type=int, default=None)
    s.add_argument("--snapshot-every", type=int, default=10)
    s.add_argument("--initial", choices=["polynomial", "constant", "mode", "cylinder"], default="polynomial")
    s.add_argument("--amplitude", type=_number, default=1.0)
    s.add_argument("--profile-axis", choices=["x", "y", "z"], default="z")
    s.add_argument("--profile-at", type=_number, default=math.pi / 2)
    s.add_argument("--profile-tol", type=_number, default=0.1)
    s.add_argument("--flux-radius", type=parse_number, default=0.8,
                   help="radius of the ball averaged for the centre flux")
    s.add_argument("--jacobian", choices=["exact", "frozen"], default="exact")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    sub = parser._subparsers._group_actions[0].choices[args.command]
    try:
        args = _apply_config(parser, sub, args, argv)
    except (ConfigError, OSError) as exc:
        parser.error(str(exc))
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return cmd_mesh(args) if args.command == "mesh" else cmd_solve(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
