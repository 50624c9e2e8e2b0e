"""Metropolis equalisation of element volumes.

Energy is the summed squared deviation of element volumes from the target
volume ``V0``. Each local sweep proposes a spring-like shift for every
movable node and accepts it with probability ``exp(-dE / T)`` (Boltzmann
constant fixed to 1). A global step runs a few sweeps, then applies the
same rule to the change of *total* energy against the best configuration
seen so far, and cools ``T <- eta * T``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .geometry import Mesh, corner_volumes
from .meshgen import target_volume

logger = logging.getLogger(__name__)

__all__ = [
    "MetropolisConfig",
    "EnergyReport",
    "total_energy",
    "local_energy",
    "propose_shift",
    "accept",
    "local_sweep",
    "global_anneal",
    "estimate_t_max",
    "write_energy_trace",
]


@dataclass
class MetropolisConfig:
    """Annealing parameters.

    ``k_s`` is either a fixed shift strength in (0, 1] or ``"random"``, in
    which case a fresh strength is drawn from U(0, 1) for every proposal.
    Without an explicit ``t_max`` the starting temperature is ``t_scale``
    times the spread of per-node local energies (see :func:`estimate_t_max`).
    """

    h0: float
    k_s: Union[float, str] = "random"
    t_max: Optional[float] = None
    t_scale: float = 1e-3
    eta: float = 0.9
    local_sweeps: int = 2
    global_steps: int = 20
    seed: int = 0
    shuffle: bool = False
    kb: float = field(default=1.0, init=False)

    def __post_init__(self):
        if not 0.0 < self.eta < 1.0:
            raise ValueError("eta must lie in (0, 1)")
        if isinstance(self.k_s, str):
            if self.k_s != "random":
                raise ValueError("k_s must be a number or 'random'")
        elif not 0.0 < self.k_s <= 1.0:
            raise ValueError("k_s must lie in (0, 1]")
        if self.h0 <= 0:
            raise ValueError("h0 must be positive")
        if self.t_max is not None and self.t_max < 0:
            raise ValueError("t_max must be non-negative")
        if self.t_scale <= 0:
            raise ValueError("t_scale must be positive")

    @property
    def v0(self) -> float:
        return target_volume(self.h0)


@dataclass
class EnergyReport:
    total_energy: float = 0.0
    trace: list = field(default_factory=list)  # (step, T, E, accept_rate)
    accepted: int = 0
    rejected: int = 0

    @property
    def accept_rate(self) -> float:
        n = self.accepted + self.rejected
        return self.accepted / n if n else 0.0


def total_energy(mesh: Mesh, v0: float) -> float:
    return float(np.sum((mesh.volumes - v0) ** 2))


def local_energy(mesh: Mesh, node: int, v0: float) -> float:
    star = list(mesh.node_elems[node])
    return float(np.sum((mesh._vol[star] - v0) ** 2))


def _movable(mesh: Mesh, node: int) -> bool:
    f = mesh.features[node]
    if not f:
        return True
    return mesh.domain is not None and not mesh.domain.is_frozen(f)


def _shift(p: np.ndarray, nb: np.ndarray, h0: float, k_s: float) -> np.ndarray:
    d = p - nb
    length = np.sqrt(np.einsum("ij,ij->i", d, d))
    ok = length > 0.0
    w = (length[ok] - h0) / length[ok]
    return p - k_s * (w[:, None] * d[ok]).sum(axis=0)


def propose_shift(mesh: Mesh, node: int, cfg: MetropolisConfig, rng=None) -> np.ndarray:
    """New position pulling every incident edge towards length ``h0``.

    Surface-patch nodes are projected back onto their patch; frozen nodes
    (shape lines and corners) are returned unchanged. Coincident neighbours
    are skipped.
    """
    p = mesh.points[node]
    if not _movable(mesh, node):
        return p.copy()
    k_s = rng.random() if cfg.k_s == "random" else float(cfg.k_s)
    q = _shift(p, mesh.points[mesh.neighbors(node)], cfg.h0, k_s)
    if mesh.features[node]:
        q = mesh.domain.project(q, mesh.features[node])
    return q


def accept(delta_e: float, temperature: float, rng) -> bool:
    """Metropolis rule; ``temperature == 0`` is the greedy limit."""
    if delta_e <= 0.0:
        return True
    if temperature < 0:
        raise ValueError("temperature must be non-negative")
    if temperature == 0.0:
        return False
    return math.exp(-delta_e / temperature) > rng.random()


class _Stars:
    """Per-node element stars and neighbour lists (topology is fixed)."""

    def __init__(self, mesh: Mesh):
        self.nodes = [i for i in range(mesh.n_nodes) if _movable(mesh, i) and mesh.node_elems[i]]
        tets = mesh.tets
        self.star = {}
        self.local = {}
        self.neigh = {}
        for i in self.nodes:
            s = np.array(sorted(mesh.node_elems[i]), dtype=np.int64)
            t = tets[s]
            self.star[i] = s
            self.local[i] = np.argmax(t == i, axis=1)
            self.neigh[i] = np.setdiff1d(np.unique(t), [i])


def local_sweep(mesh: Mesh, cfg: MetropolisConfig, temperature: float, rng,
                stars: Optional[_Stars] = None) -> tuple[Mesh, EnergyReport]:
    """Visit every movable node once and apply the Metropolis rule.

    Moves that would give any adjacent element a non-positive signed volume
    are rejected outright. The mesh is updated in place.
    """
    stars = stars or _Stars(mesh)
    v0, h0 = cfg.v0, cfg.h0
    pts, vol, tets = mesh._pts, mesh._vol, mesh._tets
    floor = mesh.degenerate_tol
    report = EnergyReport()
    order = list(stars.nodes)
    if cfg.shuffle:
        rng.shuffle(order)
    fixed_ks = None if cfg.k_s == "random" else float(cfg.k_s)
    for i in order:
        k_s = rng.random() if fixed_ks is None else fixed_ks
        q = _shift(pts[i], pts[stars.neigh[i]], h0, k_s)
        if mesh.features[i]:
            q = mesh.domain.project(q, mesh.features[i])
        star = stars.star[i]
        corners = pts[tets[star]]
        corners[np.arange(len(star)), stars.local[i]] = q
        v_new = corner_volumes(corners)
        if v_new.min() <= floor:
            report.rejected += 1
            continue
        v_old = vol[star]
        delta = float(np.sum((v_new - v0) ** 2) - np.sum((v_old - v0) ** 2))
        if accept(delta, temperature, rng):
            pts[i] = q
            vol[star] = v_new
            report.accepted += 1
        else:
            report.rejected += 1
    report.total_energy = total_energy(mesh, v0)
    return mesh, report


def estimate_t_max(mesh: Mesh, v0: float) -> float:
    """Spread of per-node local energies over one pass through the mesh."""
    e = (mesh.volumes - v0) ** 2
    local = np.zeros(mesh.n_nodes)
    np.add.at(local, mesh.tets.ravel(), np.repeat(e, 4))
    used = local[[bool(s) for s in mesh.node_elems]]
    return float(used.max() - used.min()) if len(used) else 0.0


def global_anneal(mesh: Mesh, cfg: MetropolisConfig, rng=None) -> tuple[Mesh, EnergyReport]:
    """Anneal in place and leave the mesh in the best configuration found.

    Returns
    -------
    mesh : Mesh
        The same object, holding the lowest-energy node positions seen.
    report : EnergyReport
        ``trace`` holds one ``(step, T, E, accept_rate)`` row per global step.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    v0 = cfg.v0
    best = mesh.points.copy()
    e_best = total_energy(mesh, v0)
    report = EnergyReport(total_energy=e_best)
    report.trace.append((0, float("nan"), e_best, float("nan")))
    if cfg.global_steps <= 0:
        return mesh, report
    temperature = cfg.t_max if cfg.t_max is not None else cfg.t_scale * estimate_t_max(mesh, v0)
    stars = _Stars(mesh)
    for step in range(1, cfg.global_steps + 1):
        acc = rej = 0
        for _ in range(cfg.local_sweeps):
            _, r = local_sweep(mesh, cfg, temperature, rng, stars)
            acc += r.accepted
            rej += r.rejected
        e = total_energy(mesh, v0)
        rate = acc / (acc + rej) if acc + rej else 0.0
        if accept(e - e_best, temperature, rng):
            if e < e_best:
                best = mesh.points.copy()
                e_best = e
        else:
            mesh.set_points(best)
        report.accepted += acc
        report.rejected += rej
        report.trace.append((step, temperature, e, rate))
        logger.debug("anneal step %d T=%.3g E=%.6g accept=%.3f", step, temperature, e, rate)
        temperature *= cfg.eta
    mesh.set_points(best)
    report.total_energy = e_best
    return mesh, report


def write_energy_trace(report: EnergyReport, path, seed: Optional[int] = None) -> None:
    with open(path, "w") as fh:
        if seed is not None:
            fh.write(f"# seed={seed}\n")
        fh.write("step,T,E,accept_rate\n")
        for step, t, e, rate in report.trace:
            fh.write(f"{step},{t:.17g},{e:.17g},{rate:.17g}\n")
