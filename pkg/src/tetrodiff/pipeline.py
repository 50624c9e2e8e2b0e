"""Build, refine, anneal and clean up a mesh in one call."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .delaunay import FlipReport, ImproveConfig, improve_pass
from .geometry import Mesh
from .meshgen import DomainSpec, RefineConfig, RefineStats, build_initial_mesh, refine_to_target
from .metropolis import EnergyReport, MetropolisConfig, global_anneal, total_energy

logger = logging.getLogger(__name__)

__all__ = ["OptimizeConfig", "PipelineResult", "optimize_mesh", "generate_mesh", "in_band_fraction"]


@dataclass
class OptimizeConfig:
    """Alternating annealing and flip rounds.

    Each round runs :func:`global_anneal` with seed ``metropolis.seed +
    round`` and then, if ``delaunay`` is set, one :func:`improve_pass`.
    Flips ignore volumes, so a closing anneal follows the last round.
    """

    metropolis: MetropolisConfig
    rounds: int = 4
    delaunay: bool = True
    improve: ImproveConfig = field(default_factory=ImproveConfig)


@dataclass
class PipelineResult:
    mesh: Mesh
    refine: RefineStats
    energy_before: float
    energy_after: float
    anneal_reports: list = field(default_factory=list)
    flip_reports: list = field(default_factory=list)


def in_band_fraction(mesh: Mesh, v0: float, lo: float = 0.5, hi: float = 1.5) -> float:
    r = mesh.volumes / v0
    return float(np.mean((r >= lo) & (r <= hi))) if len(r) else 0.0


def optimize_mesh(mesh: Mesh, cfg: OptimizeConfig,
                  callback: Optional[Callable[[str, Mesh], None]] = None
                  ) -> tuple[list[EnergyReport], list[FlipReport]]:
    """Run ``cfg.rounds`` anneal (+ flip) rounds in place.

    ``callback(stage, mesh)`` is called after every anneal and flip pass.
    """
    anneals, flips = [], []
    for r in range(cfg.rounds):
        mcfg = replace(cfg.metropolis, seed=cfg.metropolis.seed + r)
        _, rep = global_anneal(mesh, mcfg)
        anneals.append(rep)
        if callback:
            callback("anneal", mesh)
        if cfg.delaunay:
            _, frep = improve_pass(mesh, cfg.improve)
            flips.append(frep)
            if callback:
                callback("flip", mesh)
        logger.info("optimisation round %d: E=%.6g", r, total_energy(mesh, mcfg.v0))
    if cfg.delaunay and cfg.rounds > 0:
        _, rep = global_anneal(mesh, replace(cfg.metropolis, seed=cfg.metropolis.seed + cfg.rounds))
        anneals.append(rep)
        if callback:
            callback("anneal", mesh)
    return anneals, flips


def generate_mesh(spec: DomainSpec, refine: RefineConfig, optimize: Optional[OptimizeConfig] = None,
                  callback: Optional[Callable[[str, Mesh], None]] = None) -> PipelineResult:
    """Initial layered mesh, refinement to saturation, then optional optimisation."""
    mesh = build_initial_mesh(spec)
    if callback:
        callback("build", mesh)
    stats = refine_to_target(mesh, refine, spec.shape,
                             callback=(lambda m: callback("divide", m)) if callback else None)
    v0 = refine.v0
    e0 = total_energy(mesh, v0)
    result = PipelineResult(mesh, stats, e0, e0)
    if optimize is not None:
        if optimize.improve.min_volume is None:
            optimize = replace(optimize, improve=replace(optimize.improve, min_volume=refine.critical_volume))
        result.anneal_reports, result.flip_reports = optimize_mesh(mesh, optimize, callback)
        result.energy_after = total_energy(mesh, v0)
    return result
