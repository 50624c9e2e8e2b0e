"""Edge flips driven by the empty-circumsphere criterion, and sliver removal.

Only interior edges shared by three or four elements are touched, so the
boundary triangulation never changes. A flip is installed only when it
strictly lowers the worst local circumsphere violation among the ring
nodes, which also guarantees that repeated passes terminate.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .geometry import Mesh, corner_volumes, edge_key, tet_volume

__all__ = [
    "FlipReport",
    "ImproveConfig",
    "insphere",
    "insphere_batch",
    "circumsphere",
    "delaunay_violated",
    "flip_3to2",
    "flip_4to4",
    "remove_boundary_sliver",
    "improve_pass",
]

REL_TOL = 1e-12


@dataclass
class FlipReport:
    flips_3to2: int = 0
    flips_4to4: int = 0
    slivers_removed: int = 0
    volume_before: float = 0.0
    volume_after: float = 0.0
    passes: int = 0
    rows: list = field(default_factory=list)  # (pass, flips_3to2, flips_4to4, slivers)

    def write_csv(self, path, seed: Optional[int] = None) -> None:
        with open(path, "w") as fh:
            if seed is not None:
                fh.write(f"# seed={seed}\n")
            fh.write("pass,flips_3to2,flips_4to4,slivers_removed\n")
            for row in self.rows:
                fh.write(",".join(str(v) for v in row) + "\n")


@dataclass
class ImproveConfig:
    max_passes: int = 20
    min_volume: Optional[float] = None  # sliver threshold; None skips sliver removal


def insphere_batch(tets: np.ndarray, e: np.ndarray) -> np.ndarray:
    """Vectorised :func:`insphere` for ``tets`` (K, 4, 3) and points ``e`` (K, 3)."""
    tets = np.asarray(tets, dtype=float)
    e = np.asarray(e, dtype=float)
    rows = tets - e[:, None, :]
    # nondimensionalise so the lifted column scales like the others
    length = np.abs(rows).max(axis=(1, 2))
    rows = rows / np.where(length > 0.0, length, 1.0)[:, None, None]
    lifted = np.concatenate([rows, np.einsum("kij,kij->ki", rows, rows)[..., None]], axis=2)
    edges = tets[:, 1:] - tets[:, :1]
    six_v = np.linalg.det(edges)
    flat = np.abs(six_v) <= REL_TOL * np.prod(np.linalg.norm(edges, axis=2), axis=1)
    scale = np.prod(np.linalg.norm(lifted, axis=2), axis=1)
    out = -np.sign(six_v) * np.linalg.det(lifted) / np.where(scale > 0.0, scale, 1.0)
    out[flat] = np.nan
    return out


def insphere(a, b, c, d, e) -> float:
    """Normalised circumsphere test of ``e`` against tetrahedron ``abcd``.

    Positive when ``e`` is strictly inside, negative outside, zero on the
    sphere; values are scaled by the Hadamard bound of the lifted matrix so
    they lie in [-1, 1]. ``nan`` flags a (near-)flat tetrahedron.
    """
    tet = np.array([a, b, c, d], dtype=float)[None]
    return float(insphere_batch(tet, np.asarray(e, dtype=float)[None])[0])


def circumsphere(p: np.ndarray) -> tuple[np.ndarray, float]:
    """Centre and radius of the sphere through the four rows of ``p``."""
    a = p[1:] - p[0]
    rhs = 0.5 * np.einsum("ij,ij->i", a, a)
    centre = p[0] + np.linalg.solve(a, rhs)
    return centre, float(np.linalg.norm(centre - p[0]))


def delaunay_violated(element: int, mesh: Mesh, tree: Optional[cKDTree] = None) -> bool:
    """True if another mesh node lies strictly inside the element's circumsphere.

    Flat elements count as violated.
    """
    nodes = mesh.tets[element]
    p = mesh.points[nodes]
    try:
        centre, radius = circumsphere(p)
    except np.linalg.LinAlgError:
        return True
    if not np.isfinite(radius):
        return True
    if tree is None:
        d = np.linalg.norm(mesh.points - centre, axis=1)
        near = np.flatnonzero(d <= radius * (1.0 + 1e-9))
    else:
        near = tree.query_ball_point(centre, radius * (1.0 + 1e-9))
    near = np.setdiff1d(np.asarray(near, dtype=np.int64), nodes)
    if len(near) == 0:
        return False
    s = insphere_batch(np.broadcast_to(p, (len(near), 4, 3)), mesh.points[near])
    return bool(np.any(~(s <= REL_TOL)))  # nan counts as violated


def _local_violation(mesh: Mesh, tets: list, nodes: set) -> float:
    """Worst circumsphere violation of ``tets`` by the other ``nodes``."""
    pairs = [(t, k) for t in tets for k in nodes.difference(t)]
    if not pairs:
        return -np.inf
    pts = mesh.points
    s = insphere_batch(pts[np.array([t for t, _ in pairs])], pts[[k for _, k in pairs]])
    if np.isnan(s).any():
        return np.inf
    return float(s.max())


def _ring(mesh: Mesh, a: int, b: int) -> Optional[list[int]]:
    """Ordered ring of vertices around an interior edge, None if open."""
    sharers = mesh.edge_elems.get(edge_key(a, b), ())
    pairs = []
    for e in sharers:
        pairs.append([int(n) for n in mesh.tets[e] if n != a and n != b])
    links: dict[int, list[int]] = {}
    for c, d in pairs:
        links.setdefault(c, []).append(d)
        links.setdefault(d, []).append(c)
    if len(links) != len(pairs) or any(len(v) != 2 for v in links.values()):
        return None
    start = min(links)
    ring, prev = [start], None
    cur = start
    while True:
        nxt = links[cur][0] if links[cur][0] != prev else links[cur][1]
        if nxt == start:
            break
        ring.append(nxt)
        prev, cur = cur, nxt
    return ring if len(ring) == len(pairs) else None


def _valid_tiling(mesh: Mesh, new: list, old_volume: float) -> bool:
    p = mesh.points[np.array(new)]
    v = np.abs(corner_volumes(p))
    if v.min() <= mesh.degenerate_tol:
        return False
    return abs(v.sum() - old_volume) <= 1e-9 * old_volume


def _install(mesh: Mesh, old: list[int], new: list) -> None:
    for e, t in zip(old, new):
        mesh.replace_element(e, t)
    for t in new[len(old):]:
        mesh.add_element(t)
    for e in sorted(old[len(new):], reverse=True):
        mesh.remove_element(e)


def _flip(mesh: Mesh, sharers: list[int], nodes: set, candidates: list, tree, tabu) -> bool:
    """Install the best candidate tiling if it lowers the local violation."""
    if not candidates:
        return False
    best_score, best = min(((_local_violation(mesh, new, nodes), new) for new in candidates),
                           key=lambda c: c[0])
    old = [tuple(int(n) for n in mesh.tets[e]) for e in sharers]
    before = _local_violation(mesh, old, nodes)
    if not best_score < before:
        return False
    # a ring node inside a sharer's sphere already proves the violation
    if before <= REL_TOL and not any(delaunay_violated(e, mesh, tree) for e in sharers):
        return False
    if tabu is not None:
        if any(frozenset(t) in tabu for t in best):
            return False
        tabu.update(frozenset(t) for t in old)
    _install(mesh, sharers, best)
    return True


def flip_3to2(edge, mesh: Mesh, tree: Optional[cKDTree] = None, tabu: Optional[set] = None) -> bool:
    """Replace the three elements around an interior edge by two.

    Refused (returns False, mesh unchanged) unless exactly three elements
    share the edge, one of them violates the Delaunay criterion, the two
    new elements tile the same volume without inversion, and the worst
    circumsphere violation among the ring nodes strictly decreases.
    ``tabu`` collects removed elements so a pass never reinstates them.
    """
    a, b = edge_key(*edge)
    sharers = sorted(mesh.edge_elems.get((a, b), ()))
    if len(sharers) != 3:
        return False
    ring = _ring(mesh, a, b)
    if ring is None:
        return False
    old_volume = float(mesh.volumes[sharers].sum())
    new = [(*ring, a), (*ring, b)]
    candidates = [new] if _valid_tiling(mesh, new, old_volume) else []
    return _flip(mesh, sharers, {a, b, *ring}, candidates, tree, tabu)


def flip_4to4(edge, mesh: Mesh, tree: Optional[cKDTree] = None, tabu: Optional[set] = None) -> bool:
    """Re-tetrahedralise the octahedron around an interior edge of valence 4.

    Of the two alternative diagonals, the valid candidate with the lower
    worst circumsphere violation is installed (ties go to the first ring
    diagonal), provided it beats the current configuration.
    """
    a, b = edge_key(*edge)
    sharers = sorted(mesh.edge_elems.get((a, b), ()))
    if len(sharers) != 4:
        return False
    ring = _ring(mesh, a, b)
    if ring is None:
        return False
    old_volume = float(mesh.volumes[sharers].sum())
    candidates = []
    for k in (0, 1):
        p, q = ring[k], ring[k + 2]
        others = [ring[k + 1], ring[(k + 3) % 4]]
        new = [(p, q, r, s) for r in others for s in (a, b)]
        if _valid_tiling(mesh, new, old_volume):
            candidates.append(new)
    return _flip(mesh, sharers, {a, b, *ring}, candidates, tree, tabu)


def remove_boundary_sliver(element: int, mesh: Mesh, min_volume: float) -> bool:
    """Collapse a small boundary element onto its boundary face.

    The element's single inner node moves to the centre of the opposite
    boundary face (projected onto the surface when the mesh knows its
    domain) and the element is deleted. Any resulting degenerate neighbour
    rolls the whole operation back.
    """
    if mesh.volumes[element] >= min_volume:
        return False
    nodes = [int(n) for n in mesh.tets[element]]
    inner = [n for n in nodes if not mesh.features[n]]
    if len(inner) != 1:
        return False
    i = inner[0]
    face = [n for n in nodes if n != i]
    shared = set.intersection(*(mesh.node_elems[n] for n in face))
    if shared != {element}:
        return False
    common = frozenset.intersection(*(mesh.features[n] for n in face))
    if not common:
        return False
    target = mesh.points[face].mean(axis=0)
    if mesh.domain is not None:
        target = mesh.domain.project(target, common)
    star = sorted(mesh.node_elems[i] - {element})
    corners = mesh.points[mesh.tets[star]]
    corners[mesh.tets[star] == i] = target
    if len(star) and corner_volumes(corners).min() <= mesh.degenerate_tol:
        return False
    old = mesh.points[i].copy()
    mesh.move_node(i, target)
    if len(star) and mesh.signed_volumes()[star].min() <= mesh.degenerate_tol:
        mesh.move_node(i, old)
        return False
    mesh.features[i] = common
    mesh.remove_element(element)
    return True


def improve_pass(mesh: Mesh, config: Optional[ImproveConfig] = None) -> tuple[Mesh, FlipReport]:
    """Flip until a fixpoint (or ``max_passes``), then remove boundary slivers."""
    config = config or ImproveConfig()
    report = FlipReport(volume_before=mesh.total_volume)
    tree = cKDTree(mesh.points)
    tabu: set = set()
    for n in range(1, config.max_passes + 1):
        c32 = c44 = 0
        for key in mesh.edges():
            count = len(mesh.edge_elems.get(key, ()))
            if count == 3 and flip_3to2(key, mesh, tree, tabu):
                c32 += 1
            elif count == 4 and flip_4to4(key, mesh, tree, tabu):
                c44 += 1
        report.flips_3to2 += c32
        report.flips_4to4 += c44
        report.passes = n
        report.rows.append((n, c32, c44, 0))
        if c32 + c44 == 0:
            break
    if config.min_volume is not None:
        removed = 0
        e = 0
        while e < mesh.n_elements:
            if remove_boundary_sliver(e, mesh, config.min_volume):
                removed += 1
                continue  # index e now holds a different element
            e += 1
        report.slivers_removed = removed
        report.rows.append((report.passes + 1, 0, 0, removed))
    report.volume_after = mesh.total_volume
    return mesh, report
