"""Tetrahedra, area coordinates and the mutable mesh container.

Nodes carry a set of boundary *features* (surface patches, lines, corners).
An empty set marks an inner node; anything else is an outer node whose
feature set says which surface equations it satisfies.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

__all__ = [
    "GeometryError",
    "Node",
    "ShapeCoeffs",
    "Mesh",
    "tet_volume",
    "tet_volumes",
    "corner_volumes",
    "shape_coeffs",
    "shape_gradients",
    "build_adjacency",
    "edge_key",
    "feature_label",
]

INNER = frozenset()


class GeometryError(ValueError):
    """Raised for degenerate elements or an inconsistent mesh."""


def edge_key(i: int, j: int) -> tuple[int, int]:
    return (i, j) if i < j else (j, i)


def feature_label(features: frozenset[str]) -> str:
    """Text form of a feature set, ``"-"`` for inner nodes."""
    return "&".join(sorted(features)) if features else "-"


@dataclass(frozen=True)
class Node:
    position: np.ndarray
    features: frozenset[str] = INNER

    @property
    def is_outer(self) -> bool:
        return bool(self.features)

    @property
    def feature(self) -> str:
        return feature_label(self.features)


@dataclass(frozen=True)
class ShapeCoeffs:
    """Coefficients of ``L_i = (a_i + b_i x + c_i y + d_i z) / 6V``."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray
    volume: float

    def evaluate(self, p) -> np.ndarray:
        x, y, z = np.asarray(p, dtype=float)
        return (self.a + self.b * x + self.c * y + self.d * z) / (6.0 * self.volume)

    @property
    def gradients(self) -> np.ndarray:
        """(4, 3) array of constant gradients of the four area coordinates."""
        return np.stack([self.b, self.c, self.d], axis=1) / (6.0 * self.volume)


def tet_volume(p1, p2, p3, p4) -> float:
    """Signed volume, one sixth of the triple product of the edge vectors."""
    x1, y1, z1 = (float(v) for v in p1)
    ax, ay, az = (float(v) for v in p2)
    bx, by, bz = (float(v) for v in p3)
    cx, cy, cz = (float(v) for v in p4)
    ax, ay, az = ax - x1, ay - y1, az - z1
    bx, by, bz = bx - x1, by - y1, bz - z1
    cx, cy, cz = cx - x1, cy - y1, cz - z1
    return (ax * (by * cz - bz * cy) + ay * (bz * cx - bx * cz) + az * (bx * cy - by * cx)) / 6.0


def corner_volumes(p: np.ndarray) -> np.ndarray:
    """Signed volumes of a stack of vertex quadruples, shape (..., 4, 3)."""
    a = p[..., 1, :] - p[..., 0, :]
    b = p[..., 2, :] - p[..., 0, :]
    c = p[..., 3, :] - p[..., 0, :]
    return (a[..., 0] * (b[..., 1] * c[..., 2] - b[..., 2] * c[..., 1])
            + a[..., 1] * (b[..., 2] * c[..., 0] - b[..., 0] * c[..., 2])
            + a[..., 2] * (b[..., 0] * c[..., 1] - b[..., 1] * c[..., 0])) / 6.0


def tet_volumes(points: np.ndarray, tets: np.ndarray) -> np.ndarray:
    """Vectorised signed volumes for an (E, 4) connectivity array."""
    return corner_volumes(points[tets])


def shape_gradients(points: np.ndarray, tets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of the area coordinates for every element.

    Returns
    -------
    grads : (E, 4, 3) ndarray
        ``grads[e, i]`` is the constant gradient of ``L_i`` on element ``e``.
    volumes : (E,) ndarray
        Signed element volumes.
    """
    p = points[tets]
    edges = p[:, 1:] - p[:, :1]  # (E, 3, 3), rows are edge vectors
    e1, e2, e3 = edges[:, 0], edges[:, 1], edges[:, 2]
    cof = np.stack([np.cross(e2, e3), np.cross(e3, e1), np.cross(e1, e2)], axis=1)
    det = np.einsum("ek,ek->e", e1, cof[:, 0])
    vol = det / 6.0
    grads = np.empty((len(tets), 4, 3))
    # rows of inv(edges)^T via cofactors; flat elements give inf/nan, not an exception
    with np.errstate(divide="ignore", invalid="ignore"):
        grads[:, 1:] = cof / det[:, None, None]
    grads[:, 0] = -grads[:, 1:].sum(axis=1)
    return grads, vol


class Mesh:
    """Tetrahedral mesh with incrementally maintained adjacency.

    Storage is capacity-backed so that refinement can append nodes and
    elements cheaply; ``points``, ``tets`` and ``volumes`` are views of the
    live part. Element orientation is normalised on insertion, so every
    cached volume is positive.

    Parameters
    ----------
    points : (N, 3) array_like, optional
    tets : (E, 4) array_like of int, optional
    features : sequence of frozenset, optional
        Feature set per node; defaults to all inner.
    """

    def __init__(self, points=None, tets=None, features=None):
        points = np.zeros((0, 3)) if points is None else np.asarray(points, dtype=float)
        tets = np.zeros((0, 4), dtype=np.int64) if tets is None else np.asarray(tets, dtype=np.int64)
        self._pts = np.empty((max(16, 2 * len(points)), 3))
        self._tets = np.empty((max(16, 2 * len(tets)), 4), dtype=np.int64)
        self._vol = np.empty(len(self._tets))
        self.n_nodes = 0
        self.n_elements = 0
        self._lo = self._hi = np.zeros(3)
        self.domain = None  # analytic shape, when the mesh came from meshgen
        self.features: list[frozenset[str]] = []
        self.node_elems: list[set[int]] = []
        self.edge_elems: dict[tuple[int, int], set[int]] = {}
        if features is None:
            features = [INNER] * len(points)
        if len(features) != len(points):
            raise GeometryError("features must have one entry per node")
        self._scale = 0.0
        for p, f in zip(points, features):
            self.add_node(p, f)
        for t in tets:
            self.add_element(t)

    # -- views -------------------------------------------------------------
    @property
    def points(self) -> np.ndarray:
        return self._pts[: self.n_nodes]

    @property
    def tets(self) -> np.ndarray:
        return self._tets[: self.n_elements]

    @property
    def volumes(self) -> np.ndarray:
        return self._vol[: self.n_elements]

    @property
    def outer(self) -> np.ndarray:
        """Boolean mask of outer (boundary) nodes."""
        return np.array([bool(f) for f in self.features], dtype=bool)

    def node(self, i: int) -> Node:
        return Node(self._pts[i].copy(), self.features[i])

    @property
    def scale(self) -> float:
        """Bounding-box diagonal, used to make tolerances relative."""
        return self._scale

    @property
    def degenerate_tol(self) -> float:
        return 1e-12 * self._scale**3

    @property
    def surface_tol(self) -> float:
        return 1e-9 * self._scale

    @property
    def total_volume(self) -> float:
        return float(self.volumes.sum())

    # -- growth ------------------------------------------------------------
    def _grow_nodes(self):
        new = np.empty((2 * len(self._pts), 3))
        new[: self.n_nodes] = self.points
        self._pts = new

    def _grow_elements(self):
        cap = 2 * len(self._tets)
        new_t = np.empty((cap, 4), dtype=np.int64)
        new_t[: self.n_elements] = self.tets
        new_v = np.empty(cap)
        new_v[: self.n_elements] = self.volumes
        self._tets, self._vol = new_t, new_v

    def add_node(self, p, features: Iterable[str] = INNER) -> int:
        if self.n_nodes == len(self._pts):
            self._grow_nodes()
        i = self.n_nodes
        self._pts[i] = p
        self.n_nodes += 1
        self.features.append(frozenset(features))
        self.node_elems.append(set())
        q = self._pts[i]
        if i == 0:
            self._lo, self._hi = q.copy(), q.copy()
        else:
            np.minimum(self._lo, q, out=self._lo)
            np.maximum(self._hi, q, out=self._hi)
        self._scale = float(np.linalg.norm(self._hi - self._lo))
        return i

    def _link(self, e: int, nodes) -> None:
        nodes = [int(n) for n in nodes]
        for k in range(4):
            self.node_elems[nodes[k]].add(e)
            for m in range(k + 1, 4):
                self.edge_elems.setdefault(edge_key(nodes[k], nodes[m]), set()).add(e)

    def _unlink(self, e: int, nodes) -> None:
        nodes = [int(n) for n in nodes]
        for k in range(4):
            self.node_elems[nodes[k]].discard(e)
            for m in range(k + 1, 4):
                key = edge_key(nodes[k], nodes[m])
                s = self.edge_elems[key]
                s.discard(e)
                if not s:
                    del self.edge_elems[key]

    def _oriented(self, nodes) -> tuple[list[int], float]:
        nodes = [int(n) for n in nodes]
        if len(set(nodes)) != 4:
            raise GeometryError(f"element nodes must be distinct, got {nodes}")
        v = tet_volume(*self._pts[nodes])
        if v < 0:
            nodes[2], nodes[3] = nodes[3], nodes[2]
            v = -v
        return nodes, v

    def add_element(self, nodes) -> int:
        """Append an element, swapping two nodes if it is negatively oriented."""
        nodes, v = self._oriented(nodes)
        if self.n_elements == len(self._tets):
            self._grow_elements()
        e = self.n_elements
        self._tets[e] = nodes
        self._vol[e] = v
        self.n_elements += 1
        self._link(e, nodes)
        return e

    def replace_element(self, e: int, nodes) -> None:
        nodes, v = self._oriented(nodes)
        self._unlink(e, self._tets[e])
        self._tets[e] = nodes
        self._vol[e] = v
        self._link(e, nodes)

    def remove_element(self, e: int) -> None:
        """Delete element ``e``; the last element takes its index."""
        last = self.n_elements - 1
        self._unlink(e, self._tets[e])
        if e != last:
            moved = self._tets[last].copy()
            self._unlink(last, moved)
            self._tets[e] = moved
            self._vol[e] = self._vol[last]
            self._link(e, moved)
        self.n_elements -= 1

    # -- node motion -------------------------------------------------------
    def move_node(self, i: int, p) -> None:
        self._pts[i] = p
        star = list(self.node_elems[i])
        if star:
            self._vol[star] = tet_volumes(self._pts, self._tets[star])

    def set_points(self, points: np.ndarray) -> None:
        self._pts[: self.n_nodes] = points
        self._vol[: self.n_elements] = tet_volumes(self.points, self.tets)

    def signed_volumes(self) -> np.ndarray:
        return tet_volumes(self.points, self.tets)

    # -- queries -----------------------------------------------------------
    def edges(self) -> list[tuple[int, int]]:
        return sorted(self.edge_elems)

    def edge_lengths(self) -> np.ndarray:
        e = np.array(self.edges(), dtype=np.int64).reshape(-1, 2)
        return np.linalg.norm(self.points[e[:, 0]] - self.points[e[:, 1]], axis=1)

    def neighbors(self, i: int) -> list[int]:
        nb = set()
        for e in self.node_elems[i]:
            nb.update(int(n) for n in self._tets[e])
        nb.discard(i)
        return sorted(nb)

    def face_elements(self) -> dict[tuple[int, int, int], list[int]]:
        faces: dict[tuple[int, int, int], list[int]] = {}
        for e, t in enumerate(self.tets):
            s = sorted(int(n) for n in t)
            for skip in range(4):
                f = tuple(s[:skip] + s[skip + 1:])
                faces.setdefault(f, []).append(e)
        return faces

    def boundary_faces(self) -> set[tuple[int, int, int]]:
        return {f for f, es in self.face_elements().items() if len(es) == 1}

    def iter_elements(self) -> Iterator[tuple[int, np.ndarray]]:
        for e in range(self.n_elements):
            yield e, self._tets[e]

    def copy(self) -> "Mesh":
        m = Mesh.__new__(Mesh)
        m._pts = self._pts.copy()
        m._tets = self._tets.copy()
        m._vol = self._vol.copy()
        m.n_nodes = self.n_nodes
        m.n_elements = self.n_elements
        m.features = list(self.features)
        m.node_elems = [set(s) for s in self.node_elems]
        m.edge_elems = {k: set(v) for k, v in self.edge_elems.items()}
        m._scale = self._scale
        m._lo, m._hi = self._lo.copy(), self._hi.copy()
        m.domain = self.domain
        return m

    def validate(self) -> None:
        """Check element ids, positive volumes and adjacency consistency.

        Raises
        ------
        GeometryError
            Describing the first violated invariant.
        """
        tets = self.tets
        if len(tets) and (tets.min() < 0 or tets.max() >= self.n_nodes):
            raise GeometryError("element references a non-existent node")
        signed = self.signed_volumes()
        bad = np.flatnonzero(signed <= self.degenerate_tol)
        if len(bad):
            raise GeometryError(f"{len(bad)} inverted or degenerate elements, e.g. {bad[:5].tolist()}")
        if not np.allclose(signed, self.volumes, rtol=1e-12, atol=0.0):
            raise GeometryError("cached volumes are stale")
        fresh = build_adjacency(self.copy())
        if fresh.edge_elems != self.edge_elems or fresh.node_elems != self.node_elems:
            raise GeometryError("adjacency maps inconsistent with elements")

    def __repr__(self) -> str:
        return f"Mesh(n_nodes={self.n_nodes}, n_elements={self.n_elements})"


def shape_coeffs(element: int, mesh: Mesh) -> ShapeCoeffs:
    """Area-coordinate coefficients ``a, b, c, d`` of one element."""
    nodes = mesh.tets[element]
    x = mesh.points[nodes]
    vol = tet_volume(*x)
    if abs(vol) <= mesh.degenerate_tol:
        raise GeometryError(f"element {element} is degenerate (volume {vol:g})")
    a = np.hstack([np.ones((4, 1)), x])
    c = np.linalg.inv(a) * (6.0 * vol)
    return ShapeCoeffs(c[0].copy(), c[1].copy(), c[2].copy(), c[3].copy(), vol)


def build_adjacency(mesh: Mesh) -> Mesh:
    """Recompute the edge and node adjacency maps from scratch."""
    mesh.node_elems = [set() for _ in range(mesh.n_nodes)]
    mesh.edge_elems = {}
    for e, t in mesh.iter_elements():
        mesh._link(e, t)
    return mesh
