"""Layered initial meshes for four regular shapes and guarded bisection.

The domain is cut by planes perpendicular to z. Outer nodes sit on the
boundary curve of every layer, an inner node sits at each layer centre and
another halfway between consecutive layers; every slab between two layers
is then tiled by pyramids over its faces, apexed at the mid-slab node.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .geometry import INNER, GeometryError, Mesh, Node, corner_volumes, edge_key

__all__ = [
    "Cube",
    "Cylinder",
    "Sphere",
    "Cone",
    "DomainSpec",
    "RefineConfig",
    "RefineStats",
    "Refiner",
    "target_volume",
    "target_edge",
    "build_initial_mesh",
    "classify_new_node",
    "refine_once",
    "refine_to_target",
    "volume_histogram",
]


def target_volume(h0: float) -> float:
    """Volume of the regular tetrahedron with edge ``h0``."""
    return h0**3 * math.sqrt(2.0) / 12.0


def target_edge(v0: float) -> float:
    return (12.0 * v0 / math.sqrt(2.0)) ** (1.0 / 3.0)


@dataclass
class _Layer:
    z: float
    center: np.ndarray
    center_features: frozenset
    ring: Optional[np.ndarray] = None
    ring_features: list = field(default_factory=list)


class _Shape:
    """Common surface handling; subclasses define layers and surfaces."""

    def _plane(self, name: str) -> Optional[tuple[int, float]]:
        return None

    def _curved(self, p: np.ndarray, name: str) -> np.ndarray:
        raise KeyError(name)

    def project(self, p, features) -> np.ndarray:
        """Move ``p`` onto every surface named in ``features``."""
        q = np.array(p, dtype=float)
        curved = []
        for name in sorted(features):
            plane = self._plane(name)
            if plane is None:
                curved.append(name)
            else:
                q[plane[0]] = plane[1]
        for name in curved:
            q = self._curved(q, name)
        return q

    def residual(self, p, name: str) -> float:
        """Distance-like violation of one surface equation."""
        p = np.asarray(p, dtype=float)
        return float(np.linalg.norm(self.project(p, {name}) - p))

    def is_frozen(self, features) -> bool:
        """Lines and corners of the shape do not move during smoothing."""
        return len(features) >= 2


@dataclass
class Cube(_Shape):
    xmin: float = 0.0
    xmax: float = math.pi
    ymin: float = 0.0
    ymax: float = math.pi
    zmin: float = 0.0
    zmax: float = math.pi

    def __post_init__(self):
        if not (self.xmax > self.xmin and self.ymax > self.ymin and self.zmax > self.zmin):
            raise GeometryError("cube extents must be positive")

    @property
    def volume(self) -> float:
        return (self.xmax - self.xmin) * (self.ymax - self.ymin) * (self.zmax - self.zmin)

    def _plane(self, name):
        axis = "xyz".index(name[0]) if name[0] in "xyz" else None
        if axis is None:
            return None
        lo = (self.xmin, self.ymin, self.zmin)[axis]
        hi = (self.xmax, self.ymax, self.zmax)[axis]
        return axis, lo if name[1] == "0" else hi

    def _features_at(self, x, y, z) -> frozenset:
        f = set()
        for name, v, lo, hi in (("x", x, self.xmin, self.xmax), ("y", y, self.ymin, self.ymax),
                                ("z", z, self.zmin, self.zmax)):
            if v == lo:
                f.add(name + "0")
            elif v == hi:
                f.add(name + "1")
        return frozenset(f)

    def layers(self, count: int, n: int) -> list[_Layer]:
        xs = np.linspace(self.xmin, self.xmax, n)
        ys = np.linspace(self.ymin, self.ymax, n)
        perim = ([(x, self.ymin) for x in xs[:-1]] + [(self.xmax, y) for y in ys[:-1]]
                 + [(x, self.ymax) for x in xs[::-1][:-1]] + [(self.xmin, y) for y in ys[::-1][:-1]])
        cx, cy = 0.5 * (self.xmin + self.xmax), 0.5 * (self.ymin + self.ymax)
        out = []
        for z in np.linspace(self.zmin, self.zmax, count):
            ring = np.array([(x, y, z) for x, y in perim])
            out.append(_Layer(z, np.array([cx, cy, z]), self._features_at(cx, cy, z), ring,
                              [self._features_at(x, y, z) for x, y in perim]))
        return out


def _circle(radius: float, n: int, z: float, cx: float = 0.0, cy: float = 0.0) -> np.ndarray:
    t = 2.0 * np.pi * np.arange(n) / n
    return np.column_stack([cx + radius * np.cos(t), cy + radius * np.sin(t), np.full(n, z)])


def _radial(p: np.ndarray, radius: float, cx: float, cy: float) -> np.ndarray:
    q = p.copy()
    d = np.array([p[0] - cx, p[1] - cy])
    r = math.hypot(d[0], d[1])
    if r > 0.0:
        q[0] = cx + radius * d[0] / r
        q[1] = cy + radius * d[1] / r
    return q


@dataclass
class Cylinder(_Shape):
    radius: float = 1.0
    zmin: float = 0.0
    zmax: float = math.pi
    cx: float = 0.0
    cy: float = 0.0

    def __post_init__(self):
        if self.radius <= 0 or self.zmax <= self.zmin:
            raise GeometryError("cylinder needs positive radius and height")

    @property
    def volume(self) -> float:
        return math.pi * self.radius**2 * (self.zmax - self.zmin)

    def _plane(self, name):
        return {"z0": (2, self.zmin), "z1": (2, self.zmax)}.get(name)

    def _curved(self, p, name):
        if name != "side":
            raise KeyError(name)
        return _radial(p, self.radius, self.cx, self.cy)

    def layers(self, count: int, n: int) -> list[_Layer]:
        out = []
        for z in np.linspace(self.zmin, self.zmax, count):
            cap = {"z0"} if z == self.zmin else {"z1"} if z == self.zmax else set()
            out.append(_Layer(z, np.array([self.cx, self.cy, z]), frozenset(cap),
                              _circle(self.radius, n, z, self.cx, self.cy),
                              [frozenset(cap | {"side"})] * n))
        return out


@dataclass
class Sphere(_Shape):
    radius: float = 1.0
    center: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.radius <= 0:
            raise GeometryError("sphere radius must be positive")
        self.center = tuple(float(c) for c in self.center)

    @property
    def volume(self) -> float:
        return 4.0 * math.pi * self.radius**3 / 3.0

    def _curved(self, p, name):
        if name != "sphere":
            raise KeyError(name)
        c = np.asarray(self.center)
        d = p - c
        r = np.linalg.norm(d)
        return c + self.radius * d / r if r > 0 else p.copy()

    def layers(self, count: int, n: int) -> list[_Layer]:
        cx, cy, cz = self.center
        out = []
        for k, z in enumerate(np.linspace(cz - self.radius, cz + self.radius, count)):
            if k in (0, count - 1):
                out.append(_Layer(z, np.array([cx, cy, z]), frozenset({"sphere"})))
                continue
            rho = math.sqrt(max(self.radius**2 - (z - cz) ** 2, 0.0))
            out.append(_Layer(z, np.array([cx, cy, z]), INNER, _circle(rho, n, z, cx, cy),
                              [frozenset({"sphere"})] * n))
        return out


@dataclass
class Cone(_Shape):
    """Right circular cone, base disc at ``zmin``, apex on the axis at ``zmax``."""

    base_radius: float = 1.0
    zmin: float = 0.0
    zmax: float = math.pi
    cx: float = 0.0
    cy: float = 0.0

    def __post_init__(self):
        if self.base_radius <= 0 or self.zmax <= self.zmin:
            raise GeometryError("cone needs positive base radius and height")

    @property
    def volume(self) -> float:
        return math.pi * self.base_radius**2 * (self.zmax - self.zmin) / 3.0

    def radius_at(self, z: float) -> float:
        return self.base_radius * (self.zmax - z) / (self.zmax - self.zmin)

    def _plane(self, name):
        return {"z0": (2, self.zmin)}.get(name)

    def _curved(self, p, name):
        if name == "apex":
            return np.array([self.cx, self.cy, self.zmax])
        if name != "lateral":
            raise KeyError(name)
        return _radial(p, self.radius_at(p[2]), self.cx, self.cy)

    def layers(self, count: int, n: int) -> list[_Layer]:
        out = []
        for k, z in enumerate(np.linspace(self.zmin, self.zmax, count)):
            if k == count - 1:
                out.append(_Layer(z, np.array([self.cx, self.cy, z]), frozenset({"lateral", "apex"})))
                continue
            cap = {"z0"} if k == 0 else set()
            out.append(_Layer(z, np.array([self.cx, self.cy, z]), frozenset(cap),
                              _circle(self.radius_at(z), n, z, self.cx, self.cy),
                              [frozenset(cap | {"lateral"})] * n))
        return out


Shape = Union[Cube, Cylinder, Sphere, Cone]


@dataclass
class DomainSpec:
    shape: Shape
    layer_count: int = 3
    nodes_per_layer_edge: int = 8

    def __post_init__(self):
        if self.layer_count < 2:
            raise GeometryError("layer_count must be at least 2")
        if self.nodes_per_layer_edge < 3:
            raise GeometryError("nodes_per_layer_edge must be at least 3")


def build_initial_mesh(spec: DomainSpec) -> Mesh:
    """Connect the layer nodes of ``spec`` into a closed tetrahedral mesh.

    Raises
    ------
    GeometryError
        If a layer collapses anywhere except a pole or apex, or a
        constructed element is degenerate.
    """
    layers = spec.shape.layers(spec.layer_count, spec.nodes_per_layer_edge)
    mesh = Mesh()
    mesh.domain = spec.shape
    ids = []
    for layer in layers:
        if layer.ring is not None:
            radii = np.linalg.norm(layer.ring[:, :2] - layer.center[:2], axis=1)
            if radii.min() <= 0.0:
                raise GeometryError(f"layer at z={layer.z:g} has zero radius")
        c = mesh.add_node(layer.center, layer.center_features)
        ring = None
        if layer.ring is not None:
            ring = [mesh.add_node(p, f) for p, f in zip(layer.ring, layer.ring_features)]
        ids.append((c, ring))

    cells = []
    for k in range(len(layers) - 1):
        m = mesh.add_node(0.5 * (layers[k].center + layers[k + 1].center))
        (c0, r0), (c1, r1) = ids[k], ids[k + 1]
        for c, ring in ((c0, r0), (c1, r1)):
            if ring is not None:
                cells += [(c, ring[i], ring[(i + 1) % len(ring)], m) for i in range(len(ring))]
        if r0 is not None and r1 is not None:
            n = len(r0)
            for i in range(n):
                j = (i + 1) % n
                cells.append((r0[i], r0[j], r1[j], m))
                cells.append((r0[i], r1[j], r1[i], m))
        else:
            apex, ring = (c1, r0) if r1 is None else (c0, r1)
            if ring is None:
                raise GeometryError("two consecutive point layers")
            cells += [(ring[i], ring[(i + 1) % len(ring)], apex, m) for i in range(len(ring))]

    tol = mesh.degenerate_tol
    for cell in cells:
        e = mesh.add_element(cell)
        if mesh.volumes[e] <= tol:
            raise GeometryError(f"degenerate initial element {cell}")
    return mesh


def classify_new_node(p, parents: tuple[Node, Node], shape: Optional[Shape]) -> Node:
    """Label the midpoint of an edge and put boundary midpoints on the surface.

    Both parents must share at least one feature for the new node to be
    outer; it then inherits the common features and is projected onto all
    of their surface equations.
    """
    common = parents[0].features & parents[1].features
    p = np.asarray(p, dtype=float)
    if not common:
        return Node(p.copy(), INNER)
    if shape is not None:
        p = shape.project(p, common)
    return Node(p, frozenset(common))


@dataclass
class RefineConfig:
    """Bisection controls.

    ``critical_volume`` defaults to half the target element volume.
    """

    h0: float
    critical_volume: Optional[float] = None
    max_divisions: Optional[int] = None

    def __post_init__(self):
        if self.h0 <= 0:
            raise ValueError("h0 must be positive")
        if self.critical_volume is None:
            self.critical_volume = self.v0 / 2.0
        if self.critical_volume < 0 or self.critical_volume >= self.v0:
            raise ValueError("critical volume must lie in [0, V0)")

    @property
    def v0(self) -> float:
        return target_volume(self.h0)


@dataclass
class RefineStats:
    divisions: int = 0
    saturated: bool = False
    n_elements: int = 0
    projection_volume_change: float = 0.0
    histogram: Optional[tuple[np.ndarray, np.ndarray]] = None


def volume_histogram(mesh: Mesh, v0: float, bins: int = 50, upper: float = 3.0):
    """Counts of ``V / V0`` in ``bins`` equal bins over ``[0, upper]``.

    Values above ``upper`` land in the last bin so that counts always sum to
    the element count.
    """
    r = np.clip(mesh.volumes / v0, 0.0, upper)
    return np.histogram(r, bins=bins, range=(0.0, upper))


class Refiner:
    """Longest-eligible-edge bisection with a lazily updated priority queue.

    An edge is eligible when halving it leaves every child element at or
    above the critical volume. Children only shrink as refinement goes on,
    so an edge found ineligible is dropped from the queue for good.
    """

    def __init__(self, mesh: Mesh, cfg: RefineConfig, shape: Optional[Shape] = None):
        self.mesh = mesh
        self.cfg = cfg
        self.shape = shape if shape is not None else getattr(mesh, "domain", None)
        self.stats = RefineStats(n_elements=mesh.n_elements)
        pts = mesh.points
        self._heap = [(-float(np.linalg.norm(pts[a] - pts[b])), a, b) for a, b in mesh.edge_elems]
        heapq.heapify(self._heap)

    def _push(self, a: int, b: int) -> None:
        a, b = edge_key(a, b)
        d = float(np.linalg.norm(self.mesh._pts[a] - self.mesh._pts[b]))
        heapq.heappush(self._heap, (-d, a, b))

    def _plan(self, a: int, b: int):
        mesh = self.mesh
        sharers = sorted(mesh.edge_elems[(a, b)])
        floor = max(self.cfg.critical_volume, mesh.degenerate_tol)
        if not (mesh.features[a] & mesh.features[b]):
            # an unprojected midpoint halves every sharer exactly
            if 0.5 * min(mesh._vol[e] for e in sharers) < floor:
                return None
        node = classify_new_node(0.5 * (mesh._pts[a] + mesh._pts[b]),
                                 (mesh.node(a), mesh.node(b)), self.shape)
        tets = mesh.tets[sharers]
        corners = mesh.points[tets]
        c1 = corners.copy()
        c1[tets == a] = node.position
        corners[tets == b] = node.position
        v1 = corner_volumes(c1)
        v2 = corner_volumes(corners)
        if min(v1.min(), v2.min()) < floor or not (v1.min() > 0 and v2.min() > 0):
            return None
        m = mesh.n_nodes
        first = np.where(tets == a, m, tets)
        second = np.where(tets == b, m, tets)
        change = float(v1.sum() + v2.sum() - mesh.volumes[sharers].sum())
        return node, sharers, first, second, change

    def divide(self) -> bool:
        """Bisect the longest eligible edge. Returns False once saturated."""
        mesh = self.mesh
        while self._heap:
            _, a, b = heapq.heappop(self._heap)
            if (a, b) not in mesh.edge_elems:
                continue
            plan = self._plan(a, b)
            if plan is None:
                continue
            node, sharers, first, second, change = plan
            m = mesh.add_node(node.position, node.features)
            for e, t1, t2 in zip(sharers, first, second):
                mesh.replace_element(e, t1)
                mesh.add_element(t2)
            self._push(a, m)
            self._push(m, b)
            for t in first:
                for n in t:
                    if n != m and n != b:
                        self._push(m, int(n))
            self.stats.divisions += 1
            self.stats.projection_volume_change += change
            self.stats.n_elements = mesh.n_elements
            return True
        self.stats.saturated = True
        return False


def refine_once(mesh: Mesh, cfg: RefineConfig, shape: Optional[Shape] = None) -> bool:
    """Perform a single division in place; False means the mesh is saturated."""
    return Refiner(mesh, cfg, shape).divide()


def refine_to_target(mesh: Mesh, cfg: RefineConfig, shape: Optional[Shape] = None,
                     callback: Optional[Callable[[Mesh], None]] = None) -> RefineStats:
    """Divide until saturated or ``cfg.max_divisions`` is reached (in place)."""
    refiner = Refiner(mesh, cfg, shape)
    limit = math.inf if cfg.max_divisions is None else cfg.max_divisions
    while refiner.stats.divisions < limit and refiner.divide():
        if callback is not None:
            callback(mesh)
    stats = refiner.stats
    stats.n_elements = mesh.n_elements
    stats.histogram = volume_histogram(mesh, cfg.v0)
    return stats
