"""Mesh persistence (TETMESH v1), VTK export and CSV reports.

TETMESH v1 is plain text::

    TETMESH v1
    nodes <N>
    <id> <x> <y> <z> <inner|outer> <feature>
    ...
    elements <E>
    <id> <n1> <n2> <n3> <n4>

Lines starting with ``#`` are comments and may appear anywhere.
Coordinates use 17 significant digits, so a write/read cycle is exact.
``feature`` is ``-`` for inner nodes, otherwise the node's features
joined by ``&``.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .geometry import INNER, Mesh, feature_label

__all__ = [
    "MeshFormatError",
    "write_mesh",
    "read_mesh",
    "write_vtk",
    "write_histogram",
    "histogram",
    "write_node_csv",
    "write_element_csv",
]

MAGIC = "TETMESH v1"


class MeshFormatError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


def _header(fh, seed: Optional[int], extra: Optional[Mapping] = None) -> None:
    if seed is not None:
        fh.write(f"# seed={seed}\n")
    for k, v in (extra or {}).items():
        fh.write(f"# {k}={v}\n")


def write_mesh(mesh: Mesh, path, seed: Optional[int] = None, meta: Optional[Mapping] = None) -> None:
    with open(path, "w") as fh:
        fh.write(MAGIC + "\n")
        _header(fh, seed, meta)
        fh.write(f"nodes {mesh.n_nodes}\n")
        for i, (p, f) in enumerate(zip(mesh.points, mesh.features)):
            cls = "outer" if f else "inner"
            fh.write(f"{i} {p[0]:.17g} {p[1]:.17g} {p[2]:.17g} {cls} {feature_label(f)}\n")
        fh.write(f"elements {mesh.n_elements}\n")
        for e, t in enumerate(mesh.tets):
            fh.write(f"{e} {t[0]} {t[1]} {t[2]} {t[3]}\n")


def _content_lines(path) -> Iterable[tuple[int, str]]:
    with open(path) as fh:
        for no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if line and not line.startswith("#"):
                yield no, line


def _count(it, keyword: str, last: int) -> tuple[int, int]:
    try:
        no, line = next(it)
    except StopIteration:
        raise MeshFormatError(f"expected '{keyword} <count>', got end of file", last + 1) from None
    parts = line.split()
    if len(parts) != 2 or parts[0] != keyword:
        raise MeshFormatError(f"expected '{keyword} <count>'", no)
    try:
        n = int(parts[1])
    except ValueError:
        raise MeshFormatError(f"bad {keyword} count {parts[1]!r}", no) from None
    if n < 0:
        raise MeshFormatError(f"negative {keyword} count", no)
    return n, no


def read_mesh(path) -> Mesh:
    """Parse a TETMESH v1 file; errors carry the offending line number."""
    it = iter(_content_lines(path))
    try:
        no, line = next(it)
    except StopIteration:
        raise MeshFormatError("empty file", 1) from None
    if line != MAGIC:
        raise MeshFormatError(f"expected header {MAGIC!r}", no)
    n_nodes, no = _count(it, "nodes", no)
    points = np.empty((n_nodes, 3))
    features: list[frozenset] = []
    for i in range(n_nodes):
        try:
            no, line = next(it)
        except StopIteration:
            raise MeshFormatError(f"file ends after {i} of {n_nodes} nodes", no + 1) from None
        parts = line.split()
        if len(parts) != 6:
            raise MeshFormatError("node line needs 'id x y z class feature'", no)
        try:
            idx = int(parts[0])
            points[i] = [float(v) for v in parts[1:4]]
        except ValueError:
            raise MeshFormatError("malformed node line", no) from None
        if idx != i:
            raise MeshFormatError(f"node id {idx} out of sequence (expected {i})", no)
        cls, feat = parts[4], parts[5]
        if cls == "inner":
            if feat != "-":
                raise MeshFormatError("inner node with a feature", no)
            features.append(INNER)
        elif cls == "outer":
            if feat == "-":
                raise MeshFormatError("outer node without a feature", no)
            features.append(frozenset(feat.split("&")))
        else:
            raise MeshFormatError(f"unknown node class {cls!r}", no)
    n_elems, no = _count(it, "elements", no)
    tets = np.empty((n_elems, 4), dtype=np.int64)
    for e in range(n_elems):
        try:
            no, line = next(it)
        except StopIteration:
            raise MeshFormatError(f"file ends after {e} of {n_elems} elements", no + 1) from None
        parts = line.split()
        if len(parts) != 5:
            raise MeshFormatError("element line needs 'id n1 n2 n3 n4'", no)
        try:
            vals = [int(v) for v in parts]
        except ValueError:
            raise MeshFormatError("malformed element line", no) from None
        if vals[0] != e:
            raise MeshFormatError(f"element id {vals[0]} out of sequence (expected {e})", no)
        if min(vals[1:]) < 0 or max(vals[1:]) >= n_nodes:
            raise MeshFormatError("element references a missing node", no)
        tets[e] = vals[1:]
    extra = next(it, None)
    if extra is not None:
        raise MeshFormatError("unexpected content after the last element", extra[0])
    return Mesh(points, tets, features)


def write_vtk(mesh: Mesh, path, point_data: Optional[Mapping[str, np.ndarray]] = None,
              cell_data: Optional[Mapping[str, np.ndarray]] = None, title: str = "tetrodiff mesh") -> None:
    """Legacy ASCII unstructured grid with tetrahedral cells (type 10)."""
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write(title.replace("\n", " ")[:255] + "\n")
        fh.write("ASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {mesh.n_nodes} double\n")
        for p in mesh.points:
            fh.write(f"{p[0]:.17g} {p[1]:.17g} {p[2]:.17g}\n")
        fh.write(f"CELLS {mesh.n_elements} {5 * mesh.n_elements}\n")
        for t in mesh.tets:
            fh.write(f"4 {t[0]} {t[1]} {t[2]} {t[3]}\n")
        fh.write(f"CELL_TYPES {mesh.n_elements}\n")
        fh.write("10\n" * mesh.n_elements)
        for section, data, count in (("POINT_DATA", point_data, mesh.n_nodes),
                                     ("CELL_DATA", cell_data, mesh.n_elements)):
            if not data:
                continue
            fh.write(f"{section} {count}\n")
            for name, values in data.items():
                v = np.asarray(values, dtype=float)
                if len(v) != count:
                    raise ValueError(f"{name}: expected {count} values, got {len(v)}")
                if v.ndim == 1:
                    fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                    fh.write("".join(f"{x:.17g}\n" for x in v))
                else:
                    fh.write(f"VECTORS {name} double\n")
                    fh.write("".join(f"{a:.17g} {b:.17g} {c:.17g}\n" for a, b, c in v))


def histogram(values: np.ndarray, bins: int = 50, upper: float = 3.0) -> tuple[np.ndarray, np.ndarray]:
    """Counts over [0, upper]; values beyond the range land in the end bins."""
    v = np.clip(np.asarray(values, dtype=float), 0.0, upper)
    return np.histogram(v, bins=bins, range=(0.0, upper))


def write_histogram(values: np.ndarray, path, label: str, bins: int = 50, upper: float = 3.0,
                    seed: Optional[int] = None) -> np.ndarray:
    counts, edges = histogram(values, bins, upper)
    with open(path, "w", newline="") as fh:
        _header(fh, seed, {"quantity": label, "total": int(counts.sum())})
        w = csv.writer(fh)
        w.writerow(["bin_lo", "bin_hi", "count"])
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            w.writerow([f"{lo:.17g}", f"{hi:.17g}", int(c)])
    return counts


def write_node_csv(mesh: Mesh, path, columns: Mapping[str, np.ndarray], seed: Optional[int] = None,
                   nodes: Optional[Sequence[int]] = None, meta: Optional[Mapping] = None) -> None:
    """One row per node: ``node,x,y,z`` followed by the given columns."""
    idx = np.arange(mesh.n_nodes) if nodes is None else np.asarray(nodes, dtype=np.int64)
    cols = {k: np.asarray(v, dtype=float) for k, v in columns.items()}
    with open(path, "w", newline="") as fh:
        _header(fh, seed, meta)
        w = csv.writer(fh)
        w.writerow(["node", "x", "y", "z", *cols])
        pts = mesh.points
        for i in idx:
            w.writerow([int(i), *(f"{c:.17g}" for c in pts[i]), *(f"{v[i]:.17g}" for v in cols.values())])


def write_element_csv(path, columns: Mapping[str, np.ndarray], seed: Optional[int] = None,
                      elements: Optional[Sequence[int]] = None, meta: Optional[Mapping] = None) -> None:
    cols = {k: np.asarray(v, dtype=float) for k, v in columns.items()}
    n = len(next(iter(cols.values()))) if cols else 0
    idx = np.arange(n) if elements is None else np.asarray(elements, dtype=np.int64)
    with open(path, "w", newline="") as fh:
        _header(fh, seed, meta)
        w = csv.writer(fh)
        w.writerow(["element", *cols])
        for e in idx:
            w.writerow([int(e), *(f"{v[e]:.17g}" for v in cols.values())])
