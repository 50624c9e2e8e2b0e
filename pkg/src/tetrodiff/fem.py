"""Linear tetrahedral element matrices, sparse assembly and forced values.

All element integrals reduce to products of the constant area-coordinate
gradients, using the exact rule for integrals of powers of ``L_i``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import GeometryError, Mesh, shape_gradients

logger = logging.getLogger(__name__)

__all__ = [
    "ElementMatrices",
    "FieldVector",
    "SparseSystem",
    "SolverError",
    "element_matrices",
    "element_gradients",
    "assemble",
    "stiffness_matrix",
    "mass_matrix",
    "convection_matrix",
    "drift_matrix",
    "apply_forced_bc",
    "linear_solve",
    "Factorized",
    "dump_coo",
]

SOLVER_TOL = 1e-10

_MASS_PATTERN = (np.ones((4, 4)) + np.eye(4)) / 20.0


class SolverError(RuntimeError):
    """Linear solve did not reach the requested residual."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (relative residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class ElementMatrices:
    """Element integrals of one tetrahedron.

    ``K_conv_collapsed[b, c]`` equals ``K_conv[a, b, c]`` for every ``a``;
    the full three-index array is available through :attr:`K_conv`.
    """

    K_tilde: np.ndarray
    K_mass: np.ndarray
    K_conv_collapsed: np.ndarray
    volume: float

    @property
    def K_conv(self) -> np.ndarray:
        return np.broadcast_to(self.K_conv_collapsed, (4, 4, 4)).copy()


@dataclass
class FieldVector:
    """Nodal values tagged with the quantity they represent."""

    values: np.ndarray
    role: str = "generic"

    ROLES = ("phi", "n_plus", "n_minus", "generic")

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.role not in self.ROLES:
            raise ValueError(f"unknown field role {self.role!r}")
        if self.values.ndim != 1 or not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be a finite 1-D array")

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def __len__(self) -> int:
        return len(self.values)


@dataclass
class SparseSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    constrained: dict = field(default_factory=dict)

    def __post_init__(self):
        self.matrix = sp.csr_matrix(self.matrix)
        self.rhs = np.asarray(self.rhs, dtype=float)
        n, m = self.matrix.shape
        if n != m or len(self.rhs) != n:
            raise ValueError("matrix must be square and match the rhs length")


def element_gradients(mesh: Mesh) -> tuple[np.ndarray, np.ndarray]:
    """Area-coordinate gradients and volumes for all elements, checked."""
    grads, vol = shape_gradients(mesh.points, mesh.tets)
    bad = np.flatnonzero(vol <= mesh.degenerate_tol)
    if len(bad):
        raise GeometryError(f"degenerate or inverted elements: {bad[:10].tolist()}")
    return grads, vol


def element_matrices(element: int, mesh: Mesh) -> ElementMatrices:
    p = mesh.points[mesh.tets[element]]
    grads, vol = shape_gradients(p, np.arange(4)[None])
    v = float(vol[0])
    if v <= mesh.degenerate_tol:
        raise GeometryError(f"element {element} is degenerate (V={v:.3e})")
    g = grads[0]
    gg = g @ g.T
    return ElementMatrices(K_tilde=v * gg, K_mass=v * _MASS_PATTERN,
                           K_conv_collapsed=0.25 * v * gg, volume=v)


def assemble(mesh: Mesh, contribution: Union[np.ndarray, Callable[[int], np.ndarray]]) -> sp.csr_matrix:
    """Scatter-add per-element 4x4 blocks into an M x M CSR matrix.

    ``contribution`` is either an (E, 4, 4) array or a callable returning
    the block of one element. Duplicates are summed in element order.
    """
    tets = mesh.tets
    if callable(contribution):
        blocks = np.stack([contribution(e) for e in range(len(tets))]) if len(tets) else np.zeros((0, 4, 4))
    else:
        blocks = np.asarray(contribution, dtype=float)
    if blocks.shape != (len(tets), 4, 4):
        raise ValueError(f"expected ({len(tets)}, 4, 4) element blocks, got {blocks.shape}")
    rows = np.repeat(tets, 4, axis=1).ravel()
    cols = np.tile(tets, (1, 4)).ravel()
    m = mesh.n_nodes
    return sp.csr_matrix((blocks.ravel(), (rows, cols)), shape=(m, m))


def stiffness_matrix(mesh: Mesh, grads=None, vol=None) -> sp.csr_matrix:
    if grads is None:
        grads, vol = element_gradients(mesh)
    return assemble(mesh, vol[:, None, None] * np.einsum("eik,ejk->eij", grads, grads))


def mass_matrix(mesh: Mesh, vol=None) -> sp.csr_matrix:
    if vol is None:
        _, vol = element_gradients(mesh)
    return assemble(mesh, vol[:, None, None] * _MASS_PATTERN)


def convection_matrix(mesh: Mesh, phi: np.ndarray, grads=None, vol=None) -> sp.csr_matrix:
    """Matrix ``C`` with ``(C n)_b = sum_{a,c} K_conv[a, b, c] n_a phi_c``.

    On each element the entry ``(b, a)`` is ``V/4 * grad L_b . grad phi``,
    the same for all four ``a``.
    """
    if grads is None:
        grads, vol = element_gradients(mesh)
    gphi = np.einsum("eck,ec->ek", grads, np.asarray(phi)[mesh.tets])
    col = 0.25 * vol[:, None] * np.einsum("ebk,ek->eb", grads, gphi)
    return assemble(mesh, np.repeat(col[:, :, None], 4, axis=2))


def drift_matrix(mesh: Mesh, n: np.ndarray, grads=None, vol=None) -> sp.csr_matrix:
    """Matrix ``B`` with ``(B phi)_b = sum_{a,c} K_conv[a, b, c] n_a phi_c``.

    This is the convection term seen as a function of the potential, so
    ``B(n) phi == C(phi) n``.
    """
    if grads is None:
        grads, vol = element_gradients(mesh)
    nsum = np.asarray(n)[mesh.tets].sum(axis=1)
    w = 0.25 * vol * nsum
    return assemble(mesh, w[:, None, None] * np.einsum("eik,ejk->eij", grads, grads))


def _normalise_bc(bc) -> dict[int, float]:
    if bc is None:
        return {}
    items = bc.items() if isinstance(bc, Mapping) else bc
    out: dict[int, float] = {}
    for node, value in items:
        node, value = int(node), float(value)
        if node in out and out[node] != value:
            raise ValueError(f"conflicting forced values for node {node}: {out[node]} and {value}")
        out[node] = value
    return out


def apply_forced_bc(system: SparseSystem, bc) -> SparseSystem:
    """Symmetric elimination of forced nodal values.

    Constrained rows and columns are cleared, the diagonal set to one and
    the column contributions moved to the right-hand side, so an SPD
    matrix stays SPD. ``bc`` is a mapping or iterable of ``(node, value)``.
    """
    forced = _normalise_bc(bc)
    if not forced:
        return replace(system, matrix=system.matrix.copy(), rhs=system.rhs.copy(),
                       constrained=dict(system.constrained))
    n = system.matrix.shape[0]
    idx = np.fromiter(forced, dtype=np.int64, count=len(forced))
    if idx.min() < 0 or idx.max() >= n:
        raise ValueError("forced node index out of range")
    val = np.fromiter(forced.values(), dtype=float, count=len(forced))
    u = np.zeros(n)
    u[idx] = val
    A = system.matrix.tocsr()
    rhs = system.rhs - A @ u
    keep = np.ones(n)
    keep[idx] = 0.0
    D = sp.diags(keep)
    A = (D @ A @ D + sp.diags(1.0 - keep)).tocsr()
    A.eliminate_zeros()
    rhs[idx] = val
    constrained = dict(system.constrained)
    constrained.update(forced)
    return SparseSystem(A, rhs, constrained)


def _check_residual(A, x, b, tol) -> float:
    bnorm = np.linalg.norm(b)
    res = np.linalg.norm(A @ x - b)
    return res / bnorm if bnorm > 0 else res


def linear_solve(system: SparseSystem, tol: float = SOLVER_TOL, method: str = "direct",
                 role: str = "generic") -> FieldVector:
    """Solve and verify ``||Ax - b|| / ||b|| <= tol``.

    ``method`` is ``"direct"`` (sparse LU) or ``"cg"`` (conjugate gradients
    with Jacobi preconditioning, for SPD systems).
    """
    A, b = system.matrix, system.rhs
    if method == "direct":
        x = spla.spsolve(A.tocsc(), b)
    elif method == "cg":
        d = A.diagonal()
        precond = sp.diags(np.where(d != 0, 1.0 / d, 1.0))
        x, info = spla.cg(A, b, rtol=tol * 0.1, atol=0.0, maxiter=10 * A.shape[0], M=precond)
        if info != 0:
            raise SolverError(f"cg stopped with info={info}", _check_residual(A, x, b, tol))
    else:
        raise ValueError(f"unknown solver method {method!r}")
    if not np.all(np.isfinite(x)):
        raise SolverError("solution is not finite (singular matrix?)", float("inf"))
    r = _check_residual(A, x, b, tol)
    if r > tol:
        raise SolverError("residual above tolerance", r)
    logger.debug("linear solve n=%d residual=%.2e", len(b), r)
    return FieldVector(x, role)


class Factorized:
    """Sparse LU of a constrained matrix, reused across right-hand sides."""

    def __init__(self, matrix, tol: float = SOLVER_TOL):
        self.matrix = sp.csc_matrix(matrix)
        self.tol = tol
        self._lu = spla.splu(self.matrix)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        x = self._lu.solve(np.asarray(rhs, dtype=float))
        r = _check_residual(self.matrix, x, rhs, self.tol)
        if not r <= self.tol:
            raise SolverError("residual above tolerance", r)
        return x


def dump_coo(matrix, path) -> None:
    """Write ``row col value`` lines, one per stored entry."""
    coo = sp.coo_matrix(matrix)
    with open(path, "w") as fh:
        fh.write(f"# shape {coo.shape[0]} {coo.shape[1]} nnz {coo.nnz}\n")
        for r, c, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{r} {c} {v:.17g}\n")
