"""Laplace, diffusion and electrodiffusion drivers.

Boundary data are given as a mapping ``{node: value}`` or as a callable
``g(points) -> values`` that is evaluated on every outer node.

The electrodiffusion system eliminates the potential: for given densities
``phi`` solves ``eps K phi = |z| e M (n+ - n-)``, and the two continuity
residuals

    F(n) = (k C(phi) + D K + M/dt) n - M n_prev / dt

are driven to zero by Newton's method. The exact Jacobian includes the
dependence of ``phi`` on ``n``; it is applied by solving the sparse
bordered system in ``(dn+, dn-, dphi)`` instead of forming the dense
inverse of ``K``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fem import (
    FieldVector,
    Factorized,
    SparseSystem,
    SolverError,
    apply_forced_bc,
    convection_matrix,
    drift_matrix,
    element_gradients,
    linear_solve,
    mass_matrix,
    stiffness_matrix,
)
from .geometry import Mesh

logger = logging.getLogger(__name__)

__all__ = [
    "PhysicalParams",
    "TimeScheme",
    "FieldState",
    "FluxField",
    "PNPBoundary",
    "Trajectory",
    "NewtonError",
    "boundary_values",
    "plane_boundary",
    "solve_laplace",
    "DiffusionStepper",
    "step_diffusion",
    "solve_diffusion",
    "PNPOperators",
    "pnp_phi_solve",
    "pnp_residual",
    "pnp_jacobian",
    "newton_pnp_step",
    "solve_electrodiffusion",
    "compute_flux",
    "average_flux",
]

NEWTON_TOL = 1e-9
MAX_NEWTON_ITERS = 25

BoundaryData = Union[Mapping[int, float], Callable[[np.ndarray], np.ndarray]]


@dataclass(frozen=True)
class PhysicalParams:
    """Coefficients of the electrodiffusion system (dimensionless).

    ``k_plus`` and ``k_minus`` are the drift multipliers ``D z e / kT`` of
    each species, signs included.
    """

    D_plus: float = 1.0
    D_minus: float = 1.0
    k_plus: float = 0.0
    k_minus: float = 0.0
    z: float = 1.0
    e_charge: float = 1.0
    eps: float = 1.0

    def __post_init__(self):
        if self.D_plus <= 0 or self.D_minus <= 0:
            raise ValueError("diffusion coefficients must be positive")
        if self.eps <= 0:
            raise ValueError("eps must be positive")

    def species(self, name: str) -> tuple[float, float]:
        """``(D, k)`` of ``"plus"`` or ``"minus"``."""
        if name in ("plus", "+", "n_plus"):
            return self.D_plus, self.k_plus
        if name in ("minus", "-", "n_minus"):
            return self.D_minus, self.k_minus
        raise ValueError(f"unknown species {name!r}")


@dataclass(frozen=True)
class TimeScheme:
    dt: float
    beta: float = 1.0
    n_steps: int = 1

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        if self.n_steps < 0:
            raise ValueError("n_steps must be non-negative")


@dataclass
class FieldState:
    n_plus: np.ndarray
    n_minus: np.ndarray
    phi: np.ndarray
    step_index: int = 0
    time: float = 0.0
    residual_trace: list = field(default_factory=list)  # ||F||_inf per Newton iteration

    def __post_init__(self):
        self.n_plus = np.array(self.n_plus, dtype=float)
        self.n_minus = np.array(self.n_minus, dtype=float)
        self.phi = np.array(self.phi, dtype=float)
        if not len(self.n_plus) == len(self.n_minus) == len(self.phi):
            raise ValueError("state vectors must have equal length")

    def copy(self) -> "FieldState":
        return FieldState(self.n_plus, self.n_minus, self.phi, self.step_index, self.time,
                          list(self.residual_trace))


@dataclass(frozen=True)
class FluxField:
    """Element-wise constant flux vectors, shape (E, 3)."""

    j: np.ndarray

    @property
    def jx(self) -> np.ndarray:
        return self.j[:, 0]

    @property
    def jy(self) -> np.ndarray:
        return self.j[:, 1]

    @property
    def jz(self) -> np.ndarray:
        return self.j[:, 2]


@dataclass
class PNPBoundary:
    n_plus: dict
    n_minus: dict
    phi: dict

    @classmethod
    def uniform(cls, mesh: Mesh, g: BoundaryData) -> "PNPBoundary":
        """Same forced values for both densities and the potential."""
        values = boundary_values(mesh, g)
        return cls(dict(values), dict(values), dict(values))


@dataclass
class Trajectory:
    times: list = field(default_factory=list)
    values: list = field(default_factory=list)

    def append(self, t: float, v) -> None:
        self.times.append(float(t))
        self.values.append(v)

    def __len__(self) -> int:
        return len(self.times)


class NewtonError(RuntimeError):
    def __init__(self, message: str, trace: Sequence[float]):
        super().__init__(f"{message}; residual trace {list(trace)}")
        self.trace = list(trace)


def boundary_values(mesh: Mesh, g: BoundaryData) -> dict[int, float]:
    """Forced values on all outer nodes from a mapping or a callable."""
    if callable(g):
        nodes = np.flatnonzero(mesh.outer)
        vals = np.asarray(g(mesh.points[nodes]), dtype=float)
        vals = np.broadcast_to(vals, nodes.shape)
        return {int(i): float(v) for i, v in zip(nodes, vals)}
    return {int(k): float(v) for k, v in g.items()}


def _planar_features(mesh: Mesh, tol: float) -> dict[str, tuple[int, float]]:
    """Features whose nodes all share one coordinate: ``{feature: (axis, position)}``."""
    members: dict[str, list[int]] = {}
    for i, f in enumerate(mesh.features):
        for name in f:
            members.setdefault(name, []).append(i)
    out = {}
    for name, nodes in members.items():
        p = mesh.points[nodes]
        for axis in range(3):
            if np.ptp(p[:, axis]) <= tol:
                out[name] = (axis, float(p[:, axis].mean()))
                break
    return out


def plane_boundary(mesh: Mesh, planes: Sequence[tuple[int, float, float]], rest: Optional[float] = None,
                   junction: str = "mean") -> dict[int, float]:
    """Forced values from planar boundary faces.

    ``planes`` holds ``(axis, position, value)``; a boundary face lying in a
    listed plane takes its value (first match), other faces take ``rest``.
    Nodes shared by several faces (edges, corners) get the mean of the
    face values with ``junction="mean"``, or the value of the first listed
    plane they lie on with ``junction="first"``.
    """
    tol = 1e-9 * mesh.scale + 1e-12
    planar = _planar_features(mesh, tol)

    def face_value(name: str) -> Optional[float]:
        if name in planar:
            axis, pos = planar[name]
            for a, p, v in planes:
                if a == axis and abs(p - pos) <= tol:
                    return v
        return rest

    out: dict[int, float] = {}
    for i in np.flatnonzero(mesh.outer):
        names = sorted(mesh.features[i])
        if junction == "first":
            v = None
            for a, p, val in planes:
                if abs(mesh.points[i, a] - p) <= tol:
                    v = val
                    break
            v = rest if v is None else v
        elif junction == "mean":
            vals = [face_value(n) for n in names]
            v = None if any(x is None for x in vals) else float(np.mean(vals))
        else:
            raise ValueError(f"unknown junction rule {junction!r}")
        if v is not None:
            out[int(i)] = float(v)
    return out


def _require_cover(mesh: Mesh, bc: Mapping[int, float]) -> None:
    missing = sorted(set(np.flatnonzero(mesh.outer).tolist()) - set(bc))
    if missing:
        raise ValueError(f"boundary data missing for {len(missing)} outer nodes, e.g. {missing[:10]}")


def _bc_arrays(bc: Mapping[int, float]) -> tuple[np.ndarray, np.ndarray]:
    idx = np.fromiter(bc, dtype=np.int64, count=len(bc))
    val = np.fromiter(bc.values(), dtype=float, count=len(bc))
    order = np.argsort(idx)
    return idx[order], val[order]


def solve_laplace(mesh: Mesh, bc: BoundaryData, tol: float = 1e-10, method: str = "direct") -> FieldVector:
    """Harmonic field with forced values on every outer node."""
    values = boundary_values(mesh, bc)
    _require_cover(mesh, values)
    K = stiffness_matrix(mesh)
    system = apply_forced_bc(SparseSystem(K, np.zeros(mesh.n_nodes)), values)
    return linear_solve(system, tol=tol, method=method, role="phi")


class _Constrained:
    """Constant matrix with forced rows and columns eliminated, prefactorised."""

    def __init__(self, A: sp.spmatrix, bc: Mapping[int, float]):
        self.idx, self.val = _bc_arrays(bc)
        n = A.shape[0]
        u = np.zeros(n)
        u[self.idx] = self.val
        self.correction = A @ u
        constrained = apply_forced_bc(SparseSystem(A, np.zeros(n)), bc)
        self.lu = Factorized(constrained.matrix)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        b = rhs - self.correction
        b[self.idx] = self.val
        return self.lu.solve(b)


class DiffusionStepper:
    """Repeated steps of ``(M/dt + beta K) u_n = (M/dt - (1-beta) K) u_{n-1}``.

    ``beta = 0`` is the explicit scheme with the consistent mass matrix and
    is only stable for small ``dt``; ``beta = 1`` is backward Euler.
    """

    def __init__(self, mesh: Mesh, D: float, scheme: TimeScheme, bc: BoundaryData):
        if D < 0:
            raise ValueError("D must be non-negative")
        grads, vol = element_gradients(mesh)
        K = D * stiffness_matrix(mesh, grads, vol)
        M = mass_matrix(mesh, vol) / scheme.dt
        self.scheme = scheme
        self.bc = boundary_values(mesh, bc)
        _require_cover(mesh, self.bc)
        self.rhs_matrix = (M - (1.0 - scheme.beta) * K).tocsr()
        self._lhs = _Constrained((M + scheme.beta * K).tocsr(), self.bc)

    def step(self, u: np.ndarray) -> np.ndarray:
        return self._lhs.solve(self.rhs_matrix @ np.asarray(u, dtype=float))


def step_diffusion(state, mesh: Mesh, D: float, scheme: TimeScheme, bc: BoundaryData) -> FieldVector:
    return FieldVector(DiffusionStepper(mesh, D, scheme, bc).step(np.asarray(state)))


def solve_diffusion(g, mesh: Mesh, D: float, scheme: TimeScheme, bc: BoundaryData,
                    snapshot_every: int = 1) -> Trajectory:
    """March ``scheme.n_steps`` steps from ``g`` (array or callable of points).

    The initial field is recorded first, then every ``snapshot_every``-th
    step and always the last one. Forced values overwrite ``g`` on the
    boundary from the first step on.
    """
    u = np.asarray(g(mesh.points) if callable(g) else g, dtype=float).copy()
    stepper = DiffusionStepper(mesh, D, scheme, bc)
    if scheme.beta == 0.0:
        logger.warning("explicit diffusion scheme (beta = 0) is only conditionally stable")
    traj = Trajectory()
    traj.append(0.0, u.copy())
    for n in range(1, scheme.n_steps + 1):
        u = stepper.step(u)
        if n % snapshot_every == 0 or n == scheme.n_steps:
            traj.append(n * scheme.dt, u.copy())
    return traj


class PNPOperators:
    """Time-independent matrices and factorisations of one PNP problem."""

    def __init__(self, mesh: Mesh, params: PhysicalParams, scheme: TimeScheme, bc: PNPBoundary):
        if scheme.beta != 1.0:
            raise ValueError("the electrodiffusion system is integrated with backward Euler (beta = 1)")
        self.mesh, self.params, self.scheme, self.bc = mesh, params, scheme, bc
        for name in ("n_plus", "n_minus", "phi"):
            _require_cover(mesh, getattr(bc, name))
        self.grads, self.vol = element_gradients(mesh)
        self.K = stiffness_matrix(mesh, self.grads, self.vol)
        self.M = mass_matrix(mesh, self.vol)
        self.charge = abs(params.z) * params.e_charge
        self.poisson = _Constrained((params.eps * self.K).tocsr(), bc.phi)
        self.bc_idx = {name: _bc_arrays(getattr(bc, name)) for name in ("n_plus", "n_minus", "phi")}

    def phi(self, n_plus: np.ndarray, n_minus: np.ndarray) -> np.ndarray:
        return self.poisson.solve(self.charge * (self.M @ (n_plus - n_minus)))

    def continuity(self, phi: np.ndarray, species: str) -> sp.csr_matrix:
        D, k = self.params.species(species)
        A = D * self.K + self.M / self.scheme.dt
        if k != 0.0:
            A = A + k * convection_matrix(self.mesh, phi, self.grads, self.vol)
        return A.tocsr()

    def drift(self, n: np.ndarray, species: str) -> sp.csr_matrix:
        _, k = self.params.species(species)
        return k * drift_matrix(self.mesh, n, self.grads, self.vol)

    def residual(self, n_plus, n_minus, phi, prev: FieldState) -> tuple[np.ndarray, np.ndarray]:
        out = []
        for species, n, n_old, key in (("plus", n_plus, prev.n_plus, "n_plus"),
                                       ("minus", n_minus, prev.n_minus, "n_minus")):
            F = self.continuity(phi, species) @ n - self.M @ n_old / self.scheme.dt
            idx, val = self.bc_idx[key]
            F[idx] = n[idx] - val
            out.append(F)
        return out[0], out[1]


def pnp_phi_solve(n_plus, n_minus, mesh: Mesh, params: PhysicalParams, bc_phi: BoundaryData) -> FieldVector:
    """Potential from ``eps K phi = |z| e M (n+ - n-)`` with forced values."""
    bc = boundary_values(mesh, bc_phi)
    _require_cover(mesh, bc)
    M = mass_matrix(mesh)
    rhs = abs(params.z) * params.e_charge * (M @ (np.asarray(n_plus) - np.asarray(n_minus)))
    system = apply_forced_bc(SparseSystem(params.eps * stiffness_matrix(mesh), rhs), bc)
    return linear_solve(system, role="phi")


def pnp_residual(state: FieldState, prev: FieldState, mesh: Mesh, params: PhysicalParams,
                 scheme: TimeScheme, bc: PNPBoundary, ops: Optional[PNPOperators] = None):
    """Continuity residuals and the Poisson consistency residual.

    Returns
    -------
    F_plus, F_minus : ndarray
        Continuity residuals; forced rows hold ``n - value``.
    r_phi : ndarray
        ``eps K phi - |z| e M (n+ - n-)`` on free rows, ``phi - value`` on
        forced ones.
    """
    ops = ops or PNPOperators(mesh, params, scheme, bc)
    m = mesh.n_nodes
    for v in (state.n_plus, state.n_minus, state.phi, prev.n_plus, prev.n_minus):
        if len(v) != m:
            raise ValueError(f"state vector of length {len(v)} on a mesh with {m} nodes")
    Fp, Fm = ops.residual(state.n_plus, state.n_minus, state.phi, prev)
    r_phi = params.eps * (ops.K @ state.phi) - ops.charge * (ops.M @ (state.n_plus - state.n_minus))
    idx, val = ops.bc_idx["phi"]
    r_phi[idx] = state.phi[idx] - val
    return Fp, Fm, r_phi


def _free_mask(m: int, idx: np.ndarray) -> np.ndarray:
    keep = np.ones(m)
    keep[idx] = 0.0
    return keep


def pnp_jacobian(state: FieldState, mesh: Mesh, params: PhysicalParams, scheme: TimeScheme,
                 bc: PNPBoundary, mode: str = "exact", ops: Optional[PNPOperators] = None) -> np.ndarray:
    """Dense Jacobian of the reduced residual ``(F+, F-)(n+, n-)``.

    ``phi`` is recomputed from the densities, so in ``"exact"`` mode the
    blocks carry ``k B(n) dphi/dn`` with ``dphi/dn+ = -dphi/dn- = S``,
    ``S = (eps K)^-1 |z| e M`` restricted to free potential nodes.
    ``"frozen"`` mode keeps only the frozen-potential part ``A(phi)``.
    Intended for small meshes.
    """
    ops = ops or PNPOperators(mesh, params, scheme, bc)
    m = mesh.n_nodes
    phi = ops.phi(state.n_plus, state.n_minus)
    Ap = ops.continuity(phi, "plus").toarray()
    Am = ops.continuity(phi, "minus").toarray()
    J = np.zeros((2 * m, 2 * m))
    J[:m, :m] = Ap
    J[m:, m:] = Am
    if mode == "exact":
        idx_phi, _ = ops.bc_idx["phi"]
        Kc = params.eps * ops.K.toarray()
        Kc[idx_phi, :] = 0.0
        Kc[:, idx_phi] = 0.0
        Kc[idx_phi, idx_phi] = 1.0
        Mc = ops.charge * ops.M.toarray()
        Mc[idx_phi, :] = 0.0
        S = np.linalg.solve(Kc, Mc)
        Bp = ops.drift(state.n_plus, "plus").toarray() @ S
        Bm = ops.drift(state.n_minus, "minus").toarray() @ S
        J[:m, :m] += Bp
        J[:m, m:] -= Bp
        J[m:, :m] += Bm
        J[m:, m:] -= Bm
    elif mode != "frozen":
        raise ValueError(f"unknown Jacobian mode {mode!r}")
    for offset, key in ((0, "n_plus"), (m, "n_minus")):
        idx, _ = ops.bc_idx[key]
        J[offset + idx, :] = 0.0
        J[offset + idx, offset + idx] = 1.0
    return J


def _newton_update(ops: PNPOperators, n_plus, n_minus, phi, Fp, Fm, mode: str):
    m = ops.mesh.n_nodes
    Ap = ops.continuity(phi, "plus")
    Am = ops.continuity(phi, "minus")
    ip, _ = ops.bc_idx["n_plus"]
    im, _ = ops.bc_idx["n_minus"]
    iphi, _ = ops.bc_idx["phi"]
    fp, fm, fphi = (sp.diags(_free_mask(m, i)) for i in (ip, im, iphi))
    cp, cm, cphi = (sp.diags(1.0 - _free_mask(m, i)) for i in (ip, im, iphi))
    if mode == "frozen":
        dp = spla.spsolve((fp @ Ap + cp).tocsc(), -Fp)
        dm = spla.spsolve((fm @ Am + cm).tocsc(), -Fm)
        return dp, dm
    Bp = fp @ ops.drift(n_plus, "plus")
    Bm = fm @ ops.drift(n_minus, "minus")
    P = fphi @ (ops.params.eps * ops.K) + cphi
    Q = ops.charge * (fphi @ ops.M)
    J = sp.bmat([[fp @ Ap + cp, None, Bp],
                 [None, fm @ Am + cm, Bm],
                 [-Q, Q, P]], format="csc")
    rhs = np.concatenate([-Fp, -Fm, np.zeros(m)])
    d = spla.spsolve(J, rhs)
    return d[:m], d[m:2 * m]


def newton_pnp_step(state: FieldState, prev: FieldState, mesh: Mesh, params: PhysicalParams,
                    scheme: TimeScheme, bc: PNPBoundary, tol: float = NEWTON_TOL,
                    max_iters: int = MAX_NEWTON_ITERS, jacobian: str = "exact",
                    ops: Optional[PNPOperators] = None) -> FieldState:
    """One backward-Euler step solved by Newton's method.

    ``state`` is the initial guess; forced values are imposed on it before
    the first iteration. Converged when ``max(|F+|, |F-|) <= tol``.
    """
    ops = ops or PNPOperators(mesh, params, scheme, bc)
    n_plus = state.n_plus.copy()
    n_minus = state.n_minus.copy()
    for key, n in (("n_plus", n_plus), ("n_minus", n_minus)):
        idx, val = ops.bc_idx[key]
        n[idx] = val
    trace = []
    for it in range(max_iters + 1):
        phi = ops.phi(n_plus, n_minus)
        Fp, Fm = ops.residual(n_plus, n_minus, phi, prev)
        norm = float(max(np.abs(Fp).max(), np.abs(Fm).max()))
        trace.append(norm)
        logger.debug("newton iteration %d residual %.3e", it, norm)
        if norm <= tol:
            return FieldState(n_plus, n_minus, phi, prev.step_index + 1,
                              (prev.step_index + 1) * scheme.dt, trace)
        if it == max_iters or not np.isfinite(norm):
            break
        dp, dm = _newton_update(ops, n_plus, n_minus, phi, Fp, Fm, jacobian)
        n_plus += dp
        n_minus += dm
    raise NewtonError(f"Newton did not reach {tol:g} in {max_iters} iterations", trace)


def solve_electrodiffusion(initial: FieldState, mesh: Mesh, params: PhysicalParams,
                           scheme: TimeScheme, bc: PNPBoundary, tol: float = NEWTON_TOL,
                           jacobian: str = "exact") -> list[FieldState]:
    """March ``scheme.n_steps`` steps, warm-starting Newton from the last state.

    The returned list starts with ``initial`` (forced values applied and
    the potential solved for its densities).
    """
    ops = PNPOperators(mesh, params, scheme, bc)
    first = initial.copy()
    for key in ("n_plus", "n_minus"):
        idx, val = ops.bc_idx[key]
        getattr(first, key)[idx] = val
    first.phi = ops.phi(first.n_plus, first.n_minus)
    states = [first]
    for _ in range(scheme.n_steps):
        prev = states[-1]
        nxt = newton_pnp_step(prev, prev, mesh, params, scheme, bc, tol=tol, jacobian=jacobian, ops=ops)
        logger.info("step %d t=%.4g newton iterations %d", nxt.step_index, nxt.time,
                    len(nxt.residual_trace) - 1)
        states.append(nxt)
    return states


def compute_flux(state: FieldState, mesh: Mesh, params: PhysicalParams, species: str = "plus") -> FluxField:
    """Element flux ``-(D grad n + k nbar grad phi)``, ``nbar`` the element mean."""
    D, k = params.species(species)
    n = state.n_plus if species in ("plus", "+", "n_plus") else state.n_minus
    grads, _ = element_gradients(mesh)
    tets = mesh.tets
    gn = np.einsum("eik,ei->ek", grads, n[tets])
    gphi = np.einsum("eik,ei->ek", grads, state.phi[tets])
    nbar = n[tets].mean(axis=1)
    return FluxField(-(D * gn + k * nbar[:, None] * gphi))


def average_flux(flux: FluxField, mesh: Mesh, center, radius: float) -> np.ndarray:
    """Volume-weighted mean flux over elements with centroid within ``radius`` of ``center``.

    Element fluxes carry mesh-scale noise; the ball average is the point
    estimate used for the flux at ``center``.
    """
    cent = mesh.points[mesh.tets].mean(axis=1)
    sel = np.linalg.norm(cent - np.asarray(center, dtype=float), axis=1) <= radius
    if not sel.any():
        raise ValueError(f"no element centroid within {radius:g} of {tuple(center)}")
    v = mesh.volumes[sel]
    return (flux.j[sel] * v[:, None]).sum(axis=0) / v.sum()
