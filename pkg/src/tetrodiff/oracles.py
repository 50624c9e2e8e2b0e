"""Series solutions used as reference values for the solvers.

All functions accept a single point or an (N, 3) array of points and are
vectorised over points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import optimize, special

__all__ = [
    "SeriesConfig",
    "RelativeDifference",
    "CylinderCoeffs",
    "laplace_cube_oracle",
    "point_charge_oracle",
    "diffusion_cube_oracle",
    "cube_tail_bound",
    "bessel_zeros",
    "cylinder_coefficients",
    "benchmark_cylinder_coefficients",
    "diffusion_cylinder_oracle",
    "relative_difference",
]

_CHUNK = 2048


@dataclass(frozen=True)
class SeriesConfig:
    """Truncation of an infinite series.

    ``max_index`` bounds each summation index. For decaying series with
    ``t > 0`` a ``tail_tol`` lets the oracle stop at the smallest odd index
    whose analytic tail bound is below the tolerance.
    """

    max_index: int = 101
    tail_tol: Optional[float] = None

    def __post_init__(self):
        if self.max_index < 1:
            raise ValueError("max_index must be at least 1")


@dataclass(frozen=True)
class RelativeDifference:
    values: np.ndarray
    mean: float
    std: float


def _points(p) -> tuple[np.ndarray, bool]:
    a = np.asarray(p, dtype=float)
    single = a.ndim == 1
    return np.atleast_2d(a), single


def _odd(n: int) -> np.ndarray:
    return np.arange(1, n + 1, 2, dtype=float)


def _sinh_ratio(s: np.ndarray, x: np.ndarray) -> np.ndarray:
    """``sinh(s x) / sinh(s pi)`` without overflow, for 0 <= x <= pi."""
    return np.exp(s * (x - np.pi)) * (-np.expm1(-2.0 * s * x)) / (-np.expm1(-2.0 * s * np.pi))


def laplace_cube_oracle(p, phi0: float = 1.0, cfg: SeriesConfig = SeriesConfig()):
    """Harmonic function on [0, pi]^3, ``phi0`` on the face x = pi, 0 elsewhere."""
    pts, single = _points(p)
    k = _odd(cfg.max_index)
    n, m = (a.ravel() for a in np.meshgrid(k, k, indexing="ij"))
    s = np.sqrt(n * n + m * m)
    out = np.empty(len(pts))
    for lo in range(0, len(pts), _CHUNK):
        x, y, z = pts[lo:lo + _CHUNK].T
        terms = _sinh_ratio(s, x[:, None]) * np.sin(n * y[:, None]) * np.sin(m * z[:, None]) / (n * m)
        out[lo:lo + _CHUNK] = terms.sum(axis=1)
    out *= 16.0 * phi0 / np.pi ** 2
    return float(out[0]) if single else out


def point_charge_oracle(p, charge_pos=(0.0, 0.0, 2.0 * np.pi)):
    """Fundamental solution ``1 / (3 alpha(3) r)``, with ``alpha(3)`` the unit-ball volume."""
    pts, single = _points(p)
    r = np.linalg.norm(pts - np.asarray(charge_pos, dtype=float), axis=1)
    if np.any(r == 0.0):
        raise ZeroDivisionError("oracle evaluated at the charge position")
    alpha3 = math.pi ** 1.5 / math.gamma(2.5)
    out = 1.0 / (3.0 * alpha3 * r)
    return float(out[0]) if single else out


def _cube_coefficient(k: np.ndarray, initial: str) -> np.ndarray:
    # 1-D sine coefficients on [0, pi] of the separable factors of g
    if initial == "constant":
        return 4.0 / (np.pi * k)
    if initial == "polynomial":  # x (pi - x)
        return 8.0 / (np.pi * k ** 3)
    raise ValueError(f"unknown initial condition {initial!r}")


def cube_tail_bound(n: int, t: float, D: float, g: float = 1.0, initial: str = "constant") -> float:
    """Upper bound on the terms dropped when odd indices stop at ``n``."""
    kmax = max(n + 2, int(10.0 / math.sqrt(max(D * t, 1e-300))) + 3)
    k = _odd(kmax + 400)
    w = np.abs(_cube_coefficient(k, initial)) * np.exp(-k * k * D * t)
    full = w.sum()
    tail = w[k > n].sum()
    return float(abs(g) * 3.0 * tail * full * full)


def _cube_truncation(t: float, D: float, g: float, initial: str, cfg: SeriesConfig) -> int:
    if cfg.tail_tol is None or t <= 0.0:
        return cfg.max_index
    for n in range(1, cfg.max_index + 1, 2):
        if cube_tail_bound(n, t, D, g, initial) <= cfg.tail_tol:
            return n
    return cfg.max_index


def diffusion_cube_oracle(p, t: float, g0: float = 1.0, D: float = 1.0,
                          cfg: SeriesConfig = SeriesConfig(), initial: str = "constant"):
    """Zero-boundary diffusion on [0, pi]^3.

    ``initial="constant"`` starts from ``g0`` everywhere; ``"polynomial"``
    from ``g0 * x(pi-x) y(pi-y) z(pi-z)``. Only odd modes contribute.
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    pts, single = _points(p)
    k = _odd(_cube_truncation(t, D, g0, initial, cfg))
    c = _cube_coefficient(k, initial)
    decay = np.exp(-k * k * D * t)
    w = c * decay
    out = np.empty(len(pts))
    for lo in range(0, len(pts), _CHUNK):
        x, y, z = pts[lo:lo + _CHUNK].T
        sx = np.sin(np.outer(x, k)) * w
        sy = np.sin(np.outer(y, k)) * w
        sz = np.sin(np.outer(z, k)) * w
        out[lo:lo + _CHUNK] = sx.sum(axis=1) * sy.sum(axis=1) * sz.sum(axis=1)
    out *= g0
    return float(out[0]) if single else out


def bessel_zeros(n: int, count: int, xtol: float = 1e-14) -> np.ndarray:
    """First ``count`` positive zeros of ``J_n`` by sign-change bracketing and Brent's method."""
    if count <= 0:
        return np.zeros(0)
    f = lambda x: special.jv(n, x)
    zeros = []
    step = 0.25
    a = n + 1e-6 if n > 0 else 1e-6
    fa = f(a)
    while len(zeros) < count:
        b = a + step
        fb = f(b)
        if fa == 0.0:
            zeros.append(a)
        elif fa * fb < 0.0:
            zeros.append(optimize.brentq(f, a, b, xtol=xtol, rtol=4 * np.finfo(float).eps))
        a, fa = b, fb
    return np.array(zeros[:count])


@dataclass(frozen=True)
class CylinderCoeffs:
    """Mode amplitudes ``a[n, m, kz-1]`` and ``b[n, m, kz-1]`` with their Bessel zeros ``k[n, m]``."""

    a: np.ndarray
    b: np.ndarray
    k: np.ndarray


def cylinder_coefficients(g: Callable, r0: float, n_max: int, m_max: int, kz_max: int,
                          quad_points: int = 64) -> CylinderCoeffs:
    """Project ``g(r, theta, z)`` onto the cylinder eigenfunctions by quadrature.

    Gauss-Legendre rules in ``r`` and ``z``, the trapezoid rule in ``theta``
    (exact for the trigonometric factors). ``g`` must vanish on the boundary
    for the expansion to converge uniformly.
    """
    x, w = np.polynomial.legendre.leggauss(quad_points)
    r, wr = 0.5 * r0 * (x + 1.0), 0.5 * r0 * w
    z, wz = 0.5 * np.pi * (x + 1.0), 0.5 * np.pi * w
    nth = max(2 * n_max + 2, 16)
    th = 2.0 * np.pi * np.arange(nth) / nth
    wth = 2.0 * np.pi / nth
    R, TH, Z = np.meshgrid(r, th, z, indexing="ij")
    G = np.asarray(g(R, TH, Z), dtype=float)
    kz = np.arange(1, kz_max + 1)
    sz = np.sin(np.outer(z, kz)) * wz[:, None]  # (Q, K)
    Gz = np.einsum("rtq,qk->rtk", G, sz)
    a = np.zeros((n_max + 1, m_max, kz_max))
    b = np.zeros_like(a)
    k = np.zeros((n_max + 1, m_max))
    for n in range(n_max + 1):
        k[n] = bessel_zeros(n, m_max)
        cos_n = np.cos(n * th) * wth
        sin_n = np.sin(n * th) * wth
        Gc = np.einsum("rtk,t->rk", Gz, cos_n)
        Gs = np.einsum("rtk,t->rk", Gz, sin_n)
        for m in range(m_max):
            J = special.jv(n, k[n, m] * r / r0) * r * wr
            norm_r = 0.5 * r0 * r0 * special.jv(n + 1, k[n, m]) ** 2
            norm_th = 2.0 * np.pi if n == 0 else np.pi
            norm = norm_r * norm_th * (np.pi / 2.0)
            a[n, m] = J @ Gc / norm
            if n > 0:
                b[n, m] = J @ Gs / norm
    return CylinderCoeffs(a, b, k)


def benchmark_cylinder_coefficients(r0: float, m_max: int, kz_max: int, quad_points: int = 200) -> CylinderCoeffs:
    """Coefficients of ``|(r - r0) z (z - pi)|``, exploiting separability.

    The data are axisymmetric, so only ``n = 0`` survives; the ``z`` factor
    has the closed-form sine coefficients ``8 / (pi k^3)`` for odd ``k``.
    """
    x, w = np.polynomial.legendre.leggauss(quad_points)
    r = 0.5 * r0 * (x + 1.0)
    w = 0.5 * r0 * w
    k0 = bessel_zeros(0, m_max)
    radial = np.array([np.sum(w * (r0 - r) * special.j0(km * r / r0) * r)
                       / (0.5 * r0 * r0 * special.j1(km) ** 2) for km in k0])
    kz = np.arange(1, kz_max + 1)
    axial = np.where(kz % 2 == 1, 8.0 / (np.pi * kz ** 3.0), 0.0)
    a = np.zeros((1, m_max, kz_max))
    a[0] = np.outer(radial, axial)
    return CylinderCoeffs(a, np.zeros_like(a), k0[None, :])


def diffusion_cylinder_oracle(r, theta, z, t: float, coeffs: CylinderCoeffs, D: float = 1.0,
                              r0: float = 1.0, cfg: Optional[SeriesConfig] = None):
    """Evaluate the Bessel-Fourier series at cylindrical coordinates (arrays broadcast)."""
    r, theta, z = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (r, theta, z)))
    shape = r.shape
    r, theta, z = r.ravel(), theta.ravel(), z.ravel()
    nn, mm, kk = coeffs.a.shape
    if cfg is not None:
        mm = min(mm, cfg.max_index)
        kk = min(kk, cfg.max_index)
    kz = np.arange(1, kk + 1)
    sz = np.sin(np.outer(z, kz))  # (P, K)
    out = np.zeros(len(r))
    for n in range(nn):
        cos_n = np.cos(n * theta)
        sin_n = np.sin(n * theta)
        for m in range(mm):
            knm = coeffs.k[n, m]
            decay = np.exp(-((knm / r0) ** 2 + kz ** 2) * D * t)
            radial = special.jv(n, knm * r / r0)
            za = sz @ (coeffs.a[n, m, :kk] * decay)
            zb = sz @ (coeffs.b[n, m, :kk] * decay) if n else 0.0
            out += radial * (cos_n * za + sin_n * zb)
    out = out.reshape(shape)
    return float(out) if out.ndim == 0 else out


def relative_difference(numerical, analytical) -> RelativeDifference:
    """Per-node ``(num - anal) / max(anal)`` with its mean and standard deviation."""
    num = np.asarray(numerical, dtype=float)
    anal = np.asarray(analytical, dtype=float)
    if num.shape != anal.shape:
        raise ValueError("fields must have the same length")
    scale = anal.max() if anal.size else 0.0
    if scale == 0.0:
        raise ValueError("analytical field has zero maximum")
    d = (num - anal) / scale
    return RelativeDifference(d, float(d.mean()), float(d.std()))
