"""Gaussian kernels and the currents inner product used for curve matching."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import Curve, CurveCurrent, as_points, curve_to_current


@dataclass(frozen=True)
class KernelConfig:
    """Per-curve kernel widths: ``sigma_v`` for the deformation, ``sigma_w`` for currents."""

    sigma_v: float
    sigma_w: float

    def __post_init__(self):
        for name in ("sigma_v", "sigma_w"):
            val = getattr(self, name)
            if not (math.isfinite(val) and val > 0):
                raise ValueError(f"{name} must be finite and > 0, got {val}")

    @classmethod
    def from_scale(cls, scale: float) -> KernelConfig:
        """Deformation width = scale, currents width = half of it."""
        return cls(sigma_v=scale, sigma_w=scale / 2.0)


def _check_sigma(sigma: float) -> None:
    if not sigma > 0:
        raise ValueError(f"kernel width must be > 0, got {sigma}")


def gaussian_kernel(a, b, sigma: float) -> float:
    """``exp(-|a - b|^2 / sigma^2)``."""
    _check_sigma(sigma)
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    return math.exp(-float(d @ d) / sigma**2)


def sq_distances(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Pairwise squared distances; leading batch dimensions broadcast."""
    dx = A[..., :, None, 0] - B[..., None, :, 0]
    dy = A[..., :, None, 1] - B[..., None, :, 1]
    return dx * dx + dy * dy


def kernel_matrix(A, B, sigma: float) -> np.ndarray:
    """Matrix ``K[i, j] = gaussian_kernel(A[i], B[j], sigma)``."""
    _check_sigma(sigma)
    A = as_points(A, "A")
    B = as_points(B, "B")
    if len(A) == 0 or len(B) == 0:
        raise ValueError("kernel_matrix needs nonempty point lists")
    return np.exp(-sq_distances(A, B) / sigma**2)


def currents_inner(u: CurveCurrent, v: CurveCurrent, sigma_w: float) -> float:
    """``sum_ij k_W(c_i, d_j) tau_i . eta_j``."""
    if len(u) == 0 or len(v) == 0:
        raise ValueError("currents must be nonempty")
    K = kernel_matrix(u.centers, v.centers, sigma_w)
    return float((K * (u.tangents @ v.tangents.T)).sum())


def currents_norm_sq(u: CurveCurrent, sigma_w: float) -> float:
    return currents_inner(u, u, sigma_w)


def curve_discrepancy(deformed: CurveCurrent, target: CurveCurrent, sigma_w: float) -> float:
    """Squared dual-norm distance between two currents.

    The currents need not have the same number of Diracs.
    """
    val = (
        currents_norm_sq(deformed, sigma_w)
        - 2.0 * currents_inner(deformed, target, sigma_w)
        + currents_norm_sq(target, sigma_w)
    )
    # cancellation can leave a tiny negative residue
    return max(val, 0.0)


def grad_curve_discrepancy(deformed_points, target: CurveCurrent, sigma_w: float, closed: bool) -> np.ndarray:
    """Gradient of :func:`curve_discrepancy` with respect to the deformed curve's points.

    Derivatives with respect to segment centers and tangents are formed in closed
    form and pushed back to the vertices (each center is the mean of its two
    endpoints, each tangent their difference).
    """
    _check_sigma(sigma_w)
    pts = Curve(deformed_points, closed).points
    cur = curve_to_current(Curve(pts, closed))
    c, tau = cur.centers, cur.tangents
    d, eta = target.centers, target.tangents
    s2 = sigma_w**2

    Kuu = np.exp(-sq_distances(c, c) / s2)
    Kuv = np.exp(-sq_distances(c, d) / s2)
    g_tau = 2.0 * (Kuu @ tau - Kuv @ eta)
    Wuu = Kuu * (tau @ tau.T)
    Wuv = Kuv * (tau @ eta.T)
    g_c = (-4.0 / s2) * (
        Wuu.sum(axis=1)[:, None] * c - Wuu @ c - (Wuv.sum(axis=1)[:, None] * c - Wuv @ d)
    )

    n = len(pts)
    a = np.arange(len(c))
    b = (a + 1) % n
    grad = np.zeros_like(pts)
    np.add.at(grad, a, 0.5 * g_c - g_tau)
    np.add.at(grad, b, 0.5 * g_c + g_tau)
    return grad
