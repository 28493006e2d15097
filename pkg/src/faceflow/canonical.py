"""Parametric primitives of the built-in canonical face.

Coordinates are image-like (y grows downward) and normalized so that the outer
eye corners sit at (-0.5, 0) and (0.5, 0). "right" means the subject's right,
which is the image left. Every primitive maps a parameter array ``u`` to points;
closed primitives are 1-periodic in ``u``.
"""

from __future__ import annotations

import numpy as np

TWO_PI = 2.0 * np.pi


def _mirror(pts: np.ndarray) -> np.ndarray:
    return pts * np.array([-1.0, 1.0])


def _polyline(vertices, u):
    v = np.asarray(vertices, dtype=float)
    seg = np.linalg.norm(np.diff(v, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)]) / seg.sum()
    return np.column_stack([np.interp(u, cum, v[:, 0]), np.interp(u, cum, v[:, 1])])


def contour(u):
    th = np.pi * u
    return np.column_stack([-0.85 * np.cos(th), -0.1 + 1.25 * np.sin(th)])


def right_brow(u):
    x = -0.72 + 0.58 * u
    y = -0.22 - 0.06 * u - 0.12 * np.sin(np.pi * u)
    return np.column_stack([x, y])


def left_brow(u):
    return _mirror(right_brow(1.0 - u))


def right_brow_loop(u):
    u = np.mod(u, 1.0)
    upper = u < 0.5
    s = np.where(upper, 2.0 * u, 2.0 - 2.0 * u)
    top = right_brow(s)
    bottom = top + np.column_stack([np.zeros_like(s), 0.05 + 0.03 * np.sin(np.pi * s)])
    return np.where(upper[:, None], top, bottom)


def left_brow_loop(u):
    return _mirror(right_brow_loop(0.5 - np.asarray(u)))


def nose_bridge(u):
    return np.column_stack([np.zeros_like(u), -0.02 + 0.44 * u])


def nose_base(u):
    return np.column_stack([-0.17 + 0.34 * u, 0.46 + 0.06 * np.sin(np.pi * u)])


_NOSE_PATH = [(-0.08, 0.0), (-0.12, 0.35), (-0.17, 0.46), (0.0, 0.52), (0.17, 0.46), (0.12, 0.35), (0.08, 0.0)]


def nose_full(u):
    return _polyline(_NOSE_PATH, u)


def _ellipse(cx, cy, a, b_up, b_low, u):
    th = TWO_PI * np.asarray(u, dtype=float)
    s = np.sin(th)
    b = np.where(s >= 0, b_up, b_low)
    return np.column_stack([cx - a * np.cos(th), cy - b * s])


def right_eye(u):
    return _ellipse(-0.34, 0.0, 0.16, 0.07, 0.06, u)


def left_eye(u):
    return _ellipse(0.34, 0.0, 0.16, 0.07, 0.06, u)


def outer_lip(u):
    return _ellipse(0.0, 0.78, 0.28, 0.11, 0.13, u)


def inner_lip(u):
    return _ellipse(0.0, 0.78, 0.18, 0.035, 0.04, u)


PRIMITIVES = {
    f.__name__: f
    for f in (contour, right_brow, left_brow, right_brow_loop, left_brow_loop, nose_bridge, nose_base,
              nose_full, right_eye, left_eye, outer_lip, inner_lip)
}


def sample_parameters(n: int, t0: float, t1: float, ends: str) -> np.ndarray:
    """Parameter positions for ``n`` points on ``[t0, t1]``.

    ``ends`` is ``"both"`` (endpoints included), ``"none"`` (strictly interior, evenly
    spaced) or ``"loop"`` (start included, end excluded; for closed curves).
    """
    k = np.arange(n, dtype=float)
    if ends == "both":
        if n < 2:
            raise ValueError("'both' sampling needs n >= 2")
        return t0 + (t1 - t0) * k / (n - 1)
    if ends == "none":
        return t0 + (t1 - t0) * (k + 1) / (n + 1)
    if ends == "loop":
        return t0 + (t1 - t0) * k / n
    raise ValueError(f"unknown sampling {ends!r}")


def sample(spec: dict, n: int) -> np.ndarray:
    """Points for a curve entry ``{"primitive", "range", "ends"}``."""
    prim = PRIMITIVES[spec["primitive"]]
    t0, t1 = spec.get("range", (0.0, 1.0))
    return prim(sample_parameters(n, t0, t1, spec.get("ends", "both")))
