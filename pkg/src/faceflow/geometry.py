"""Shape containers and elementary curve operations.

Points are stored as float arrays of shape ``(n, 2)``. All containers are frozen
and copy their inputs, so they can be shared freely.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from .schemes import AnnotationScheme


def as_points(points, name: str = "points") -> np.ndarray:
    """Coerce ``points`` into a finite ``(n, 2)`` float array (read-only copy)."""
    arr = np.array(points, dtype=float)
    if arr.ndim == 1 and arr.size == 2:
        arr = arr.reshape(1, 2)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"{name} must have shape (n, 2), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite coordinates")
    arr.setflags(write=False)
    return arr


def segment_vectors(points: np.ndarray, closed: bool) -> np.ndarray:
    if closed:
        return np.roll(points, -1, axis=0) - points
    return points[1:] - points[:-1]


@dataclass(frozen=True)
class Curve:
    """Ordered polyline; ``closed`` adds the last-to-first segment."""

    points: np.ndarray
    closed: bool = False

    def __post_init__(self):
        pts = as_points(self.points, "curve points")
        if len(pts) < 2:
            raise ValueError("a curve needs at least 2 points")
        seg = segment_vectors(pts, self.closed)
        if np.any(np.all(seg == 0.0, axis=1)):
            raise ValueError("consecutive curve points must be distinct")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)

    def reversed(self) -> Curve:
        return Curve(self.points[::-1], self.closed)

    def length(self) -> float:
        return float(np.linalg.norm(segment_vectors(self.points, self.closed), axis=1).sum())


@dataclass(frozen=True)
class CurveCurrent:
    """A curve as a sum of vector Diracs: tangent ``tangents[i]`` located at ``centers[i]``."""

    centers: np.ndarray
    tangents: np.ndarray

    def __post_init__(self):
        c = as_points(self.centers, "centers")
        t = as_points(self.tangents, "tangents")
        if c.shape != t.shape:
            raise ValueError("centers and tangents must have the same shape")
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "tangents", t)

    def __len__(self) -> int:
        return len(self.centers)

    def __neg__(self) -> CurveCurrent:
        return CurveCurrent(self.centers, -self.tangents)


def curve_to_current(curve: Curve) -> CurveCurrent:
    """Segment midpoints and forward differences of ``curve``.

    >>> curve_to_current(Curve([(0, 0), (2, 0)])).tangents.tolist()
    [[2.0, 0.0]]
    """
    pts = curve.points
    nxt = np.roll(pts, -1, axis=0) if curve.closed else pts[1:]
    base = pts if curve.closed else pts[:-1]
    return CurveCurrent((nxt + base) / 2.0, nxt - base)


def resample_curve(curve: Curve, m: int) -> Curve:
    """Place ``m`` points at uniform arc-length positions along ``curve``.

    Open curves keep both endpoints. Closed curves start at the first point and
    spread ``m`` points over the full loop (the last point does not repeat the first).
    """
    if m < 2:
        raise ValueError("resample_curve needs m >= 2")
    pts = curve.points
    if curve.closed:
        pts = np.vstack([pts, pts[:1]])
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    if curve.closed:
        s = np.arange(m) * (total / m)
    else:
        s = np.linspace(0.0, total, m)
    x = np.interp(s, cum, pts[:, 0])
    y = np.interp(s, cum, pts[:, 1])
    out = np.column_stack([x, y])
    if not curve.closed:
        out[0], out[-1] = pts[0], pts[-1]
    return Curve(out, curve.closed)


def curve_scale(curve: Curve | np.ndarray) -> float:
    """Larger side of the axis-aligned bounding box."""
    pts = curve.points if isinstance(curve, Curve) else as_points(curve)
    extent = pts.max(axis=0) - pts.min(axis=0)
    scale = float(extent.max())
    if scale <= 0.0:
        raise ValueError("curve has zero scale (all points identical)")
    return scale


@dataclass(frozen=True)
class FaceShape:
    """All landmarks of one face, indexed in the order of ``scheme``.

    Curves are views onto ``landmarks`` through the scheme's partition; landmarks
    not covered by any curve are still kept (e.g. pupils).
    """

    scheme: AnnotationScheme
    landmarks: np.ndarray = field(repr=False)

    def __post_init__(self):
        lm = as_points(self.landmarks, "landmarks")
        if len(lm) != self.scheme.landmark_count:
            raise ValueError(
                f"scheme {self.scheme.name!r} expects {self.scheme.landmark_count} landmarks, got {len(lm)}"
            )
        object.__setattr__(self, "landmarks", lm)

    @property
    def curves(self) -> list[Curve]:
        return [Curve(self.landmarks[list(c.indices)], c.closed) for c in self.scheme.curves]

    def curve_points(self, k: int) -> np.ndarray:
        return self.landmarks[list(self.scheme.curves[k].indices)]

    def interocular(self) -> float:
        return self.scheme.interocular_distance(self.landmarks)

    def with_landmarks(self, landmarks) -> FaceShape:
        return FaceShape(self.scheme, landmarks)

    @classmethod
    def from_curves(cls, scheme: AnnotationScheme, curves, extra=None) -> FaceShape:
        """Assemble a face from per-curve point arrays (plus uncovered landmarks, in index order)."""
        lm = np.full((scheme.landmark_count, 2), np.nan)
        for spec, pts in zip(scheme.curves, curves, strict=True):
            pts = np.asarray(pts.points if isinstance(pts, Curve) else pts, dtype=float)
            lm[list(spec.indices)] = pts
        free = scheme.uncovered()
        if free:
            if extra is None:
                raise ValueError("scheme has landmarks outside every curve; pass them as extra")
            lm[free] = np.asarray(extra, dtype=float)
        return cls(scheme, lm)
