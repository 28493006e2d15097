"""Deterministic SVG overlays of faces, flow trajectories and momenta."""

from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import quoteattr

import numpy as np

from .flow import Diffeomorphism
from .geometry import FaceShape

STYLES = {
    "template": 'fill="none" stroke="#999999" stroke-width="{w}" stroke-dasharray="{d}"',
    "gt": 'fill="none" stroke="#1f77b4" stroke-width="{w}"',
    "prediction": 'fill="none" stroke="#d62728" stroke-width="{w}"',
    "trajectories": 'fill="none" stroke="#2ca02c" stroke-width="{w}"',
    "momenta": 'stroke="#ff7f0e" stroke-width="{w}"',
}


def _fmt(v: float) -> str:
    s = f"{v:.4f}".rstrip("0").rstrip(".")
    return "0" if s in ("-0", "") else s


def _pts(points) -> str:
    return " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in np.asarray(points, dtype=float))


def _face_elements(face: FaceShape, pose) -> list[str]:
    out = []
    for spec, curve in zip(face.scheme.curves, face.curves):
        tag = "polygon" if spec.closed else "polyline"
        out.append(f'<{tag} data-curve={quoteattr(spec.name)} points="{_pts(pose(curve.points))}"/>')
    return out


class SvgScene:
    """Collects named layers and writes them inside a viewBox fitted to all content.

    Coordinates stay in the annotation frame (y down), mapped by ``pose`` if given.
    """

    def __init__(self, pose=None):
        self.pose = pose or (lambda p: np.asarray(p, dtype=float))
        self.layers: list[tuple[str, list[str]]] = []
        self._extent: list[np.ndarray] = []

    def _track(self, points):
        self._extent.append(np.asarray(self.pose(points), dtype=float).reshape(-1, 2))

    def add_face(self, layer: str, face: FaceShape):
        self._track(face.landmarks)
        self.layers.append((layer, _face_elements(face, self.pose)))

    def add_trajectories(self, diffeos: list[Diffeomorphism]):
        """One polyline of ``T + 1`` samples per control point."""
        els = []
        for k, d in enumerate(diffeos):
            for i in range(d.trajectories.shape[1]):
                self._track(d.trajectories[:, i])
                path = self.pose(d.trajectories[:, i])
                els.append(f'<polyline data-flow="{k}" data-point="{i}" points="{_pts(path)}"/>')
        self.layers.append(("trajectories", els))

    def add_momenta(self, diffeos: list[Diffeomorphism], scale: float = 0.1):
        """Per-step momentum arrows drawn from the control position at the start of the step."""
        els = []
        for k, d in enumerate(diffeos):
            for s in range(d.steps):
                a = d.trajectories[s]
                b = a + scale * d.momenta.momenta[s]
                for p, q in zip(self.pose(a), self.pose(b)):
                    els.append(
                        f'<line data-flow="{k}" data-step="{s}" x1="{_fmt(p[0])}" y1="{_fmt(p[1])}" '
                        f'x2="{_fmt(q[0])}" y2="{_fmt(q[1])}" marker-end="url(#arrow)"/>'
                    )
        self.layers.append(("momenta", els))

    def document(self) -> str:
        if self._extent:
            allp = np.vstack(self._extent)
            lo, hi = allp.min(axis=0), allp.max(axis=0)
        else:
            lo, hi = np.zeros(2), np.ones(2)
        span = float(max(hi[0] - lo[0], hi[1] - lo[1], 1e-9))
        pad = 0.05 * span
        x0, y0 = lo - pad
        w, h = (hi - lo) + 2 * pad
        stroke = span / 400.0
        head = [
            '<?xml version="1.0" encoding="UTF-8"?>',
            f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="{_fmt(x0)} {_fmt(y0)} {_fmt(w)} {_fmt(h)}" '
            f'width="800" height="{_fmt(800 * h / w)}">',
            '<defs><marker id="arrow" viewBox="0 0 10 10" refX="10" refY="5" markerWidth="4" markerHeight="4" '
            'orient="auto"><path d="M0,0 L10,5 L0,10 z" fill="#ff7f0e"/></marker></defs>',
        ]
        body = []
        for name, els in self.layers:
            style = STYLES.get(name, STYLES["prediction"]).format(w=_fmt(stroke), d=_fmt(4 * stroke))
            body.append(f'<g id="{name}" {style}>')
            body.extend(els)
            body.append("</g>")
        return "\n".join(head + body + ["</svg>"]) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.document())


def render_match(path, diffeos, template: FaceShape | None = None, gt: FaceShape | None = None,
                 prediction: FaceShape | None = None, trajectories: bool = True, momenta: bool = True,
                 pose=None) -> str:
    """Write an overlay SVG and return its text."""
    scene = SvgScene(pose)
    if template is not None:
        scene.add_face("template", template)
    if gt is not None:
        scene.add_face("gt", gt)
    if prediction is not None:
        scene.add_face("prediction", prediction)
    if trajectories:
        scene.add_trajectories(diffeos)
    if momenta:
        scene.add_momenta(diffeos)
    doc = scene.document()
    Path(path).write_text(doc)
    return doc
