"""Annotation files, flow archives and report documents."""

from __future__ import annotations

import csv
import json
import math
import re
from pathlib import Path

import numpy as np

from .flow import Diffeomorphism, MomentaField
from .geometry import FaceShape
from .kernels import KernelConfig
from .matching import CurveMatch, MatchConfig, MatchResult
from .schemes import AnnotationScheme, load_scheme

ARCHIVE_FORMAT = "faceflow-flow"
ARCHIVE_VERSION = 1


class PtsParseError(ValueError):
    def __init__(self, path, lineno: int, msg: str):
        super().__init__(f"{path}:{lineno}: {msg}")
        self.path = path
        self.lineno = lineno


_HEADER = re.compile(r"^\s*(\w+)\s*:\s*(\S+)\s*$")


def read_pts(path) -> np.ndarray:
    """Parse a ``version: 1`` / ``n_points: k`` / ``{ ... }`` annotation file."""
    path = Path(path)
    lines = path.read_text().splitlines()
    rows = [(i + 1, ln.strip()) for i, ln in enumerate(lines) if ln.strip()]
    it = iter(rows)

    def next_row(expect):
        try:
            return next(it)
        except StopIteration:
            raise PtsParseError(path, len(lines) + 1, f"unexpected end of file, expected {expect}") from None

    lineno, text = next_row("'version: 1'")
    m = _HEADER.match(text)
    if not m or m.group(1) != "version":
        raise PtsParseError(path, lineno, f"expected 'version: 1', got {text!r}")
    lineno, text = next_row("'n_points: <k>'")
    m = _HEADER.match(text)
    if not m or m.group(1) != "n_points" or not m.group(2).isdigit():
        raise PtsParseError(path, lineno, f"expected 'n_points: <k>', got {text!r}")
    n = int(m.group(2))
    lineno, text = next_row("'{'")
    if text != "{":
        raise PtsParseError(path, lineno, f"expected '{{', got {text!r}")
    pts = []
    while True:
        lineno, text = next_row("'}'")
        if text == "}":
            if len(pts) != n:
                raise PtsParseError(path, lineno, f"declared {n} points but found {len(pts)}")
            break
        if len(pts) == n:
            raise PtsParseError(path, lineno, f"more than the declared {n} points")
        parts = text.split()
        if len(parts) != 2:
            raise PtsParseError(path, lineno, f"expected 'x y', got {text!r}")
        try:
            x, y = float(parts[0]), float(parts[1])
        except ValueError:
            raise PtsParseError(path, lineno, f"non-numeric coordinate in {text!r}") from None
        if not (math.isfinite(x) and math.isfinite(y)):
            raise PtsParseError(path, lineno, f"non-finite coordinate in {text!r}")
        pts.append((x, y))
    for lineno, text in it:
        raise PtsParseError(path, lineno, f"trailing content after '}}': {text!r}")
    return np.array(pts, dtype=float).reshape(-1, 2)


def format_pts(points) -> str:
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    body = "".join(f"{float(x)!r} {float(y)!r}\n" for x, y in pts)
    return f"version: 1\nn_points: {len(pts)}\n{{\n{body}}}\n"


def write_pts(path, points) -> None:
    """Write the canonical form: shortest round-trip float repr, one point per line."""
    Path(path).write_text(format_pts(points))


def read_face(path, scheme: AnnotationScheme) -> FaceShape:
    pts = read_pts(path)
    if len(pts) != scheme.landmark_count:
        raise PtsParseError(path, 2, f"scheme {scheme.name!r} expects {scheme.landmark_count} points, file has {len(pts)}")
    return FaceShape(scheme, pts)


# Flow archives


def _arr(a) -> list:
    return np.asarray(a, dtype=float).tolist()


def archive_document(result: MatchResult, frame=None, extra: dict | None = None) -> dict:
    """Serializable record of a face match: scheme, template, per-curve flows.

    ``frame = (center, scale)`` maps normalized coordinates back to file coordinates
    via ``x * scale + center``.
    """
    center, scale = frame if frame is not None else (np.zeros(2), 1.0)
    doc = {
        "format": ARCHIVE_FORMAT,
        "version": ARCHIVE_VERSION,
        "scheme": result.template.scheme.to_document(),
        "frame": {"center": _arr(center), "scale": float(scale)},
        "d_ipd": result.d_ipd,
        "config": result.config.to_dict(),
        "template": _arr(result.template.landmarks),
        "curves": [],
    }
    for c in result.per_curve:
        d = c.diffeo
        entry = {
            "name": c.name,
            "sigma_v": c.kernel.sigma_v,
            "sigma_w": c.kernel.sigma_w,
            "integrator": d.integrator,
            "mode": d.mode,
            "time_grid": _arr(d.time_grid),
            "trajectories": _arr(d.trajectories),
            "momenta": _arr(d.momenta.momenta),
            "final_Dc": c.final_Dc,
            "final_Dl": c.final_Dl,
            "history": [float(v) for v in c.history],
            "iterations": c.iterations,
            "converged": c.converged,
            "degraded": c.degraded,
        }
        if d.end_momenta is not None:
            entry["end_momenta"] = _arr(d.end_momenta)
        doc["curves"].append(entry)
    if extra:
        doc.update(extra)
    return doc


class FlowArchive:
    """Loaded archive: template face, per-curve flows and the output frame."""

    def __init__(self, doc: dict):
        if doc.get("format") != ARCHIVE_FORMAT:
            raise ValueError(f"not a flow archive (format={doc.get('format')!r})")
        self.doc = doc
        self.scheme = load_scheme(doc["scheme"])
        self.template = FaceShape(self.scheme, doc["template"])
        self.center = np.asarray(doc["frame"]["center"], dtype=float)
        self.scale = float(doc["frame"]["scale"])
        self.config = MatchConfig.from_dict(doc["config"])
        self.curves: list[CurveMatch] = []
        for c in doc["curves"]:
            end = c.get("end_momenta")
            diffeo = Diffeomorphism(
                time_grid=c["time_grid"],
                trajectories=c["trajectories"],
                momenta=MomentaField(c["momenta"]),
                sigma_v=c["sigma_v"],
                integrator=c["integrator"],
                mode=c["mode"],
                end_momenta=None if end is None else np.asarray(end, dtype=float),
            )
            self.curves.append(CurveMatch(
                c["name"], diffeo.momenta, diffeo, c["history"], c["final_Dc"], c["final_Dl"],
                KernelConfig(c["sigma_v"], c["sigma_w"]), c["iterations"], c["converged"], c["degraded"],
            ))

    @property
    def diffeos(self) -> list[Diffeomorphism]:
        return [c.diffeo for c in self.curves]

    def to_file_frame(self, points) -> np.ndarray:
        return np.asarray(points, dtype=float) * self.scale + self.center

    def to_normalized(self, points) -> np.ndarray:
        return (np.asarray(points, dtype=float) - self.center) / self.scale


def dump_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def load_json(path) -> dict:
    return json.loads(Path(path).read_text())


def save_archive(path, result: MatchResult, frame=None, extra=None) -> None:
    dump_json(path, archive_document(result, frame, extra))


def load_archive(path) -> FlowArchive:
    return FlowArchive(load_json(path))


def write_ced_csv(path, points) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["nme", "fraction"])
        for e, f in points:
            w.writerow([repr(e), repr(f)])
