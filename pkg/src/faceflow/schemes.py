"""Annotation schemes, mean faces, cross-scheme alignment and synthetic fixtures."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import canonical
from .geometry import FaceShape, as_points

REGIONS = ("F", "E", "N", "I", "M")
BUILTIN = ("300w68", "wflw98", "helen194", "coarse34")


class SchemeError(ValueError):
    pass


@dataclass(frozen=True)
class CurveSpec:
    name: str
    indices: tuple[int, ...]
    closed: bool
    region: str
    canonical: dict | None = field(default=None, compare=False)


@dataclass(frozen=True)
class AnnotationScheme:
    """Landmark count, ordered curve partition and normalization references.

    ``parent``/``kept`` are set on schemes derived by :func:`subset_landmarks`;
    ``kept[k]`` is the parent index of landmark ``k``.
    """

    name: str
    landmark_count: int
    curves: tuple[CurveSpec, ...]
    interocular: tuple[tuple[int, ...], tuple[int, ...]]
    anchors: dict = field(default_factory=dict, compare=False)
    canonical_points: dict = field(default_factory=dict, compare=False)
    parent: AnnotationScheme | None = field(default=None, compare=False, repr=False)
    kept: tuple[int, ...] | None = field(default=None, compare=False, repr=False)
    note: str | None = field(default=None, compare=False)

    def __post_init__(self):
        seen: dict[int, str] = {}
        if self.landmark_count < 1:
            raise SchemeError(f"scheme {self.name!r}: landmark_count must be positive")
        for c in self.curves:
            if c.region not in REGIONS:
                raise SchemeError(f"curve {c.name!r}: unknown region {c.region!r}")
            if len(c.indices) < 2:
                raise SchemeError(f"curve {c.name!r}: needs at least 2 landmarks")
            for i in c.indices:
                if not 0 <= i < self.landmark_count:
                    raise SchemeError(f"curve {c.name!r}: index {i} out of range")
                if i in seen:
                    raise SchemeError(f"curve {c.name!r}: index {i} already used by curve {seen[i]!r}")
                seen[i] = c.name
        left, right = self.interocular
        if not left or not right:
            raise SchemeError(f"scheme {self.name!r}: interocular reference sets must be nonempty")
        for i in (*left, *right, *self.anchors.values()):
            if not 0 <= i < self.landmark_count:
                raise SchemeError(f"scheme {self.name!r}: reference index {i} out of range")

    def __hash__(self):
        return hash((self.name, self.landmark_count))

    @property
    def n_curves(self) -> int:
        return len(self.curves)

    def curve_names(self) -> list[str]:
        return [c.name for c in self.curves]

    def uncovered(self) -> list[int]:
        covered = {i for c in self.curves for i in c.indices}
        return [i for i in range(self.landmark_count) if i not in covered]

    def eye_centers(self, landmarks) -> tuple[np.ndarray, np.ndarray]:
        lm = np.asarray(landmarks, dtype=float)
        left, right = self.interocular
        return lm[list(left)].mean(axis=0), lm[list(right)].mean(axis=0)

    def interocular_distance(self, landmarks) -> float:
        a, b = self.eye_centers(landmarks)
        return float(np.linalg.norm(b - a))

    def to_document(self) -> dict:
        doc = {
            "name": self.name,
            "landmark_count": self.landmark_count,
            "curves": [],
            "interocular": {"left": list(self.interocular[0]), "right": list(self.interocular[1])},
            "anchors": dict(self.anchors),
        }
        for c in self.curves:
            entry = {"name": c.name, "indices": list(c.indices), "closed": c.closed, "region": c.region}
            if c.canonical is not None:
                entry["canonical"] = c.canonical
            doc["curves"].append(entry)
        if self.canonical_points:
            doc["canonical_points"] = {str(k): list(v) for k, v in self.canonical_points.items()}
        if self.parent is not None:
            doc["parent"] = {"scheme": self.parent.to_document(), "kept": list(self.kept)}
        if self.note:
            doc["note"] = self.note
        return doc


def _parse(doc: dict) -> AnnotationScheme:
    try:
        curves = tuple(
            CurveSpec(
                name=str(c["name"]),
                indices=tuple(int(i) for i in c["indices"]),
                closed=bool(c.get("closed", False)),
                region=str(c["region"]),
                canonical=c.get("canonical"),
            )
            for c in doc["curves"]
        )
        io = doc["interocular"]
        parent = kept = None
        if "parent" in doc:
            parent = _parse(doc["parent"]["scheme"])
            kept = tuple(int(i) for i in doc["parent"]["kept"])
        return AnnotationScheme(
            name=str(doc["name"]),
            landmark_count=int(doc["landmark_count"]),
            curves=curves,
            interocular=(tuple(int(i) for i in io["left"]), tuple(int(i) for i in io["right"])),
            anchors={str(k): int(v) for k, v in doc.get("anchors", {}).items()},
            canonical_points={int(k): tuple(v) for k, v in doc.get("canonical_points", {}).items()},
            parent=parent,
            kept=kept,
            note=doc.get("note"),
        )
    except (KeyError, TypeError) as exc:
        raise SchemeError(f"malformed scheme document: missing or invalid {exc}") from exc


def load_scheme(source) -> AnnotationScheme:
    """Load a scheme from a document dict, a JSON file path or a built-in name.

    ``"<name>@<fraction>"`` resolves to the subset of a built-in scheme.
    """
    if isinstance(source, AnnotationScheme):
        return source
    if isinstance(source, dict):
        return _parse(source)
    if isinstance(source, str) and source in BUILTIN:
        return builtin_scheme(source)
    if isinstance(source, str) and "@" in source and source.split("@")[0] in BUILTIN:
        base, frac = source.split("@", 1)
        try:
            fraction = float(frac)
        except ValueError:
            raise SchemeError(f"bad subset fraction in {source!r}") from None
        return subset_scheme(builtin_scheme(base), fraction)
    path = Path(source)
    if not path.exists():
        raise SchemeError(f"unknown scheme {source!r} (not a built-in and no such file)")
    return _parse(json.loads(path.read_text()))


def save_scheme(scheme: AnnotationScheme, path=None) -> dict:
    doc = scheme.to_document()
    if path is not None:
        Path(path).write_text(json.dumps(doc, indent=1) + "\n")
    return doc


_CACHE: dict[str, AnnotationScheme] = {}


def builtin_scheme(name: str) -> AnnotationScheme:
    if name not in BUILTIN:
        raise SchemeError(f"no built-in scheme {name!r}; choose from {', '.join(BUILTIN)}")
    if name not in _CACHE:
        text = resources.files("faceflow.data").joinpath(f"{name}.json").read_text()
        _CACHE[name] = _parse(json.loads(text))
    return _CACHE[name]


def canonical_face(scheme: AnnotationScheme) -> FaceShape:
    """Built-in mean-face geometry for ``scheme`` (unit interocular distance, centered)."""
    if scheme.parent is not None:
        full = canonical_face(scheme.parent)
        return FaceShape(scheme, full.landmarks[list(scheme.kept)])
    lm = np.full((scheme.landmark_count, 2), np.nan)
    for c in scheme.curves:
        if c.canonical is None:
            raise SchemeError(f"curve {c.name!r} of {scheme.name!r} has no canonical geometry")
        lm[list(c.indices)] = canonical.sample(c.canonical, len(c.indices))
    for i, p in scheme.canonical_points.items():
        lm[i] = p
    if np.isnan(lm).any():
        raise SchemeError(f"scheme {scheme.name!r} lacks canonical positions for some landmarks")
    return FaceShape(scheme, lm)


# Normalization and mean faces


def normalization(shape: FaceShape) -> tuple[np.ndarray, float]:
    """Interocular midpoint and distance of ``shape``."""
    a, b = shape.scheme.eye_centers(shape.landmarks)
    d = float(np.linalg.norm(b - a))
    if d <= 0:
        raise ValueError("zero interocular distance")
    return (a + b) / 2.0, d


def normalize_face(shape: FaceShape) -> FaceShape:
    center, scale = normalization(shape)
    return shape.with_landmarks((shape.landmarks - center) / scale)


def mean_face(shapes) -> FaceShape:
    """Landmark-wise average after moving each face to unit interocular distance at the origin."""
    shapes = list(shapes)
    if not shapes:
        raise ValueError("mean_face needs at least one shape")
    scheme = shapes[0].scheme
    if any(s.scheme != scheme for s in shapes):
        raise ValueError("all shapes must share one scheme")
    stack = np.stack([normalize_face(s).landmarks for s in shapes])
    return FaceShape(scheme, stack.mean(axis=0))


# Affine alignment between schemes


@dataclass(frozen=True)
class AffineTransform:
    linear: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        A = np.array(self.linear, dtype=float).reshape(2, 2)
        b = np.array(self.translation, dtype=float).reshape(2)
        if abs(np.linalg.det(A)) < 1e-12:
            raise ValueError("affine linear part is singular")
        object.__setattr__(self, "linear", A)
        object.__setattr__(self, "translation", b)

    def __call__(self, points) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.linear.T + self.translation

    def inverse(self) -> AffineTransform:
        Ai = np.linalg.inv(self.linear)
        return AffineTransform(Ai, -Ai @ self.translation)

    @classmethod
    def identity(cls) -> AffineTransform:
        return cls(np.eye(2), np.zeros(2))


def shared_anchors(source: AnnotationScheme, target: AnnotationScheme) -> list[tuple[int, int]]:
    names = [n for n in source.anchors if n in target.anchors]
    return [(source.anchors[n], target.anchors[n]) for n in names]


def fit_affine(src, dst) -> AffineTransform:
    """Least-squares affine map taking ``src`` points onto ``dst`` points."""
    src = as_points(src, "source anchors")
    dst = as_points(dst, "target anchors")
    if len(src) != len(dst):
        raise ValueError("anchor lists differ in length")
    if len(src) < 3:
        raise ValueError("affine alignment needs at least 3 anchor pairs")
    X = np.column_stack([src, np.ones(len(src))])
    if np.linalg.matrix_rank(X, tol=1e-9 * max(1.0, np.abs(src).max())) < 3:
        raise ValueError("anchor points are collinear; affine map is undetermined")
    sol, *_ = np.linalg.lstsq(X, dst, rcond=None)
    return AffineTransform(sol[:2].T, sol[2])


def affine_align(source_mean: FaceShape, target_mean: FaceShape, anchors=None) -> AffineTransform:
    """Affine map from ``source_mean`` to ``target_mean`` fitted on anchor pairs.

    Without explicit ``anchors`` the semantic anchors the two schemes share are used.
    """
    if anchors is None:
        anchors = shared_anchors(source_mean.scheme, target_mean.scheme)
        if not anchors:
            raise ValueError(
                f"schemes {source_mean.scheme.name!r} and {target_mean.scheme.name!r} share no anchors; "
                "pass an explicit anchor table"
            )
    si = [a for a, _ in anchors]
    ti = [b for _, b in anchors]
    return fit_affine(source_mean.landmarks[si], target_mean.landmarks[ti])


# Partial annotation


def decimate(n: int, closed: bool, fraction: float) -> list[int]:
    """Local indices kept from an ``n``-point curve at ``fraction``."""
    stride = math.ceil(1.0 / fraction - 1e-9)
    keep = list(range(0, n, stride))
    if not closed and keep[-1] != n - 1:
        keep.append(n - 1)
    return keep


def subset_scheme(scheme: AnnotationScheme, fraction: float) -> AnnotationScheme:
    if not 0 < fraction <= 1:
        raise ValueError("fraction must lie in (0, 1]")
    if fraction == 1:
        return scheme
    kept: list[int] = []
    plan = []
    for c in scheme.curves:
        local = decimate(len(c.indices), c.closed, fraction)
        if len(local) < 2:
            raise ValueError(f"fraction {fraction} leaves curve {c.name!r} with fewer than 2 points")
        plan.append((c, [c.indices[k] for k in local]))
    for _, orig in plan:
        kept.extend(orig)
    kept.extend(scheme.uncovered())
    new_of = {o: k for k, o in enumerate(kept)}
    curves = []
    start = 0
    for c, orig in plan:
        curves.append(CurveSpec(c.name, tuple(range(start, start + len(orig))), c.closed, c.region, None))
        start += len(orig)

    def remap(idx):
        if idx not in new_of:
            raise ValueError(f"fraction {fraction} drops reference landmark {idx}")
        return new_of[idx]

    left, right = scheme.interocular
    return AnnotationScheme(
        name=f"{scheme.name}@{fraction:g}",
        landmark_count=len(kept),
        curves=tuple(curves),
        interocular=(tuple(remap(i) for i in left), tuple(remap(i) for i in right)),
        anchors={k: new_of[v] for k, v in scheme.anchors.items() if v in new_of},
        parent=scheme,
        kept=tuple(kept),
    )


def subset_landmarks(shape: FaceShape, fraction: float) -> FaceShape:
    """Keep curve endpoints and every ``ceil(1/fraction)``-th point by index.

    Landmarks outside every curve are always kept. The returned face carries a
    derived scheme whose ``kept`` map gives each landmark's original index.
    """
    sub = subset_scheme(shape.scheme, fraction)
    if sub is shape.scheme:
        return shape
    return FaceShape(sub, shape.landmarks[list(sub.kept)])


# Synthetic fixtures


@dataclass(frozen=True)
class SmoothField:
    """Displacement ``u(x) = sum_b A_b exp(-|x - c_b|^2 / w_b^2)``.

    For a field built with amplitude ``a`` the bump vectors sum to ``2a`` in norm, so
    ``|u| <= 2a`` and ``|grad u| <= 2a * sqrt(2/e) / min(w)``.
    """

    centers: np.ndarray
    widths: np.ndarray
    vectors: np.ndarray

    def __call__(self, points) -> np.ndarray:
        x = np.asarray(points, dtype=float)
        d2 = ((x[:, None, :] - self.centers[None]) ** 2).sum(-1)
        return np.exp(-d2 / self.widths[None] ** 2) @ self.vectors

    def warp(self, points) -> np.ndarray:
        x = np.asarray(points, dtype=float)
        return x + self(x)


MIN_BUMP_WIDTH = 0.3
MAX_BUMP_WIDTH = 0.6
N_BUMPS = 5


def fold_free_cap(min_width: float = MIN_BUMP_WIDTH) -> float:
    """Largest amplitude for which the warp's Jacobian stays invertible."""
    return 0.5 * min_width * math.sqrt(math.e / 2.0)


def random_field(seed: int, amplitude: float, lo=(-0.9, -0.5), hi=(0.9, 1.2)) -> SmoothField:
    if amplitude < 0:
        raise ValueError("amplitude must be >= 0")
    if amplitude >= fold_free_cap():
        raise ValueError(f"amplitude {amplitude} exceeds the fold-free cap {fold_free_cap():.4f}")
    rng = np.random.default_rng(seed)
    centers = rng.uniform(lo, hi, size=(N_BUMPS, 2))
    widths = rng.uniform(MIN_BUMP_WIDTH, MAX_BUMP_WIDTH, size=N_BUMPS)
    angles = rng.uniform(0.0, 2.0 * np.pi, size=N_BUMPS)
    mags = rng.uniform(0.2, 1.0, size=N_BUMPS)
    mags *= 2.0 * amplitude / mags.sum()
    vecs = mags[:, None] * np.column_stack([np.cos(angles), np.sin(angles)])
    return SmoothField(centers, widths, vecs)


def synth_face(seed: int, scheme, amplitude: float = 0.05) -> tuple[FaceShape, FaceShape]:
    """Canonical template and a smoothly warped copy of it (deterministic per seed)."""
    scheme = load_scheme(scheme)
    template = canonical_face(scheme)
    warp = random_field(seed, amplitude)
    return template, template.with_landmarks(warp.warp(template.landmarks))
