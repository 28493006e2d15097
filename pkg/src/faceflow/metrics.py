"""Alignment error metrics: landmark NME, correspondence-free curve NME, FR and AUC."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .geometry import Curve, FaceShape, resample_curve
from .matching import landmark_discrepancy
from .schemes import REGIONS

DEFAULT_SAMPLES = 128


@dataclass
class MetricsReport:
    """Corpus-level summary. NME values are percentages of the interocular distance."""

    nme_landmark: float | None
    nme_curve_overall: float
    nme_curve_by_region: dict = field(default_factory=dict)
    fr_0_1: float | None = None
    auc_0_1: float | None = None
    per_sample_errors: list = field(default_factory=list)
    per_sample_curve_errors: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def nme_landmark(pred: FaceShape, gt: FaceShape) -> float:
    """``100 * mean point distance / interocular(gt)``."""
    if pred.scheme != gt.scheme:
        raise ValueError(
            f"landmark NME needs one scheme, got {pred.scheme.name!r} and {gt.scheme.name!r}"
        )
    return 100.0 * landmark_discrepancy(pred.landmarks, gt.landmarks) / gt.interocular()


def point_polyline_distance(points, polyline, closed: bool = False) -> np.ndarray:
    """Exact distance from each point to the nearest point of a polyline."""
    p = np.asarray(points, dtype=float).reshape(-1, 2)
    v = np.asarray(polyline, dtype=float).reshape(-1, 2)
    if closed and len(v) > 1:
        v = np.vstack([v, v[:1]])
    if len(v) == 1:
        return np.linalg.norm(p - v[0], axis=1)
    a, b = v[:-1], v[1:]
    ab = b - a
    L2 = (ab * ab).sum(axis=1)
    ap = p[:, None, :] - a[None]
    t = np.clip((ap * ab[None]).sum(-1) / np.where(L2 > 0, L2, 1.0)[None], 0.0, 1.0)
    proj = a[None] + t[..., None] * ab[None]
    seg = ((p[:, None, :] - proj) ** 2).sum(-1).min(axis=1)
    # vertex distances never undercut the true value but are exact for points on a vertex
    vert = ((p[:, None, :] - v[None]) ** 2).sum(-1).min(axis=1)
    return np.sqrt(np.minimum(seg, vert))


def _dense(curves: list[Curve], m: int) -> list[Curve]:
    return [resample_curve(c, m) for c in curves]


def _one_way(src: list[Curve], dst: list[Curve], dst_dense: list[Curve]) -> list[float]:
    """Mean distance from every ``src`` sample to the ``dst`` curve set, per src curve.

    Distances go to the given ``dst`` polylines, not to chords between their resampled
    points, which cut corners and would make two samplings of one curve disagree. The
    resampled points still count as vertices so that identical samplings give exactly 0.
    The per-curve mean is a trapezoid average along arc length.
    """
    out = []
    for c in src:
        d = np.min([point_polyline_distance(c.points, g.points, g.closed) for g in dst], axis=0)
        for g in dst_dense:
            d = np.minimum(d, np.sqrt(((c.points[:, None] - g.points[None]) ** 2).sum(-1)).min(axis=1))
        if not c.closed:
            # trapezoid weights: the end samples each stand for half a spacing
            w = np.ones(len(d))
            w[[0, -1]] = 0.5
            out.append(float(d @ w / w.sum()))
        else:
            out.append(float(d.mean()))
    return out


def _by_region(shape: FaceShape) -> dict[str, list[Curve]]:
    groups: dict[str, list[Curve]] = {}
    for spec, curve in zip(shape.scheme.curves, shape.curves):
        groups.setdefault(spec.region, []).append(curve)
    return groups


def nme_curve(pred: FaceShape, gt: FaceShape, samples_per_curve: int = DEFAULT_SAMPLES,
              align: bool = False) -> tuple[float, dict[str, float]]:
    """Symmetric nearest-point curve error in percent, overall and per facial region.

    Curves are compared region by region, so ``pred`` and ``gt`` may use different
    schemes. Regions missing on either side are left out. With ``align=True`` the
    prediction is first rigidly aligned to the ground truth by iterated closest
    points; by default no alignment is done so that placement errors count.
    """
    d = gt.interocular()
    P, G = _by_region(pred), _by_region(gt)
    if align:
        P = _rigid_icp(P, G, samples_per_curve)
    by_region = {}
    pooled_pred: list[float] = []
    pooled_gt: list[float] = []
    for r in REGIONS:
        if r not in P or r not in G:
            continue
        pc, gc = _dense(P[r], samples_per_curve), _dense(G[r], samples_per_curve)
        ep, eg = _one_way(pc, G[r], gc), _one_way(gc, P[r], pc)
        by_region[r] = 100.0 * 0.5 * (np.mean(ep) + np.mean(eg)) / d
        pooled_pred += ep
        pooled_gt += eg
    if not by_region:
        raise ValueError("prediction and ground truth share no region")
    overall = 100.0 * 0.5 * (np.mean(pooled_pred) + np.mean(pooled_gt)) / d
    return float(overall), {k: float(v) for k, v in by_region.items()}


def _rigid_icp(P, G, m, iters: int = 30):
    """Rigidly move all of ``P`` onto ``G`` with closest-point iterations (Kabsch updates)."""
    chunks, labels = [], []
    for r, curves in P.items():
        if r not in G:
            continue
        for c in _dense(curves, m):
            chunks.append(c.points)
            labels += [r] * len(c.points)
    src = np.vstack(chunks)
    labels = np.array(labels)
    dst = {r: np.vstack([c.points for c in _dense(G[r], m)]) for r in set(labels)}
    R, t = np.eye(2), np.zeros(2)
    for _ in range(iters):
        moved = src @ R.T + t
        match = np.empty_like(moved)
        for r, D in dst.items():
            idx = labels == r
            nn = ((moved[idx, None, :] - D[None]) ** 2).sum(-1).argmin(axis=1)
            match[idx] = D[nn]
        mu_s, mu_d = src.mean(0), match.mean(0)
        U, _, Vt = np.linalg.svd((src - mu_s).T @ (match - mu_d))
        fix = np.diag([1.0, np.sign(np.linalg.det(Vt.T @ U.T))])
        R = Vt.T @ fix @ U.T
        t = mu_d - R @ mu_s
    return {r: [Curve(c.points @ R.T + t, c.closed) for c in P[r]] for r in P}


def failure_rate(per_sample_nme, threshold: float = 0.1) -> float:
    """Percentage of samples whose NME (as a fraction) is strictly above ``threshold``."""
    e = np.asarray(per_sample_nme, dtype=float)
    if e.size == 0:
        raise ValueError("failure_rate needs at least one sample")
    if not threshold > 0:
        raise ValueError("threshold must be > 0")
    return 100.0 * float((e > threshold).mean())


def auc_ced(per_sample_nme, cutoff: float = 0.1) -> float:
    """Area under the cumulative error distribution on ``[0, cutoff]``, divided by ``cutoff``.

    For the empirical step function this is ``mean(max(0, 1 - e / cutoff))``.
    """
    e = np.asarray(per_sample_nme, dtype=float)
    if e.size == 0:
        raise ValueError("auc_ced needs at least one sample")
    if not cutoff > 0:
        raise ValueError("cutoff must be > 0")
    return float(np.clip(1.0 - e / cutoff, 0.0, None).mean())


def ced_points(per_sample_nme) -> list[tuple[float, float]]:
    """``(error, fraction of samples with error <= it)`` at every distinct error."""
    e = np.sort(np.asarray(per_sample_nme, dtype=float))
    n = len(e)
    out = []
    for k, v in enumerate(e):
        if k + 1 < n and e[k + 1] == v:
            continue
        out.append((float(v), (k + 1) / n))
    return out


def evaluate(preds, gts, samples_per_curve: int = DEFAULT_SAMPLES, threshold: float = 0.1,
             align: bool = False) -> MetricsReport:
    """Corpus report over parallel lists of predicted and ground-truth faces."""
    preds, gts = list(preds), list(gts)
    if len(preds) != len(gts):
        raise ValueError(f"{len(preds)} predictions vs {len(gts)} ground truths")
    if not preds:
        raise ValueError("empty corpus")
    same = all(p.scheme == g.scheme for p, g in zip(preds, gts))
    lm = [nme_landmark(p, g) for p, g in zip(preds, gts)] if same else []
    curve = [nme_curve(p, g, samples_per_curve, align) for p, g in zip(preds, gts)]
    regions: dict[str, list[float]] = {}
    for _, by in curve:
        for r, v in by.items():
            regions.setdefault(r, []).append(v)
    by_region = {"O": float(np.mean([c[0] for c in curve]))}
    by_region.update({r: float(np.mean(v)) for r, v in regions.items()})
    per_sample = lm if same else [c[0] for c in curve]
    frac = np.asarray(per_sample) / 100.0
    return MetricsReport(
        nme_landmark=float(np.mean(lm)) if same else None,
        nme_curve_overall=by_region["O"],
        nme_curve_by_region=by_region,
        fr_0_1=failure_rate(frac, threshold),
        auc_0_1=auc_ced(frac, threshold),
        per_sample_errors=[float(v) for v in per_sample],
        per_sample_curve_errors=[float(c[0]) for c in curve],
    )
