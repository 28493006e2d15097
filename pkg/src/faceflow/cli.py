"""Command-line front end: ``synth``, ``meanface``, ``match``, ``transport``, ``evaluate``, ``render``.

Exit codes: 0 success, 1 usage error, 2 data or parse error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .geometry import FaceShape
from .io import (
    PtsParseError,
    archive_document,
    dump_json,
    load_archive,
    load_json,
    read_pts,
    write_ced_csv,
    write_pts,
)
from .kernels import KernelConfig
from .matching import MatchConfig, MatchError, assign_to_curves, face_kernels, match_face, predict_face, transport_face_points
from .metrics import ced_points, evaluate
from .render import render_match
from .schemes import (
    AnnotationScheme,
    SchemeError,
    affine_align,
    canonical_face,
    load_scheme,
    mean_face,
    normalization,
    shared_anchors,
    synth_face,
)

log = logging.getLogger("faceflow")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

# synth writes faces in a pixel-like frame so that the normalization path is exercised
SYNTH_SCALE = 100.0
SYNTH_CENTER = (256.0, 256.0)


class CliError(Exception):
    def __init__(self, code: int, msg: str):
        super().__init__(msg)
        self.code = code


@dataclass
class RunConfig:
    """Effective settings of one invocation: config document first, then flag overrides."""

    scheme: str = "300w68"
    match: MatchConfig = field(default_factory=MatchConfig)
    kernels: dict = field(default_factory=dict)
    seed: int = 0
    amplitude: float = 0.05
    count: int = 1
    samples_per_curve: int = 128
    align: bool = False

    def to_dict(self) -> dict:
        return {
            "scheme": self.scheme,
            "match": self.match.to_dict(),
            "kernels": {k: {"sigma_v": v.sigma_v, "sigma_w": v.sigma_w} for k, v in sorted(self.kernels.items())},
            "seed": self.seed,
            "amplitude": self.amplitude,
            "count": self.count,
            "samples_per_curve": self.samples_per_curve,
            "align": self.align,
        }

    @classmethod
    def from_dict(cls, d: dict) -> RunConfig:
        d = dict(d)
        known = {"scheme", "match", "kernels", "seed", "amplitude", "count", "samples_per_curve", "align"}
        unknown = set(d) - known
        if unknown:
            raise CliError(EXIT_USAGE, f"unknown config keys: {', '.join(sorted(unknown))}")
        cfg = cls()
        if "match" in d:
            try:
                cfg.match = MatchConfig.from_dict(d.pop("match"))
            except (TypeError, ValueError) as exc:
                raise CliError(EXIT_USAGE, f"invalid match config: {exc}") from None
        if "kernels" in d:
            cfg.kernels = {k: KernelConfig(**v) for k, v in d.pop("kernels").items()}
        for k, v in d.items():
            setattr(cfg, k, v)
        return cfg


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--scheme", help="built-in scheme name, '<name>@<fraction>' subset, or scheme JSON file")
    common.add_argument("--config", help="JSON run configuration; flags override it")
    common.add_argument("--out", help="output directory (or file, for transport and render)")
    common.add_argument("--seed", type=int)
    common.add_argument("--jobs", type=int, default=1, help="parallel worker processes across files")
    common.add_argument("--strict", action="store_true", help="stop at the first failing file")
    common.add_argument("-v", "--verbose", action="store_true")

    flow = _Parser(add_help=False)
    flow.add_argument("--steps", type=int)
    flow.add_argument("--integrator", choices=("euler", "rk4"))
    flow.add_argument("--mode", choices=("time_varying", "shooting"))
    flow.add_argument("--beta", type=float)
    flow.add_argument("--gamma", type=float)
    flow.add_argument("--max-iters", type=int)

    p = _Parser(prog="faceflow", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="write a template and warped synthetic targets")
    s.add_argument("--count", type=int)
    s.add_argument("--amplitude", type=float)

    s = sub.add_parser("meanface", parents=[common], help="average similarity-normalized annotations")
    s.add_argument("files", nargs="+")

    s = sub.add_parser("match", parents=[common, flow], help="fit per-curve flows from a template to targets")
    s.add_argument("--template", help="template annotation file (default: the scheme's built-in mean face)")
    s.add_argument("targets", nargs="+")

    s = sub.add_parser("transport", parents=[common], help="push points through a stored flow archive")
    s.add_argument("--archive", required=True)
    g = s.add_mutually_exclusive_group()
    g.add_argument("--points", help="points in the template's normalized frame")
    g.add_argument("--template", help="mean face of the output scheme (--scheme); default built-in")

    s = sub.add_parser("evaluate", parents=[common], help="NME, FR and AUC over a corpus")
    s.add_argument("--pred", nargs="+", required=True)
    s.add_argument("--gt", nargs="+", required=True)
    s.add_argument("--gt-scheme", help="scheme of the ground-truth files (default: --scheme)")
    s.add_argument("--align", action="store_true", help="rigidly align curves before measuring")

    s = sub.add_parser("render", parents=[common], help="SVG overlay of a flow archive")
    s.add_argument("--archive", required=True)
    s.add_argument("--gt", help="ground-truth annotation file")
    s.add_argument("--pred", help="prediction file (default: computed from the archive)")
    s.add_argument("--no-trajectories", action="store_true")
    s.add_argument("--no-momenta", action="store_true")
    return p


def run_config(args) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        try:
            cfg = RunConfig.from_dict(load_json(args.config))
        except FileNotFoundError:
            raise CliError(EXIT_DATA, f"{args.config}: no such file") from None
        except json.JSONDecodeError as exc:
            raise CliError(EXIT_DATA, f"{args.config}: invalid JSON ({exc})") from None
    if args.scheme:
        cfg.scheme = args.scheme
    if args.seed is not None:
        cfg.seed = args.seed
    for name in ("count", "amplitude"):
        if getattr(args, name, None) is not None:
            setattr(cfg, name, getattr(args, name))
    over = {f: getattr(args, f) for f in ("steps", "integrator", "mode", "beta", "gamma", "max_iters")
            if getattr(args, f, None) is not None}
    if over:
        try:
            cfg.match = replace(cfg.match, **over)
        except ValueError as exc:
            raise CliError(EXIT_USAGE, str(exc)) from None
    if getattr(args, "align", False):
        cfg.align = True
    return cfg


def _scheme(name) -> AnnotationScheme:
    try:
        return load_scheme(name)
    except SchemeError as exc:
        raise CliError(EXIT_DATA, str(exc)) from None


def read_annotation(path, scheme: AnnotationScheme) -> FaceShape:
    """Read a file of ``scheme``, or of its parent scheme (then reduced to the kept landmarks)."""
    path = Path(path)
    if not path.exists():
        raise CliError(EXIT_DATA, f"{path}: no such file")
    pts = read_pts(path)
    if len(pts) == scheme.landmark_count:
        return FaceShape(scheme, pts)
    if scheme.parent is not None and len(pts) == scheme.parent.landmark_count:
        return FaceShape(scheme, pts[list(scheme.kept)])
    raise PtsParseError(path, 2, f"scheme {scheme.name!r} expects {scheme.landmark_count} points, file has {len(pts)}")


def _out_dir(path) -> Path:
    if not path:
        raise CliError(EXIT_USAGE, "--out is required")
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(EXIT_DATA, f"{out}: cannot create output directory ({exc.strerror})") from None
    return out


def _normalized(face: FaceShape):
    center, scale = normalization(face)
    return face.with_landmarks((face.landmarks - center) / scale), (center, scale)


# Commands


def cmd_synth(args) -> int:
    cfg = run_config(args)
    scheme = _scheme(cfg.scheme)
    out = _out_dir(args.out)
    center = np.asarray(SYNTH_CENTER)
    for i in range(cfg.count):
        seed = cfg.seed + i
        template, target = synth_face(seed, scheme, cfg.amplitude)
        if i == 0:
            write_pts(out / "template.pts", template.landmarks * SYNTH_SCALE + center)
        write_pts(out / f"synth_{seed:04d}.pts", target.landmarks * SYNTH_SCALE + center)
    dump_json(out / "config.json", cfg.to_dict())
    return EXIT_OK


def cmd_meanface(args) -> int:
    cfg = run_config(args)
    scheme = _scheme(cfg.scheme)
    if not args.out:
        raise CliError(EXIT_USAGE, "--out is required")
    faces = [read_annotation(f, scheme) for f in args.files]
    write_pts(args.out, mean_face(faces).landmarks)
    return EXIT_OK


def _template(path, scheme: AnnotationScheme) -> FaceShape:
    if path:
        return _normalized(read_annotation(path, scheme))[0]
    try:
        return canonical_face(scheme)
    except SchemeError as exc:
        raise CliError(EXIT_USAGE, f"{exc}; pass --template") from None


def _kernels(cfg: RunConfig, template: FaceShape):
    names = template.scheme.curve_names()
    unknown = set(cfg.kernels) - set(names)
    if unknown:
        raise CliError(EXIT_USAGE, f"kernel overrides for unknown curves: {', '.join(sorted(unknown))}")
    base = face_kernels(template)
    return [cfg.kernels.get(n, k) for n, k in zip(names, base)]


def _match_one(job):
    """Worker: one target file. Returns ``(path, code, message, archive, prediction)``."""
    path, scheme, template, kernels, cfg = job
    try:
        target = read_annotation(path, scheme)
        tnorm, frame = _normalized(target)
        result = match_face(template, tnorm, cfg, kernels)
        pred = result.prediction()
        if not np.all(np.isfinite(pred.landmarks)):
            raise FloatingPointError("prediction contains non-finite coordinates")
        doc = archive_document(result, frame, {"source": Path(path).name})
        return path, EXIT_OK, "", doc, pred.landmarks * frame[1] + frame[0]
    except CliError as exc:
        return path, exc.code, str(exc), None, None
    except (PtsParseError, SchemeError, OSError) as exc:
        return path, EXIT_DATA, str(exc), None, None
    except (MatchError, FloatingPointError, np.linalg.LinAlgError) as exc:
        return path, EXIT_NUMERIC, f"{path}: {exc}", None, None
    except ValueError as exc:
        return path, EXIT_DATA, f"{path}: {exc}", None, None


def cmd_match(args) -> int:
    cfg = run_config(args)
    scheme = _scheme(cfg.scheme)
    out = _out_dir(args.out)
    template = _template(args.template, scheme)
    kernels = _kernels(cfg, template)
    dump_json(out / "config.json", cfg.to_dict())
    jobs = [(t, scheme, template, kernels, cfg.match) for t in args.targets]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = pool.map(_match_one, jobs)
            code = _collect_matches(results, scheme, out, args.strict, cfg)
    else:
        code = _collect_matches(map(_match_one, jobs), scheme, out, args.strict, cfg)
    return code


def _collect_matches(results, scheme, out: Path, strict: bool, cfg: RunConfig) -> int:
    preds, gts, ok_files, failures = [], [], [], []
    worst = EXIT_OK
    for path, code, msg, doc, pred in results:
        stem = Path(path).stem
        if code != EXIT_OK:
            print(f"faceflow: {msg}", file=sys.stderr)
            failures.append({"file": Path(path).name, "code": code, "message": msg})
            worst = max(worst, code)
            if strict:
                break
            continue
        dump_json(out / f"{stem}.flow.json", doc)
        write_pts(out / f"{stem}.pred.pts", pred)
        preds.append(FaceShape(scheme, pred))
        gts.append(read_annotation(path, scheme))
        ok_files.append(Path(path).name)
    report = {"files": ok_files, "failures": failures}
    if preds:
        rep = evaluate(preds, gts, cfg.samples_per_curve, align=cfg.align)
        report.update(rep.to_dict())
    dump_json(out / "report.json", report)
    return worst


def cmd_transport(args) -> int:
    if not args.out:
        raise CliError(EXIT_USAGE, "--out is required")
    arch = _archive(args.archive)
    if args.points:
        pts = read_pts(args.points)
        ids = assign_to_curves(pts, arch.template)
        moved = transport_face_points(pts, arch.diffeos, ids)
        write_pts(args.out, arch.to_file_frame(moved))
        return EXIT_OK
    out_scheme = _scheme(args.scheme) if args.scheme else arch.scheme
    out_tpl = _template(args.template, out_scheme)
    src = arch.scheme
    if out_scheme == src or (src.parent is not None and src.parent == out_scheme):
        align = None
    else:
        if len(shared_anchors(out_scheme, src)) < 3:
            raise CliError(
                EXIT_USAGE,
                f"schemes {out_scheme.name!r} and {src.name!r} share fewer than 3 named anchors; "
                "add an 'anchors' table (name -> landmark index) to both scheme documents",
            )
        align = affine_align(out_tpl, arch.template)
    pred = predict_face(arch.template, out_tpl, arch.diffeos, align)
    write_pts(args.out, arch.to_file_frame(pred.landmarks))
    return EXIT_OK


def _archive(path):
    if not Path(path).exists():
        raise CliError(EXIT_DATA, f"{path}: no such file")
    try:
        return load_archive(path)
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise CliError(EXIT_DATA, f"{path}: invalid flow archive ({exc})") from None


def cmd_evaluate(args) -> int:
    cfg = run_config(args)
    if len(args.pred) != len(args.gt):
        raise CliError(EXIT_USAGE, f"{len(args.pred)} prediction files vs {len(args.gt)} ground-truth files")
    pscheme = _scheme(cfg.scheme)
    gscheme = _scheme(args.gt_scheme) if args.gt_scheme else pscheme
    out = _out_dir(args.out)
    preds = [read_annotation(f, pscheme) for f in args.pred]
    gts = [read_annotation(f, gscheme) for f in args.gt]
    rep = evaluate(preds, gts, cfg.samples_per_curve, align=cfg.align)
    doc = rep.to_dict()
    doc["files"] = [{"pred": Path(p).name, "gt": Path(g).name} for p, g in zip(args.pred, args.gt)]
    dump_json(out / "report.json", doc)
    write_ced_csv(out / "ced.csv", ced_points(np.asarray(rep.per_sample_errors) / 100.0))
    if rep.nme_landmark is None:
        print("faceflow: schemes differ; landmark NME not defined, curve NME reported", file=sys.stderr)
    return EXIT_OK


def cmd_render(args) -> int:
    if not args.out:
        raise CliError(EXIT_USAGE, "--out is required")
    arch = _archive(args.archive)
    scheme = _scheme(args.scheme) if args.scheme else arch.scheme
    norm = lambda f: f.with_landmarks(arch.to_normalized(f.landmarks))  # noqa: E731
    gt = norm(read_annotation(args.gt, scheme)) if args.gt else None
    if args.pred:
        pred = norm(read_annotation(args.pred, scheme))
    else:
        pred = predict_face(arch.template, arch.template, arch.diffeos)
    try:
        render_match(args.out, arch.diffeos, arch.template, gt, pred,
                     trajectories=not args.no_trajectories, momenta=not args.no_momenta,
                     pose=arch.to_file_frame)
    except OSError as exc:
        raise CliError(EXIT_DATA, f"{args.out}: cannot write ({exc.strerror})") from None
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "meanface": cmd_meanface,
    "match": cmd_match,
    "transport": cmd_transport,
    "evaluate": cmd_evaluate,
    "render": cmd_render,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    if args.jobs < 1:
        print("faceflow: --jobs must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except CliError as exc:
        print(f"faceflow: {exc}", file=sys.stderr)
        return exc.code
    except (PtsParseError, SchemeError) as exc:
        print(f"faceflow: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"faceflow: {exc.filename or ''}: {exc.strerror}", file=sys.stderr)
        return EXIT_DATA
    except (MatchError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"faceflow: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"faceflow: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
