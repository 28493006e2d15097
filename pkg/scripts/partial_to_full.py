"""Match with a landmark subset, transport the held-out landmarks, compare to full supervision.

    python3 scripts/partial_to_full.py --seeds 0 1 2 3 4 --fraction 0.5
"""

import argparse
import time

from faceflow import match_face, nme_curve, subset_landmarks, synth_face
from faceflow.matching import predict_face


def run(seed: int, scheme: str, fraction: float, amplitude: float):
    template, target = synth_face(seed, scheme, amplitude)
    full = match_face(template, target).prediction()
    sub_tpl, sub_tgt = subset_landmarks(template, fraction), subset_landmarks(target, fraction)
    part = match_face(sub_tpl, sub_tgt)
    pred = predict_face(sub_tpl, template, part.diffeos())
    return nme_curve(full, target)[0], nme_curve(pred, target)[0], sub_tpl.scheme.landmark_count


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--scheme", default="300w68")
    ap.add_argument("--fraction", type=float, default=0.5)
    ap.add_argument("--amplitude", type=float, default=0.05)
    args = ap.parse_args()
    print(f"{'seed':>4} {'kept':>5} {'full %':>9} {'partial %':>9} {'ratio':>6} {'sec':>5}")
    for s in args.seeds:
        t0 = time.perf_counter()
        full, part, kept = run(s, args.scheme, args.fraction, args.amplitude)
        print(f"{s:>4} {kept:>5} {full:9.4f} {part:9.4f} {part / full:6.3f} {time.perf_counter() - t0:5.1f}")


if __name__ == "__main__":
    main()
