"""Match under a coarse scheme and predict a fine scheme's landmarks through affine-aligned mean faces.

    python3 scripts/cross_annotation.py --seeds 0 1 2 --coarse coarse34 --fine 300w68
"""

import argparse
import time

from faceflow import affine_align, builtin_scheme, canonical_face, match_face, nme_curve, synth_face
from faceflow.matching import predict_face


def run(seed: int, coarse: str, fine: str, amplitude: float):
    fine_tpl, fine_tgt = synth_face(seed, fine, amplitude)
    coarse_tpl, coarse_tgt = synth_face(seed, coarse, amplitude)
    within = nme_curve(match_face(fine_tpl, fine_tgt).prediction(), fine_tgt)[0]
    flows = match_face(coarse_tpl, coarse_tgt).diffeos()
    # fine mean face expressed in the coarse template frame
    align = affine_align(canonical_face(builtin_scheme(fine)), coarse_tpl)
    pred = predict_face(coarse_tpl, canonical_face(builtin_scheme(fine)), flows, align)
    return within, nme_curve(pred, fine_tgt)[0]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--coarse", default="coarse34")
    ap.add_argument("--fine", default="300w68")
    ap.add_argument("--amplitude", type=float, default=0.05)
    args = ap.parse_args()
    print(f"{'seed':>4} {'within %':>9} {'cross %':>9} {'ratio':>6} {'sec':>5}")
    for s in args.seeds:
        t0 = time.perf_counter()
        within, cross = run(s, args.coarse, args.fine, args.amplitude)
        print(f"{s:>4} {within:9.4f} {cross:9.4f} {cross / within:6.3f} {time.perf_counter() - t0:5.1f}")


if __name__ == "__main__":
    main()
