"""Regenerate the built-in scheme documents under src/faceflow/data/."""

import json
from pathlib import Path

OUT = Path(__file__).resolve().parents[1] / "src" / "faceflow" / "data"


def build(name, parts, interocular, anchors, points=None, note=None):
    curves, start = [], 0
    for cname, n, closed, region, prim, rng, ends in parts:
        curves.append({
            "name": cname,
            "indices": list(range(start, start + n)),
            "closed": closed,
            "region": region,
            "canonical": {"primitive": prim, "range": list(rng), "ends": ends},
        })
        start += n
    total = start + len(points or {})
    doc = {"name": name, "landmark_count": total, "curves": curves,
           "interocular": {"left": interocular[0], "right": interocular[1]}, "anchors": anchors}
    if points:
        doc["canonical_points"] = {str(k): v for k, v in points.items()}
    if note:
        doc["note"] = note
    return doc


FULL, UP, LOW = (0.0, 1.0), (0.0, 0.5), (0.5, 1.0)

SCHEMES = [
    build("300w68", [
        ("face_contour", 17, False, "F", "contour", FULL, "both"),
        ("right_brow", 5, False, "E", "right_brow", FULL, "both"),
        ("left_brow", 5, False, "E", "left_brow", FULL, "both"),
        ("nose_bridge", 4, False, "N", "nose_bridge", FULL, "both"),
        ("nose_base", 5, False, "N", "nose_base", FULL, "both"),
        ("right_eye_upper", 4, False, "I", "right_eye", UP, "both"),
        ("right_eye_lower", 2, False, "I", "right_eye", LOW, "none"),
        ("left_eye_upper", 4, False, "I", "left_eye", UP, "both"),
        ("left_eye_lower", 2, False, "I", "left_eye", LOW, "none"),
        ("outer_lip_upper", 7, False, "M", "outer_lip", UP, "both"),
        ("outer_lip_lower", 5, False, "M", "outer_lip", LOW, "none"),
        ("inner_lip", 8, True, "M", "inner_lip", FULL, "loop"),
    ], ([36], [45]), {"right_eye_outer": 36, "right_eye_inner": 39, "left_eye_inner": 42,
                      "left_eye_outer": 45, "nose_bottom": 33, "mouth_right": 48, "mouth_left": 54}),
    build("wflw98", [
        ("face_contour", 33, False, "F", "contour", FULL, "both"),
        ("right_brow", 9, True, "E", "right_brow_loop", FULL, "loop"),
        ("left_brow", 9, True, "E", "left_brow_loop", FULL, "loop"),
        ("nose_bridge", 4, False, "N", "nose_bridge", FULL, "both"),
        ("nose_base", 5, False, "N", "nose_base", FULL, "both"),
        ("right_eye_upper", 5, False, "I", "right_eye", UP, "both"),
        ("right_eye_lower", 3, False, "I", "right_eye", LOW, "none"),
        ("left_eye_upper", 5, False, "I", "left_eye", UP, "both"),
        ("left_eye_lower", 3, False, "I", "left_eye", LOW, "none"),
        ("outer_lip_upper", 7, False, "M", "outer_lip", UP, "both"),
        ("outer_lip_lower", 5, False, "M", "outer_lip", LOW, "none"),
        ("inner_lip", 8, True, "M", "inner_lip", FULL, "loop"),
    ], ([60], [72]), {"right_eye_outer": 60, "right_eye_inner": 64, "left_eye_inner": 68,
                      "left_eye_outer": 72, "nose_bottom": 57, "mouth_right": 76, "mouth_left": 82},
        points={96: [-0.34, 0.0], 97: [0.34, 0.0]}),
    build("helen194", [
        ("face_contour", 41, False, "F", "contour", FULL, "both"),
        ("nose", 17, False, "N", "nose_full", FULL, "both"),
        ("outer_lip_upper", 14, False, "M", "outer_lip", UP, "both"),
        ("outer_lip_lower", 14, False, "M", "outer_lip", LOW, "none"),
        ("inner_lip_upper", 14, False, "M", "inner_lip", UP, "both"),
        ("inner_lip_lower", 14, False, "M", "inner_lip", LOW, "none"),
        ("right_eye_upper", 10, False, "I", "right_eye", UP, "both"),
        ("right_eye_lower", 10, False, "I", "right_eye", LOW, "none"),
        ("left_eye_upper", 10, False, "I", "left_eye", UP, "both"),
        ("left_eye_lower", 10, False, "I", "left_eye", LOW, "none"),
        ("right_brow", 20, True, "E", "right_brow_loop", FULL, "loop"),
        ("left_brow", 20, True, "E", "left_brow_loop", FULL, "loop"),
    ], ([114], [143]), {"right_eye_outer": 114, "right_eye_inner": 123, "left_eye_inner": 134,
                        "left_eye_outer": 143, "nose_bottom": 49, "mouth_right": 58, "mouth_left": 71}),
    build("coarse34", [
        ("face_contour", 5, False, "F", "contour", FULL, "both"),
        ("right_brow", 3, False, "E", "right_brow", FULL, "both"),
        ("left_brow", 3, False, "E", "left_brow", FULL, "both"),
        ("nose_bridge", 2, False, "N", "nose_bridge", FULL, "both"),
        ("nose_base", 3, False, "N", "nose_base", FULL, "both"),
        ("right_eye_upper", 3, False, "I", "right_eye", UP, "both"),
        ("right_eye_lower", 2, False, "I", "right_eye", LOW, "none"),
        ("left_eye_upper", 3, False, "I", "left_eye", UP, "both"),
        ("left_eye_lower", 2, False, "I", "left_eye", LOW, "none"),
        ("outer_lip_upper", 3, False, "M", "outer_lip", UP, "both"),
        ("outer_lip_lower", 2, False, "M", "outer_lip", LOW, "none"),
        ("inner_lip", 3, True, "M", "inner_lip", FULL, "loop"),
    ], ([16], [23]), {"right_eye_outer": 16, "right_eye_inner": 18, "left_eye_inner": 21,
                      "left_eye_outer": 23, "nose_bottom": 14, "mouth_right": 26, "mouth_left": 28},
        note="toy sparse scheme over the canonical face, for cross-annotation experiments"),
]

if __name__ == "__main__":
    OUT.mkdir(parents=True, exist_ok=True)
    for doc in SCHEMES:
        path = OUT / f"{doc['name']}.json"
        path.write_text(json.dumps(doc, indent=1) + "\n")
        print(path, doc["landmark_count"])
