import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from faceflow import (
    AffineTransform,
    FaceShape,
    affine_align,
    builtin_scheme,
    canonical_face,
    landmark_discrepancy,
    load_scheme,
    mean_face,
    subset_landmarks,
    synth_face,
)
from faceflow.schemes import (
    BUILTIN,
    SchemeError,
    decimate,
    fit_affine,
    fold_free_cap,
    normalize_face,
    random_field,
    save_scheme,
    shared_anchors,
)


def toy_doc(**over):
    doc = {
        "name": "toy",
        "landmark_count": 6,
        "curves": [
            {"name": "a", "indices": [0, 1, 2], "closed": False, "region": "E"},
            {"name": "b", "indices": [3, 4, 5], "closed": True, "region": "M"},
        ],
        "interocular": {"left": [0], "right": [2]},
    }
    doc.update(over)
    return doc


def similarity(points, scale, degrees, shift):
    th = math.radians(degrees)
    R = scale * np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
    return np.asarray(points) @ R.T + np.asarray(shift)


class TestLoadScheme:
    @pytest.mark.parametrize("name,count", [("300w68", 68), ("wflw98", 98), ("helen194", 194), ("coarse34", 34)])
    def test_builtins(self, name, count):
        s = load_scheme(name)
        assert s.landmark_count == count
        assert s.n_curves == 12

    @pytest.mark.parametrize("name", BUILTIN)
    def test_partitions_disjoint_and_regions_known(self, name):
        s = builtin_scheme(name)
        idx = [i for c in s.curves for i in c.indices]
        assert len(idx) == len(set(idx))
        assert {c.region for c in s.curves} == {"F", "E", "N", "I", "M"}

    def test_duplicate_index_names_curve(self):
        doc = toy_doc()
        doc["curves"][1]["indices"] = [2, 4, 5]
        with pytest.raises(SchemeError, match="'b'.*index 2 already used by curve 'a'"):
            load_scheme(doc)

    def test_out_of_range(self):
        doc = toy_doc()
        doc["curves"][0]["indices"] = [0, 1, 9]
        with pytest.raises(SchemeError, match="'a'.*out of range"):
            load_scheme(doc)

    def test_empty_interocular(self):
        with pytest.raises(SchemeError):
            load_scheme(toy_doc(interocular={"left": [], "right": [2]}))

    def test_malformed(self):
        with pytest.raises(SchemeError, match="malformed"):
            load_scheme({"name": "x"})

    def test_unknown_name(self):
        with pytest.raises(SchemeError):
            load_scheme("no-such-scheme")

    @pytest.mark.parametrize("name", BUILTIN)
    def test_roundtrip(self, name, tmp_path):
        doc = builtin_scheme(name).to_document()
        path = tmp_path / "s.json"
        save_scheme(load_scheme(doc), path)
        again = json.loads(path.read_text())
        assert again == json.loads(json.dumps(doc))
        assert load_scheme(str(path)) == builtin_scheme(name)

    def test_subset_name(self):
        s = load_scheme("300w68@0.5")
        assert s.parent == builtin_scheme("300w68")
        assert s.landmark_count == len(s.kept)


class TestCanonicalFace:
    @pytest.mark.parametrize("name", BUILTIN)
    def test_unit_interocular_at_origin(self, name):
        face = canonical_face(builtin_scheme(name))
        a, b = face.scheme.eye_centers(face.landmarks)
        assert face.interocular() == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_allclose((a + b) / 2, 0.0, atol=1e-12)

    def test_shared_anchor_positions_agree(self):
        fine, coarse = canonical_face(builtin_scheme("300w68")), canonical_face(builtin_scheme("coarse34"))
        pairs = shared_anchors(coarse.scheme, fine.scheme)
        assert len(pairs) >= 6
        for i, j in pairs:
            np.testing.assert_allclose(coarse.landmarks[i], fine.landmarks[j], atol=1e-12)


class TestMeanFace:
    def test_single_shape(self):
        face = canonical_face(builtin_scheme("300w68"))
        moved = face.with_landmarks(face.landmarks * 3.0 + [10.0, -4.0])
        np.testing.assert_allclose(mean_face([moved]).landmarks, face.landmarks, atol=1e-12)

    def test_copies_at_different_scales(self):
        face = canonical_face(builtin_scheme("wflw98"))
        a = face.with_landmarks(face.landmarks * 0.5 + 1.0)
        b = face.with_landmarks(face.landmarks * 7.0 - 3.0)
        np.testing.assert_allclose(mean_face([a, b]).landmarks, normalize_face(a).landmarks, atol=1e-12)

    def test_mirror_pair_lies_on_axis(self):
        # two faces mirrored about the x-axis, with eye references also on the x-axis
        scheme = load_scheme(toy_doc())
        pts = np.array([(-1, 0), (0, 0.4), (1, 0), (0.2, -0.8), (0.5, -1.1), (-0.1, -1.3)], dtype=float)
        mirrored = pts * [1, -1]
        m = mean_face([FaceShape(scheme, pts), FaceShape(scheme, mirrored)])
        np.testing.assert_allclose(m.landmarks[:, 1], 0.0, atol=1e-15)
        np.testing.assert_allclose(m.landmarks[:, 0], normalize_face(FaceShape(scheme, pts)).landmarks[:, 0])

    @given(st.floats(0.2, 5), st.floats(-10, 10), st.floats(-10, 10), st.integers(0, 3))
    def test_invariant_to_scale_and_translation(self, s, dx, dy, which):
        shapes = [synth_face(k, "300w68", 0.04)[1] for k in range(4)]
        base = mean_face(shapes)
        shapes[which] = shapes[which].with_landmarks(shapes[which].landmarks * s + [dx, dy])
        np.testing.assert_allclose(mean_face(shapes).landmarks, base.landmarks, atol=1e-10)

    def test_rejects(self):
        with pytest.raises(ValueError):
            mean_face([])
        with pytest.raises(ValueError):
            mean_face([canonical_face(builtin_scheme("300w68")), canonical_face(builtin_scheme("wflw98"))])


class TestAffineAlign:
    def _faces(self, fn):
        src = canonical_face(builtin_scheme("coarse34"))
        tgt = canonical_face(builtin_scheme("300w68"))
        return src, tgt.with_landmarks(fn(tgt.landmarks))

    def test_identity(self):
        src, tgt = self._faces(lambda x: x)
        T = affine_align(src, tgt)
        np.testing.assert_allclose(T.linear, np.eye(2), atol=1e-12)
        np.testing.assert_allclose(T.translation, 0.0, atol=1e-12)

    def test_translation(self):
        src, tgt = self._faces(lambda x: x + [1.0, 2.0])
        T = affine_align(src, tgt)
        np.testing.assert_allclose(T.linear, np.eye(2), atol=1e-12)
        np.testing.assert_allclose(T.translation, [1.0, 2.0], atol=1e-12)

    def test_scale_rotation(self):
        src, tgt = self._faces(lambda x: similarity(x, 2.0, 30.0, (0.0, 0.0)))
        T = affine_align(src, tgt)
        th = math.radians(30)
        expect = 2 * np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
        np.testing.assert_allclose(T.linear, expect, atol=1e-10)
        np.testing.assert_allclose(T.translation, 0.0, atol=1e-10)

    def test_collinear_rejected(self):
        with pytest.raises(ValueError, match="collinear"):
            fit_affine([(0, 0), (1, 1), (2, 2), (3, 3)], [(0, 0), (1, 0), (2, 1), (0, 5)])

    def test_too_few(self):
        with pytest.raises(ValueError):
            fit_affine([(0, 0), (1, 0)], [(0, 0), (1, 0)])

    def test_least_squares_matches_normal_equations(self, rng):
        for _ in range(20):
            src = rng.normal(size=(7, 2))
            dst = src @ rng.normal(size=(2, 2)) + rng.normal(size=2) + 0.1 * rng.normal(size=(7, 2))
            T = fit_affine(src, dst)
            X = np.column_stack([src, np.ones(7)])
            sol = np.linalg.solve(X.T @ X, X.T @ dst)
            np.testing.assert_allclose(T.linear, sol[:2].T, atol=1e-10)
            np.testing.assert_allclose(T.translation, sol[2], atol=1e-10)

    def test_exact_on_affine_anchors(self, rng):
        src = rng.normal(size=(6, 2))
        A, b = rng.normal(size=(2, 2)) + 2 * np.eye(2), rng.normal(size=2)
        T = fit_affine(src, src @ A.T + b)
        assert np.abs(T(src) - (src @ A.T + b)).max() <= 1e-10

    def test_inverse(self):
        T = AffineTransform([[2.0, 0.3], [-0.1, 1.5]], [0.4, -2.0])
        x = np.array([(0.3, 0.2), (-1.0, 4.0)])
        np.testing.assert_allclose(T.inverse()(T(x)), x, atol=1e-14)

    def test_singular_rejected(self):
        with pytest.raises(ValueError):
            AffineTransform([[1, 2], [2, 4]], [0, 0])


class TestSubset:
    def test_identity(self):
        face = canonical_face(builtin_scheme("300w68"))
        assert subset_landmarks(face, 1.0) is face

    def test_decimation_rule(self):
        assert decimate(5, False, 0.5) == [0, 2, 4]
        assert decimate(8, True, 0.5) == [0, 2, 4, 6]
        assert decimate(6, False, 0.5) == [0, 2, 4, 5]
        assert decimate(10, False, 1 / 3) == [0, 3, 6, 9]

    def test_too_few_points_rejected(self):
        face = FaceShape(load_scheme(toy_doc()), np.arange(12, dtype=float).reshape(6, 2) ** 1.5)
        with pytest.raises(ValueError, match="'b'"):
            subset_landmarks(face, 0.3)

    @pytest.mark.parametrize("name", BUILTIN)
    @pytest.mark.parametrize("fraction", [0.5, 1 / 3])
    def test_kept_map(self, name, fraction):
        face = canonical_face(builtin_scheme(name))
        if name == "coarse34" and fraction < 0.5:
            # its closed 3-point inner lip keeps a single point at stride 3
            with pytest.raises(ValueError, match="inner_lip"):
                subset_landmarks(face, fraction)
            return
        sub = subset_landmarks(face, fraction)
        kept = np.array(sub.scheme.kept)
        assert len(set(kept)) == len(kept)
        np.testing.assert_array_equal(sub.landmarks, face.landmarks[kept])
        back = {o: k for k, o in enumerate(kept)}
        assert [back[o] for o in kept] == list(range(len(kept)))
        assert sub.interocular() == pytest.approx(face.interocular(), rel=1e-12)
        for spec, full in zip(sub.scheme.curves, face.scheme.curves):
            assert spec.name == full.name and spec.closed == full.closed
            if not full.closed:
                assert kept[spec.indices[0]] == full.indices[0]
                assert kept[spec.indices[-1]] == full.indices[-1]

    def test_half_of_300w(self):
        sub = load_scheme("300w68@0.5")
        assert sub.landmark_count == 42

    def test_bad_fraction(self):
        face = canonical_face(builtin_scheme("300w68"))
        for f in (0.0, 1.5):
            with pytest.raises(ValueError):
                subset_landmarks(face, f)


class TestSynth:
    def test_zero_amplitude(self):
        tpl, tgt = synth_face(3, "300w68", 0.0)
        np.testing.assert_array_equal(tpl.landmarks, tgt.landmarks)

    def test_deterministic(self):
        a = synth_face(11, "wflw98", 0.05)[1]
        b = synth_face(11, "wflw98", 0.05)[1]
        np.testing.assert_array_equal(a.landmarks, b.landmarks)
        assert not np.array_equal(a.landmarks, synth_face(12, "wflw98", 0.05)[1].landmarks)

    @given(st.integers(0, 2**31 - 1), st.sampled_from(BUILTIN))
    def test_discrepancy_bound(self, seed, name):
        tpl, tgt = synth_face(seed, name, 0.05)
        d = landmark_discrepancy(tpl.landmarks, tgt.landmarks)
        assert 0 < d <= 0.1 * tgt.interocular()

    def test_cap(self):
        with pytest.raises(ValueError, match="fold-free"):
            synth_face(0, "300w68", fold_free_cap())
        with pytest.raises(ValueError):
            synth_face(0, "300w68", -0.1)

    @given(st.integers(0, 2**31 - 1), st.floats(0.0, 0.99))
    def test_warp_fold_free_below_cap(self, seed, frac):
        field = random_field(seed, frac * fold_free_cap())
        g = np.stack(np.meshgrid(np.linspace(-1.5, 1.5, 25), np.linspace(-1.2, 1.8, 25)), -1).reshape(-1, 2)
        h = 1e-5
        dx = (field.warp(g + [h, 0]) - field.warp(g - [h, 0])) / (2 * h)
        dy = (field.warp(g + [0, h]) - field.warp(g - [0, h])) / (2 * h)
        assert (dx[:, 0] * dy[:, 1] - dx[:, 1] * dy[:, 0]).min() > 0

    def test_bump_widths(self):
        field = random_field(5, 0.05)
        assert len(field.widths) <= 5
        assert field.widths.min() >= 0.3
