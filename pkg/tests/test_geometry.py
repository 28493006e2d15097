import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from faceflow import Curve, FaceShape, builtin_scheme, curve_scale, curve_to_current, resample_curve
from faceflow.schemes import canonical_face

from conftest import polylines


class TestCurveToCurrent:
    def test_single_segment(self):
        cur = curve_to_current(Curve([(0, 0), (2, 0)]))
        assert cur.centers.tolist() == [[1.0, 0.0]]
        assert cur.tangents.tolist() == [[2.0, 0.0]]

    def test_two_segments(self):
        cur = curve_to_current(Curve([(0, 0), (1, 0), (2, 0)]))
        assert cur.centers.tolist() == [[0.5, 0.0], [1.5, 0.0]]
        assert cur.tangents.tolist() == [[1.0, 0.0], [1.0, 0.0]]

    def test_closed_triangle_wraps(self):
        cur = curve_to_current(Curve([(0, 0), (1, 0), (0, 1)], closed=True))
        assert len(cur) == 3
        assert cur.tangents[-1].tolist() == [0.0, -1.0]
        assert cur.centers[-1].tolist() == [0.0, 0.5]
        np.testing.assert_array_equal(cur.tangents.sum(axis=0), [0.0, 0.0])

    def test_degenerate_segment_rejected(self):
        with pytest.raises(ValueError, match="distinct"):
            Curve([(0, 0), (0, 0), (1, 0)])

    def test_closed_wrap_degenerate_rejected(self):
        with pytest.raises(ValueError):
            Curve([(0, 0), (1, 0), (0, 0)], closed=True)

    def test_rejects_single_point_and_nan(self):
        with pytest.raises(ValueError):
            Curve([(0, 0)])
        with pytest.raises(ValueError, match="non-finite"):
            Curve([(0, 0), (np.nan, 1)])

    @given(polylines())
    def test_current_size(self, data):
        pts, closed = data
        cur = curve_to_current(Curve(pts, closed))
        assert len(cur) == (len(pts) if closed else len(pts) - 1)

    @given(polylines(closed=True))
    def test_closed_tangents_telescope(self, data):
        pts, _ = data
        total = curve_to_current(Curve(pts, True)).tangents.sum(axis=0)
        assert np.abs(total).max() < 1e-12 * max(1.0, np.abs(pts).max())

    @given(polylines(closed=False))
    def test_reversal_negates_tangents(self, data):
        pts, _ = data
        fwd = curve_to_current(Curve(pts))
        rev = curve_to_current(Curve(pts).reversed())
        np.testing.assert_array_equal(rev.tangents, -fwd.tangents[::-1])
        np.testing.assert_allclose(rev.centers, fwd.centers[::-1], rtol=0, atol=1e-15)


class TestResample:
    def test_segment_midpoint(self):
        out = resample_curve(Curve([(0, 0), (2, 0)]), 3)
        np.testing.assert_allclose(out.points, [[0, 0], [1, 0], [2, 0]])

    def test_corner_walk(self):
        out = resample_curve(Curve([(0, 0), (1, 0), (1, 1)]), 5)
        # arc lengths 0, 0.5, 1, 1.5, 2 along the L-shaped path
        np.testing.assert_allclose(out.points, [[0, 0], [0.5, 0], [1, 0], [1, 0.5], [1, 1]], atol=1e-15)

    def test_uniform_curve_is_fixed(self):
        pts = np.column_stack([np.linspace(0, 3, 7), np.zeros(7)])
        np.testing.assert_allclose(resample_curve(Curve(pts), 7).points, pts, atol=1e-15)

    def test_closed_uniform_curve_is_fixed(self):
        sq = np.array([(0, 0), (1, 0), (1, 1), (0, 1)], dtype=float)
        np.testing.assert_allclose(resample_curve(Curve(sq, True), 4).points, sq, atol=1e-15)

    def test_m_below_two_rejected(self):
        with pytest.raises(ValueError):
            resample_curve(Curve([(0, 0), (1, 0)]), 1)

    @given(polylines(closed=False))
    def test_open_keeps_endpoints(self, data):
        pts, _ = data
        out = resample_curve(Curve(pts), 17)
        np.testing.assert_array_equal(out.points[0], pts[0])
        np.testing.assert_array_equal(out.points[-1], pts[-1])

    @given(polylines(closed=False, max_n=8), st.integers(1, 6))
    def test_length_preserved_when_vertices_hit(self, data, k):
        # unit-length segments with m = k * segments + 1 put a sample on every vertex
        pts, _ = data
        seg = np.diff(pts, axis=0)
        unit = seg / np.linalg.norm(seg, axis=1, keepdims=True)
        c = Curve(np.vstack([pts[:1], pts[0] + np.cumsum(unit, axis=0)]))
        out = resample_curve(c, k * (len(c) - 1) + 1)
        assert abs(out.length() - c.length()) <= 1e-9 * c.length()

    def test_closed_length_preserved_when_vertices_hit(self):
        sq = Curve([(0, 0), (1, 0), (1, 1), (0, 1)], True)
        for m in (4, 8, 12):
            assert abs(resample_curve(sq, m).length() - 4.0) <= 4e-9

    @given(polylines())
    def test_length_never_grows_and_converges(self, data):
        pts, closed = data
        c = Curve(pts, closed)
        coarse, dense = resample_curve(c, 16).length(), resample_curve(c, 4000).length()
        assert coarse <= c.length() * (1 + 1e-12)
        assert dense == pytest.approx(c.length(), rel=1e-3)

    @given(polylines(closed=False))
    def test_length_preserved_on_straight_lines(self, data):
        pts, _ = data
        d = pts[-1] - pts[0]
        if np.linalg.norm(d) < 1e-3:
            return
        t = np.sort(np.concatenate([[0.0, 1.0], np.random.default_rng(len(pts)).uniform(0.01, 0.99, 5)]))
        line = Curve(pts[0] + t[:, None] * d[None])
        out = resample_curve(line, 33)
        assert abs(out.length() - line.length()) <= 1e-9 * line.length()


class TestCurveScale:
    def test_examples(self):
        assert curve_scale(Curve([(0, 0), (2, 0)])) == 2
        assert curve_scale(Curve([(0, 0), (1, 0), (1, 3)])) == 3
        assert curve_scale(Curve([(0, 0), (1, 0), (1, 1), (0, 1)], True)) == 1

    def test_zero_scale_rejected(self):
        with pytest.raises(ValueError, match="zero scale"):
            curve_scale(np.zeros((3, 2)))

    @given(polylines())
    def test_translation_invariant_and_positive(self, data):
        pts, closed = data
        a = curve_scale(Curve(pts, closed))
        b = curve_scale(Curve(pts + np.array([3.25, -7.5]), closed))
        assert a > 0
        assert b == pytest.approx(a, rel=1e-12)


class TestFaceShape:
    def test_curves_follow_partition(self):
        scheme = builtin_scheme("300w68")
        face = canonical_face(scheme)
        assert len(face.curves) == 12
        for spec, curve in zip(scheme.curves, face.curves):
            assert len(curve) == len(spec.indices)
            assert curve.closed == spec.closed
            np.testing.assert_array_equal(curve.points, face.landmarks[list(spec.indices)])

    def test_wrong_count_rejected(self):
        with pytest.raises(ValueError):
            FaceShape(builtin_scheme("300w68"), np.zeros((67, 2)))

    def test_landmarks_immutable(self):
        face = canonical_face(builtin_scheme("300w68"))
        with pytest.raises(ValueError):
            face.landmarks[0, 0] = 1.0

    def test_from_curves_roundtrip(self):
        face = canonical_face(builtin_scheme("wflw98"))
        again = FaceShape.from_curves(face.scheme, [c.points for c in face.curves],
                                      extra=face.landmarks[face.scheme.uncovered()])
        np.testing.assert_array_equal(again.landmarks, face.landmarks)
