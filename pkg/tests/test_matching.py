import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from faceflow import (
    Curve,
    KernelConfig,
    MatchConfig,
    MomentaField,
    builtin_scheme,
    integrate_flow,
    jacobian_probe,
    landmark_discrepancy,
    match_curve,
    match_face,
    objective,
    objective_gradient,
    path_energy,
    synth_face,
)
from faceflow.flow import bbox_grid
from faceflow.geometry import curve_scale
from faceflow.matching import CurveProblem, LineSearch, MatchError, check_pair
from faceflow.schemes import canonical_face

from conftest import fd_gradient, max_rel_error

FACE = canonical_face(builtin_scheme("300w68"))


def rotate(points, degrees):
    th = math.radians(degrees)
    R = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
    mu = points.mean(axis=0)
    return (points - mu) @ R.T + mu


def small_problem(seed, cfg=None, n=None):
    rng = np.random.default_rng(seed)
    n = n or int(rng.integers(3, 7))
    closed = bool(rng.integers(2))
    x = np.cumsum(rng.normal(size=(n, 2)), axis=0) * 0.3
    y = x + rng.normal(size=(n, 2)) * 0.2
    pr = CurveProblem(x, y, closed, cfg or MatchConfig(steps=3))
    return pr, rng.normal(size=pr.shape) * 0.3


class TestLandmarkDiscrepancy:
    def test_examples(self):
        pts = np.array([(0.0, 1.0), (2.0, -1.0), (4.0, 0.5)])
        assert landmark_discrepancy(pts, pts) == 0.0
        assert landmark_discrepancy(pts, pts + [3.0, 4.0]) == pytest.approx(5.0, rel=1e-15)
        assert landmark_discrepancy([(0, 0)], [(1, 0)]) == 1.0

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="differ in length"):
            landmark_discrepancy(np.zeros((3, 2)), np.zeros((2, 2)))


class TestPathEnergy:
    def test_zero(self):
        tr = np.zeros((4, 3, 2))
        assert path_energy(MomentaField.zeros(3, 3), tr, 1.0) == 0.0

    @pytest.mark.parametrize("steps", [1, 4, 10])
    def test_single_landmark(self, steps):
        d = integrate_flow([(0.0, 0.0)], MomentaField.constant(steps, [(1.0, 0.0)]), 0.5)
        assert path_energy(d.momenta, d.trajectories, 0.5) == pytest.approx(1.0, rel=1e-14)

    def test_doubling_quadruples_on_frozen_path(self, rng):
        d = integrate_flow(rng.normal(size=(4, 2)), MomentaField(rng.normal(size=(5, 4, 2))), 1.0)
        e1 = path_energy(d.momenta, d.trajectories, 1.0)
        e2 = path_energy(2 * d.momenta.momenta, d.trajectories, 1.0)
        assert e2 == pytest.approx(4 * e1, rel=1e-14)

    def test_positive_unless_zero(self, rng):
        d = integrate_flow(rng.normal(size=(4, 2)), MomentaField(rng.normal(size=(5, 4, 2))), 1.0)
        assert path_energy(d.momenta, d.trajectories, 1.0) > 0


class TestObjective:
    def test_equal_shapes_zero_momenta(self):
        zero = [np.zeros((10, len(c), 2)) for c in FACE.curves]
        assert objective(FACE, FACE, zero) == 0.0

    def test_arithmetic(self):
        # target 3 units away along the segment: D_l = 3 and the far-apart currents
        # give D_c = |u|^2 + |v|^2 = 2 up to a cross term ~ exp(-36)
        pr = CurveProblem([(0, 0), (1, 0)], [(3, 0), (4, 0)], False, MatchConfig(steps=1))
        t = pr.terms(pr.zeros())
        assert t["Dl"] == 3.0
        assert t["Dc"] == pytest.approx(2.0, abs=1e-14)
        assert pr.value(pr.zeros()) == pytest.approx(3.2, abs=1e-14)

    def test_d_ipd_halves(self, rng):
        x = rng.normal(size=(5, 2))
        y = x + 0.1 * rng.normal(size=(5, 2))
        cfg = MatchConfig(steps=3)
        p = rng.normal(size=(3, 5, 2)) * 0.1
        f1 = CurveProblem(x, y, False, cfg, d_ipd=1.0).value(p)
        f2 = CurveProblem(x, y, False, cfg, d_ipd=2.0).value(p)
        assert f2 == pytest.approx(f1 / 2, rel=1e-14)

    def test_gamma_penalizes_momenta(self):
        for seed in range(5):
            pr0, p = small_problem(seed, MatchConfig(steps=3))
            pr1, _ = small_problem(seed, MatchConfig(steps=3, gamma=0.1))
            assert pr1.value(p) > pr0.value(p)
            assert pr1.value(pr1.zeros()) == pr0.value(pr0.zeros())

    def test_face_objective_sums_curves(self):
        _, tgt = synth_face(3, "300w68", 0.05)
        rng = np.random.default_rng(0)
        moms = [rng.normal(size=(10, len(c), 2)) * 0.01 for c in FACE.curves]
        total = objective(FACE, tgt, moms)
        per = []
        for k, c in enumerate(FACE.curves):
            pr = CurveProblem(c.points, tgt.curves[k].points, c.closed, MatchConfig(),
                              KernelConfig.from_scale(curve_scale(c)), tgt.interocular())
            per.append(pr.value(moms[k]))
        assert total == pytest.approx(sum(per), rel=1e-12)

    def test_rejects_scheme_mismatch_and_zero_ipd(self):
        wflw = canonical_face(builtin_scheme("wflw98"))
        with pytest.raises(ValueError):
            objective(FACE, wflw, [])
        with pytest.raises(ValueError, match="interocular"):
            objective(FACE, FACE.with_landmarks(np.zeros((68, 2))), [])


class TestGradient:
    def test_zero_at_minimum(self):
        g = objective_gradient(FACE, FACE, [np.zeros((10, len(c), 2)) for c in FACE.curves])
        assert max(np.linalg.norm(gk) for gk in g) < 1e-8

    def test_small_instance(self):
        pr, p = small_problem(11, MatchConfig(steps=3), n=4)
        assert max_rel_error(pr.gradient(p), fd_gradient(pr.value, p)) < 1e-4

    def test_energy_term_alone(self):
        # beta = 0 and a target equal to the deformed landmarks leaves only the energy
        # term near the evaluation point; compare against FD of the energy directly
        rng = np.random.default_rng(2)
        x = rng.normal(size=(2, 2))
        p = rng.normal(size=(4, 2, 2)) * 0.3
        cfg = MatchConfig(steps=4, gamma=0.7)
        base = CurveProblem(x, x + 0.05, False, cfg)
        no_energy = CurveProblem(x, x + 0.05, False, MatchConfig(steps=4))
        g_energy = base.gradient(p) - no_energy.gradient(p)

        def energy(q):
            d = integrate_flow(x, MomentaField(q), base.kernel.sigma_v)
            return 0.7 * path_energy(d.momenta, d.trajectories, base.kernel.sigma_v)

        assert max_rel_error(g_energy, fd_gradient(energy, p)) < 1e-4

    @pytest.mark.parametrize("mode", ["time_varying", "shooting"])
    @pytest.mark.parametrize("integrator", ["euler", "rk4"])
    @pytest.mark.parametrize("gamma", [0.0, 0.3])
    def test_all_variants(self, mode, integrator, gamma):
        cfg = MatchConfig(steps=3, mode=mode, integrator=integrator, gamma=gamma)
        for seed in range(3):
            pr, p = small_problem(100 + seed, cfg)
            assert max_rel_error(pr.gradient(p), fd_gradient(pr.value, p)) < 1e-4

    def test_face_gradient_matches_fd(self):
        scheme = builtin_scheme("coarse34")
        tpl, tgt = synth_face(1, scheme, 0.05)
        cfg = MatchConfig(steps=2)
        rng = np.random.default_rng(5)
        moms = [rng.normal(size=(2, len(c), 2)) * 0.02 for c in tpl.curves]
        g = objective_gradient(tpl, tgt, moms, cfg)
        k = 4
        def f(q):
            m = list(moms)
            m[k] = q
            return objective(tpl, tgt, m, cfg)
        assert max_rel_error(g[k], fd_gradient(f, moms[k])) < 1e-4


class TestMatchCurve:
    def test_identity(self):
        c = FACE.curves[0]
        r = match_curve(c, c)
        assert r.history[-1] < 1e-10
        assert np.abs(r.momenta.momenta).max() < 1e-8
        assert r.converged

    @pytest.mark.parametrize("k", range(12))
    def test_translation(self, k):
        c = FACE.curves[k]
        s = curve_scale(c)
        r = match_curve(c, Curve(c.points + [0.1 * s, 0.0], c.closed), MatchConfig(max_iters=200))
        assert r.iterations <= 200
        assert r.final_Dl < 1e-3 * s

    @pytest.mark.parametrize("k", range(12))
    def test_rotation(self, k):
        c = FACE.curves[k]
        tgt = rotate(c.points, 5.0)
        r = match_curve(c, Curve(tgt, c.closed))
        assert r.final_Dl <= 0.01 * landmark_discrepancy(c.points, tgt)

    def test_history_monotone_and_deformed_matches_diffeo(self):
        c = FACE.curves[9]
        r = match_curve(c, Curve(rotate(c.points, 8.0) + 0.02, c.closed), MatchConfig(max_iters=60))
        assert np.all(np.diff(r.history) <= 0)
        np.testing.assert_array_equal(r.deformed, r.diffeo.endpoint)
        assert r.iterations == len(r.history) - 1

    def test_degenerate_target_rejected(self):
        with pytest.raises(ValueError):
            check_pair(np.array([(0, 0), (1, 0)]), np.array([(2, 2), (2, 2)]), False)
        with pytest.raises(ValueError):
            match_curve(Curve([(0, 0), (1, 0)]), np.array([(2, 2), (2, 2)]))

    def test_exhausted_line_search_is_flagged(self):
        # a near-1 Armijo constant only accepts steps far below min_step
        cfg = MatchConfig(line_search=LineSearch(sufficient_decrease=1 - 1e-9, min_step=1e-3),
                          direction="steepest", max_iters=50)
        c = FACE.curves[0]
        r = match_curve(c, Curve(c.points * 1.3, False), cfg)
        assert r.degraded and not r.converged
        assert np.all(np.diff(r.history) <= 0)

    def test_shooting_mode(self):
        c = FACE.curves[9]
        r = match_curve(c, Curve(rotate(c.points, 5.0), c.closed), MatchConfig(mode="shooting", max_iters=200))
        assert r.diffeo.mode == "shooting"
        assert r.final_Dl < 0.05 * landmark_discrepancy(c.points, rotate(c.points, 5.0))

    def test_translation_equivariance(self):
        c = FACE.curves[9]
        tgt = rotate(c.points, 6.0)
        cfg = MatchConfig(max_iters=40)
        shift = np.array([0.75, -1.25])
        r1 = match_curve(c, Curve(tgt, c.closed), cfg)
        r2 = match_curve(Curve(c.points + shift, c.closed), Curve(tgt + shift, c.closed), cfg)
        np.testing.assert_allclose(r2.diffeo.endpoint, r1.diffeo.endpoint + shift, atol=1e-8)
        np.testing.assert_allclose(r2.momenta.momenta, r1.momenta.momenta, atol=1e-6)


class TestMatchFace:
    def test_identity(self):
        r = match_face(FACE, FACE)
        assert all(np.abs(c.momenta.momenta).max() < 1e-8 for c in r.per_curve)
        assert r.objective < 1e-10

    def test_synth_fixture(self):
        from faceflow import nme_landmark

        tpl, tgt = synth_face(0, "300w68", 0.05)
        r = match_face(tpl, tgt)
        assert nme_landmark(r.prediction(), tgt) < 0.5
        hist = r.objective_history
        assert np.all(np.diff(hist) <= 0)
        assert len(r.per_curve) == 12
        dif = r.per_curve[0].diffeo
        grid = bbox_grid(tpl.landmarks, 20)
        assert jacobian_probe(dif, grid, dif.sigma_v / 100) > 0

    def test_order_independence(self):
        scheme = builtin_scheme("coarse34")
        tpl, tgt = synth_face(2, scheme, 0.05)
        cfg = MatchConfig(max_iters=30)
        a = match_face(tpl, tgt, cfg)
        b = match_face(tpl, tgt, cfg, order=list(reversed(range(scheme.n_curves))))
        for ca, cb in zip(a.per_curve, b.per_curve):
            assert ca.name == cb.name
            np.testing.assert_array_equal(ca.momenta.momenta, cb.momenta.momenta)
            assert ca.history == cb.history

    def test_error_names_curve(self):
        bad = FACE.landmarks.copy()
        bad[list(FACE.scheme.curves[3].indices)] = 0.25
        with pytest.raises(MatchError, match=FACE.scheme.curves[3].name):
            match_face(FACE, FACE.with_landmarks(bad))


class TestMatchConfig:
    @pytest.mark.parametrize("kw", [
        {"beta": -1}, {"gamma": -0.1}, {"steps": 0}, {"grad_tol": 0}, {"integrator": "heun"},
        {"mode": "other"}, {"direction": "newton"}, {"ftol": -1}, {"ftol_window": 0},
    ])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            MatchConfig(**kw)

    def test_dict_roundtrip(self):
        cfg = MatchConfig(beta=0.2, steps=7, mode="shooting", line_search=LineSearch(shrink=0.3))
        assert MatchConfig.from_dict(cfg.to_dict()) == cfg


@settings(max_examples=15)
@given(st.integers(0, 10_000))
def test_descent_is_monotone(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 8))
    x = np.cumsum(rng.normal(size=(n, 2)), axis=0) * 0.3
    y = x + rng.normal(size=(n, 2)) * 0.15
    r = match_curve(Curve(x), Curve(y), MatchConfig(steps=4, max_iters=25))
    assert np.all(np.diff(r.history) <= 0)
