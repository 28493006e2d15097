"""Variational recovery of flow momenta between a template face and a target face.

Each facial curve gets its own flow. For one curve the minimized quantity is

    (beta * D_curve + D_landmark) / d_ipd + gamma * path_energy

where ``D_curve`` is the squared currents distance between the deformed and target
curves, ``D_landmark`` the mean Euclidean distance between corresponding points and
``d_ipd`` the target face's interocular distance. The face objective is the sum
over curves.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .flow import (
    Diffeomorphism,
    MomentaField,
    geodesic_shoot,
    integrate_flow,
    step,
    step_vjp,
    transport_points,
    uniform_grid,
)
from .geometry import Curve, FaceShape, curve_scale, curve_to_current
from .kernels import KernelConfig, curve_discrepancy, grad_curve_discrepancy, sq_distances

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LineSearch:
    """Backtracking (Armijo) parameters. ``grow`` rescales the next trial step after acceptance."""

    initial_step: float = 1.0
    shrink: float = 0.5
    sufficient_decrease: float = 1e-4
    grow: float = 2.0
    min_step: float = 1e-14

    def __post_init__(self):
        if not (self.initial_step > 0 and 0 < self.shrink < 1 and 0 < self.sufficient_decrease < 1):
            raise ValueError("invalid line-search parameters")
        if not (self.grow >= 1 and self.min_step > 0):
            raise ValueError("invalid line-search parameters")


DIRECTIONS = ("majorize", "steepest")


@dataclass(frozen=True)
class MatchConfig:
    """Solver settings.

    ``ftol`` > 0 adds a relative-decrease stop on top of the gradient-norm and
    iteration limits: a curve stops once its last ``ftol_window`` accepted steps
    together lowered the objective by less than ``ftol`` times its value.
    ``direction`` and ``precondition`` select the search direction, see
    :meth:`CurveBatch.search_direction`.
    """

    beta: float = 0.1
    gamma: float = 0.0
    steps: int = 10
    integrator: str = "rk4"
    mode: str = "time_varying"
    max_iters: int = 500
    grad_tol: float = 1e-6
    ftol: float = 1e-6
    ftol_window: int = 10
    precondition: float | None = 1e-4
    direction: str = "majorize"
    line_search: LineSearch = field(default_factory=LineSearch)

    def __post_init__(self):
        if self.beta < 0 or self.gamma < 0:
            raise ValueError("beta and gamma must be >= 0")
        if self.steps < 1 or self.max_iters < 0:
            raise ValueError("steps must be >= 1 and max_iters >= 0")
        if not (self.grad_tol > 0 and self.ftol >= 0 and self.ftol_window >= 1):
            raise ValueError("tolerances must be positive")
        if self.integrator not in ("euler", "rk4"):
            raise ValueError(f"unknown integrator {self.integrator!r}")
        if self.mode not in ("time_varying", "shooting"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.direction not in DIRECTIONS:
            raise ValueError(f"unknown direction {self.direction!r}")

    @classmethod
    def from_dict(cls, d: dict) -> MatchConfig:
        d = dict(d)
        ls = d.pop("line_search", None)
        cfg = cls(**d)
        return replace(cfg, line_search=LineSearch(**ls)) if ls else cfg

    def to_dict(self) -> dict:
        return {
            "beta": self.beta, "gamma": self.gamma, "steps": self.steps,
            "integrator": self.integrator, "mode": self.mode, "max_iters": self.max_iters,
            "grad_tol": self.grad_tol, "ftol": self.ftol, "ftol_window": self.ftol_window,
            "precondition": self.precondition,
            "direction": self.direction,
            "line_search": {
                "initial_step": self.line_search.initial_step, "shrink": self.line_search.shrink,
                "sufficient_decrease": self.line_search.sufficient_decrease,
                "grow": self.line_search.grow, "min_step": self.line_search.min_step,
            },
        }


def landmark_discrepancy(deformed, target) -> float:
    """Mean Euclidean distance between corresponding points."""
    z = np.asarray(deformed, dtype=float).reshape(-1, 2)
    y = np.asarray(target, dtype=float).reshape(-1, 2)
    if z.shape != y.shape:
        raise ValueError(f"point lists differ in length: {len(z)} vs {len(y)}")
    return float(np.linalg.norm(z - y, axis=1).mean())


def grad_landmark_discrepancy(deformed, target) -> np.ndarray:
    r = np.asarray(deformed, dtype=float) - np.asarray(target, dtype=float)
    nrm = np.linalg.norm(r, axis=1)
    safe = np.where(nrm > 0, nrm, 1.0)
    return np.where(nrm[:, None] > 0, r / safe[:, None], 0.0) / len(r)


def _kinetic(x, p, s2):
    K = np.exp(-sq_distances(x, x) / s2)
    return float((K * (p @ p.T)).sum())


def path_energy(momenta, trajectories, sigma_v: float, time_grid=None) -> float:
    """``sum_s h_s sum_ij k(x_i, x_j) a_i . a_j`` with positions taken at each step start."""
    m = momenta.momenta if isinstance(momenta, MomentaField) else np.asarray(momenta, dtype=float)
    tr = np.asarray(trajectories, dtype=float)
    T = m.shape[0]
    tg = uniform_grid(T) if time_grid is None else np.asarray(time_grid, dtype=float)
    s2 = sigma_v**2
    return float(sum(h * _kinetic(tr[s], m[s], s2) for s, h in enumerate(np.diff(tg))))


def default_kernel(template_curve) -> KernelConfig:
    """Deformation width = curve scale, currents width = half the scale."""
    return KernelConfig.from_scale(curve_scale(template_curve))


# Curves of one face are optimized together as a padded batch: every array gets a
# leading curve axis and shorter curves are filled up with inert points. Padding
# points sit 1e3 kernel widths away from everything and carry zero momenta, so all
# kernel entries that touch them are exactly zero and they never move.

_PAD_OFFSET = 1e3
_EPS = np.finfo(float).eps


def check_pair(template_points, target_points, closed: bool):
    """Validated ``(template, target)`` point arrays of one curve problem."""
    x = Curve(template_points, closed).points
    y = Curve(target_points, closed).points
    if np.ptp(y, axis=0).max() == 0:
        raise ValueError("degenerate target curve (all points identical)")
    if len(y) != len(x):
        raise ValueError("template and target curves must have the same number of points")
    return x, y


class CurveBatch:
    """Objectives and gradients for a list of independent curve problems.

    ``curves`` holds ``(template_points, target_points, closed, kernel)`` tuples.
    Parameters are ``(B, T, N, 2)`` in time-varying mode and ``(B, N, 2)`` initial
    momenta in shooting mode, ``N`` being the largest curve size. Every method
    takes an index array ``idx`` selecting the curves the leading axis refers to.
    """

    def __init__(self, curves, cfg: MatchConfig, d_ipd):
        if not curves:
            raise ValueError("empty curve batch")
        self.cfg = cfg
        self.shooting = cfg.mode == "shooting"
        self.tg = uniform_grid(cfg.steps)
        B = len(curves)
        sizes, kernels, xs, ys, closed = [], [], [], [], []
        for tpl, tgt, cl, ker in curves:
            x, y = check_pair(tpl, tgt, cl)
            sizes.append(len(x))
            kernels.append(ker or default_kernel(x))
            xs.append(x)
            ys.append(y)
            closed.append(cl)
        d = np.broadcast_to(np.asarray(d_ipd, dtype=float), (B,)).copy()
        if not np.all(d > 0):
            raise ValueError("d_ipd must be > 0")
        self.d_ipd = d
        self.sizes = np.array(sizes)
        self.kernels = kernels
        self.closed = closed
        N = int(self.sizes.max())
        S = max(n if cl else n - 1 for n, cl in zip(sizes, closed))
        self.x0 = np.zeros((B, N, 2))
        self.y = np.zeros((B, N, 2))
        self.mask = np.zeros((B, N))
        Ma = np.zeros((B, S, N))
        Mb = np.zeros((B, S, N))
        for b, (x, y, cl, ker) in enumerate(zip(xs, ys, closed, kernels)):
            n = len(x)
            pads = x.mean(axis=0) + _PAD_OFFSET * ker.sigma_v * np.outer(np.arange(1, N - n + 1), [1.0, 0.0])
            self.x0[b] = np.vstack([x, pads])
            self.y[b] = np.vstack([y, pads])
            self.mask[b, :n] = 1.0
            segs = n if cl else n - 1
            Ma[b, np.arange(segs), np.arange(segs)] = 1.0
            Mb[b, np.arange(segs), (np.arange(segs) + 1) % n] = 1.0
        self.Mc = 0.5 * (Ma + Mb)
        self.Mt = Mb - Ma
        self.sv2 = np.array([k.sigma_v**2 for k in kernels])[:, None, None]
        self.sw2 = np.array([k.sigma_w**2 for k in kernels])[:, None, None]
        self.tc = self.Mc @ self.y
        self.te = self.Mt @ self.y
        Kvv = np.exp(-sq_distances(self.tc, self.tc) / self.sw2)
        self.vv = (Kvv * (self.te @ _T(self.te))).sum(axis=(-1, -2))

    def __len__(self) -> int:
        return len(self.sizes)

    @property
    def all(self) -> np.ndarray:
        return np.arange(len(self))

    def zeros(self) -> np.ndarray:
        B, N = self.x0.shape[:2]
        return np.zeros((B, N, 2) if self.shooting else (B, self.cfg.steps, N, 2))

    def pad(self, b: int, params) -> np.ndarray:
        """Embed one curve's unpadded parameters into the padded layout."""
        out = self.zeros()[b]
        p = np.asarray(params, dtype=float)
        out[..., : self.sizes[b], :] = p
        return out

    def unpad(self, b: int, params) -> np.ndarray:
        return np.array(params[..., : self.sizes[b], :])

    def forward(self, params, idx):
        """Positions ``(b, T+1, N, 2)`` and per-step momenta ``(b, T, N, 2)``."""
        s2 = self.sv2[idx]
        x = self.x0[idx]
        p = params if self.shooting else None
        xs, ps = [x], []
        for s, h in enumerate(np.diff(self.tg)):
            ps_s = p if self.shooting else params[:, s]
            ps.append(ps_s)
            x, p, _ = step(x, ps_s, None, h, s2, self.cfg.integrator, self.shooting, exact=False)
            xs.append(x)
        return np.stack(xs, axis=1), np.stack(ps, axis=1)

    def _data_terms(self, z, idx):
        c, tau = self.Mc[idx] @ z, self.Mt[idx] @ z
        tc, te = self.tc[idx], self.te[idx]
        sw2 = self.sw2[idx]
        Kuu = np.exp(-sq_distances(c, c) / sw2)
        Kuv = np.exp(-sq_distances(c, tc) / sw2)
        Wuu = Kuu * (tau @ _T(tau))
        Wuv = Kuv * (tau @ _T(te))
        dc = np.maximum(Wuu.sum(axis=(-1, -2)) - 2.0 * Wuv.sum(axis=(-1, -2)) + self.vv[idx], 0.0)
        r = (z - self.y[idx]) * self.mask[idx][..., None]
        nrm = np.sqrt((r * r).sum(axis=-1))
        dl = nrm.sum(axis=-1) / self.sizes[idx]
        return dc, dl, (c, tau, Kuu, Kuv, Wuu, Wuv, r, nrm)

    def _data_grad(self, idx, cache):
        c, tau, Kuu, Kuv, Wuu, Wuv, r, nrm = cache
        tc, te = self.tc[idx], self.te[idx]
        sw2 = self.sw2[idx]
        g_tau = 2.0 * (Kuu @ tau - Kuv @ te)
        g_c = (-4.0 / sw2) * (
            Wuu.sum(axis=-1)[..., None] * c - Wuu @ c - (Wuv.sum(axis=-1)[..., None] * c - Wuv @ tc)
        )
        g_dc = _T(self.Mc[idx]) @ g_c + _T(self.Mt[idx]) @ g_tau
        safe = np.where(nrm > 0, nrm, 1.0)
        g_dl = np.where(nrm[..., None] > 0, r / safe[..., None], 0.0) / self.sizes[idx][:, None, None]
        return g_dc, g_dl

    def _energy(self, xs, ps, idx):
        s2 = self.sv2[idx][:, None]
        K = np.exp(-sq_distances(xs[:, :-1], xs[:, :-1]) / s2)
        kin = (K * (ps @ _T(ps))).sum(axis=(-1, -2))
        return kin @ np.diff(self.tg)

    def terms(self, params, idx=None) -> dict:
        idx = self.all if idx is None else idx
        xs, ps = self.forward(params, idx)
        dc, dl, _ = self._data_terms(xs[:, -1], idx)
        energy = self._energy(xs, ps, idx) if self.cfg.gamma > 0 else np.zeros(len(idx))
        value = (self.cfg.beta * dc + dl) / self.d_ipd[idx] + self.cfg.gamma * energy
        return {"value": value, "Dc": dc, "Dl": dl, "energy": energy, "xs": xs, "ps": ps}

    def value(self, params, idx=None) -> np.ndarray:
        return self.evaluate(params, idx)[0]

    def evaluate(self, params, idx=None):
        """Objective ``(b,)`` (non-finite values become ``inf``) and the forward pass."""
        t = self.terms(params, idx)
        v = t["value"]
        return np.where(np.isfinite(v), v, np.inf), (t["xs"], t["ps"])

    def value_and_grad(self, params, idx=None, traj=None, surrogate: bool = False):
        """Objective ``(b,)``, its gradient and the control trajectories.

        ``traj`` may supply the forward pass already computed for ``params``. With
        ``surrogate`` a fourth output is the gradient of the objective in which the
        landmark term is replaced by its least-squares majorizer at the current point
        (see :meth:`search_direction`); both come from one adjoint pass.
        """
        idx = self.all if idx is None else idx
        cfg = self.cfg
        s2 = self.sv2[idx]
        xs, ps = self.forward(params, idx) if traj is None else traj
        dc, dl, cache = self._data_terms(xs[:, -1], idx)
        g_dc, g_dl = self._data_grad(idx, cache)
        w = 1.0 / self.d_ipd[idx][:, None, None]
        bx = (cfg.beta * g_dc + g_dl) * w
        if surrogate:
            r = cache[6]
            mean_r = np.where(dl > 0, dl, 1.0)[:, None, None]
            g_ls = r / (self.sizes[idx][:, None, None] * mean_r)
            bx = np.stack([bx, (cfg.beta * g_dc + g_ls) * w])
        value = (cfg.beta * dc + dl) / self.d_ipd[idx]
        if cfg.gamma > 0:
            value = value + cfg.gamma * self._energy(xs, ps, idx)
        bp = np.zeros_like(bx)
        grad = None if self.shooting else np.zeros(bx.shape[:-2] + ps.shape[1:])
        hs = np.diff(self.tg)
        for s in range(len(hs) - 1, -1, -1):
            bx, gp = step_vjp(xs[:, s], ps[:, s], hs[s], s2, cfg.integrator, self.shooting, bx, bp)
            if cfg.gamma > 0:
                ex, ep = _kinetic_grad(xs[:, s], ps[:, s], s2)
                bx = bx + cfg.gamma * hs[s] * ex
                gp = gp + cfg.gamma * hs[s] * ep
            if self.shooting:
                bp = gp
            else:
                grad[..., s, :, :] = gp
        g = bp if self.shooting else grad
        g = g * (self.mask[idx][:, None, :, None] if not self.shooting else self.mask[idx][..., None])
        if surrogate:
            return value, g[0], xs, g[1]
        return value, g, xs

    def descent_direction(self, grad, xs, idx, power: int = 1) -> np.ndarray:
        """``-(K_s + eps n I)^-power g_s`` per step, with ``K_s`` the kernel matrix at the step start.

        ``power = 1`` is steepest descent in the kernel metric. ``power = 2`` undoes
        the kernel smoothing of the velocity as well, so that to first order each
        control point moves by its own share of ``-g`` (a Gauss-Newton-like metric
        for small deformations). Falls back to ``-g`` when preconditioning is disabled.
        """
        eps = self.cfg.precondition
        if not eps:
            return -grad
        n = self.sizes[idx].astype(float)
        if self.shooting:
            X, s2, shift = xs[:, 0], self.sv2[idx], (eps * n)[:, None, None]
        else:
            X, s2, shift = xs[:, :-1], self.sv2[idx][:, None], (eps * n)[:, None, None, None]
        K = np.exp(-sq_distances(X, X) / s2) + shift * np.eye(X.shape[-2])
        d = grad
        for _ in range(power):
            d = np.linalg.solve(K, d)
        return -d

    def search_direction(self, grad, surrogate_grad, xs, idx, steepest=None):
        """Direction and its slope ``g . d`` against the true gradient.

        ``steepest`` uses the kernel metric on the true gradient. ``majorize`` (the
        default) uses the gradient of the least-squares majorizer of the landmark term,
        ``sum_i |r_i|^2 / (2 n mean|r|)``, which equals the true gradient when all
        residuals are equal and is not pulled to a halt by residuals that reach zero,
        under the squared kernel metric. Curves where that is not a descent direction
        for the true objective, or flagged in ``steepest``, fall back to steepest descent.
        """
        b = len(idx)
        if self.cfg.direction == "steepest":
            d = self.descent_direction(grad, xs, idx)
            return d, (grad * d).reshape(b, -1).sum(axis=1)
        d = self.descent_direction(surrogate_grad, xs, idx, power=2)
        slope = (grad * d).reshape(b, -1).sum(axis=1)
        bad = slope >= 0
        if steepest is not None:
            bad |= steepest
        if bad.any():
            d[bad] = self.descent_direction(grad[bad], xs[bad], idx[bad])
            slope[bad] = (grad[bad] * d[bad]).reshape(int(bad.sum()), -1).sum(axis=1)
        return d, slope

    def diffeomorphism(self, b: int, params) -> Diffeomorphism:
        """Unpadded flow of curve ``b``; transport through it reproduces its endpoint exactly."""
        x0 = self.x0[b, : self.sizes[b]]
        p = self.unpad(b, params)
        sv = self.kernels[b].sigma_v
        if self.shooting:
            return geodesic_shoot(x0, p, sv, self.cfg.steps, self.cfg.integrator)
        return integrate_flow(x0, MomentaField(p), sv, self.cfg.integrator, self.tg)


def _T(a):
    return np.swapaxes(a, -1, -2)


def _kinetic_grad(x, p, s2):
    K = np.exp(-sq_distances(x, x) / s2)
    W = K * (p @ _T(p))
    gx = (-4.0 / s2) * (W.sum(axis=-1)[..., None] * x - W @ x)
    gp = 2.0 * (K @ p)
    return gx, gp


class CurveProblem:
    """Single-curve view of :class:`CurveBatch` working on unpadded parameters.

    Parameters are ``(T, n, 2)`` in time-varying mode and ``(n, 2)`` initial momenta
    in shooting mode.
    """

    def __init__(self, template_points, target_points, closed: bool, cfg: MatchConfig,
                 kernel: KernelConfig | None = None, d_ipd: float = 1.0):
        self.batch = CurveBatch([(template_points, target_points, closed, kernel)], cfg, d_ipd)
        self.cfg = cfg
        self.kernel = self.batch.kernels[0]
        self.shooting = self.batch.shooting
        self.d_ipd = float(d_ipd)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.batch.zeros()[0].shape

    def zeros(self) -> np.ndarray:
        return self.batch.zeros()[0]

    def terms(self, params) -> dict:
        t = self.batch.terms(self.batch.pad(0, params)[None])
        return {k: (v[0] if k in ("xs", "ps") else float(v[0])) for k, v in t.items()}

    def value(self, params) -> float:
        return float(self.batch.value(self.batch.pad(0, params)[None])[0])

    def value_and_grad(self, params):
        f, g, _ = self.batch.value_and_grad(self.batch.pad(0, params)[None])
        return float(f[0]), self.batch.unpad(0, g[0])

    def gradient(self, params) -> np.ndarray:
        return self.value_and_grad(params)[1]

    def diffeomorphism(self, params) -> Diffeomorphism:
        return self.batch.diffeomorphism(0, self.batch.pad(0, params))


@dataclass
class CurveMatch:
    name: str
    momenta: MomentaField
    diffeo: Diffeomorphism
    history: list[float]
    final_Dc: float
    final_Dl: float
    kernel: KernelConfig
    iterations: int
    converged: bool
    degraded: bool = False
    initial_momenta: np.ndarray | None = field(default=None, repr=False)

    @property
    def deformed(self) -> np.ndarray:
        return self.diffeo.endpoint


@dataclass
class _Run:
    params: np.ndarray
    history: list
    iterations: int
    converged: bool
    degraded: bool


def _value_and_grads(batch, params, idx, traj, surrogate):
    if surrogate:
        return batch.value_and_grad(params, idx, traj, surrogate=True)
    f, g, xs = batch.value_and_grad(params, idx, traj)
    return f, g, xs, g


def minimize(batch: CurveBatch, x0=None) -> list[_Run]:
    """Gradient descent with backtracking line search, run for every curve of the batch.

    Curves stop independently: gradient norm below ``grad_tol * d_ipd``, relative
    decrease below ``ftol``, ``max_iters`` accepted steps, or a stalled line search
    (flagged ``degraded``). A stall along the majorized direction is retried once along
    the steepest one before giving up. Accepted objective values never increase.
    """
    cfg = batch.cfg
    ls = cfg.line_search
    B = len(batch)
    idx_all = batch.all
    params = batch.zeros() if x0 is None else np.array(x0, dtype=float)
    sur = cfg.direction == "majorize"
    f, g, xs, gs = _value_and_grads(batch, params, idx_all, None, sur)
    history = [[float(v)] for v in f]
    trial = np.full(B, ls.initial_step)
    tol = cfg.grad_tol * batch.d_ipd
    converged = np.zeros(B, bool)
    degraded = np.zeros(B, bool)
    active = np.ones(B, bool)
    retry = np.zeros(B, bool)
    for _ in range(cfg.max_iters):
        gnorm = np.sqrt((g * g).reshape(B, -1).sum(axis=1))
        small = active & (gnorm < tol)
        converged |= small
        active &= ~small
        act = np.flatnonzero(active)
        if len(act) == 0:
            break
        d, slope = batch.search_direction(g[act], gs[act], xs[act], act, retry[act])
        alpha = trial[act].copy()
        ok = np.zeros(len(act), bool)
        pending = np.arange(len(act))
        cand = params[act].copy()
        cxs = xs[act].copy()
        cps = np.zeros((len(act), cfg.steps) + xs.shape[2:])
        bshape = (-1,) + (1,) * (d.ndim - 1)
        while len(pending):
            c = params[act[pending]] + alpha[pending].reshape(bshape) * d[pending]
            fc, (txs, tps) = batch.evaluate(c, act[pending])
            acc = fc <= f[act[pending]] + ls.sufficient_decrease * alpha[pending] * slope[pending]
            cand[pending[acc]] = c[acc]
            cxs[pending[acc]], cps[pending[acc]] = txs[acc], tps[acc]
            ok[pending[acc]] = True
            rej = pending[~acc]
            alpha[rej] *= ls.shrink
            # below round-off of f the Armijo test can no longer tell anything apart
            unresolved = alpha[rej] * np.abs(slope[rej]) <= _EPS * np.abs(f[act[rej]])
            stall = (alpha[rej] < ls.min_step) | unresolved
            stalled = act[rej[stall]]
            give_up = stalled[retry[stalled] | (not sur)]
            degraded[give_up] = True
            active[give_up] = False
            again = stalled[~retry[stalled]] if sur else stalled[:0]
            retry[again] = True
            trial[again] = ls.initial_step
            pending = rej[~stall]
        acc_idx = act[ok]
        if len(acc_idx) == 0:
            continue
        log.debug("accepted steps for %d curves", len(acc_idx))
        params[acc_idx] = cand[ok]
        f_new, g_new, xs_new, gs_new = _value_and_grads(batch, params[acc_idx], acc_idx, (cxs[ok], cps[ok]), sur)
        f[acc_idx], g[acc_idx], xs[acc_idx], gs[acc_idx] = f_new, g_new, xs_new, gs_new
        for b, v in zip(acc_idx, f_new):
            history[b].append(float(v))
        trial[acc_idx] = alpha[ok] * ls.grow
        retry[acc_idx] = False
        if cfg.ftol > 0:
            W = cfg.ftol_window
            flat = [b for b in acc_idx
                    if len(history[b]) > W and history[b][-W - 1] - history[b][-1] <= cfg.ftol * history[b][-W - 1]]
            converged[flat] = True
            active[flat] = False
    return [
        _Run(params[b], history[b], len(history[b]) - 1, bool(converged[b]), bool(degraded[b]))
        for b in range(B)
    ]


def _finish(batch: CurveBatch, b: int, run: _Run, name: str) -> CurveMatch:
    diffeo = batch.diffeomorphism(b, run.params)
    z = diffeo.endpoint
    cl = batch.closed[b]
    y = batch.y[b, : batch.sizes[b]]
    dc = curve_discrepancy(curve_to_current(Curve(z, cl)), curve_to_current(Curve(y, cl)),
                           batch.kernels[b].sigma_w)
    return CurveMatch(
        name=name,
        momenta=diffeo.momenta,
        diffeo=diffeo,
        history=run.history,
        final_Dc=dc,
        final_Dl=landmark_discrepancy(z, y),
        kernel=batch.kernels[b],
        iterations=run.iterations,
        converged=run.converged,
        degraded=run.degraded,
        initial_momenta=batch.unpad(b, run.params) if batch.shooting else None,
    )


def match_curve(template_curve, target_curve, cfg: MatchConfig | None = None,
                kernel: KernelConfig | None = None, d_ipd: float = 1.0, name: str = "curve") -> CurveMatch:
    """Recover momenta deforming ``template_curve`` onto ``target_curve``, starting from zero."""
    cfg = cfg or MatchConfig()
    tc = template_curve if isinstance(template_curve, Curve) else Curve(template_curve)
    yc = target_curve if isinstance(target_curve, Curve) else Curve(target_curve, tc.closed)
    batch = CurveBatch([(tc.points, yc.points, tc.closed, kernel)], cfg, d_ipd)
    return _finish(batch, 0, minimize(batch)[0], name)


class MatchError(RuntimeError):
    def __init__(self, curve: str, cause: Exception):
        super().__init__(f"curve {curve!r}: {cause}")
        self.curve = curve


@dataclass
class MatchResult:
    template: FaceShape
    target: FaceShape
    per_curve: list[CurveMatch]
    d_ipd: float
    config: MatchConfig

    @property
    def objective_history(self) -> list[float]:
        """Face objective per iteration; finished curves hold their final value."""
        longest = max(len(c.history) for c in self.per_curve)
        padded = [c.history + [c.history[-1]] * (longest - len(c.history)) for c in self.per_curve]
        return [float(v) for v in np.sum(padded, axis=0)]

    @property
    def objective(self) -> float:
        return float(sum(c.history[-1] for c in self.per_curve))

    def diffeos(self) -> list[Diffeomorphism]:
        return [c.diffeo for c in self.per_curve]

    def prediction(self) -> FaceShape:
        """Deformed template; landmarks outside every curve ride on the nearest curve's flow."""
        return predict_face(self.template, self.template, self.diffeos())


def face_kernels(template: FaceShape) -> list[KernelConfig]:
    return [default_kernel(template.curve_points(k)) for k in range(template.scheme.n_curves)]


def face_batch(template: FaceShape, target: FaceShape, cfg: MatchConfig | None = None,
               kernels=None, order=None) -> CurveBatch:
    """Batch of the face's curve problems, in ``order`` (scheme order by default)."""
    cfg = cfg or MatchConfig()
    if template.scheme != target.scheme:
        raise ValueError("template and target must share a scheme")
    d_ipd = target.interocular()
    if not d_ipd > 0:
        raise ValueError("target has zero interocular distance")
    kernels = kernels or face_kernels(template)
    curves = template.scheme.curves
    order = list(range(len(curves))) if order is None else list(order)
    if sorted(order) != list(range(len(curves))):
        raise ValueError("order must be a permutation of the curve indices")
    for k in order:
        try:
            check_pair(template.curve_points(k), target.curve_points(k), curves[k].closed)
        except ValueError as exc:
            raise MatchError(curves[k].name, exc) from exc
    return CurveBatch(
        [(template.curve_points(k), target.curve_points(k), curves[k].closed, kernels[k]) for k in order],
        cfg, d_ipd,
    )


def _stack(batch: CurveBatch, momenta, order) -> np.ndarray:
    out = batch.zeros()
    for b, k in enumerate(order):
        out[b] = batch.pad(b, _raw(momenta[k]))
    return out


def objective(template: FaceShape, target: FaceShape, momenta, cfg: MatchConfig | None = None,
              kernels=None) -> float:
    """Face objective for per-curve momenta (list of arrays or :class:`MomentaField`)."""
    batch = face_batch(template, target, cfg, kernels)
    if len(momenta) != len(batch):
        raise ValueError(f"expected momenta for {len(batch)} curves, got {len(momenta)}")
    return float(batch.value(_stack(batch, momenta, batch.all)).sum())


def objective_gradient(template: FaceShape, target: FaceShape, momenta, cfg: MatchConfig | None = None,
                       kernels=None) -> list[np.ndarray]:
    batch = face_batch(template, target, cfg, kernels)
    if len(momenta) != len(batch):
        raise ValueError(f"expected momenta for {len(batch)} curves, got {len(momenta)}")
    _, g, _ = batch.value_and_grad(_stack(batch, momenta, batch.all))
    return [batch.unpad(b, g[b]) for b in batch.all]


def _raw(m):
    return m.momenta if isinstance(m, MomentaField) else np.asarray(m, dtype=float)


def match_face(template: FaceShape, target: FaceShape, cfg: MatchConfig | None = None, kernels=None,
               order=None) -> MatchResult:
    """Match every curve independently (one flow per curve).

    ``order`` only permutes the batch layout; results are stored in scheme order.
    """
    cfg = cfg or MatchConfig()
    names = template.scheme.curve_names()
    order = list(range(len(names))) if order is None else list(order)
    batch = face_batch(template, target, cfg, kernels, order)
    runs = minimize(batch)
    out: list[CurveMatch | None] = [None] * len(names)
    for b, k in enumerate(order):
        try:
            out[k] = _finish(batch, b, runs[b], names[k])
        except (ValueError, FloatingPointError) as exc:
            raise MatchError(names[k], exc) from exc
    return MatchResult(template, target, out, float(batch.d_ipd[0]), cfg)


# Face-level transport


def assign_to_curves(points, template: FaceShape) -> np.ndarray:
    """Index of the nearest template curve (by point-to-polyline distance) for each point."""
    from .metrics import point_polyline_distance

    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    dists = np.stack([
        point_polyline_distance(pts, c.points, c.closed) for c in template.curves
    ], axis=1)
    return dists.argmin(axis=1)


def transport_face_points(points, diffeos, curve_ids) -> np.ndarray:
    """Move each point with the flow of the curve it is assigned to."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    ids = np.asarray(curve_ids)
    out = pts.copy()
    for k, dif in enumerate(diffeos):
        mask = ids == k
        if mask.any():
            out[mask] = transport_points(dif, pts[mask])
    return out


def curve_assignment(out_scheme, src_template: FaceShape, out_points) -> np.ndarray:
    """Per-landmark curve index for points of ``out_scheme`` placed in the source template frame.

    Landmarks on a curve whose name exists in the source scheme follow that curve's
    flow; all others follow the nearest source curve.
    """
    src_names = {n: k for k, n in enumerate(src_template.scheme.curve_names())}
    ids = np.full(out_scheme.landmark_count, -1)
    for c in out_scheme.curves:
        if c.name in src_names:
            ids[list(c.indices)] = src_names[c.name]
    free = np.flatnonzero(ids < 0)
    if len(free):
        ids[free] = assign_to_curves(np.asarray(out_points)[free], src_template)
    return ids


def predict_face(src_template: FaceShape, out_template: FaceShape, diffeos, align=None) -> FaceShape:
    """Predict ``out_template``'s landmarks through per-curve flows fitted on ``src_template``.

    ``align`` (an affine map) moves the output scheme's mean face into the source
    template frame first, for cross-annotation prediction.
    """
    pts = out_template.landmarks if align is None else align(out_template.landmarks)
    ids = curve_assignment(out_template.scheme, src_template, pts)
    return out_template.with_landmarks(transport_face_points(pts, diffeos, ids))
