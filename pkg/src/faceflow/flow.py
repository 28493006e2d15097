"""Momenta-driven landmark flows and the transport of ambient points.

Two parameterizations are supported:

* ``time_varying``: one momentum vector per control point and time step, held
  constant over the step. Positions follow ``dx_i/dt = sum_j k(x_j, x_i) a_j``.
* ``shooting``: only initial momenta are given; positions and momenta evolve
  jointly under the Hamiltonian ``H = 1/2 sum_ij k(x_i, x_j) p_i . p_j``.

Extra points always move with the velocity field generated by the control
points, ``da/dt = sum_j k(x_j, a) p_j``, using the stored control states.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kernels import sq_distances

INTEGRATORS = ("euler", "rk4")
MODES = ("time_varying", "shooting")


@dataclass(frozen=True)
class MomentaField:
    """``momenta[s, i]`` is the momentum of control point ``i`` during step ``s``."""

    momenta: np.ndarray

    def __post_init__(self):
        m = np.array(self.momenta, dtype=float)
        if m.ndim != 3 or m.shape[2] != 2 or m.shape[0] < 1:
            raise ValueError(f"momenta must have shape (T, n, 2) with T >= 1, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("momenta contain non-finite values")
        m.setflags(write=False)
        object.__setattr__(self, "momenta", m)

    @property
    def steps(self) -> int:
        return self.momenta.shape[0]

    @property
    def n_points(self) -> int:
        return self.momenta.shape[1]

    @classmethod
    def zeros(cls, steps: int, n: int) -> MomentaField:
        return cls(np.zeros((steps, n, 2)))

    @classmethod
    def constant(cls, steps: int, alpha) -> MomentaField:
        alpha = np.asarray(alpha, dtype=float).reshape(-1, 2)
        return cls(np.broadcast_to(alpha, (steps,) + alpha.shape).copy())


@dataclass(frozen=True)
class Diffeomorphism:
    """Stored control trajectories and momenta on a time grid.

    In shooting mode ``momenta.momenta[s]`` holds the evolved momenta at the start
    of step ``s`` and ``end_momenta`` those at ``t = 1``.
    """

    time_grid: np.ndarray
    trajectories: np.ndarray
    momenta: MomentaField
    sigma_v: float
    integrator: str = "rk4"
    mode: str = "time_varying"
    end_momenta: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        tg = np.array(self.time_grid, dtype=float)
        tr = np.array(self.trajectories, dtype=float)
        T = self.momenta.steps
        if tg.shape != (T + 1,) or tg[0] != 0.0 or tg[-1] != 1.0 or np.any(np.diff(tg) <= 0):
            raise ValueError("time_grid must increase strictly from 0 to 1 with T + 1 instants")
        if tr.shape != (T + 1, self.momenta.n_points, 2):
            raise ValueError(f"trajectories must have shape {(T + 1, self.momenta.n_points, 2)}, got {tr.shape}")
        if self.integrator not in INTEGRATORS:
            raise ValueError(f"unknown integrator {self.integrator!r}")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if not self.sigma_v > 0:
            raise ValueError("sigma_v must be > 0")
        tg.setflags(write=False)
        tr.setflags(write=False)
        object.__setattr__(self, "time_grid", tg)
        object.__setattr__(self, "trajectories", tr)

    @property
    def initial(self) -> np.ndarray:
        return self.trajectories[0]

    @property
    def endpoint(self) -> np.ndarray:
        return self.trajectories[-1]

    @property
    def steps(self) -> int:
        return self.momenta.steps

    def __call__(self, points) -> np.ndarray:
        return transport_points(self, points)


def uniform_grid(steps: int) -> np.ndarray:
    if steps < 1:
        raise ValueError("need at least one time step")
    return np.linspace(0.0, 1.0, steps + 1)


# Vector fields. Arrays may carry leading batch dimensions, with ``s2`` shaped to
# broadcast against ``(..., n, n)``. With ``exact`` the kernel sum runs through einsum,
# which reduces each output row on its own (BLAS matmul does not), so a point
# coinciding with a control point gets a bit-identical velocity. The optimizer only
# needs values, not that guarantee, and uses the much faster matmul.


def _T(a):
    return np.swapaxes(a, -1, -2)


def field_at(points: np.ndarray, ctrl: np.ndarray, mom: np.ndarray, s2: float, exact: bool = True) -> np.ndarray:
    K = np.exp(-sq_distances(points, ctrl) / s2)
    return np.einsum("...ij,...jd->...id", K, mom) if exact else K @ mom


def _kernel(x, s2):
    return np.exp(-sq_distances(x, x) / s2)


def costate_rate(x: np.ndarray, p: np.ndarray, s2: float, K=None) -> np.ndarray:
    """``dp_i/dt = -dH/dx_i = (2/s2) sum_j k_ij (p_i . p_j) (x_i - x_j)``."""
    K = _kernel(x, s2) if K is None else K
    W = K * (p @ _T(p))
    return (2.0 / s2) * (W.sum(axis=-1)[..., None] * x - W @ x)


def hamiltonian(x: np.ndarray, p: np.ndarray, sigma_v: float) -> float:
    K = np.exp(-sq_distances(x, x) / sigma_v**2)
    return 0.5 * float((K * (p @ p.T)).sum())


def _rates(x, p, a, s2, shooting, exact=True):
    xd = field_at(x, x, p, s2, exact)
    pd = costate_rate(x, p, s2) if shooting else None
    ad = field_at(a, x, p, s2) if a is not None else None
    return xd, pd, ad


def _axpy(base, h, rate):
    return None if base is None else (base if rate is None else base + h * rate)


def step(x, p, a, h, s2, integrator, shooting, exact=True):
    """Advance control positions ``x``, momenta ``p`` and optional extra points ``a`` by ``h``."""
    if integrator == "euler":
        xd, pd, ad = _rates(x, p, a, s2, shooting, exact)
        return x + h * xd, _axpy(p, h, pd), _axpy(a, h, ad)
    r1 = _rates(x, p, a, s2, shooting, exact)
    s2_state = (x + (h / 2) * r1[0], _axpy(p, h / 2, r1[1]), _axpy(a, h / 2, r1[2]))
    r2 = _rates(*s2_state, s2, shooting, exact)
    s3_state = (x + (h / 2) * r2[0], _axpy(p, h / 2, r2[1]), _axpy(a, h / 2, r2[2]))
    r3 = _rates(*s3_state, s2, shooting, exact)
    s4_state = (x + h * r3[0], _axpy(p, h, r3[1]), _axpy(a, h, r3[2]))
    r4 = _rates(*s4_state, s2, shooting, exact)

    def combine(base, k1, k2, k3, k4):
        if base is None:
            return None
        if k1 is None:
            return base
        return base + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    return tuple(combine(b, *ks) for b, ks in zip((x, p, a), zip(r1, r2, r3, r4)))


def _check_inputs(initial, sigma_v, integrator):
    x0 = np.array(initial, dtype=float)
    if x0.ndim != 2 or x0.shape[1] != 2:
        raise ValueError(f"initial points must have shape (n, 2), got {x0.shape}")
    if not np.all(np.isfinite(x0)):
        raise ValueError("initial points contain non-finite values")
    if not sigma_v > 0:
        raise ValueError("sigma_v must be > 0")
    if integrator not in INTEGRATORS:
        raise ValueError(f"integrator must be one of {INTEGRATORS}")
    return x0


def integrate_flow(initial, momenta: MomentaField, sigma_v: float, integrator: str = "rk4",
                   time_grid=None) -> Diffeomorphism:
    """Flow the control points under piecewise-constant momenta."""
    x = _check_inputs(initial, sigma_v, integrator)
    if not isinstance(momenta, MomentaField):
        momenta = MomentaField(momenta)
    if momenta.n_points != len(x):
        raise ValueError(f"momenta are for {momenta.n_points} points, got {len(x)} initial points")
    tg = uniform_grid(momenta.steps) if time_grid is None else np.asarray(time_grid, dtype=float)
    s2 = sigma_v**2
    traj = [x]
    for s, h in enumerate(np.diff(tg)):
        x, _, _ = step(x, momenta.momenta[s], None, h, s2, integrator, False)
        traj.append(x)
    return Diffeomorphism(tg, np.stack(traj), momenta, sigma_v, integrator, "time_varying")


def geodesic_shoot(initial, initial_momenta, sigma_v: float, steps: int = 10,
                   integrator: str = "rk4") -> Diffeomorphism:
    """Evolve positions and momenta jointly from initial momenta along a geodesic."""
    x = _check_inputs(initial, sigma_v, integrator)
    p = np.array(initial_momenta, dtype=float)
    if p.shape != x.shape:
        raise ValueError(f"initial momenta must have shape {x.shape}, got {p.shape}")
    if not np.all(np.isfinite(p)):
        raise ValueError("initial momenta contain non-finite values")
    tg = uniform_grid(steps)
    s2 = sigma_v**2
    traj, moms = [x], []
    for h in np.diff(tg):
        moms.append(p)
        x, p, _ = step(x, p, None, h, s2, integrator, True)
        traj.append(x)
    return Diffeomorphism(tg, np.stack(traj), MomentaField(np.stack(moms)), sigma_v, integrator,
                          "shooting", end_momenta=p)


def transport_points(diffeo: Diffeomorphism, extra) -> np.ndarray:
    """Push ``extra`` points through ``diffeo``.

    Each step restarts from the stored control state, so transporting the control
    points themselves reproduces the stored endpoints exactly.
    """
    a = np.array(extra, dtype=float).reshape(-1, 2)
    if len(a) == 0:
        return a
    s2 = diffeo.sigma_v**2
    shooting = diffeo.mode == "shooting"
    for s, h in enumerate(np.diff(diffeo.time_grid)):
        _, _, a = step(diffeo.trajectories[s], diffeo.momenta.momenta[s], a, h, s2,
                       diffeo.integrator, shooting)
    return a


def transport_path(diffeo: Diffeomorphism, extra) -> np.ndarray:
    """Like :func:`transport_points` but returns every time instant, shape ``(T+1, m, 2)``."""
    a = np.array(extra, dtype=float).reshape(-1, 2)
    s2 = diffeo.sigma_v**2
    shooting = diffeo.mode == "shooting"
    out = [a]
    for s, h in enumerate(np.diff(diffeo.time_grid)):
        _, _, a = step(diffeo.trajectories[s], diffeo.momenta.momenta[s], a, h, s2,
                       diffeo.integrator, shooting)
        out.append(a)
    return np.stack(out)


def hamiltonian_history(diffeo: Diffeomorphism) -> np.ndarray:
    """Hamiltonian at every instant of a shooting-mode flow."""
    if diffeo.mode != "shooting":
        raise ValueError("hamiltonian_history needs a shooting-mode diffeomorphism")
    moms = list(diffeo.momenta.momenta) + [diffeo.end_momenta]
    return np.array([hamiltonian(x, p, diffeo.sigma_v) for x, p in zip(diffeo.trajectories, moms)])


def jacobian_probe(diffeo: Diffeomorphism, grid, h: float) -> float:
    """Smallest central-difference Jacobian determinant of the flow over ``grid``."""
    if not h > 0:
        raise ValueError("h must be > 0")
    g = np.array(grid, dtype=float).reshape(-1, 2)
    offsets = np.array([[h, 0.0], [-h, 0.0], [0.0, h], [0.0, -h]])
    probes = (g[:, None, :] + offsets[None, :, :]).reshape(-1, 2)
    moved = transport_points(diffeo, probes).reshape(len(g), 4, 2)
    dx = (moved[:, 0] - moved[:, 1]) / (2 * h)
    dy = (moved[:, 2] - moved[:, 3]) / (2 * h)
    det = dx[:, 0] * dy[:, 1] - dx[:, 1] * dy[:, 0]
    return float(det.min())


def bbox_grid(points, size: int = 20, pad: float = 0.0) -> np.ndarray:
    """``size x size`` grid spanning the bounding box of ``points``."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    lo, hi = pts.min(axis=0) - pad, pts.max(axis=0) + pad
    xs = np.linspace(lo[0], hi[0], size)
    ys = np.linspace(lo[1], hi[1], size)
    X, Y = np.meshgrid(xs, ys)
    return np.column_stack([X.ravel(), Y.ravel()])


# Reverse-mode sensitivities of the flow, used by the matching objective.


def _vjp_field(x, p, lam, s2, K):
    """Pull back ``lam`` through ``xd_i = sum_j k(x_i, x_j) p_j``."""
    gp = K @ lam
    S = K * (lam @ _T(p) + p @ _T(lam))
    gx = (-2.0 / s2) * (S.sum(axis=-1)[..., None] * x - S @ x)
    return gx, gp


def _vjp_costate(x, p, mu, s2, K):
    """Pull back ``mu`` through :func:`costate_rate`."""
    c = 2.0 / s2
    P = p @ _T(p)
    u = x[..., :, None, :] - x[..., None, :, :]
    dmu = mu[..., :, None, :] - mu[..., None, :, :]
    m = (dmu * u).sum(axis=-1)
    KP = K * P
    cc = np.asarray(c)[..., None]
    gx = c * (KP[..., None] * (dmu - cc * m[..., None] * u)).sum(axis=-2)
    gp = c * ((K * m) @ p)
    return gx, gp


def _vjp_rates(x, p, lx, lp, s2, shooting, K):
    gx, gp = _vjp_field(x, p, lx, s2, K)
    if shooting and lp is not None:
        cx, cp = _vjp_costate(x, p, lp, s2, K)
        gx, gp = gx + cx, gp + cp
    return gx, gp


def _stage(x, p, s2, shooting):
    """Kernel matrix and (position, momentum) rates at one stage, matmul path."""
    K = _kernel(x, s2)
    return K, K @ p, (costate_rate(x, p, s2, K) if shooting else None)


def step_vjp(x, p, h, s2, integrator, shooting, bx, bp):
    """Adjoint of :func:`step` without extra points.

    Given sensitivities ``(bx, bp)`` of the step outputs, return those of its inputs;
    in time-varying mode ``bp`` out is the gradient with respect to the step's momenta.
    """
    if bp is None:
        bp = np.zeros_like(p)
    if integrator == "euler":
        gx, gp = _vjp_rates(x, p, h * bx, h * bp, s2, shooting, _kernel(x, s2))
        return bx + gx, bp + gp
    K1, *r1 = _stage(x, p, s2, shooting)
    x2, p2 = x + (h / 2) * r1[0], _axpy(p, h / 2, r1[1])
    K2, *r2 = _stage(x2, p2, s2, shooting)
    x3, p3 = x + (h / 2) * r2[0], _axpy(p, h / 2, r2[1])
    K3, *r3 = _stage(x3, p3, s2, shooting)
    x4, p4 = x + h * r3[0], _axpy(p, h, r3[1])
    K4 = _kernel(x4, s2)

    ax, ap = bx.copy(), bp.copy()
    k4x, k4p = (h / 6) * bx, (h / 6) * bp
    k3x, k3p = (h / 3) * bx, (h / 3) * bp
    k2x, k2p = (h / 3) * bx, (h / 3) * bp
    k1x, k1p = (h / 6) * bx, (h / 6) * bp

    gx, gp = _vjp_rates(x4, p4, k4x, k4p, s2, shooting, K4)
    ax += gx; ap += gp
    k3x = k3x + h * gx; k3p = k3p + h * gp
    gx, gp = _vjp_rates(x3, p3, k3x, k3p, s2, shooting, K3)
    ax += gx; ap += gp
    k2x = k2x + (h / 2) * gx; k2p = k2p + (h / 2) * gp
    gx, gp = _vjp_rates(x2, p2, k2x, k2p, s2, shooting, K2)
    ax += gx; ap += gp
    k1x = k1x + (h / 2) * gx; k1p = k1p + (h / 2) * gp
    gx, gp = _vjp_rates(x, p, k1x, k1p, s2, shooting, K1)
    ax += gx; ap += gp
    return ax, ap
