"""Euler-Maruyama hybrid simulation of the plant, exosystem and controller.

The plant state advances on the fine grid ``t_j = j * delta``.  The
exosystem advances through the exact propagator ``expm(S delta)``.  The
controller state flows between sampling instants ``t_k = k * eps`` and
jumps at them; at a jump the controller sees only the samples taken at
``t_k`` and ``t_{k-1}``.

Two engines share the same loop order:

* a compiled engine used for the built-in policies of :mod:`stochreg.control`;
* a plain Python engine for any object implementing :class:`ControllerPolicy`.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.linalg

from . import _core
from .errors import ConfigError, GridMismatch, IntegrationBlowup, OffGridError
from .model import Exosystem, PlantModel
from .noise import BrownianPath, grid_index, n_steps

GUARD = 1e12


@dataclass
class SimConfig:
    """Time grid and bookkeeping for one run.

    Parameters
    ----------
    delta : float
        Fine step.
    eps : float
        Sampling period, a multiple of ``delta``, or ``inf`` for no jumps.
    T : float
        Horizon.
    T_ss : float, optional
        Start of the steady-state window; defaults to ``T / 2``.
    seed : int
    record_every : int, optional
        Fine steps between recorded rows.  Defaults to ``m // 10`` for a
        finite ``eps = m * delta`` and to ``round(1e-4 / delta)`` otherwise.
    """

    delta: float
    eps: float
    T: float
    T_ss: float | None = None
    seed: int = 0
    record_every: int | None = None
    guard: float = GUARD

    def __post_init__(self):
        self.delta = float(self.delta)
        self.eps = math.inf if self.eps in ("inf", None) else float(self.eps)
        self.T = float(self.T)
        if not self.delta > 0:
            raise ConfigError("delta must be positive")
        if not self.T > 0:
            raise ConfigError("T must be positive")
        if self.T_ss is None:
            self.T_ss = self.T / 2
        if not 0 <= self.T_ss < self.T:
            raise ConfigError("need 0 <= T_ss < T")
        if math.isfinite(self.eps):
            try:
                m = grid_index(self.eps, self.delta)
            except OffGridError as exc:
                raise ConfigError(f"eps is not on the fine grid: {exc}") from None
            if m < 1:
                raise ConfigError("eps must be at least delta")
        if self.record_every is None:
            if math.isfinite(self.eps):
                self.record_every = max(1, self.m // 10)
            else:
                self.record_every = max(1, int(round(1e-4 / self.delta)))
        self.record_every = int(self.record_every)
        if self.record_every < 1:
            raise ConfigError("record_every must be >= 1")

    @property
    def m(self) -> int:
        """Fine steps per sampling period (0 when ``eps`` is infinite)."""
        return grid_index(self.eps, self.delta) if math.isfinite(self.eps) else 0

    @property
    def n_steps(self) -> int:
        return n_steps(self.T, self.delta)


@dataclass
class SampledRecord:
    """Data available to a controller at the sampling instant ``t_k``."""

    k: int
    t_k: float
    x_k: np.ndarray
    x_prev: np.ndarray
    u_prev: float
    w_prev: np.ndarray
    w_k: np.ndarray


@dataclass
class JumpLog:
    """Per-jump diagnostics, one entry per sampling instant."""

    t: np.ndarray
    dw_hat: np.ndarray
    dw_true: np.ndarray
    v_norm: np.ndarray
    skipped: np.ndarray
    x: np.ndarray
    z: np.ndarray
    gamma: np.ndarray
    w: np.ndarray

    @property
    def skip_rate(self) -> float:
        return float(self.skipped.mean()) if self.skipped.size else 0.0


@dataclass
class HybridTrajectory:
    """Recorded closed-loop run.

    Rows at jump instants appear twice with the same time: first the
    pre-jump values (``jump == 0``), then the post-jump ones (``jump == 1``).
    """

    times: np.ndarray
    jump: np.ndarray
    x: np.ndarray
    u: np.ndarray
    e: np.ndarray
    w: np.ndarray
    z: np.ndarray | None
    jumps: JumpLog
    divergent: bool
    t_end: float
    ss_rms_e: float
    ss_rms_zx: float
    delta: float
    eps: float
    aux: np.ndarray | None = None

    def to_csv(self, path):
        write_trajectory_csv(path, self)


class ControllerPolicy:
    """Interface for controllers driven by :func:`simulate_closed_loop`.

    The internal state is a flat float array owned by the run.
    """

    has_observer = False

    def initial_state(self, x0, w0) -> np.ndarray:
        return np.zeros(0)

    def control(self, xi, x, w, t, noise_rate) -> float:
        raise NotImplementedError

    def continuous_drift(self, xi, x, u, w, t) -> np.ndarray:
        """Drift of the internal state."""
        return np.zeros_like(xi)

    def oracle_diffusion(self, xi, x, u, w, t):
        """Diffusion of the internal state (only oracle policies return one)."""
        return None

    def wants_jump_at(self, k) -> bool:
        return False

    def latch(self, xi):
        """Store the post-jump values needed by the next jump."""

    def reconstruct(self, xi, rec: SampledRecord):
        """Return ``(dw_hat, |v|, skipped)`` for the window ending at ``rec.t_k``."""
        return 0.0, 0.0, True

    def jump(self, xi, rec: SampledRecord, dw_hat, k) -> np.ndarray:
        return xi

    def post_step(self, xi):
        """Hook after each fine step."""

    def observer_state(self, xi):
        return None

    def feedforward(self, xi, nu):
        """Drift feedforward row in force, for diagnostics."""
        return np.zeros(nu)


def em_step(x, drift, diffusion, delta, dW, t=None):
    """One Euler-Maruyama step ``x + drift*delta + diffusion*dW``."""
    with np.errstate(over="ignore", invalid="ignore"):
        out = np.asarray(x, dtype=float) + np.asarray(drift) * delta + np.asarray(diffusion) * dW
    if not np.all(np.isfinite(out)):
        raise IntegrationBlowup("non-finite state after Euler step", t)
    return out


@lru_cache(maxsize=64)
def _expm_cached(key, shape, dt):
    S = np.frombuffer(key).reshape(shape)
    E = scipy.linalg.expm(S * dt)
    E.setflags(write=False)
    return E


def exo_propagator(S, dt) -> np.ndarray:
    """``expm(S * dt)`` (scaling and squaring, cached)."""
    S = np.ascontiguousarray(np.atleast_2d(np.asarray(S, dtype=float)))
    return _expm_cached(S.tobytes(), S.shape, float(dt))


def fundamental_matrix(A_h, F_h, path: BrownianPath, delta=None, T=None, record_every=1):
    """Euler fundamental matrix of ``dPhi = (A_h dt + F_h dW) Phi``.

    Returns
    -------
    times : ndarray
    Phi : ndarray, shape (k, n, n)
    blowup : bool
    """
    A_h = np.atleast_2d(np.asarray(A_h, dtype=float))
    F_h = np.atleast_2d(np.asarray(F_h, dtype=float))
    delta = path.delta if delta is None else delta
    if abs(delta - path.delta) > 1e-15 * path.delta:
        raise ConfigError("delta differs from the path step")
    N = path.n if T is None else n_steps(T, delta)
    if N > path.n:
        raise ConfigError("horizon exceeds the Brownian path")
    n = A_h.shape[0]
    out = np.empty((N // record_every + 1, n, n))
    r, last = _core.fundamental(A_h, F_h, path.increments, delta, N, record_every, GUARD, out)
    times = np.arange(r) * record_every * delta
    return times, out[:r], last < N


def _row_capacity(N, m, rec):
    return N // rec + 1 + (2 * (N // m) if m > 0 else 0) + 2


def simulate_closed_loop(m: PlantModel, e: Exosystem, c: ControllerPolicy, path: BrownianPath,
                         cfg: SimConfig, x0=None, engine="auto") -> HybridTrajectory:
    """Simulate plant, exosystem and controller on one Brownian path.

    Parameters
    ----------
    engine : {"auto", "compiled", "python"}
        ``auto`` uses the compiled loop when the policy supports it.
    """
    if abs(cfg.delta - path.delta) > 1e-15 * path.delta:
        raise ConfigError(f"config delta {cfg.delta} differs from path delta {path.delta}")
    N = cfg.n_steps
    if N > path.n:
        raise ConfigError("horizon exceeds the Brownian path")
    x0 = np.zeros(m.n) if x0 is None else np.asarray(x0, dtype=float).copy()
    compiled = getattr(c, "params", None) is not None
    if engine == "python" or (engine == "auto" and not compiled):
        return _simulate_python(m, e, c, path, cfg, x0)
    if not compiled:
        raise ConfigError("policy has no compiled form")
    return _simulate_compiled(m, e, c, path, cfg, x0)


def _jump_period(c, cfg):
    check = getattr(c, "check_grid", None)
    if check is not None:
        check(cfg.eps)
    if not c.wants_jump_at(1):
        return 0
    if cfg.m == 0:
        raise GridMismatch("policy jumps but the run has eps = inf")
    return cfg.m


def _simulate_compiled(m, e, c, path, cfg, x0):
    p = c.params
    n, nu = m.n, m.nu
    N = cfg.n_steps
    mj = _jump_period(c, cfg)
    rec = cfg.record_every
    cap = _row_capacity(N, mj, rec)
    nj = N // mj if mj else 0
    xi = c.initial_state(x0, e.omega0)
    E = np.ascontiguousarray(exo_propagator(e.S, cfg.delta))
    rec_idx = np.empty(cap, dtype=np.int64)
    rec_jump = np.empty(cap, dtype=np.int8)
    rec_e = np.empty(cap)
    rec_u = np.empty(cap)
    rec_x = np.empty((cap, n))
    rec_z = np.empty((cap, n))
    rec_w = np.empty((cap, nu))
    j_dwh = np.empty(nj)
    j_dwt = np.empty(nj)
    j_vn = np.empty(nj)
    j_sk = np.empty(nj, dtype=np.bool_)
    j_x = np.empty((nj, n))
    j_z = np.empty((nj, n))
    j_g = np.empty((nj, nu))
    j_w = np.empty((nj, nu))
    acc = np.zeros(5)
    j_ss = int(math.ceil(cfg.T_ss / cfg.delta - 1e-9))
    r, kj = _core.run_closed_loop(
        *p.k, x0, xi, np.array(e.omega0, dtype=float), E, path.increments, path.W, cfg.delta,
        N, mj, rec, j_ss, cfg.guard, rec_idx, rec_jump, rec_e, rec_u, rec_x, rec_z, rec_w,
        j_dwh, j_dwt, j_vn, j_sk, j_x, j_z, j_g, j_w, acc)
    return _finish(c, cfg, r, kj, mj, rec_idx, rec_jump, rec_e, rec_u, rec_x, rec_z, rec_w,
                   j_dwh, j_dwt, j_vn, j_sk, j_x, j_z, j_g, j_w, acc, xi)


def _finish(c, cfg, r, kj, mj, rec_idx, rec_jump, rec_e, rec_u, rec_x, rec_z, rec_w,
            j_dwh, j_dwt, j_vn, j_sk, j_x, j_z, j_g, j_w, acc, xi):
    has_z = c.has_observer
    jt = (np.arange(1, kj + 1) * mj * cfg.delta) if mj else np.zeros(0)
    jumps = JumpLog(jt, j_dwh[:kj].copy(), j_dwt[:kj].copy(), j_vn[:kj].copy(),
                    j_sk[:kj].copy(), j_x[:kj].copy(), j_z[:kj].copy() if has_z else None,
                    j_g[:kj].copy(), j_w[:kj].copy())
    cnt = acc[2]
    ss_e = math.sqrt(acc[0] / cnt) if cnt > 0 else math.nan
    ss_zx = math.sqrt(acc[1] / cnt) if (cnt > 0 and has_z) else math.nan
    divergent = bool(acc[4])
    if divergent:
        ss_e = ss_zx = math.nan
    return HybridTrajectory(
        times=rec_idx[:r] * cfg.delta, jump=rec_jump[:r].copy(), x=rec_x[:r].copy(),
        u=rec_u[:r].copy(), e=rec_e[:r].copy(), w=rec_w[:r].copy(),
        z=rec_z[:r].copy() if has_z else None, jumps=jumps, divergent=divergent,
        t_end=acc[3] * cfg.delta, ss_rms_e=ss_e, ss_rms_zx=ss_zx, delta=cfg.delta,
        eps=cfg.eps, aux=np.array(xi, copy=True))


def _simulate_python(m, e, c, path, cfg, x0):
    """Reference engine: same loop order as the compiled one, Python callbacks."""
    n, nu = m.n, m.nu
    N = cfg.n_steps
    delta = cfg.delta
    mj = _jump_period(c, cfg)
    rec = cfg.record_every
    cap = _row_capacity(N, mj, rec)
    nj = N // mj if mj else 0
    A, B, P, F, G, R = m.A, m.B, m.P, m.F, m.G, m.R
    E = exo_propagator(e.S, delta)
    dW, Wc = path.increments, path.W
    xi = np.asarray(c.initial_state(x0, e.omega0), dtype=float)
    x = x0.copy()
    w = np.array(e.omega0, dtype=float)
    rows = dict(idx=[], jump=[], e=[], u=[], x=[], z=[], w=[])
    jl = dict(dwh=[], dwt=[], vn=[], sk=[], x=[], z=[], g=[], w=[])
    acc = np.zeros(5)
    j_ss = int(math.ceil(cfg.T_ss / delta - 1e-9))
    x_prev, w_prev, u_prev = x.copy(), w.copy(), 0.0
    zero_z = np.zeros(n)

    def _zof(xi):
        z = c.observer_state(xi)
        return zero_z if z is None else z

    def _row(j, flag, u):
        rows["idx"].append(j)
        rows["jump"].append(flag)
        rows["u"].append(u)
        rows["e"].append(m.C @ x + m.D * u + m.Q @ w)
        rows["x"].append(x.copy())
        rows["z"].append(np.array(_zof(xi)))
        rows["w"].append(w.copy())

    k = 0
    last = 0
    diverged = False
    for j in range(N + 1):
        t = j * delta
        nr = dW[j] / delta if j < N else 0.0
        is_jump = mj > 0 and j > 0 and j % mj == 0
        recorded = (j % rec == 0) or is_jump
        if is_jump:
            k += 1
            if recorded:
                _row(j, 0, c.control(xi, x, w, t, nr))
            rec_k = SampledRecord(k, t, x.copy(), x_prev.copy(), u_prev, w_prev.copy(), w.copy())
            dwh, vn, sk = c.reconstruct(xi, rec_k)
            xi = np.asarray(c.jump(xi, rec_k, dwh, k), dtype=float)
            jl["dwh"].append(dwh)
            jl["dwt"].append(Wc[j] - Wc[j - mj])
            jl["vn"].append(vn)
            jl["sk"].append(sk)
            jl["x"].append(x.copy())
            jl["z"].append(np.array(_zof(xi)))
            jl["g"].append(np.array(c.feedforward(xi, nu)))
            jl["w"].append(w.copy())
        u = c.control(xi, x, w, t, nr)
        if is_jump or j == 0:
            x_prev, w_prev, u_prev = x.copy(), w.copy(), u
            c.latch(xi)
        if recorded:
            _row(j, 1 if is_jump else 0, u)
        if j >= j_ss:
            ee = m.C @ x + m.D * u + m.Q @ w
            acc[0] += ee * ee
            if c.has_observer:
                acc[1] += float(np.sum((_zof(xi) - x) ** 2))
            acc[2] += 1
        last = j
        if j == N:
            break
        dw = dW[j]
        xn = x + (A @ x + B * u + P @ w) * delta + (F @ x + G * u + R @ w) * dw
        dxi = c.continuous_drift(xi, x, u, w, t)
        sig = c.oracle_diffusion(xi, x, u, w, t)
        xi = xi + dxi * delta if sig is None else xi + dxi * delta + sig * dw
        c.post_step(xi)
        w = E @ w
        x = xn
        if (not np.all(np.isfinite(x)) or np.abs(x).max() > cfg.guard
                or not np.all(np.isfinite(xi)) or (xi.size and np.abs(xi).max() > cfg.guard)):
            diverged = True
            last = j + 1
            break
    acc[3] = last
    acc[4] = float(diverged)
    r = len(rows["idx"])
    kj = len(jl["dwh"])

    def _arr(v, shape):
        return np.array(v, dtype=float).reshape(shape)

    return _finish(
        c, cfg, r, kj, mj, np.array(rows["idx"], dtype=np.int64), np.array(rows["jump"], dtype=np.int8),
        np.array(rows["e"]), np.array(rows["u"]), _arr(rows["x"], (r, n)), _arr(rows["z"], (r, n)),
        _arr(rows["w"], (r, nu)), np.array(jl["dwh"]), np.array(jl["dwt"]), np.array(jl["vn"]),
        np.array(jl["sk"], dtype=bool), _arr(jl["x"], (kj, n)), _arr(jl["z"], (kj, n)),
        _arr(jl["g"], (kj, nu)), _arr(jl["w"], (kj, nu)), acc, xi)


def write_trajectory_csv(path, traj: HybridTrajectory):
    """Write ``t,jump,e,u,x1..xn[,z1..zn],w1..wnu``."""
    n = traj.x.shape[1]
    nu = traj.w.shape[1]
    head = ["t", "jump", "e", "u"] + [f"x{i + 1}" for i in range(n)]
    if traj.z is not None:
        head += [f"z{i + 1}" for i in range(n)]
    head += [f"w{i + 1}" for i in range(nu)]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(head)
        for i in range(traj.times.shape[0]):
            row = [repr(float(traj.times[i])), int(traj.jump[i]), repr(float(traj.e[i])),
                   repr(float(traj.u[i]))]
            row += [repr(float(v)) for v in traj.x[i]]
            if traj.z is not None:
                row += [repr(float(v)) for v in traj.z[i]]
            row += [repr(float(v)) for v in traj.w[i]]
            wr.writerow(row)
