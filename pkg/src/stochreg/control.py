"""Controller policies and internal-model design.

All built-in policies are thin wrappers around a parameter tuple for
the compiled hooks in :mod:`stochreg._core`; the same hooks serve the
Python reference engine through the :class:`~stochreg.sim.ControllerPolicy`
methods.

Policies
--------
ideal_fi
    ``u = K x + Gamma_a w`` with the regulator matrix integrated on the
    true Brownian path (oracle).
approx_fi
    Hybrid regulator matrix: drift-only flow, jumps driven by increments
    reconstructed from full-state samples.
ideal_of
    Oracle observer and regulator, ``u = K z + Gamma_a w``.
hybrid_of
    Hybrid observer (injection of ``ya`` between samples, jumps driven by
    increments reconstructed from ``yb``) and hybrid regulator.
internal_model
    ``u = K x + Kz zim`` with ``dzim = ((H + Lim Kz) zim + G2 e) dt``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.signal

from . import _core
from ._build import make_params
from .errors import ConfigError, DesignFailure, GridMismatch, UnsupportedConfiguration
from .model import TAU_EIG, Exosystem, GainSet, PlantModel, RelativeDegreeInfo, \
    stochastic_relative_degree
from .regeq import RegulatorSolution, initial_pi
from .sim import ControllerPolicy, HybridTrajectory, SampledRecord

TAU_INV = 1e-8

__all__ = [
    "GainSet", "BuiltinPolicy", "ideal_fi_policy", "approx_fi_policy", "ideal_of_policy",
    "hybrid_of_policy", "internal_model_policy", "internal_model_design",
    "InternalModelDesign", "estimation_error_diag", "EstimationReport",
    "default_observer_gain", "default_internal_model",
]


class BuiltinPolicy(ControllerPolicy):
    """Policy backed by the compiled hooks.

    Parameters
    ----------
    params : stochreg._core.Params
    xi0 : ndarray
        Initial internal state; the observer block is overwritten by
        ``z0`` when given at :meth:`initial_state`.
    jumps : bool
        Whether the policy jumps at sampling instants.
    """

    def __init__(self, name, params, xi0, jumps, has_observer=False, eps=math.inf, z0=None):
        self.name = name
        self.params = params
        self._xi0 = np.ascontiguousarray(xi0, dtype=float)
        self.jumps = bool(jumps)
        self.has_observer = has_observer
        self.eps = eps
        self.z0 = z0
        self._o = _core.offsets(params.n, params.nu)
        self._dr = np.empty_like(self._xi0)
        self._df = np.empty_like(self._xi0)

    def __repr__(self):
        return f"<{self.name} policy>"

    def initial_state(self, x0, w0):
        xi = self._xi0.copy()
        if self.has_observer and self.z0 is not None:
            o = self._o[3]
            xi[o:o + self.params.n] = self.z0
        _core.ctrl_latch(*self.params.k, xi)
        return xi

    def control(self, xi, x, w, t, noise_rate):
        return _core.ctrl_u(*self.params.k, xi, np.asarray(x, float), np.asarray(w, float),
                            float(noise_rate))

    def _rates(self, xi, x, u, w, t):
        _core.ctrl_rates(*self.params.k, xi, np.asarray(x, float), float(u),
                         np.asarray(w, float), float(t), self._dr, self._df)

    def continuous_drift(self, xi, x, u, w, t):
        self._rates(xi, x, u, w, t)
        return self._dr.copy()

    def oracle_diffusion(self, xi, x, u, w, t):
        if self.params.reg_mode != _core.REG_IDEAL and self.params.obs_mode != _core.OBS_IDEAL:
            return None
        self._rates(xi, x, u, w, t)
        return self._df.copy()

    def wants_jump_at(self, k):
        return self.jumps

    def check_grid(self, eps):
        if self.jumps and math.isfinite(eps) and abs(eps - self.eps) > 1e-12 * self.eps:
            raise GridMismatch(f"policy built for eps={self.eps}, run uses eps={eps}")

    def latch(self, xi):
        _core.ctrl_latch(*self.params.k, xi)

    def reconstruct(self, xi, rec: SampledRecord):
        dw, vn, sk = _core.ctrl_recon(*self.params.k, xi, rec.x_k, rec.x_prev, float(rec.u_prev),
                                      rec.w_prev)
        return float(dw), float(vn), bool(sk)

    def jump(self, xi, rec: SampledRecord, dw_hat, k):
        xi = xi.copy()
        _core.ctrl_jump(*self.params.k, xi, float(rec.u_prev), rec.w_prev, float(dw_hat))
        return xi

    def post_step(self, xi):
        _core.ctrl_post(*self.params.k, xi)

    def observer_state(self, xi):
        if not self.has_observer:
            return None
        o = self._o[3]
        return xi[o:o + self.params.n]

    def feedforward(self, xi, nu):
        g = np.empty(nu)
        _core.gamma_a(*self.params.k, xi, g, 0)
        return g

    def block(self, xi, name):
        """Slice of the internal state: ``Pi, z, zim, Piz, Kz`` or ``aux``."""
        n, nu = self.params.n, self.params.nu
        o = self._o
        spec = {"Pi": (o[0], (n, nu)), "Pil": (o[1], (n, nu)), "hold": (o[2], (nu,)),
                "z": (o[3], (n,)), "zl": (o[4], (n,)), "zim": (o[5], (nu,)),
                "Piz": (o[6], (nu, nu)), "Kz": (o[7], (nu,)), "aux": (o[8], (2,))}
        start, shape = spec[name]
        return np.asarray(xi)[start:start + int(np.prod(shape))].reshape(shape)


def _state(m, Pi0=None):
    xi = np.zeros(_core.state_size(m.n, m.nu))
    if Pi0 is not None:
        xi[: m.n * m.nu] = np.asarray(Pi0, dtype=float).ravel()
    return xi


def _rd(m, e, rd):
    return stochastic_relative_degree(m, e.S) if rd is None else rd


def _constant_pair(regsol):
    Pi, La = regsol
    return np.atleast_2d(np.asarray(Pi, dtype=float)), np.atleast_1d(np.asarray(La, dtype=float))


def ideal_fi_policy(K, m: PlantModel, e: Exosystem, rd: RelativeDegreeInfo | None = None,
                    regsol=None) -> BuiltinPolicy:
    """Oracle full-information regulator ``u = K x + Gamma w``.

    Parameters
    ----------
    regsol : tuple or RegulatorSolution, optional
        A constant ``(Pi, Lambda)`` pair gives a fixed feedforward.  A
        :class:`~stochreg.regeq.RegulatorSolution` fixes the initial
        regulator matrix; the matrix is then integrated along the run's
        own Brownian path, which reproduces the given solution when both
        share the path and the fine step.  By default integration starts
        from :func:`~stochreg.regeq.initial_pi`.
    """
    K = np.asarray(K, dtype=float).ravel()
    rd = _rd(m, e, rd)
    if isinstance(regsol, tuple):
        Pi, La = _constant_pair(regsol)
        p = make_params(m, e.S, rd, K=K, reg_mode=_core.REG_CONST, Gam=La - K @ Pi)
        return BuiltinPolicy("ideal_fi", p, _state(m), jumps=False)
    Pi0 = regsol.Pi[0] if isinstance(regsol, RegulatorSolution) else initial_pi(m, rd)
    p = make_params(m, e.S, rd, K=K, reg_mode=_core.REG_IDEAL)
    return BuiltinPolicy("ideal_fi", p, _state(m, Pi0), jumps=False)


def approx_fi_policy(K, m: PlantModel, e: Exosystem, rd: RelativeDegreeInfo | None = None,
                     eps=math.inf, tau_v=None, Pi0=None) -> BuiltinPolicy:
    """Causal full-information regulator with the hybrid regulator matrix.

    ``eps = inf`` never jumps (regulation in the mean).
    """
    K = np.asarray(K, dtype=float).ravel()
    rd = _rd(m, e, rd)
    eps = float(eps)
    p = make_params(m, e.S, rd, K=K, reg_mode=_core.REG_HYBRID, recon_mode=_core.RECON_STATE,
                    tau_v_rel=tau_v, eps=eps)
    Pi0 = initial_pi(m, rd) if Pi0 is None else Pi0
    return BuiltinPolicy("approx_fi", p, _state(m, Pi0), jumps=math.isfinite(eps), eps=eps)


def _schedule(gains: GainSet, m, jumps=True):
    if not gains.L_schedule:
        return [(0.0, default_observer_gain(m, reconstruction=jumps))]
    return gains.L_schedule


def ideal_of_policy(gains: GainSet, m: PlantModel, e: Exosystem,
                    rd: RelativeDegreeInfo | None = None, oracle=False, z0=None,
                    regsol=None) -> BuiltinPolicy:
    """Oracle output-feedback regulator; requires ``oracle=True``.

    The observer and the regulator matrix are driven by the true
    increments, which no causal controller can access.
    """
    if not oracle:
        raise ConfigError("the ideal output-feedback policy needs oracle=True")
    if not m.has_outputs:
        raise ConfigError("model has no measurement rows")
    rd = _rd(m, e, rd)
    K = gains.K
    if isinstance(regsol, tuple):
        Pi, La = _constant_pair(regsol)
        p = make_params(m, e.S, rd, K=K, L_schedule=_schedule(gains, m, False),
                        reg_mode=_core.REG_CONST, Gam=La - K @ Pi, obs_mode=_core.OBS_IDEAL)
        return BuiltinPolicy("ideal_of", p, _state(m), jumps=False, has_observer=True, z0=z0)
    p = make_params(m, e.S, rd, K=K, L_schedule=_schedule(gains, m, False),
                    reg_mode=_core.REG_IDEAL, obs_mode=_core.OBS_IDEAL)
    return BuiltinPolicy("ideal_of", p, _state(m, initial_pi(m, rd)), jumps=False,
                         has_observer=True, z0=z0)


def hybrid_of_policy(gains: GainSet, m: PlantModel, e: Exosystem,
                     rd: RelativeDegreeInfo | None = None, eps=math.inf, tau_v=None,
                     z0=None, Pi0=None) -> BuiltinPolicy:
    """Causal output-feedback regulator with hybrid observer and regulator matrix.

    Between samples ``dz = [A z + B u + P w + L (Ca z - ya)] dt``.  At
    ``t_k`` the increment is reconstructed from ``yb`` using the latched
    observer state ``z(t_{k-1}+)``, then ``z`` and the regulator matrix
    jump.
    """
    if not m.has_outputs:
        raise ConfigError("model has no measurement rows")
    rd = _rd(m, e, rd)
    eps = float(eps)
    p = make_params(m, e.S, rd, K=gains.K, L_schedule=_schedule(gains, m),
                    reg_mode=_core.REG_HYBRID, obs_mode=_core.OBS_HYBRID,
                    recon_mode=_core.RECON_OUTPUT, tau_v_rel=tau_v, eps=eps)
    Pi0 = initial_pi(m, rd) if Pi0 is None else Pi0
    return BuiltinPolicy("hybrid_of", p, _state(m, Pi0), jumps=math.isfinite(eps),
                         has_observer=True, eps=eps, z0=z0)


# -- observer gain -----------------------------------------------------------

def nominal_noise_direction(m: PlantModel, w) -> np.ndarray:
    """Direction of ``R w`` (the diffusion at zero state), or ``F``'s dominant column."""
    v = m.R @ np.asarray(w, dtype=float)
    if np.linalg.norm(v) == 0.0:
        v = np.linalg.svd(m.F)[0][:, 0]
    return v / np.linalg.norm(v)


def default_observer_gain(m: PlantModel, poles=None, direction=None,
                          reconstruction=True) -> np.ndarray:
    """Observer gain placing the poles of ``(I - Psi0) A + L Ca``.

    ``Psi0 = v Cb / (Cb v)`` is built from a nominal noise direction
    ``v`` (by default the dominant column of ``R``, or of ``F`` when
    ``R = 0``).  It accounts for the part of the error removed by the
    jump corrections.  A noise-free model, or ``reconstruction=False``
    (observers without jumps), gets ``Psi0 = 0``, i.e. plain pole
    placement for ``A + L Ca``.  Default poles are ``-60, -70, -80, ...``.
    """
    n = m.n
    if poles is None:
        poles = -60.0 - 10.0 * np.arange(n)
    noisy = reconstruction and any(np.any(M != 0.0) for M in (m.F, m.G, m.R))
    if direction is None and noisy:
        if np.linalg.norm(m.R) > 0:
            direction = np.linalg.svd(m.R)[0][:, 0]
        else:
            direction = np.linalg.svd(m.F)[0][:, 0]
    Psi = np.zeros((n, n))
    if direction is not None:
        # without noise no jump carries information and Psi0 stays zero
        v = np.asarray(direction, dtype=float)
        cbv = float(m.Cb @ v)
        if abs(cbv) > 1e-12:
            Psi = np.outer(v, m.Cb) / cbv
    M = (np.eye(n) - Psi) @ m.A
    res = scipy.signal.place_poles(M.T, m.Ca.reshape(n, 1), np.asarray(poles, dtype=float))
    return -res.gain_matrix.ravel()


# -- internal model ----------------------------------------------------------

def default_internal_model(m: PlantModel, e: Exosystem, shift=50.0):
    """``H = S - shift I``, ``Lim = 1``, ``G2 = -Lim / D`` (``-Lim`` when ``D = 0``)."""
    nu = e.nu
    H = e.S - shift * np.eye(nu)
    Lim = np.ones(nu)
    G2 = -Lim / m.D if m.D != 0.0 else -Lim
    return H, Lim, G2


def _check_im_pair(H, Lim, S):
    nu = H.shape[0]
    ctrb = np.hstack([np.linalg.matrix_power(H, k) @ Lim.reshape(nu, 1) for k in range(nu)])
    if np.linalg.matrix_rank(ctrb) < nu:
        raise DesignFailure("(H_im, L_im) is not controllable")
    lh, ls = np.linalg.eigvals(H), np.linalg.eigvals(S)
    scale = max(1.0, np.linalg.norm(H, 2), np.linalg.norm(S, 2))
    if np.min(np.abs(lh[:, None] - ls[None, :])) <= TAU_EIG * scale:
        raise DesignFailure("spectra of H_im and S intersect")


def _sylvester_piz(H, Lim, S, gam):
    """Constant ``Piz`` with ``H Piz - Piz S + Lim gam = 0``."""
    return scipy.linalg.solve_sylvester(H, -S, -np.outer(Lim, gam))


@dataclass
class InternalModelDesign:
    """Internal-model regulator matrix and gain along a grid.

    Attributes
    ----------
    times : ndarray
    Piz : ndarray, shape (k, nu, nu)
    Kz : ndarray, shape (k, nu)
    margin : ndarray
        ``sigma_min(Piz) / |Piz|`` at each grid point.
    held : ndarray of bool
        Points where ``Kz`` kept its previous value.
    """

    H_im: np.ndarray
    L_im: np.ndarray
    G2_im: np.ndarray
    times: np.ndarray
    Piz: np.ndarray
    Kz: np.ndarray
    margin: np.ndarray
    held: np.ndarray

    def G1(self, k):
        """``H_im + L_im Kz`` at grid index ``k``."""
        return self.H_im + np.outer(self.L_im, self.Kz[k])


def internal_model_design(H_im, L_im, K, regsol, e: Exosystem, cfg=None, G2_im=None,
                          Piz0=None, tau_inv=TAU_INV, max_held=0.1) -> InternalModelDesign:
    """Integrate ``dPiz = [H Piz - Piz S + Lim (La - K Pi)] dt`` along ``regsol``.

    Parameters
    ----------
    regsol : RegulatorSolution or (Pi, Lambda) tuple
        A constant pair is held over ``cfg.T`` with step ``cfg.delta``.
    Piz0 : ndarray, optional
        Initial value, zero by default.

    Raises
    ------
    DesignFailure
        Uncontrollable pair, intersecting spectra, or ``Kz`` held on
        more than ``max_held`` of the grid.
    """
    H = np.atleast_2d(np.asarray(H_im, dtype=float))
    Lim = np.asarray(L_im, dtype=float).ravel()
    S = e.S
    nu = S.shape[0]
    _check_im_pair(H, Lim, S)
    K = np.asarray(K, dtype=float).ravel()
    if isinstance(regsol, tuple):
        if cfg is None:
            raise ConfigError("a constant regulator pair needs a config for the grid")
        Pi, La = _constant_pair(regsol)
        nk = cfg.n_steps + 1
        times = np.arange(nk) * cfg.delta
        gam = np.tile(La - K @ Pi, (nk, 1))
    else:
        times = regsol.times
        gam = regsol.La - np.einsum("i,kij->kj", K, regsol.Pi)
    nk = times.shape[0]
    Piz = np.zeros((nk, nu, nu))
    Kz = np.zeros((nk, nu))
    margin = np.zeros(nk)
    held = np.zeros(nk, dtype=bool)
    Piz[0] = np.zeros((nu, nu)) if Piz0 is None else Piz0
    for k in range(nk):
        if k > 0:
            dt = times[k] - times[k - 1]
            P = Piz[k - 1]
            Piz[k] = P + (H @ P - P @ S + np.outer(Lim, gam[k - 1])) * dt
        sv = np.linalg.svd(Piz[k], compute_uv=False)
        margin[k] = sv[-1] / sv[0] if sv[0] > 0 else 0.0
        if sv[0] > 0 and sv[-1] > tau_inv * sv[0]:
            Kz[k] = np.linalg.solve(Piz[k].T, gam[k])
        else:
            held[k] = True
            Kz[k] = Kz[k - 1] if k > 0 else 0.0
    if held.mean() > max_held:
        raise DesignFailure(f"Piz near singular on {held.mean():.0%} of the grid")
    G2 = -Lim if G2_im is None else np.asarray(G2_im, dtype=float).ravel()
    return InternalModelDesign(H, Lim, G2, times, Piz, Kz, margin, held)


def internal_model_policy(K, m: PlantModel, e: Exosystem, rd: RelativeDegreeInfo | None = None,
                          H_im=None, L_im=None, G2_im=None, regulator="hybrid", eps=math.inf,
                          tau_v=None, tau_inv=TAU_INV) -> BuiltinPolicy:
    """Internal-model regulator ``u = K x + Kz zim``.

    Parameters
    ----------
    regulator : "hybrid" or (Pi, Lambda)
        Source of the feedforward ``Gamma = La - K Pi`` that drives
        ``Piz``: the hybrid regulator matrix with full-information
        reconstruction, or a constant pair.

    ``Piz`` starts at the constant solution for the initial feedforward,
    ``Kz`` at the matching gain and ``zim`` at ``Piz omega0``, so the
    first control equals the full-information one.
    """
    K = np.asarray(K, dtype=float).ravel()
    rd = _rd(m, e, rd)
    dH, dL, dG = default_internal_model(m, e)
    H = dH if H_im is None else np.atleast_2d(np.asarray(H_im, dtype=float))
    Lim = dL if L_im is None else np.asarray(L_im, dtype=float).ravel()
    if G2_im is None:
        G2 = -Lim / m.D if m.D != 0.0 else -Lim
    else:
        G2 = np.asarray(G2_im, dtype=float).ravel()
    _check_im_pair(H, Lim, e.S)
    eps = float(eps)
    if isinstance(regulator, tuple):
        Pi, La = _constant_pair(regulator)
        gam0 = La - K @ Pi
        p = make_params(m, e.S, rd, K=K, reg_mode=_core.REG_CONST, Gam=gam0, im=True, H=H,
                        Lim=Lim, G2=G2, tau_inv=tau_inv)
        xi = _state(m)
        jumps = False
    elif regulator == "hybrid":
        Pi0 = initial_pi(m, rd)
        p = make_params(m, e.S, rd, K=K, reg_mode=_core.REG_HYBRID, im=True, H=H, Lim=Lim,
                        G2=G2, tau_inv=tau_inv, tau_v_rel=tau_v, eps=eps)
        xi = _state(m, Pi0)
        gam0 = np.empty(m.nu)
        _core.gamma_a(*p.k, xi, gam0, 0)
        jumps = math.isfinite(eps)
    else:
        raise ConfigError(f"unknown regulator source {regulator!r}")
    o = _core.offsets(m.n, m.nu)
    nu = m.nu
    piz0 = _sylvester_piz(H, Lim, e.S, gam0)
    xi[o[6]:o[6] + nu * nu] = piz0.ravel()
    xi[o[5]:o[5] + nu] = piz0 @ np.asarray(e.omega0, dtype=float).ravel()
    sv = np.linalg.svd(piz0, compute_uv=False)
    if sv[0] > 0 and sv[-1] > tau_inv * sv[0]:
        xi[o[7]:o[7] + nu] = np.linalg.solve(piz0.T, gam0)
    elif sv[0] > 0:
        # gam0 lies in the row space of piz0, so the min-norm gain is exact
        xi[o[7]:o[7] + nu] = np.linalg.lstsq(piz0.T, gam0, rcond=tau_inv)[0]
    return BuiltinPolicy("internal_model", p, xi, jumps=jumps, eps=eps)


# -- estimation error diagnostics -------------------------------------------

@dataclass
class EstimationReport:
    """Annihilation residuals and one-step error propagation along the samples.

    Attributes
    ----------
    psi_residual : ndarray
        ``|Cb (I - Psi_k) w_k|`` at each sampling instant (``w_k`` the
        observer diffusion vector).
    eta_residual : ndarray
        Observed minus predicted ``eta_k = z_k - x_k``.
    """

    psi_residual: np.ndarray
    eta_residual: np.ndarray
    eta_norm: np.ndarray
    valid: np.ndarray = field(repr=False)

    @property
    def psi_max(self) -> float:
        r = self.psi_residual[self.valid]
        return float(r.max()) if r.size else 0.0

    @property
    def eta_residual_rms(self) -> float:
        r = self.eta_residual
        return float(np.sqrt(np.mean(r ** 2))) if r.size else 0.0


def estimation_error_diag(m: PlantModel, K, L, traj: HybridTrajectory,
                          tau_v=None) -> EstimationReport:
    """Check ``Cb (I - Psi_k) w_k = 0`` and the one-step estimation-error map.

    ``Psi_k = w_k Cb / (Cb w_k)`` with ``w_k = (F + G K) z_k + (R + G Gamma_k) w(t_k)``.
    The prediction is ``eta_k = eta_{k-1} + [(I - Psi_{k-1}) A + L Ca] eta_{k-1} eps``.

    Parameters
    ----------
    L : ndarray or GainSet
        Observer gain (constant) or a gain set with a schedule.
    """
    j = traj.jumps
    if j.z is None:
        raise ConfigError("trajectory has no observer channel")
    K = np.asarray(K, dtype=float).ravel()
    n = m.n
    nk = j.t.shape[0]
    Fk = m.F + np.outer(m.G, K)
    psi_res = np.zeros(nk)
    valid = np.zeros(nk, dtype=bool)
    Psis = np.zeros((nk, n, n))
    tau = 1e-6 * (1.0 + np.linalg.norm(m.F, 2) + np.linalg.norm(m.G) + np.linalg.norm(m.R, 2)) \
        if tau_v is None else tau_v
    I = np.eye(n)
    for k in range(nk):
        wv = Fk @ j.z[k] + (m.R + np.outer(m.G, j.gamma[k])) @ j.w[k]
        vz = float(m.Cb @ wv)
        if abs(vz) <= tau * (1.0 + np.linalg.norm(j.z[k]) + np.linalg.norm(j.w[k])):
            continue
        Psi = np.outer(wv, m.Cb) / vz
        Psis[k] = Psi
        psi_res[k] = abs(float(m.Cb @ (I - Psi) @ wv)) / (1.0 + np.linalg.norm(wv))
        valid[k] = True
    eta = j.z - j.x
    eps = traj.eps
    res = []
    for k in range(1, nk):
        Lk = L.L_at(j.t[k - 1]) if isinstance(L, GainSet) else np.asarray(L, dtype=float)
        M = (I - Psis[k - 1]) @ m.A + np.outer(Lk, m.Ca)
        pred = eta[k - 1] + M @ eta[k - 1] * eps
        if valid[k - 1]:
            res.append(np.linalg.norm(eta[k] - pred))
    return EstimationReport(psi_res, np.array(res), np.linalg.norm(eta, axis=1), valid)
