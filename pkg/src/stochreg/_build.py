"""Assembly of the compiled-kernel parameter tuple."""

from __future__ import annotations

import numpy as np

from . import _core
from .errors import UnsupportedConfiguration
from .model import PlantModel, RelativeDegreeInfo


def _c(a, ndim):
    a = np.asarray(a, dtype=float)
    if ndim == 2:
        a = np.atleast_2d(a)
    return np.ascontiguousarray(a)


def lambda_maps(m: PlantModel, rd: RelativeDegreeInfo):
    """Rows defining ``Lambda_a = -(Ma Pi + qa)/da`` and ``Lambda_b = -(Mb Pi + qb)/da``.

    For ``r = 0`` these come from the algebraic error constraint.  For
    ``r >= 1`` they come from the ``r``-th derivative of the error, which
    requires ``G = 0`` and ``b != 0``.
    """
    n, nu = m.n, m.nu
    if rd.r == 0:
        return m.C.copy(), m.Q.copy(), float(m.D), np.zeros(n), np.zeros(nu)
    if np.any(m.G != 0.0):
        raise UnsupportedConfiguration("relative degree r >= 1 requires G = 0")
    if rd.b == 0.0:
        raise UnsupportedConfiguration("relative degree r >= 1 requires C A^(r-1) B != 0")
    CAr1 = rd.zeta_maps[-1]
    return CAr1 @ m.A, rd.q_chain[rd.r].copy(), float(rd.b), CAr1 @ m.F, CAr1 @ m.R


def make_params(m: PlantModel, S, rd: RelativeDegreeInfo | None = None, *, K=None,
                L_schedule=None, reg_mode=_core.REG_CONST, Gam=None,
                obs_mode=_core.OBS_NONE, recon_mode=_core.RECON_STATE, im=False,
                H=None, Lim=None, G2=None, tau_inv=1e-8, tau_v_rel=None, eps=np.inf):
    n, nu = m.n, m.nu
    if rd is None:
        Ma, qa, da, Mb, qb, r = np.zeros(n), np.zeros(nu), 1.0, np.zeros(n), np.zeros(nu), 0
    else:
        Ma, qa, da, Mb, qb = lambda_maps(m, rd)
        r = rd.r
    if K is None:
        K = np.zeros(n)
    if L_schedule:
        L_times = np.array([t for t, _ in L_schedule], dtype=float)
        L_vals = np.array([np.ravel(L) for _, L in L_schedule], dtype=float)
    else:
        L_times, L_vals = np.zeros(1), np.zeros((1, n))
    if tau_v_rel is None:
        tau_v_rel = 1e-6 * (1.0 + np.linalg.norm(m.F, 2) + np.linalg.norm(m.G)
                            + np.linalg.norm(m.R, 2))
    work = np.zeros(8 * nu + 4 * n * nu + 4 * n + 2 * nu * nu + 8)
    C = _core
    blocks = {
        C.I_A: m.A, C.I_B: m.B, C.I_P: m.P, C.I_F: m.F, C.I_G: m.G, C.I_R: m.R,
        C.I_C: m.C, C.I_Q: m.Q,
        C.I_CA: m.Ca if m.Ca is not None else np.zeros(n),
        C.I_CB: m.Cb if m.Cb is not None else np.zeros(n),
        C.I_S: _c(S, 2), C.I_K: K, C.I_LT: L_times, C.I_LV: L_vals,
        C.I_GAM: np.zeros(nu) if Gam is None else Gam,
        C.I_MA: Ma, C.I_QA: qa, C.I_MB: Mb, C.I_QB: qb,
        C.I_H: np.zeros((nu, nu)) if H is None else H,
        C.I_LIM: np.zeros(nu) if Lim is None else Lim,
        C.I_G2: np.zeros(nu) if G2 is None else G2,
    }
    scalars = np.zeros(5)
    scalars[C.S_D], scalars[C.S_DA] = float(m.D), float(da)
    scalars[C.S_TAU_INV], scalars[C.S_TAU_V], scalars[C.S_EPS] = tau_inv, tau_v_rel, eps
    modes = {C.I_REG: int(reg_mode), C.I_RDEG: int(r), C.I_OBS: int(obs_mode),
             C.I_RECON: int(recon_mode), C.I_IM: int(bool(im)), C.I_NL: len(L_times)}
    pa, ip = C.pack(n, nu, blocks, scalars, modes)
    return C.Params(pa, ip, work)
