"""Compiled kernels for the fine-step loops.

Every built-in controller is described by a :class:`Params` bundle and a
flat state vector ``xi``.  The hook functions below (``ctrl_*``) are the
single implementation of the controller maps; the compiled engine
``run_closed_loop`` and the Python adapter in :mod:`stochreg.control`
both call them.

All constant matrices live row-major in one float array ``pa``; the int
array ``ip`` holds the dimensions, the modes and the offset of every
block in ``pa`` (indices ``I_*`` below).  ``wk`` is scratch space.
Keeping the kernels free of per-step array unpacking and slicing avoids
reference-count traffic in the inner loop.

State layout of ``xi`` (see :func:`offsets`)::

    Pi    n*nu   regulator matrix (ideal or hybrid)
    Pil   n*nu   latch of Pi at the last sampling instant
    hold  nu     held diffusion feedforward for r >= 1 hybrid control
    z     n      observer state
    zl    n      latch of z at the last sampling instant
    zim   nu     internal-model state
    Piz   nu*nu  internal-model regulator matrix
    Kz    nu     internal-model output gain
    aux   2      [number of steps with Kz held, last sigma_min / ||Piz||]
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

# regulator modes
REG_CONST, REG_IDEAL, REG_HYBRID = 0, 1, 2
# observer modes
OBS_NONE, OBS_IDEAL, OBS_HYBRID = 0, 1, 2
# reconstruction sources
RECON_STATE, RECON_OUTPUT = 0, 1

# layout of ip
I_N, I_NU, I_REG, I_RDEG, I_OBS, I_RECON, I_IM, I_NL = range(8)
(I_A, I_B, I_P, I_F, I_G, I_R, I_C, I_Q, I_CA, I_CB, I_S, I_K, I_LT, I_LV, I_GAM,
 I_MA, I_QA, I_MB, I_QB, I_H, I_LIM, I_G2, I_SC) = range(8, 31)
IP_SIZE = 31
# scalars stored at pa[ip[I_SC] + ...]
S_D, S_DA, S_TAU_INV, S_TAU_V, S_EPS = range(5)

# scratch wk, in units of nu: [unused | ctrl_u gamma | ctrl_u la | ctrl_u lb | b0 ...]
# from b0 = 4 nu: [la | lb | jump diffusion (n nu) | im gamma]


@dataclass(frozen=True)
class Params:
    """Kernel arrays plus a Python-side view of the modes."""

    pa: np.ndarray
    ip: np.ndarray
    wk: np.ndarray

    @property
    def k(self):
        return self.pa, self.ip, self.wk

    @property
    def n(self):
        return int(self.ip[I_N])

    @property
    def nu(self):
        return int(self.ip[I_NU])

    @property
    def reg_mode(self):
        return int(self.ip[I_REG])

    @property
    def obs_mode(self):
        return int(self.ip[I_OBS])

    @property
    def rdeg(self):
        return int(self.ip[I_RDEG])

    @property
    def im(self):
        return bool(self.ip[I_IM])

    @property
    def eps(self):
        return float(self.pa[self.ip[I_SC] + S_EPS])


def pack(n, nu, blocks, scalars, modes):
    """Assemble ``(pa, ip)``; ``blocks`` maps ``I_*`` indices to arrays."""
    ip = np.zeros(IP_SIZE, dtype=np.int64)
    ip[I_N], ip[I_NU] = n, nu
    for key, val in modes.items():
        ip[key] = val
    parts = []
    off = 0
    for key in sorted(blocks):
        a = np.ascontiguousarray(blocks[key], dtype=float).ravel()
        ip[key] = off
        parts.append(a)
        off += a.size
    ip[I_SC] = off
    parts.append(np.asarray(scalars, dtype=float))
    return np.concatenate(parts), ip


@njit(cache=True, inline="always")
def offsets(n, nu):
    o_pi = 0
    o_pil = o_pi + n * nu
    o_hold = o_pil + n * nu
    o_z = o_hold + nu
    o_zl = o_z + n
    o_zim = o_zl + n
    o_piz = o_zim + nu
    o_kz = o_piz + nu * nu
    o_aux = o_kz + nu
    return o_pi, o_pil, o_hold, o_z, o_zl, o_zim, o_piz, o_kz, o_aux, o_aux + 2


def state_size(n, nu):
    return offsets(n, nu)[-1]


@njit(cache=True, inline="always")
def _dot(a, oa, b, ob, k):
    s = 0.0
    for i in range(k):
        s += a[oa + i] * b[ob + i]
    return s


@njit(cache=True, inline="always")
def _norm(v, o, k):
    return np.sqrt(_dot(v, o, v, o, k))


@njit(cache=True, inline="always")
def _lin(pa, ip, i, x, ox, u, w, ow, kM, kV, kW):
    """Row ``i`` of ``M x + V u + W w`` for blocks ``M`` (n x n), ``V`` (n), ``W`` (n x nu)."""
    n = ip[I_N]
    nu = ip[I_NU]
    oM = ip[kM] + i * n
    oW = ip[kW] + i * nu
    s = pa[ip[kV] + i] * u
    for k in range(n):
        s += pa[oM + k] * x[ox + k]
    for c in range(nu):
        s += pa[oW + c] * w[ow + c]
    return s


@njit(cache=True, inline="always")
def output_error(pa, ip, x, u, w):
    n = ip[I_N]
    nu = ip[I_NU]
    return (_dot(pa, ip[I_C], x, 0, n) + pa[ip[I_SC] + S_D] * u
            + _dot(pa, ip[I_Q], w, 0, nu))


@njit(cache=True, inline="always")
def lam_pair(pa, ip, X, ox, out, oa, ob):
    """Drift and diffusion parts of Lambda for ``Pi`` stored flat in ``X[ox:]``.

    Written to ``out[oa:oa+nu]`` and ``out[ob:ob+nu]``.
    """
    n = ip[I_N]
    nu = ip[I_NU]
    oMa, oMb, oqa, oqb = ip[I_MA], ip[I_MB], ip[I_QA], ip[I_QB]
    da = pa[ip[I_SC] + S_DA]
    for c in range(nu):
        sa = pa[oqa + c]
        sb = pa[oqb + c]
        for i in range(n):
            sa += pa[oMa + i] * X[ox + i * nu + c]
            sb += pa[oMb + i] * X[ox + i * nu + c]
        out[oa + c] = -sa / da
        out[ob + c] = -sb / da


@njit(cache=True, inline="always")
def pi_drift(pa, ip, X, ox, L, ol, out, oo):
    """``A Pi - Pi S + P + B la`` written flat into ``out[oo:]``; ``la = L[ol:]``."""
    n = ip[I_N]
    nu = ip[I_NU]
    oA, oB, oP, oS = ip[I_A], ip[I_B], ip[I_P], ip[I_S]
    for i in range(n):
        for c in range(nu):
            s = pa[oP + i * nu + c] + pa[oB + i] * L[ol + c]
            for k in range(n):
                s += pa[oA + i * n + k] * X[ox + k * nu + c]
            for k in range(nu):
                s -= X[ox + i * nu + k] * pa[oS + k * nu + c]
            out[oo + i * nu + c] = s


@njit(cache=True, inline="always")
def pi_diffusion(pa, ip, X, ox, L, ola, olb, out, oo):
    """``F Pi + R + G la + B lb`` written flat into ``out[oo:]``."""
    n = ip[I_N]
    nu = ip[I_NU]
    oB, oF, oG, oR = ip[I_B], ip[I_F], ip[I_G], ip[I_R]
    for i in range(n):
        for c in range(nu):
            s = pa[oR + i * nu + c] + pa[oG + i] * L[ola + c] + pa[oB + i] * L[olb + c]
            for k in range(n):
                s += pa[oF + i * n + k] * X[ox + k * nu + c]
            out[oo + i * nu + c] = s


@njit(cache=True, inline="always")
def gamma_a(pa, ip, wk, xi, out, oo):
    """Drift feedforward ``Lambda_a - K Pi`` (or the constant one) into ``out[oo:]``."""
    n = ip[I_N]
    nu = ip[I_NU]
    if ip[I_REG] == REG_CONST:
        og = ip[I_GAM]
        for c in range(nu):
            out[oo + c] = pa[og + c]
        return
    oMa, oqa, oK = ip[I_MA], ip[I_QA], ip[I_K]
    da = pa[ip[I_SC] + S_DA]
    for c in range(nu):
        sa = pa[oqa + c]
        s = 0.0
        for i in range(n):
            sa += pa[oMa + i] * xi[i * nu + c]
            s += pa[oK + i] * xi[i * nu + c]
        out[oo + c] = -sa / da - s


@njit(cache=True, inline="always")
def L_index(pa, ip, t):
    """Offset in ``pa`` of the observer gain active at time ``t``."""
    oT = ip[I_LT]
    lo = 0
    hi = ip[I_NL] - 1
    # last breakpoint <= t (breakpoints sorted, the first one is 0)
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if pa[oT + mid] <= t:
            lo = mid
        else:
            hi = mid - 1
    return ip[I_LV] + lo * ip[I_N]


@njit(cache=True, inline="always")
def ctrl_u(pa, ip, wk, xi, x, w, noise_rate):
    """Control input; ``noise_rate`` is the current fine increment over delta."""
    n = ip[I_N]
    nu = ip[I_NU]
    o = offsets(n, nu)
    oK = ip[I_K]
    if ip[I_IM]:
        return _dot(pa, oK, x, 0, n) + _dot(xi, o[7], xi, o[5], nu)
    if ip[I_OBS] != OBS_NONE:
        u = _dot(pa, oK, xi, o[3], n)
    else:
        u = _dot(pa, oK, x, 0, n)
    gamma_a(pa, ip, wk, xi, wk, nu)
    u += _dot(wk, nu, w, 0, nu)
    if ip[I_REG] == REG_IDEAL and ip[I_RDEG] >= 1:
        lam_pair(pa, ip, xi, o[0], wk, 2 * nu, 3 * nu)
        u += _dot(wk, 3 * nu, w, 0, nu) * noise_rate
    elif ip[I_REG] == REG_HYBRID and ip[I_RDEG] >= 1:
        u += _dot(xi, o[2], w, 0, nu)
    return u


@njit(cache=True, inline="always")
def ctrl_rates(pa, ip, wk, xi, x, u, w, t, dr, df):
    """Drift ``dr`` and oracle diffusion ``df`` of the whole state ``xi``.

    ``df`` is nonzero only for the ideal (oracle) regulator and observer.
    """
    n = ip[I_N]
    nu = ip[I_NU]
    o = offsets(n, nu)
    b0 = 4 * nu
    for i in range(dr.shape[0]):
        dr[i] = 0.0
        df[i] = 0.0
    reg = ip[I_REG]
    if reg != REG_CONST:
        lam_pair(pa, ip, xi, o[0], wk, b0, b0 + nu)
        pi_drift(pa, ip, xi, o[0], wk, b0, dr, o[0])
        if reg == REG_IDEAL:
            pi_diffusion(pa, ip, xi, o[0], wk, b0, b0 + nu, df, o[0])
    obs = ip[I_OBS]
    if obs != OBS_NONE:
        oL = L_index(pa, ip, t)
        oCa = ip[I_CA]
        inn = _dot(pa, oCa, xi, o[3], n) - _dot(pa, oCa, x, 0, n)
        for i in range(n):
            dr[o[3] + i] = _lin(pa, ip, i, xi, o[3], u, w, 0, I_A, I_B, I_P) + pa[oL + i] * inn
        if obs == OBS_IDEAL:
            for i in range(n):
                df[o[3] + i] = _lin(pa, ip, i, xi, o[3], u, w, 0, I_F, I_G, I_R)
    if ip[I_IM]:
        og = b0 + 2 * nu + n * nu
        gamma_a(pa, ip, wk, xi, wk, og)
        oH, oLim, oG2, oS = ip[I_H], ip[I_LIM], ip[I_G2], ip[I_S]
        oz = o[6]
        e = output_error(pa, ip, x, u, w)
        kzz = _dot(xi, o[7], xi, o[5], nu)
        for a in range(nu):
            s = pa[oLim + a] * kzz + pa[oG2 + a] * e
            for c in range(nu):
                s += pa[oH + a * nu + c] * xi[o[5] + c]
            dr[o[5] + a] = s
            for c in range(nu):
                s2 = pa[oLim + a] * wk[og + c]
                for k in range(nu):
                    s2 += (pa[oH + a * nu + k] * xi[oz + k * nu + c]
                           - xi[oz + a * nu + k] * pa[oS + k * nu + c])
                dr[oz + a * nu + c] = s2


@njit(cache=True, inline="always")
def ctrl_flow(pa, ip, wk, xi, x, u, w, t, dt, dw, dr, df):
    """Advance ``xi`` over one fine step."""
    ctrl_rates(pa, ip, wk, xi, x, u, w, t, dr, df)
    for i in range(xi.shape[0]):
        xi[i] = xi[i] + dr[i] * dt + df[i] * dw


@njit(cache=True)
def ctrl_post(pa, ip, wk, xi):
    """Refresh ``Kz = Gamma Piz^-1``, holding the last value when Piz is near singular."""
    if not ip[I_IM]:
        return
    n = ip[I_N]
    nu = ip[I_NU]
    o = offsets(n, nu)
    Piz = np.empty((nu, nu))
    for a in range(nu):
        for c in range(nu):
            Piz[a, c] = xi[o[6] + a * nu + c]
    sv = np.linalg.svd(Piz)[1]
    smax = sv[0]
    smin = sv[nu - 1]
    ratio = smin / smax if smax > 0 else 0.0
    xi[o[8] + 1] = ratio
    if smax == 0.0 or smin <= pa[ip[I_SC] + S_TAU_INV] * smax:
        xi[o[8]] += 1.0
        return
    gam = np.empty(nu)
    gamma_a(pa, ip, wk, xi, gam, 0)
    kz = np.linalg.solve(Piz.T.copy(), gam)
    for c in range(nu):
        xi[o[7] + c] = kz[c]


@njit(cache=True, inline="always")
def ctrl_latch(pa, ip, wk, xi):
    n = ip[I_N]
    nu = ip[I_NU]
    o = offsets(n, nu)
    for i in range(n * nu):
        xi[o[1] + i] = xi[o[0] + i]
    for i in range(n):
        xi[o[4] + i] = xi[o[3] + i]


@njit(cache=True, inline="always")
def ctrl_recon(pa, ip, wk, xi, x, x_prev, u_prev, w_prev):
    """Reconstruct the increment over the last window.

    Returns ``(dw_hat, |v|, skipped)``.
    """
    n = ip[I_N]
    nu = ip[I_NU]
    o = offsets(n, nu)
    sc = ip[I_SC]
    eps = pa[sc + S_EPS]
    tau_rel = pa[sc + S_TAU_V]
    if ip[I_RECON] == RECON_STATE:
        num = 0.0
        vv = 0.0
        for i in range(n):
            v = _lin(pa, ip, i, x_prev, 0, u_prev, w_prev, 0, I_F, I_G, I_R)
            d = _lin(pa, ip, i, x_prev, 0, u_prev, w_prev, 0, I_A, I_B, I_P)
            num += v * (x[i] - x_prev[i] - d * eps)
            vv += v * v
        vn = np.sqrt(vv)
        tau = tau_rel * (1.0 + _norm(x_prev, 0, n) + _norm(w_prev, 0, nu))
        if vn <= tau:
            return 0.0, vn, True
        return num / vv, vn, False
    oCb = ip[I_CB]
    vz = 0.0
    dz = 0.0
    for i in range(n):
        v = _lin(pa, ip, i, xi, o[4], u_prev, w_prev, 0, I_F, I_G, I_R)
        d = _lin(pa, ip, i, xi, o[4], u_prev, w_prev, 0, I_A, I_B, I_P)
        vz += pa[oCb + i] * v
        dz += pa[oCb + i] * d
    dyb = _dot(pa, oCb, x, 0, n) - _dot(pa, oCb, x_prev, 0, n)
    tau = tau_rel * (1.0 + _norm(xi, o[4], n) + _norm(w_prev, 0, nu))
    if abs(vz) <= tau:
        return 0.0, abs(vz), True
    return (dyb - dz * eps) / vz, abs(vz), False


@njit(cache=True, inline="always")
def ctrl_jump(pa, ip, wk, xi, u_prev, w_prev, dw):
    """Jump map at a sampling instant, using the latched values."""
    n = ip[I_N]
    nu = ip[I_NU]
    o = offsets(n, nu)
    if ip[I_REG] == REG_HYBRID:
        b0 = 4 * nu
        od = b0 + 2 * nu
        lam_pair(pa, ip, xi, o[1], wk, b0, b0 + nu)
        pi_diffusion(pa, ip, xi, o[1], wk, b0, b0 + nu, wk, od)
        for i in range(n * nu):
            xi[o[0] + i] += wk[od + i] * dw
        if ip[I_RDEG] >= 1:
            eps = pa[ip[I_SC] + S_EPS]
            for c in range(nu):
                xi[o[2] + c] = wk[b0 + nu + c] * dw / eps
    if ip[I_OBS] == OBS_HYBRID:
        for i in range(n):
            v = _lin(pa, ip, i, xi, o[4], u_prev, w_prev, 0, I_F, I_G, I_R)
            xi[o[3] + i] += v * dw


@njit(cache=True)
def run_closed_loop(pa, ip, wk, x0, xi, w0, E, dW, Wc, delta, N, m, rec_every, j_ss,
                    guard, rec_idx, rec_jump, rec_e, rec_u, rec_x, rec_z, rec_w,
                    j_dwh, j_dwt, j_vn, j_sk, j_x, j_z, j_g, j_w, acc):
    """Euler-Maruyama loop with jumps every ``m`` fine steps (``m = 0``: none).

    ``acc`` receives ``[sum e^2, sum |z-x|^2, count, last index, diverged]``
    over fine steps ``j >= j_ss`` (post-jump values).
    """
    n = ip[I_N]
    nu = ip[I_NU]
    o = offsets(n, nu)
    oz = o[3]
    has_obs = ip[I_OBS] != OBS_NONE
    im = ip[I_IM] != 0
    nx = xi.shape[0]
    x = x0.copy()
    w = w0.copy()
    xn = np.empty(n)
    wn = np.empty(nu)
    x_prev = x.copy()
    w_prev = w.copy()
    u_prev = 0.0
    g = np.empty(nu)
    cdr = np.empty(nx)
    cdf = np.empty(nx)
    r = 0
    kj = 0
    diverged = False
    last = 0
    s_e = 0.0
    s_zx = 0.0
    cnt = 0.0
    for j in range(N + 1):
        t = j * delta
        nr = dW[j] / delta if j < N else 0.0
        is_jump = m > 0 and j > 0 and j % m == 0
        recorded = (j % rec_every == 0) or is_jump
        if is_jump:
            u0 = ctrl_u(pa, ip, wk, xi, x, w, nr)
            rec_idx[r] = j
            rec_jump[r] = 0
            rec_u[r] = u0
            rec_e[r] = output_error(pa, ip, x, u0, w)
            for i in range(n):
                rec_x[r, i] = x[i]
                rec_z[r, i] = xi[oz + i]
            for c in range(nu):
                rec_w[r, c] = w[c]
            r += 1
            dwh, vn, sk = ctrl_recon(pa, ip, wk, xi, x, x_prev, u_prev, w_prev)
            ctrl_jump(pa, ip, wk, xi, u_prev, w_prev, dwh)
            j_dwh[kj] = dwh
            j_dwt[kj] = Wc[j] - Wc[j - m]
            j_vn[kj] = vn
            j_sk[kj] = sk
            gamma_a(pa, ip, wk, xi, g, 0)
            for i in range(n):
                j_x[kj, i] = x[i]
                j_z[kj, i] = xi[oz + i]
            for c in range(nu):
                j_g[kj, c] = g[c]
                j_w[kj, c] = w[c]
            kj += 1
        u = ctrl_u(pa, ip, wk, xi, x, w, nr)
        if is_jump or j == 0:
            for i in range(n):
                x_prev[i] = x[i]
            for c in range(nu):
                w_prev[c] = w[c]
            u_prev = u
            ctrl_latch(pa, ip, wk, xi)
        e = output_error(pa, ip, x, u, w)
        if recorded:
            rec_idx[r] = j
            rec_jump[r] = 1 if is_jump else 0
            rec_u[r] = u
            rec_e[r] = e
            for i in range(n):
                rec_x[r, i] = x[i]
                rec_z[r, i] = xi[oz + i]
            for c in range(nu):
                rec_w[r, c] = w[c]
            r += 1
        if j >= j_ss:
            s_e += e * e
            if has_obs:
                s = 0.0
                for i in range(n):
                    d = xi[oz + i] - x[i]
                    s += d * d
                s_zx += s
            cnt += 1.0
        last = j
        if j == N:
            break
        dw = dW[j]
        for i in range(n):
            dr = _lin(pa, ip, i, x, 0, u, w, 0, I_A, I_B, I_P)
            df = _lin(pa, ip, i, x, 0, u, w, 0, I_F, I_G, I_R)
            xn[i] = x[i] + dr * delta + df * dw
        ctrl_flow(pa, ip, wk, xi, x, u, w, t, delta, dw, cdr, cdf)
        if im:
            ctrl_post(pa, ip, wk, xi)
        for a in range(nu):
            s = 0.0
            for c in range(nu):
                s += E[a, c] * w[c]
            wn[a] = s
        bad = False
        for i in range(n):
            x[i] = xn[i]
            if not (abs(xn[i]) <= guard):
                bad = True
        for c in range(nu):
            w[c] = wn[c]
        for i in range(nx):
            if not (abs(xi[i]) <= guard):
                bad = True
        if bad:
            diverged = True
            last = j + 1
            break
    acc[0] = s_e
    acc[1] = s_zx
    acc[2] = cnt
    acc[3] = last
    acc[4] = 1.0 if diverged else 0.0
    return r, kj


@njit(cache=True)
def integrate_pi(pa, ip, wk, Pi0, dW, delta, N, ideal, m, dwh, rec_every, guard,
                 rec_idx, rec_pi, rec_la, rec_lb):
    """Integrate the regulator matrix alone.

    ``ideal``: Euler-Maruyama on ``dW``; otherwise drift-only flow with
    jumps every ``m`` steps driven by the stream ``dwh``.  ``Pi0`` is
    flat (row-major).  Returns the number of recorded rows and the index
    reached (``< N`` on blow-up).
    """
    n = ip[I_N]
    nu = ip[I_NU]
    nn = n * nu
    Pi = Pi0.copy()
    Pil = Pi0.copy()
    L = np.empty(2 * nu)
    dr = np.empty(nn)
    df = np.empty(nn)
    r = 0
    k = 0
    for j in range(N + 1):
        if (not ideal) and m > 0 and j > 0 and j % m == 0:
            lam_pair(pa, ip, Pil, 0, L, 0, nu)
            pi_diffusion(pa, ip, Pil, 0, L, 0, nu, df, 0)
            d = dwh[k]
            k += 1
            for i in range(nn):
                Pi[i] = Pi[i] + df[i] * d
                Pil[i] = Pi[i]
        lam_pair(pa, ip, Pi, 0, L, 0, nu)
        if j % rec_every == 0:
            rec_idx[r] = j
            for i in range(nn):
                rec_pi[r, i] = Pi[i]
            for c in range(nu):
                rec_la[r, c] = L[c]
                rec_lb[r, c] = L[nu + c]
            r += 1
        if j == N:
            break
        pi_drift(pa, ip, Pi, 0, L, 0, dr, 0)
        if ideal:
            pi_diffusion(pa, ip, Pi, 0, L, 0, nu, df, 0)
            d = dW[j]
            for i in range(nn):
                Pi[i] = Pi[i] + dr[i] * delta + df[i] * d
        else:
            for i in range(nn):
                Pi[i] = Pi[i] + dr[i] * delta
        for i in range(nn):
            if not (abs(Pi[i]) <= guard):
                return r, j + 1
    return r, N


@njit(cache=True, inline="always")
def _fund_step(Ah, Fh, Phi, tmp, delta, dw):
    """In place ``Phi += (Ah delta + Fh dw) Phi``; returns ``max |Phi|`` (nan-propagating)."""
    n = Ah.shape[0]
    for i in range(n):
        for c in range(n):
            s = 0.0
            for k in range(n):
                s += (Ah[i, k] * delta + Fh[i, k] * dw) * Phi[k, c]
            tmp[i, c] = Phi[i, c] + s
    big = 0.0
    for i in range(n):
        for c in range(n):
            Phi[i, c] = tmp[i, c]
            a = abs(tmp[i, c])
            if not (a <= big):
                big = a
    return big


@njit(cache=True)
def fundamental(Ah, Fh, dW, delta, N, rec_every, guard, out):
    """``Phi_{j+1} = Phi_j + (Ah delta + Fh dW_j) Phi_j`` from the identity."""
    n = Ah.shape[0]
    Phi = np.eye(n)
    tmp = np.empty((n, n))
    r = 0
    for j in range(N + 1):
        if j % rec_every == 0:
            out[r] = Phi
            r += 1
        if j == N:
            break
        big = _fund_step(Ah, Fh, Phi, tmp, delta, dW[j])
        if not (big <= guard):
            return r, j + 1
    return r, N


@njit(cache=True)
def lyapunov_top(Ah, Fh, dW, delta, N, renorm):
    """Top Lyapunov exponent estimate along one path with periodic renormalization."""
    n = Ah.shape[0]
    Phi = np.eye(n)
    tmp = np.empty((n, n))
    total = 0.0
    for j in range(N):
        _fund_step(Ah, Fh, Phi, tmp, delta, dW[j])
        if (j + 1) % renorm == 0 or j == N - 1:
            s = np.linalg.norm(Phi, 2)
            if not np.isfinite(s):
                return np.inf, j + 1
            if s == 0.0:
                return -np.inf, j + 1
            total += np.log(s)
            Phi /= s
    return total / (N * delta), N
