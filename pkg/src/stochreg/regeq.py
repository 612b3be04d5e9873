"""Regulator equations: deterministic oracle, ideal and hybrid integrators.

The regulator matrix obeys

    dPi = [A Pi - Pi S + P + B La] dt + [F Pi + R + G La + B Lb] dW

with ``Lambda dt = La dt + Lb dW``.  For zero relative degree ``Lb = 0``
and ``La = -(C Pi + Q) / D``.  For relative degree ``r >= 1`` (``G = 0``)
``La = -(C A^r Pi + Q_r) / b`` and ``Lb = -(C A^(r-1) F Pi + C A^(r-1) R) / b``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import _core
from ._build import lambda_maps, make_params
from .errors import ConfigError, ResonanceError
from .model import Exosystem, PlantModel, RelativeDegreeInfo, stochastic_relative_degree
from .noise import BrownianPath
from .sim import GUARD, SimConfig


@dataclass
class RegulatorSolution:
    """Sampled regulator matrix and the split of ``Lambda``.

    Attributes
    ----------
    times : ndarray, shape (k,)
    Pi : ndarray, shape (k, n, nu)
    La, Lb : ndarray, shape (k, nu)
        Drift and diffusion coefficients of ``Lambda``.
    bounded : bool
        ``sup |Pi|`` over ``[T/2, T]`` stays below the guard.
    t_end : float
        Time reached (smaller than the horizon after a blow-up).
    """

    times: np.ndarray
    Pi: np.ndarray
    La: np.ndarray
    Lb: np.ndarray
    bounded: bool
    t_end: float

    def gamma(self, K):
        return gamma_from(self, K)

    def steady_state_reached(self, rel_tol=1e-4, windows=4) -> bool:
        """Time-averaged ``|Pi|`` changes by less than ``rel_tol`` between the last windows."""
        norms = np.linalg.norm(self.Pi.reshape(len(self.times), -1), axis=1)
        if norms.size < 2 * windows:
            return False
        means = np.array([c.mean() for c in np.array_split(norms, windows)])
        return bool(abs(means[-1] - means[-2]) <= rel_tol * max(abs(means[-1]), 1e-300))

    def to_csv(self, path):
        write_regsol_csv(path, self)


def solve_francis(A, B, C, D, P, Q, S, tol=1e-10):
    """Constant solution of ``A Pi - Pi S + P + B La = 0``, ``C Pi + Q + D La = 0``.

    Solved as one linear system in ``(vec Pi, La)`` with column-major
    ``vec``.

    Raises
    ------
    ResonanceError
        When the linear system is singular.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    S = np.atleast_2d(np.asarray(S, dtype=float))
    nu = S.shape[0]
    B = np.asarray(B, dtype=float).reshape(n, 1)
    C = np.asarray(C, dtype=float).reshape(1, n)
    P = np.asarray(P, dtype=float).reshape(n, nu)
    Q = np.asarray(Q, dtype=float).reshape(1, nu)
    In, Inu = np.eye(n), np.eye(nu)
    top = np.hstack([np.kron(Inu, A) - np.kron(S.T, In), np.kron(Inu, B)])
    bot = np.hstack([np.kron(Inu, C), float(D) * Inu])
    M = np.vstack([top, bot])
    rhs = -np.concatenate([P.ravel(order="F"), Q.ravel()])
    sv = np.linalg.svd(M, compute_uv=False)
    if sv[-1] <= 1e-12 * sv[0]:
        raise ResonanceError("Francis equations are singular (resonance)")
    sol = np.linalg.solve(M, rhs)
    Pi = sol[: n * nu].reshape((n, nu), order="F")
    La = sol[n * nu:]
    res = np.linalg.norm(M @ sol - rhs)
    scale = 1.0 + np.linalg.norm(M) * np.linalg.norm(sol) + np.linalg.norm(rhs)
    if res > tol * scale:
        raise ResonanceError(f"Francis residual {res:.3g} too large")
    return Pi, La


def initial_pi(m: PlantModel, rd: RelativeDegreeInfo) -> np.ndarray:
    """Zero for ``r = 0``; otherwise the minimum-norm solution of ``C A^i Pi = -Q_i``."""
    if rd.r == 0:
        return np.zeros((m.n, m.nu))
    M = np.vstack(rd.zeta_maps)
    rhs = -np.vstack(rd.q_chain[: rd.r])
    return np.linalg.pinv(M) @ rhs


def _bounded(times, Pi, T, complete, guard=GUARD):
    if not complete:
        return False
    sel = times >= T / 2 - 1e-12
    if not np.any(sel):
        return False
    return bool(np.abs(Pi[sel]).max() <= guard)


def _run(m, e, rd, delta, N, ideal, mj, dwh, dW, rec, Pi0, T):
    p = make_params(m, e.S, rd)
    n, nu = m.n, m.nu
    cap = N // rec + 1
    rec_idx = np.empty(cap, dtype=np.int64)
    rec_pi = np.empty((cap, n * nu))
    rec_la = np.empty((cap, nu))
    rec_lb = np.empty((cap, nu))
    Pi0 = initial_pi(m, rd) if Pi0 is None else np.asarray(Pi0, dtype=float)
    r, last = _core.integrate_pi(*p.k, np.ascontiguousarray(Pi0).ravel().copy(), dW, delta, N, ideal, mj,
                                 dwh, rec, GUARD, rec_idx, rec_pi, rec_la, rec_lb)
    times = rec_idx[:r] * delta
    complete = last == N
    rec_pi = rec_pi[:r].reshape(r, n, nu)
    sol = RegulatorSolution(times, rec_pi.copy(), rec_la[:r].copy(), rec_lb[:r].copy(),
                            _bounded(times, rec_pi, T, complete), last * delta)
    return sol


def integrate_ideal_regeq(m: PlantModel, e: Exosystem, rd: RelativeDegreeInfo | None,
                          path: BrownianPath, cfg: SimConfig, Pi0=None,
                          strict=False) -> RegulatorSolution:
    """Euler-Maruyama integration of the regulator equations on ``path``.

    Parameters
    ----------
    strict : bool
        Raise :class:`ResonanceError` on divergence instead of returning
        a solution with ``bounded = False``.
    """
    rd = stochastic_relative_degree(m, e.S) if rd is None else rd
    lambda_maps(m, rd)
    if abs(cfg.delta - path.delta) > 1e-15 * path.delta:
        raise ConfigError("config delta differs from path delta")
    N = cfg.n_steps
    if N > path.n:
        raise ConfigError("horizon exceeds the Brownian path")
    sol = _run(m, e, rd, cfg.delta, N, True, 0, np.zeros(1), path.increments,
               cfg.record_every, Pi0, cfg.T)
    if strict and not sol.bounded:
        raise ResonanceError(f"regulator equations diverged (t={sol.t_end:.4g})")
    return sol


def integrate_hybrid_regeq(m: PlantModel, e: Exosystem, rd: RelativeDegreeInfo | None,
                           dw_stream, cfg: SimConfig, Pi0=None,
                           strict=False) -> RegulatorSolution:
    """Drift-only flow on the fine grid with jumps at ``t_k = k * eps``.

    At ``t_k`` the jump ``[F Pi_l + R + G La_l + B Lb_l] * dw_stream[k-1]``
    is added, with ``Pi_l`` the value right after the previous jump.
    """
    rd = stochastic_relative_degree(m, e.S) if rd is None else rd
    lambda_maps(m, rd)
    N = cfg.n_steps
    mj = cfg.m
    dwh = np.ascontiguousarray(np.asarray(dw_stream, dtype=float).ravel())
    if mj and dwh.size < N // mj:
        raise ConfigError(f"increment stream has {dwh.size} values, need {N // mj}")
    if dwh.size == 0:
        dwh = np.zeros(1)
    sol = _run(m, e, rd, cfg.delta, N, False, mj, dwh, np.zeros(1), cfg.record_every,
               Pi0, cfg.T)
    if strict and not sol.bounded:
        raise ResonanceError(f"hybrid regulator equations diverged (t={sol.t_end:.4g})")
    return sol


def gamma_from(sol: RegulatorSolution, K):
    """Feedforward split ``(La - K Pi, Lb)``."""
    K = np.asarray(K, dtype=float).ravel()
    if K.shape[0] != sol.Pi.shape[1]:
        raise ConfigError("K does not match the state dimension")
    return sol.La - np.einsum("i,kij->kj", K, sol.Pi), sol.Lb.copy()


def write_regsol_csv(path, sol: RegulatorSolution):
    """Write ``t,Pi_11..Pi_nnu,LamA_1..LamA_nu,LamB_1..LamB_nu``."""
    k, n, nu = sol.Pi.shape
    head = ["t"] + [f"Pi_{i + 1}{j + 1}" for i in range(n) for j in range(nu)]
    head += [f"LamA_{j + 1}" for j in range(nu)] + [f"LamB_{j + 1}" for j in range(nu)]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(head)
        for r in range(k):
            wr.writerow([repr(float(sol.times[r]))]
                        + [repr(float(v)) for v in sol.Pi[r].ravel()]
                        + [repr(float(v)) for v in sol.La[r]]
                        + [repr(float(v)) for v in sol.Lb[r]])
