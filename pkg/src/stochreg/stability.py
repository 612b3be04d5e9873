"""Stability and non-resonance diagnostics.

Three kinds of evidence are produced:

* closed-form scalar tests (``2a - f^2`` and ``2a + f^2``);
* the second-moment generator ``I (x) A + A (x) I + F (x) F``;
* Monte Carlo estimates of the top Lyapunov exponent of
  ``dPhi = A Phi dt + F Phi dW``.

Non-resonance asks for exponential decay of ``exp(-S^T t) (x) Phi_t``
where ``Phi`` is the fundamental matrix of the pair ``(A_pi, F_pi)``.
It is certified numerically, never proven.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import _core
from .errors import ConfigError, StochRegError, UnsupportedConfiguration
from .model import Exosystem, PlantModel, RelativeDegreeInfo, stochastic_relative_degree
from .noise import generate_path, n_steps

TAU_MARGIN = 0.01
RENORM_EVERY = 100
MIN_SEEDS = 8

STABLE, UNSTABLE, INCONCLUSIVE = "stable", "unstable", "inconclusive"


@dataclass
class StabilityReport:
    """Outcome of one check.

    Attributes
    ----------
    method : str
        ``scalar-as``, ``scalar-ms``, ``mean-square`` or ``monte-carlo``.
    verdict : str
        ``stable``, ``unstable`` or ``inconclusive``.
    margin : float
        Spectral abscissa, scalar margin or mean exponent estimate.
    per_seed : list of float
        Monte Carlo exponents sorted by seed (empty otherwise).
    std_err : float
        Standard error of the mean exponent (nan when not applicable).
    details : dict
        Extra data, e.g. the mean-square certificate of a non-resonance check.
    """

    method: str
    verdict: str
    margin: float
    per_seed: list = field(default_factory=list)
    std_err: float = math.nan
    details: dict = field(default_factory=dict)

    @property
    def stable(self) -> bool:
        return self.verdict == STABLE

    def to_dict(self) -> dict:
        def _clean(v):
            if isinstance(v, StabilityReport):
                return v.to_dict()
            if isinstance(v, dict):
                return {k: _clean(x) for k, x in v.items()}
            if isinstance(v, (list, tuple, np.ndarray)):
                return [_clean(x) for x in v]
            if isinstance(v, (np.floating, float)):
                return None if not math.isfinite(float(v)) else float(v)
            if isinstance(v, np.integer):
                return int(v)
            return v

        out = {"method": self.method, "verdict": self.verdict,
               "margin": _clean(self.margin), "per_seed": _clean(self.per_seed)}
        if math.isfinite(self.std_err):
            out["std_err"] = float(self.std_err)
        if self.details:
            out["details"] = _clean(self.details)
        return out

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def _sign_verdict(margin):
    return STABLE if margin < 0 else UNSTABLE


def scalar_as_check(a: float, f: float) -> StabilityReport:
    """Almost-sure test for ``dx = a x dt + f x dW``: stable iff ``2a - f^2 < 0``."""
    margin = 2.0 * float(a) - float(f) ** 2
    return StabilityReport("scalar-as", _sign_verdict(margin), margin)


def scalar_ms_check(a: float, f: float) -> StabilityReport:
    """Mean-square test for ``dx = a x dt + f x dW``: stable iff ``2a + f^2 < 0``."""
    margin = 2.0 * float(a) + float(f) ** 2
    return StabilityReport("scalar-ms", _sign_verdict(margin), margin)


def second_moment_generator(A, F) -> np.ndarray:
    """``I (x) A + A (x) I + F (x) F``, the generator of ``E[x (x) x]``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    F = np.atleast_2d(np.asarray(F, dtype=float))
    if A.shape != F.shape or A.shape[0] != A.shape[1]:
        raise ConfigError("A and F must be square and of equal size")
    I = np.eye(A.shape[0])
    return np.kron(I, A) + np.kron(A, I) + np.kron(F, F)


def mean_square_check(A_cl, F_cl) -> StabilityReport:
    """Mean-square stability of ``dx = A x dt + F x dW`` via the moment generator."""
    M = second_moment_generator(A_cl, F_cl)
    try:
        ev = np.linalg.eigvals(M)
    except np.linalg.LinAlgError as exc:
        raise StochRegError(f"eigensolver failed: {exc}") from exc
    margin = float(np.max(ev.real))
    return StabilityReport("mean-square", _sign_verdict(margin), margin)


def affine_family_roots(a0, a1, f0, f1, kind="as") -> np.ndarray:
    """Real roots in ``c`` of ``2 A(c) -/+ F(c)^2`` with ``A = a0 + a1 c``, ``F = f0 + f1 c``.

    ``kind="as"`` uses the minus sign (almost-sure margin), ``"ms"`` the
    plus sign (mean-square margin).  Roots are returned sorted.
    """
    s = {"as": -1.0, "ms": 1.0}[kind]
    coeffs = [s * f1 * f1, 2.0 * a1 + s * 2.0 * f0 * f1, 2.0 * a0 + s * f0 * f0]
    r = np.roots(coeffs)
    return np.sort(r[np.abs(r.imag) < 1e-12].real)


def lyapunov_exponent(A_h, F_h, seed: int, T: float, delta: float,
                      renorm: int = RENORM_EVERY) -> float:
    """Top-exponent estimate ``(1/T) sum log(growth)`` on the path of ``seed``."""
    A_h = np.ascontiguousarray(np.atleast_2d(np.asarray(A_h, dtype=float)))
    F_h = np.ascontiguousarray(np.atleast_2d(np.asarray(F_h, dtype=float)))
    path = generate_path(seed, delta, T)
    lam, _ = _core.lyapunov_top(A_h, F_h, path.increments, delta, n_steps(T, delta), renorm)
    return float(lam)


def lyapunov_mc(A_h, F_h, seeds, T: float, delta: float,
                tau_margin: float = TAU_MARGIN) -> StabilityReport:
    """Monte Carlo estimate of the top Lyapunov exponent.

    Verdict ``stable`` iff the largest per-seed estimate is below
    ``-tau_margin``; ``unstable`` iff the mean exceeds ``tau_margin`` or a
    seed blows up; ``inconclusive`` otherwise.

    Raises
    ------
    ConfigError
        With fewer than 8 seeds.
    """
    seeds = sorted(int(s) for s in seeds)
    if len(seeds) < MIN_SEEDS:
        raise ConfigError(f"lyapunov_mc needs at least {MIN_SEEDS} seeds")
    lams = np.array([lyapunov_exponent(A_h, F_h, s, T, delta) for s in seeds])
    blown = ~np.isfinite(lams) & (lams > 0)
    mean = float(np.mean(lams)) if not blown.any() else math.inf
    se = float(np.std(lams, ddof=1) / math.sqrt(len(lams))) if not blown.any() else math.nan
    if blown.any() or mean > tau_margin:
        verdict = UNSTABLE
    elif np.max(lams) < -tau_margin:
        verdict = STABLE
    else:
        verdict = INCONCLUSIVE
    return StabilityReport("monte-carlo", verdict, mean, [float(v) for v in lams], se,
                           {"seeds": seeds, "max": float(np.max(lams)), "T": T,
                            "delta": delta, "tau_margin": tau_margin})


def pi_generators(m: PlantModel, rd: RelativeDegreeInfo):
    """``(A_pi, F_pi)``: the drift and diffusion of the homogeneous regulator flow.

    ``r = 0``: ``A - B C / D`` and ``F - G C / D``.
    ``r >= 1`` (``G = 0``): ``A - B C A^r / b`` and ``F - B C A^(r-1) F / b``.
    """
    B = m.B.reshape(-1, 1)
    if rd.r == 0:
        return m.A - B @ m.C.reshape(1, -1) / m.D, m.F - m.G.reshape(-1, 1) @ m.C.reshape(1, -1) / m.D
    if np.any(m.G != 0.0):
        raise UnsupportedConfiguration("relative degree r >= 1 with both B and G nonzero")
    CAr1 = rd.zeta_maps[-1].reshape(1, -1)
    return m.A - B @ (CAr1 @ m.A) / rd.b, m.F - B @ (CAr1 @ m.F) / rd.b


def non_resonance_check(m: PlantModel, e: Exosystem, rd: RelativeDegreeInfo | None = None,
                        method: str = "both", seeds=range(16), T: float = 20.0,
                        delta: float = 1e-4) -> StabilityReport:
    """Numerical certificate that ``exp(-S^T t) (x) Phi_t`` decays.

    Parameters
    ----------
    method : {"both", "monte-carlo", "mean-square"}
        ``both`` runs the Monte Carlo estimate and keeps the mean-square
        test as a sufficient certificate in ``details``.

    Notes
    -----
    ``exp(-S^T t)`` grows at rate ``-min Re eig(S)``, so both tests run on
    ``(A_pi - s I, F_pi)`` with that shift ``s``; for a marginally stable
    exosystem ``s = 0``.  Without noise the mean-square margin equals twice
    the abscissa of ``I (x) A_pi - S^T (x) I`` and is reported as that
    abscissa instead.
    """
    if method not in ("both", "monte-carlo", "mean-square"):
        raise ConfigError(f"unknown method {method!r}")
    rd = stochastic_relative_degree(m, e.S) if rd is None else rd
    A_pi, F_pi = pi_generators(m, rd)
    n, nu = m.n, m.nu
    shift = float(np.min(np.linalg.eigvals(e.S).real))
    A_s = A_pi - shift * np.eye(n)
    details = {"A_pi": A_pi.tolist(), "F_pi": F_pi.tolist(), "r": rd.r}
    if not np.any(F_pi):
        ev = np.linalg.eigvals(np.kron(np.eye(nu), A_pi) - np.kron(e.S.T, np.eye(n)))
        margin = float(np.max(ev.real))
        return StabilityReport("mean-square", _sign_verdict(margin), margin,
                               details={**details, "deterministic": True})
    ms = mean_square_check(A_s, F_pi)
    if method == "mean-square":
        ms.details = details
        return ms
    mc = lyapunov_mc(A_s, F_pi, seeds, T, delta)
    details["mean_square"] = ms
    if method == "both" and ms.stable and mc.verdict != STABLE:
        # the moment test is a proof of decay; keep the disagreement visible
        details["disagreement"] = True
        mc.verdict = STABLE
    mc.details.update(details)
    return mc
