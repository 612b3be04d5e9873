"""A-posteriori reconstruction of Brownian increments.

Over one sampling window the Euler step of the plant reads

    x_k - x_{k-1} = (A x_{k-1} + B u_{k-1} + P w_{k-1}) eps + v dW,

with ``v = F x_{k-1} + G u_{k-1} + R w_{k-1}``.  Since the noise is
scalar, ``dW`` is recovered with the left inverse ``v^T / (v^T v)``.
With output feedback only ``yb = Cb x`` is sampled and the state is
replaced by the observer state.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .model import PlantModel


@dataclass(frozen=True)
class ReconConfig:
    """Sampling period, excitation threshold and reconstruction source.

    ``tau_v`` is the relative threshold; the absolute one used for a
    window is ``tau_v * (1 + |sample| + |w|)``.
    """

    eps: float
    tau_v: float
    mode: str = "full-info"

    def __post_init__(self):
        if not self.tau_v > 0:
            raise ConfigError("tau_v must be positive")
        if self.mode not in ("full-info", "output-feedback"):
            raise ConfigError(f"unknown reconstruction mode {self.mode!r}")


def default_tau_v(m: PlantModel) -> float:
    """``1e-6 * (1 + |F| + |G| + |R|)`` (spectral norms)."""
    return 1e-6 * (1.0 + np.linalg.norm(m.F, 2) + np.linalg.norm(m.G) + np.linalg.norm(m.R, 2))


def recon_config(m: PlantModel, eps: float, mode="full-info", tau_v=None) -> ReconConfig:
    return ReconConfig(eps, default_tau_v(m) if tau_v is None else tau_v, mode)


def diffusion_vector(m: PlantModel, x, u, w) -> np.ndarray:
    """``F x + G u + R w``."""
    return m.F @ np.asarray(x, dtype=float) + m.G * float(u) + m.R @ np.asarray(w, dtype=float)


def drift_vector(m: PlantModel, x, u, w) -> np.ndarray:
    """``A x + B u + P w``."""
    return m.A @ np.asarray(x, dtype=float) + m.B * float(u) + m.P @ np.asarray(w, dtype=float)


def _threshold(cfg, sample, w):
    return cfg.tau_v * (1.0 + np.linalg.norm(sample) + np.linalg.norm(w))


def delta_w_full_info(x_k, x_prev, u_prev, w_prev, m: PlantModel, eps, cfg: ReconConfig):
    """Increment estimate from two full-state samples.

    Returns
    -------
    dw : float
        Zero when ``|v| <= tau``.
    skipped : bool
    """
    v = diffusion_vector(m, x_prev, u_prev, w_prev)
    vv = float(v @ v)
    if np.sqrt(vv) <= _threshold(cfg, x_prev, w_prev):
        return 0.0, True
    res = np.asarray(x_k, dtype=float) - np.asarray(x_prev, dtype=float) \
        - drift_vector(m, x_prev, u_prev, w_prev) * eps
    return float(v @ res) / vv, False


def delta_w_output(yb_k, yb_prev, z_prev, u_prev, w_prev, m: PlantModel, eps, cfg: ReconConfig):
    """Increment estimate from two samples of ``yb`` and the observer state.

    ``v_z = Cb (F z + G u + R w)`` and
    ``dw = (yb_k - yb_prev - Cb (A z + B u + P w) eps) / v_z``.
    """
    if m.Cb is None:
        raise ConfigError("model has no Cb row")
    vz = float(m.Cb @ diffusion_vector(m, z_prev, u_prev, w_prev))
    if abs(vz) <= _threshold(cfg, z_prev, w_prev):
        return 0.0, True
    d = float(m.Cb @ drift_vector(m, z_prev, u_prev, w_prev))
    return (float(yb_k) - float(yb_prev) - d * eps) / vz, False


def write_audit_csv(path, jumps):
    """Write ``k,t_k,dW_true,dW_est,v_norm,skipped`` from a :class:`~stochreg.sim.JumpLog`."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["k", "t_k", "dW_true", "dW_est", "v_norm", "skipped"])
        for i in range(jumps.dw_hat.shape[0]):
            wr.writerow([i + 1, repr(float(jumps.t[i])), repr(float(jumps.dw_true[i])),
                         repr(float(jumps.dw_hat[i])), repr(float(jumps.v_norm[i])),
                         int(jumps.skipped[i])])
