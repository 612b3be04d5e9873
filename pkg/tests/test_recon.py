import csv

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from stochreg.control import approx_fi_policy, hybrid_of_policy
from stochreg.errors import ConfigError
from stochreg.model import GainSet, preset_circuit
from stochreg.noise import generate_path
from stochreg.recon import (ReconConfig, default_tau_v, delta_w_full_info, delta_w_output,
                            diffusion_vector, drift_vector, recon_config, write_audit_csv)
from stochreg.sim import SimConfig, simulate_closed_loop

M, E, G = preset_circuit(1.0)
CFG = recon_config(M, 1e-3)
vec3 = arrays(float, 3, elements=st.floats(-10, 10))
vec5 = arrays(float, 5, elements=st.floats(-100, 100))


def test_diffusion_vector_examples():
    m0 = M.deterministic()
    assert not diffusion_vector(m0, np.ones(3), 1.0, np.ones(5)).any()
    np.testing.assert_allclose(diffusion_vector(M, np.zeros(3), 0.0, E.omega0), 0.01 * M.P @ E.omega0)


@given(vec3, vec3, st.floats(-5, 5), st.floats(-5, 5), vec5, vec5)
def test_diffusion_vector_linear(x1, x2, u1, u2, w1, w2):
    a = diffusion_vector(M, x1 + x2, u1 + u2, w1 + w2)
    b = diffusion_vector(M, x1, u1, w1) + diffusion_vector(M, x2, u2, w2)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-10)


def test_pure_drift_step_gives_zero():
    x, u, w = np.array([0.1, 0.2, -0.3]), 0.5, E.omega0
    xk = x + drift_vector(M, x, u, w) * 1e-3
    dw, sk = delta_w_full_info(xk, x, u, w, M, 1e-3, CFG)
    assert not sk and abs(dw) < 1e-12
    yb = M.Cb @ xk
    dw, sk = delta_w_output(yb, M.Cb @ x, x, u, w, M, 1e-3, recon_config(M, 1e-3, "output-feedback"))
    assert not sk and abs(dw) < 1e-12


@settings(max_examples=1000)
@given(vec3, st.floats(-5, 5), vec5, st.floats(-1, 1), st.sampled_from([1e-2, 1e-4, 5e-5]))
def test_full_info_exact(x, u, w, wtrue, eps):
    v = diffusion_vector(M, x, u, w)
    assume(np.linalg.norm(v) > 1e3 * CFG.tau_v * (1 + np.linalg.norm(x) + np.linalg.norm(w)))
    xk = x + drift_vector(M, x, u, w) * eps + v * wtrue
    dw, sk = delta_w_full_info(xk, x, u, w, M, eps, CFG)
    assert not sk
    assert abs(dw - wtrue) <= 1e-12 * max(1.0, abs(wtrue)) * (1 + np.linalg.norm(xk) / np.linalg.norm(v))


@settings(max_examples=1000)
@given(vec3, st.floats(-5, 5), vec5, st.floats(-1, 1), st.sampled_from([1e-2, 1e-4, 5e-5]))
def test_output_exact(z, u, w, wtrue, eps):
    cfg = recon_config(M, eps, "output-feedback")
    vz = float(M.Cb @ diffusion_vector(M, z, u, w))
    assume(abs(vz) > 1e3 * cfg.tau_v * (1 + np.linalg.norm(z) + np.linalg.norm(w)))
    ybp = float(M.Cb @ z)
    yb = ybp + float(M.Cb @ drift_vector(M, z, u, w)) * eps + vz * wtrue
    dw, sk = delta_w_output(yb, ybp, z, u, w, M, eps, cfg)
    assert not sk
    assert abs(dw - wtrue) <= 1e-12 * max(1.0, abs(wtrue)) * (1 + abs(yb) / abs(vz))


def test_skip_below_threshold():
    m0 = M.deterministic()
    dw, sk = delta_w_full_info(np.ones(3), np.zeros(3), 0.0, np.zeros(5), m0, 1e-3, recon_config(m0, 1e-3))
    assert sk and dw == 0.0
    dw, sk = delta_w_output(1.0, 0.0, np.zeros(3), 0.0, np.zeros(5), m0, 1e-3,
                            recon_config(m0, 1e-3, "output-feedback"))
    assert sk and dw == 0.0


def test_config_validation():
    assert default_tau_v(M) > 1e-6
    with pytest.raises(ConfigError):
        ReconConfig(1e-3, 0.0)
    with pytest.raises(ConfigError):
        ReconConfig(1e-3, 1e-6, "bogus")
    with pytest.raises(ConfigError):
        delta_w_output(0.0, 0.0, np.zeros(1), 0.0, np.zeros(1), M.replace(Cb=None, Ca=None),
                       1e-3, CFG)


def _rms_err(pol_fn, eps, seeds, d=5e-6, T=0.5):
    out, skip = [], []
    for s in seeds:
        tr = simulate_closed_loop(M, E, pol_fn(eps), generate_path(s, d, T), SimConfig(d, eps, T))
        j = tr.jumps
        sel = j.t >= T / 2
        out.append(np.sqrt(np.mean((j.dw_hat[sel] - j.dw_true[sel]) ** 2)))
        skip.append(j.skip_rate)
    return np.array(out), np.array(skip)


def test_full_info_closed_loop_error_and_skips():
    a, sa = _rms_err(lambda eps: approx_fi_policy(G.K, M, E, eps=eps), 5e-4, range(3))
    b, sb = _rms_err(lambda eps: approx_fi_policy(G.K, M, E, eps=eps), 5e-5, range(3))
    assert np.all(b < a)
    assert sa.max() < 0.01 and sb.max() < 0.01


def test_output_closed_loop_error_decreases_on_average():
    pol = lambda eps: hybrid_of_policy(GainSet(G.K), M, E, eps=eps)
    a, _ = _rms_err(pol, 5e-4, range(5))
    b, _ = _rms_err(pol, 5e-5, range(5))
    assert b.mean() < a.mean()


def test_audit_csv(tmp_path):
    tr = simulate_closed_loop(M, E, approx_fi_policy(G.K, M, E, eps=1e-4), generate_path(0, 1e-5, 0.01),
                              SimConfig(1e-5, 1e-4, 0.01))
    f = tmp_path / "audit.csv"
    write_audit_csv(f, tr.jumps)
    with open(f) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["k", "t_k", "dW_true", "dW_est", "v_norm", "skipped"]
    assert len(rows) == 101
