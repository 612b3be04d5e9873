import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stochreg.control import approx_fi_policy
from stochreg.errors import ConfigError, ResonanceError
from stochreg.model import Exosystem, preset_circuit, preset_scalar, stochastic_relative_degree
from stochreg.noise import generate_path, zero_path
from stochreg.regeq import (gamma_from, initial_pi, integrate_hybrid_regeq,
                            integrate_ideal_regeq, solve_francis)
from stochreg.sim import SimConfig, simulate_closed_loop

from conftest import chain_model


def test_francis_scalar_hand_case():
    Pi, La = solve_francis([[-1.0]], [1.0], [1.0], 0.0, [[0.0]], [-1.0], [[0.0]])
    assert Pi[0, 0] == pytest.approx(1.0) and La[0] == pytest.approx(1.0)


def test_francis_homogeneous(circuit):
    m, e, _ = circuit
    Pi, La = solve_francis(m.A, m.B, m.C, m.D, np.zeros_like(m.P), np.zeros(5), e.S)
    assert not Pi.any() and not La.any()


def test_francis_circuit_residual(circuit):
    m, e, _ = circuit
    Pi, La = solve_francis(m.A, m.B, m.C, m.D, m.P, m.Q, e.S)
    np.testing.assert_allclose(m.A @ Pi - Pi @ e.S + m.P + np.outer(m.B, La), 0, atol=1e-9)
    np.testing.assert_allclose(m.C @ Pi + m.Q + m.D * La, 0, atol=1e-12)


def test_francis_resonance():
    # a zero of the plant at 0 meets the constant mode of S
    with pytest.raises(ResonanceError):
        solve_francis([[0.0]], [0.0], [1.0], 0.0, [[1.0]], [0.0], [[0.0]])


def test_ideal_deterministic_converges_to_francis(circuit):
    m, e, _ = circuit
    m0 = m.deterministic()
    Pi_f, La_f = solve_francis(m0.A, m0.B, m0.C, m0.D, m0.P, m0.Q, e.S)
    # slowest mode of A_pi has real part -6.25
    T, d = 6.0, 1e-5
    sol = integrate_ideal_regeq(m0, e, None, zero_path(d, T), SimConfig(d, "inf", T))
    sel = sol.times >= T / 2
    dev = np.abs(sol.Pi[sel] - Pi_f).max() / np.abs(Pi_f).max()
    assert dev <= 1e-6
    assert sol.steady_state_reached()


@pytest.mark.parametrize("c, bounded", [(-0.5, False), (-5.0, True), (0.5, True)])
def test_example_one_boundedness(c, bounded):
    m, e = preset_scalar(c)
    T, d = 100.0, 1e-3
    got = [integrate_ideal_regeq(m, e, None, generate_path(s, d, T), SimConfig(d, "inf", T)).bounded
           for s in range(3)]
    assert got == [bounded] * 3


def test_strict_divergence_raises():
    m, e = preset_scalar(-0.5)
    with pytest.raises(ResonanceError):
        integrate_ideal_regeq(m, e, None, generate_path(0, 1e-3, 100.0),
                              SimConfig(1e-3, "inf", 100.0), strict=True)


def test_r0_algebraic_identity(circuit):
    m, e, _ = circuit
    d, eps, T = 1e-5, 1e-4, 0.2
    p = generate_path(1, d, T)
    cfg = SimConfig(d, eps, T)
    for sol in (integrate_ideal_regeq(m, e, None, p, cfg),
                integrate_hybrid_regeq(m, e, None, p.window_sums(10), cfg)):
        res = np.einsum("j,kjl->kl", m.C, sol.Pi) + m.Q + m.D * sol.La
        assert np.abs(res).max() <= 1e-12 * (1 + np.abs(sol.Pi).max())
        assert not sol.Lb.any()


def test_hybrid_zero_stream_is_deterministic_flow(circuit):
    m, e, _ = circuit
    m0 = m.deterministic()
    d, eps, T = 1e-5, 1e-4, 0.05
    cfg = SimConfig(d, eps, T)
    a = integrate_hybrid_regeq(m0, e, None, np.zeros(500), cfg)
    b = integrate_ideal_regeq(m0, e, None, zero_path(d, T), cfg)
    np.testing.assert_array_equal(a.Pi, b.Pi)


def test_hybrid_with_true_increments_converges():
    m, e = preset_scalar(0.5)
    T = 1.0
    E = (1e-2, 1e-3, 1e-4)
    R = np.zeros((10, 3))
    for s in range(10):
        for i, eps in enumerate(E):
            d = eps / 100
            p = generate_path(s, d, T)
            cfg = SimConfig(d, eps, T, record_every=100)
            a = integrate_ideal_regeq(m, e, None, p, cfg)
            b = integrate_hybrid_regeq(m, e, None, p.window_sums(100), cfg)
            R[s, i] = np.sqrt(np.mean((a.Pi - b.Pi) ** 2))
    assert np.all(np.diff(R.mean(0)) < 0)
    slope = np.polyfit(np.log(np.tile(E, 10)), np.log(R.ravel()), 1)[0]
    assert slope >= 0.5


def test_hybrid_circuit_reconstructed_stream_bounded(circuit):
    m, e, g = circuit
    d, eps, T = 5e-6, 5e-5, 0.2
    cfg = SimConfig(d, eps, T)
    tr = simulate_closed_loop(m, e, approx_fi_policy(g.K, m, e, eps=eps), generate_path(0, d, T), cfg)
    sol = integrate_hybrid_regeq(m, e, None, tr.jumps.dw_hat, cfg)
    assert sol.bounded and np.all(np.isfinite(sol.La))


def test_hybrid_stream_too_short(circuit):
    m, e, _ = circuit
    with pytest.raises(ConfigError):
        integrate_hybrid_regeq(m, e, None, np.zeros(3), SimConfig(1e-5, 1e-4, 0.01))


def test_linearity_in_exogenous_maps(circuit):
    m, e, _ = circuit
    d, T = 1e-5, 0.1
    p = generate_path(4, d, T)
    cfg = SimConfig(d, "inf", T)
    a = integrate_ideal_regeq(m, e, None, p, cfg)
    b = integrate_ideal_regeq(m.scaled_exogenous(2.0), e, None, p, cfg)
    np.testing.assert_allclose(b.Pi, 2 * a.Pi, rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(b.La, 2 * a.La, rtol=1e-9, atol=1e-12)


def test_gamma_examples(circuit):
    m, e, _ = circuit
    sol = integrate_ideal_regeq(m, e, None, generate_path(0, 1e-5, 0.01), SimConfig(1e-5, "inf", 0.01))
    ga, gb = gamma_from(sol, np.zeros(3))
    np.testing.assert_array_equal(ga, sol.La)
    assert not gb.any()
    Pi, La = solve_francis([[-1.0]], [1.0], [1.0], 0.0, [[0.0]], [-1.0], [[0.0]])
    assert (La - np.array([-2.0]) @ Pi)[0] == pytest.approx(3.0)
    with pytest.raises(ConfigError):
        gamma_from(sol, np.zeros(2))


def test_relative_degree_two_initial_condition():
    m = chain_model()
    S = np.array([[0.0]])
    rd = stochastic_relative_degree(m, S)
    Pi0 = initial_pi(m, rd)
    for row, q in zip(rd.zeta_maps, rd.q_chain):
        np.testing.assert_allclose(row @ Pi0, -q, atol=1e-14)


def test_relative_degree_two_lambda_split():
    m = chain_model().replace(A=[[0.0, 1.0], [-1.0, -1.0]])
    e = Exosystem([[0.0]], [1.0])
    rd = stochastic_relative_degree(m, e.S)
    sol = integrate_ideal_regeq(m, e, rd, generate_path(0, 1e-3, 1.0), SimConfig(1e-3, "inf", 1.0))
    CA = m.C @ m.A
    # La = -(C A^2 Pi + Q_2) / b, Lb = -(C A F Pi + C A R) / b
    La = -(np.einsum("j,kjl->kl", CA @ m.A, sol.Pi) + rd.q_chain[2]) / rd.b
    Lb = -(np.einsum("j,kjl->kl", CA @ m.F, sol.Pi) + CA @ m.R) / rd.b
    np.testing.assert_allclose(sol.La, La, atol=1e-12)
    np.testing.assert_allclose(sol.Lb, Lb, atol=1e-12)
    assert np.abs(sol.Lb).max() > 0


@settings(max_examples=20, deadline=None)
@given(st.floats(-3, 3).filter(lambda v: abs(v) > 0.1), st.floats(0.2, 5.0))
def test_francis_scalar_closed_form(c, a):
    # A=-a, B=1, C=c, D=0, P=0, Q=-1, S=0: Pi = 1/c, La = a/c
    Pi, La = solve_francis([[-a]], [1.0], [c], 0.0, [[0.0]], [-1.0], [[0.0]])
    assert Pi[0, 0] == pytest.approx(1 / c) and La[0] == pytest.approx(a / c)


def test_regsol_csv(tmp_path, circuit):
    m, e, _ = circuit
    sol = integrate_ideal_regeq(m, e, None, generate_path(0, 1e-5, 0.01), SimConfig(1e-5, "inf", 0.01))
    f = tmp_path / "pi.csv"
    sol.to_csv(f)
    with open(f) as fh:
        head = next(csv.reader(fh))
    assert head[0] == "t" and head[1] == "Pi_11" and head[-1] == "LamB_5"
    assert len(head) == 1 + 15 + 10
