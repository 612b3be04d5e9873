import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stochreg.errors import ConfigError, UnsupportedConfiguration
from stochreg.model import Exosystem, preset_circuit, preset_scalar, stochastic_relative_degree
from stochreg.stability import (affine_family_roots, lyapunov_exponent, lyapunov_mc,
                                mean_square_check, non_resonance_check, pi_generators,
                                scalar_as_check, scalar_ms_check, second_moment_generator)

from conftest import chain_model, random_stable

SEEDS = range(8)


def test_scalar_as_examples():
    r = scalar_as_check(-1.0, 0.0)
    assert r.stable and r.margin == -2.0
    r = scalar_as_check(0.0, 1.0)
    assert r.stable and r.margin == -1.0
    assert r.method == "scalar-as"


def test_scalar_ms_examples():
    assert scalar_ms_check(-1.0, 0.0).stable
    r = scalar_ms_check(-0.5, 1.1)
    assert not r.stable and r.margin == pytest.approx(0.21)


def test_example_one_intervals():
    # 2 A_pi -/+ F_pi^2 with A_pi = 0.2 - 5c, F_pi = 0.3 - 2c
    as_roots = affine_family_roots(0.2, -5.0, 0.3, -2.0, "as")
    ms_roots = affine_family_roots(0.2, -5.0, 0.3, -2.0, "ms")
    np.testing.assert_allclose(as_roots, [-2.23, 0.034], atol=0.01)
    np.testing.assert_allclose(ms_roots, [0.044, 2.75], atol=0.01)
    # frozen oracle values
    np.testing.assert_allclose(as_roots, [-2.2346805717910216, 0.03468057179102173], rtol=1e-12)
    np.testing.assert_allclose(ms_roots, [0.04445582882740409, 2.7555441711725956], rtol=1e-12)


@pytest.mark.parametrize("c", [-5.0, -0.5, 0.5, 1.0, 3.0])
def test_example_one_pi_generators(c):
    m, e = preset_scalar(c)
    A_pi, F_pi = pi_generators(m, stochastic_relative_degree(m, e.S))
    assert A_pi[0, 0] == pytest.approx(0.2 - 5 * c, abs=1e-14)
    assert F_pi[0, 0] == pytest.approx(0.3 - 2 * c, abs=1e-14)


def test_moment_generator_examples():
    assert mean_square_check(-np.eye(3), np.zeros((3, 3))).margin == pytest.approx(-2.0)
    M = second_moment_generator([[0.3]], [[0.7]])
    assert M.shape == (1, 1) and M[0, 0] == pytest.approx(2 * 0.3 + 0.49)


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_ms_scalar_reduction(a, f):
    r1, r2 = mean_square_check([[a]], [[f]]), scalar_ms_check(a, f)
    assert r1.margin == pytest.approx(r2.margin, abs=1e-12)
    if abs(r2.margin) > 1e-12:
        assert r1.verdict == r2.verdict


def test_lyapunov_deterministic():
    r = lyapunov_mc(-np.eye(2), np.zeros((2, 2)), SEEDS, T=10.0, delta=1e-3)
    assert r.margin == pytest.approx(-1.0, rel=0.05)
    assert r.stable and r.method == "monte-carlo"


def test_lyapunov_scalar_closed_form():
    a, f = -0.3, 0.6
    r = lyapunov_mc([[a]], [[f]], range(16), T=20.0, delta=1e-3)
    assert abs(r.margin - (a - f * f / 2)) <= 3 * r.std_err + 5e-3


def test_lyapunov_example_one_unstable():
    m, e = preset_scalar(-0.5)
    A_pi, F_pi = pi_generators(m, stochastic_relative_degree(m, e.S))
    r = lyapunov_mc(A_pi, F_pi, SEEDS, T=20.0, delta=1e-3)
    assert r.verdict == "unstable" and r.margin > 0


def test_lyapunov_needs_seeds():
    with pytest.raises(ConfigError):
        lyapunov_mc([[-1.0]], [[0.0]], range(7), 1.0, 1e-2)


def test_lyapunov_inconclusive_at_margin():
    r = lyapunov_mc([[0.0]], [[0.0]], SEEDS, T=1.0, delta=1e-2)
    assert r.verdict == "inconclusive"


def test_lyapunov_sorted_seeds():
    a = lyapunov_mc([[-0.2]], [[0.5]], [5, 1, 3, 2, 0, 4, 7, 6], 2.0, 1e-2)
    b = lyapunov_mc([[-0.2]], [[0.5]], range(8), 2.0, 1e-2)
    assert a.per_seed == b.per_seed


def test_as_grid_agreement():
    agree = total = 0
    for a in np.linspace(-1.0, 1.0, 5):
        for f in np.linspace(0.0, 1.5, 4):
            m = 2 * a - f * f
            if abs(m) < 0.05:
                continue
            lam = np.mean([lyapunov_exponent([[a]], [[f]], s, 10.0, 1e-3) for s in range(32)])
            total += 1
            agree += (lam < 0) == (m < 0)
    assert agree >= 0.95 * total


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 2 ** 16))
def test_ms_implies_mc_stable(seed):
    rng = np.random.default_rng(seed)
    A = random_stable(rng, 3, margin=1.0)
    F = 0.3 * rng.standard_normal((3, 3))
    ms = mean_square_check(A, F)
    if not ms.stable:
        return
    assert lyapunov_mc(A, F, SEEDS, T=5.0, delta=1e-3).verdict != "unstable"


def test_circuit_closed_loop_mean_square():
    m, _, g = preset_circuit(1.0)
    A_cl = m.A + np.outer(m.B, g.K)
    F_cl = m.F + np.outer(m.G, g.K)
    ms = mean_square_check(A_cl, F_cl)
    mc = lyapunov_mc(A_cl, F_cl, range(20), T=2.0, delta=1e-4)
    assert ms.stable and mc.stable


def test_non_resonance_circuit():
    m, e, _ = preset_circuit(1.0)
    r = non_resonance_check(m, e, seeds=range(8), T=5.0, delta=1e-4)
    assert r.stable
    assert r.details["mean_square"].stable
    assert "disagreement" not in r.details


def test_non_resonance_deterministic_abscissa():
    m, e, _ = preset_circuit(1.0)
    m0 = m.deterministic()
    r = non_resonance_check(m0, e)
    A_pi = m0.A - np.outer(m0.B, m0.C) / m0.D
    M = np.kron(np.eye(5), A_pi) - np.kron(e.S.T, np.eye(3))
    assert r.margin == pytest.approx(np.max(np.linalg.eigvals(M).real))
    assert r.details["deterministic"]


def test_non_resonance_relative_degree_two():
    m = chain_model().replace(F=np.zeros((2, 2)))
    m = m.replace(A=[[-1.0, 1.0], [0.0, -1.0]])
    r = non_resonance_check(m, Exosystem([[0.0]], [1.0]))
    assert r.details["r"] == 2


def test_unsupported_b_and_g():
    m = chain_model().replace(G=[0.0, 0.5])
    with pytest.raises(UnsupportedConfiguration):
        pi_generators(m, stochastic_relative_degree(m, np.zeros((1, 1))))


def test_report_json():
    r = lyapunov_mc([[-1.0]], [[0.2]], SEEDS, 2.0, 1e-2)
    d = json.loads(r.to_json())
    assert set(d) >= {"method", "verdict", "margin", "per_seed"}
    assert len(d["per_seed"]) == 8
    assert json.loads(scalar_as_check(1.0, 0.0).to_json())["verdict"] == "unstable"
