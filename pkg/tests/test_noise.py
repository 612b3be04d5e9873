import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stochreg.errors import OffGridError
from stochreg.noise import (QUANTUM, BrownianPath, coarsen, generate_path, grid_index,
                            increment_over, n_steps, zero_path)


def test_count():
    assert generate_path(1, 0.5, 1.0).n == 2
    assert n_steps(1.0, 0.1) == 10
    assert n_steps(1.05, 0.1) == 11


def test_deterministic():
    a, b = generate_path(7, 1e-3, 1.0), generate_path(7, 1e-3, 1.0)
    assert a.increments.tobytes() == b.increments.tobytes()
    assert not np.array_equal(a.increments, generate_path(8, 1e-3, 1.0).increments)


def test_prefix_kept_when_extending():
    a, b = generate_path(3, 1e-3, 1.0), generate_path(3, 1e-3, 2.5)
    np.testing.assert_array_equal(a.increments, b.increments[: a.n])


def test_moments():
    delta, N = 1e-3, 10 ** 6
    inc = generate_path(11, delta, N * delta).increments
    assert inc.size == N
    # mean within 4 sigma; variance within 1%
    assert abs(inc.mean()) <= 4 * math.sqrt(delta / N)
    assert abs(inc.var() / delta - 1) < 0.01


def test_quantized():
    inc = generate_path(2, 1e-4, 0.1).increments
    np.testing.assert_array_equal(np.round(inc / QUANTUM) * QUANTUM, inc)


def test_increment_over_examples():
    p = generate_path(5, 0.01, 1.0)
    assert increment_over(p, 0.3, 0.3) == 0.0
    assert increment_over(p, 0.0, 1.0) == p.W[-1]
    assert increment_over(p, 0.0, 0.5) + increment_over(p, 0.5, 1.0) == increment_over(p, 0.0, 1.0)


@settings(max_examples=200)
@given(st.integers(0, 100), st.integers(0, 100), st.integers(0, 100), st.integers(0, 2 ** 32))
def test_additivity_exact(i, j, k, seed):
    a, b, c = sorted((i, j, k))
    p = generate_path(seed, 0.01, 1.0)
    ta, tb, tc = a * 0.01, b * 0.01, c * 0.01
    assert increment_over(p, ta, tc) == increment_over(p, ta, tb) + increment_over(p, tb, tc)


def test_off_grid():
    p = generate_path(0, 0.01, 1.0)
    with pytest.raises(OffGridError):
        increment_over(p, 0.0, 0.005)
    with pytest.raises(OffGridError):
        grid_index(math.inf, 0.1)


def test_window_variance():
    p = generate_path(4, 1e-4, 50.0)
    w = coarsen(p, 100)
    assert w.delta == pytest.approx(1e-2)
    # 5000 windows: relative std of the sample variance ~ 2%
    assert abs(w.increments.var() / 1e-2 - 1) < 0.08
    np.testing.assert_array_equal(w.increments, p.window_sums(100))


def test_dump_roundtrip(tmp_path):
    p = generate_path(9, 1e-3, 0.5)
    f = tmp_path / "w.bin"
    p.dump(f)
    q = BrownianPath.load(f)
    assert q.seed == 9 and q.n == p.n and q.delta == p.delta
    assert q.increments.tobytes() == p.increments.tobytes()


def test_zero_path():
    z = zero_path(0.1, 1.0)
    assert z.n == 10 and not z.increments.any()


def test_bad_arguments():
    with pytest.raises(ValueError):
        generate_path(0, 0.0, 1.0)
    with pytest.raises(OverflowError):
        generate_path(0, 1e-12, 1e3)
