import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from momsplit.metric import Metric, MetricError, check_finite, s_inner, s_inv_norm, s_norm

finite = st.floats(-1e3, 1e3, allow_nan=False)


def random_spd(rng, n):
    Q = rng.standard_normal((n, n))
    return Q @ Q.T + n * np.eye(n)


def test_identity_norms():
    m = Metric.identity(2)
    v = np.array([3.0, 4.0])
    assert s_norm(m, v) == pytest.approx(5.0)
    assert s_inv_norm(m, v) == pytest.approx(5.0)


def test_diagonal_norms():
    m = Metric.diagonal([4.0, 1.0])
    v = np.array([1.0, 0.0])
    assert s_norm(m, v) == pytest.approx(2.0)
    assert s_inv_norm(m, v) == pytest.approx(0.5)
    assert m.c == 1.0


def test_cauchy_schwarz_sampled(rng):
    m = Metric.from_matrix(random_spd(rng, 5))
    for _ in range(1000):
        x, u = rng.standard_normal(5), rng.standard_normal(5)
        assert abs(x @ u) <= s_inv_norm(m, x) * s_norm(m, u) * (1 + 1e-12)


def test_dense_matches_matrix(rng):
    S = random_spd(rng, 4)
    m = Metric.from_matrix(S)
    v = rng.standard_normal(4)
    np.testing.assert_allclose(m.apply(v), S @ v)
    np.testing.assert_allclose(m.apply_inv(v), np.linalg.solve(S, v))
    assert m.c == pytest.approx(np.linalg.eigvalsh(S)[0])


@pytest.mark.parametrize("S", [[[1.0, 2.0], [0.0, 1.0]], [[1.0, 2.0], [2.0, 1.0]]])
def test_rejects_bad_matrix(S):
    with pytest.raises(MetricError):
        Metric.from_matrix(S)


def test_rejects_nonpositive_diagonal():
    with pytest.raises(MetricError):
        Metric.diagonal([1.0, 0.0])


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        s_norm(Metric.diagonal([1.0, 2.0]), np.ones(3))


def test_check_finite():
    with pytest.raises(ValueError):
        check_finite(np.array([1.0, np.nan]))


@settings(max_examples=200, deadline=None)
@given(arrays(float, 3, elements=finite), arrays(float, 3, elements=finite),
       arrays(float, 3, elements=finite),
       arrays(float, 3, elements=st.floats(0.1, 10.0)))
def test_polarization_identity(x, y, z, s):
    m = Metric.diagonal(s)
    lhs = 2.0 * s_inner(m, x - y, y - z)
    rhs = s_norm(m, x - z) ** 2 - s_norm(m, x - y) ** 2 - s_norm(m, y - z) ** 2
    scale = 1.0 + s_norm(m, x - z) ** 2 + s_norm(m, x - y) ** 2 + s_norm(m, y - z) ** 2
    assert abs(lhs - rhs) <= 1e-9 * scale


@settings(max_examples=200, deadline=None)
@given(arrays(float, 4, elements=finite), st.integers(0, 2**31 - 1))
def test_dual_norm_of_image(v, seed):
    S = random_spd(np.random.default_rng(seed), 4)
    m = Metric.from_matrix(S)
    a, b = s_inv_norm(m, S @ v), s_norm(m, v)
    assert a == pytest.approx(b, rel=1e-9, abs=1e-9)
