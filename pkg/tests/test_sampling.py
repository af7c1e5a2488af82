import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats
from scipy.integrate import quad

from entest.errors import ConfigError, DomainError
from entest.sampling import (
    SeedSpec,
    WeightLaw,
    direction_from_normals,
    sample_directions,
    sample_positive_direction,
    sample_subset,
    stream_for,
)

SEED = SeedSpec(20240611)


def test_p1_is_the_only_point():
    for i in range(5):
        assert sample_positive_direction(1, WeightLaw.uniform(), SEED, i).tolist() == [1.0]
    assert sample_positive_direction(1, WeightLaw.auxiliary([3.0]), SEED, 0).tolist() == [1.0]


@settings(max_examples=50, deadline=None)
@given(p=st.integers(1, 60), i=st.integers(0, 10**9))
def test_direction_is_positive_unit(p, i):
    w = sample_positive_direction(p, WeightLaw.uniform(), SEED, i)
    assert w.shape == (p,)
    assert np.all(w >= 0)
    assert abs(np.linalg.norm(w) - 1) <= 1e-12


def test_p2_uniform_mean():
    # E|cos U| = 2/pi for U uniform on the circle
    w = sample_directions(2, WeightLaw.uniform(), SEED, 0, 200_000)
    se = w.std(axis=0) / math.sqrt(len(w))
    assert np.all(np.abs(w.mean(axis=0) - 2 / math.pi) <= 3 * se)
    bulk = direction_from_normals(np.random.default_rng(1).standard_normal((10**6, 2)))
    se = bulk.std(axis=0) / 1e3
    assert np.all(np.abs(bulk.mean(axis=0) - 2 / math.pi) <= 3 * se)


def normalized_mean(a, j):
    """E[|xi_j| / ||xi||] for xi ~ N(0, diag(a)^2), by quadrature.

    Uses 1/r = (2/sqrt(pi)) int_0^inf exp(-r^2 t^2) dt, which factorizes over
    coordinates.
    """
    a = np.asarray(a, dtype=float)

    def f(t):
        g = (1 + 2 * a**2 * t * t) ** -0.5
        return math.sqrt(2 / math.pi) * a[j] * g[j] ** 2 * np.prod(np.delete(g, j))

    return 2 / math.sqrt(math.pi) * quad(f, 0, np.inf, epsabs=0, epsrel=1e-12)[0]


def test_normalized_mean_oracle_sanity():
    assert normalized_mean([1.0, 1.0], 0) == pytest.approx(2 / math.pi, rel=1e-10)


def test_auxiliary_mean_ratio():
    a = [2.0, 1.0, 1.0]
    law = WeightLaw.auxiliary(a)
    xi = np.random.default_rng(2).standard_normal((10**6, 3)) * law.scales(3)
    # before normalization the means are in the ratio of the aux weights
    r = np.abs(xi[:, 0]).mean() / np.abs(xi[:, 1]).mean()
    assert abs(r - 2.0) <= 3 * _ratio_se(np.abs(xi[:, 0]), np.abs(xi[:, 1]))
    # after normalization the ratio is pulled toward 1; compare with the exact value
    w = direction_from_normals(xi)
    exact = normalized_mean(a, 0) / normalized_mean(a, 1)
    assert abs(w[:, 0].mean() / w[:, 1].mean() - exact) <= 3 * _ratio_se(w[:, 0], w[:, 1])
    ws = sample_directions(3, law, SEED, 0, 100_000)
    assert abs(ws[:, 0].mean() / ws[:, 1].mean() - exact) <= 3 * _ratio_se(ws[:, 0], ws[:, 1])


def _ratio_se(x, y):
    m1, m2 = x.mean(), y.mean()
    cov = np.cov(x, y) / len(x)
    grad = np.array([1 / m2, -m1 / m2**2])
    return math.sqrt(grad @ cov @ grad)


@pytest.mark.parametrize("p", [2, 5, 20])
def test_uniform_squares_are_dirichlet(p):
    w = direction_from_normals(np.random.default_rng(p).standard_normal((10**5, p)))
    x = w[:, 0] ** 2
    edges = stats.beta(0.5, (p - 1) / 2).ppf(np.linspace(0, 1, 21))
    counts, _ = np.histogram(x, edges)
    assert stats.chisquare(counts).pvalue > 1e-3


def test_auxiliary_law_validation():
    with pytest.raises(ConfigError):
        WeightLaw.auxiliary([1.0, 0.0])
    with pytest.raises(ConfigError):
        WeightLaw.auxiliary([1.0, 2.0]).scales(3)


def test_stream_determinism_and_distinctness():
    a = stream_for(SeedSpec(7, "x"), 1).integers(2**63, size=5)
    b = stream_for(SeedSpec(7, "x"), 1).integers(2**63, size=5)
    c = stream_for(SeedSpec(7, "x"), 2).integers(2**63, size=5)
    d = stream_for(SeedSpec(7, "y"), 1).integers(2**63, size=5)
    assert a.tolist() == b.tolist()
    assert a[0] != c[0] and a[0] != d[0]
    with pytest.raises(DomainError):
        stream_for(SEED, -1)


def test_order_and_thread_independence():
    law = WeightLaw.uniform()
    forward = [sample_positive_direction(8, law, SEED, i) for i in range(64)]
    backward = [sample_positive_direction(8, law, SEED, i) for i in reversed(range(64))][::-1]
    with ThreadPoolExecutor(8) as pool:
        threaded = list(pool.map(lambda i: sample_positive_direction(8, law, SEED, i), range(64)))
    for f, b, t in zip(forward, backward, threaded):
        assert f.tobytes() == b.tobytes() == t.tobytes()


def test_subset_structure():
    assert sample_subset(5, 5, SEED, 0).tolist() == [0, 1, 2, 3, 4]
    for i in range(200):
        J = sample_subset(100, 10, SEED, i)
        assert J.size == 10 and np.all(np.diff(J) > 0) and J[0] >= 0 and J[-1] < 100
    with pytest.raises(DomainError):
        sample_subset(5, 6, SEED, 0)


def test_subset_uniformity():
    draws = 10**5
    ones = sum(int(sample_subset(2, 1, SEED, i)[0]) for i in range(draws))
    assert abs(ones / draws - 0.5) <= 3 * math.sqrt(0.25 / draws)
    counts = np.zeros(10)
    for i in range(draws):
        counts[sample_subset(10, 3, SEED.child("incl"), i)] += 1
    se = math.sqrt(0.3 * 0.7 / draws)
    assert np.all(np.abs(counts / draws - 0.3) <= 3 * se)
