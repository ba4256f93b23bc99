import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from displab.ranks import (
    UndefinedCorrelationError,
    average_ranks,
    kendall_tau,
    spearman_rho,
)

RNG = np.random.default_rng(42)


# -- definition-level oracles -------------------------------------------

def rank_by_lookup(v):
    """Independent ranking route: positions in the sorted list, ties averaged."""
    v = list(v)
    s = sorted(v)
    out = []
    for val in v:
        first = s.index(val)
        count = s.count(val)
        out.append(sum(range(first + 1, first + count + 1)) / count)
    return np.array(out)


def spearman_oracle(x, y):
    rx, ry = rank_by_lookup(x), rank_by_lookup(y)
    return float(np.corrcoef(rx, ry)[0, 1])


def kendall_oracle(x, y):
    """Literal concordant/discordant counting with tau-b tie terms."""
    n = len(x)
    nc = nd = tx = ty = 0
    for i in range(n):
        for j in range(i + 1, n):
            a, b = x[i] - x[j], y[i] - y[j]
            if a == 0 and b == 0:
                continue
            if a == 0:
                tx += 1
            elif b == 0:
                ty += 1
            elif (a > 0) == (b > 0):
                nc += 1
            else:
                nd += 1
    n0 = n * (n - 1) / 2
    n1 = sum(c * (c - 1) / 2 for c in np.unique(x, return_counts=True)[1])
    n2 = sum(c * (c - 1) / 2 for c in np.unique(y, return_counts=True)[1])
    return (nc - nd) / np.sqrt((n0 - n1) * (n0 - n2))


# -- worked examples ----------------------------------------------------

def test_monotone_series_give_plus_minus_one():
    x = np.arange(1, 7, dtype=float)
    up = x**3 + 2
    down = -np.exp(x)
    for fn in (spearman_rho, kendall_tau):
        assert fn(x, up) == pytest.approx(1.0, abs=1e-12)
        assert fn(x, down) == pytest.approx(-1.0, abs=1e-12)


def test_spearman_hand_example():
    assert spearman_rho([1, 2, 3, 4], [10, 30, 20, 40]) == pytest.approx(0.8, abs=1e-12)


def test_average_ranks_with_ties():
    assert np.array_equal(average_ranks([10, 20, 20, 30]), [1.0, 2.5, 2.5, 4.0])
    assert np.array_equal(average_ranks([5, 5, 5]), [2.0, 2.0, 2.0])


# -- oracle sweeps (ties included) --------------------------------------

def test_rank_correlations_match_oracles_on_tied_vectors():
    for trial in range(200):
        n = int(RNG.integers(2, 13))
        x = RNG.integers(0, 5, size=n).astype(float)
        y = RNG.integers(0, 5, size=n).astype(float)
        if np.all(x == x[0]) or np.all(y == y[0]):
            continue
        got_s = spearman_rho(x, y)
        got_k = kendall_tau(x, y)
        assert abs(got_s - spearman_oracle(x, y)) < 1e-12, (x, y)
        assert abs(got_k - kendall_oracle(x, y)) < 1e-12, (x, y)
        assert -1.0 <= got_s <= 1.0 and -1.0 <= got_k <= 1.0


# -- invariance under strictly monotone transforms ----------------------

@given(st.integers(0, 2**31 - 1))
@settings(max_examples=40, deadline=None)
def test_monotone_transform_invariance(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 10))
    x = rng.normal(size=n)
    y = rng.integers(0, 4, size=n).astype(float)
    if np.all(y == y[0]):
        return
    fx = np.exp(0.5 * x)          # strictly increasing
    gy = y**3 + 5 * y             # strictly increasing, preserves ties
    assert spearman_rho(fx, gy) == pytest.approx(spearman_rho(x, y), abs=1e-12)
    assert kendall_tau(fx, gy) == pytest.approx(kendall_tau(x, y), abs=1e-12)


# -- error contracts -----------------------------------------------------

def test_constant_series_raise():
    with pytest.raises(UndefinedCorrelationError, match="undefined correlation"):
        spearman_rho([1, 1, 1], [1, 2, 3])
    with pytest.raises(UndefinedCorrelationError, match="undefined correlation"):
        kendall_tau([1, 2, 3], [7, 7, 7])


def test_length_validation():
    with pytest.raises(ValueError):
        spearman_rho([1], [2])
    with pytest.raises(ValueError):
        kendall_tau([1, 2], [1, 2, 3])
