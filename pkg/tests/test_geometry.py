import math

import numpy as np
import pytest

from displab.geometry import (
    CondensationSummary,
    EmbeddingTrace,
    condensation_summary,
    cosine_matrix,
    histogram_stack,
    layer_mean_similarity,
)

RNG = np.random.default_rng(9)


def make_trace(mats, seq="s0", final=None):
    return EmbeddingTrace(layers=[np.asarray(m, dtype=np.float64) for m in mats],
                          sequence_id=seq, final_norm=final)


# -- cosine matrix -------------------------------------------------------

def test_cosine_identical_rows_all_ones():
    z = np.tile([1.0, 2.0, -1.0], (4, 1))
    c = cosine_matrix(z)
    assert np.allclose(c, 1.0, atol=1e-9)


def test_cosine_orthonormal_rows_identity():
    c = cosine_matrix(np.eye(3))
    assert np.allclose(c, np.eye(3), atol=1e-9)


def test_cosine_forty_five_degrees():
    z = np.array([[1.0, 0.0], [1.0, 1.0]]) / np.array([[1.0], [math.sqrt(2)]])
    c = cosine_matrix(z)
    assert c[0, 1] == pytest.approx(math.sqrt(2) / 2, abs=1e-9)


def test_cosine_matrix_contracts():
    z = RNG.normal(size=(7, 5))
    c = cosine_matrix(z)
    assert np.abs(c - c.T).max() < 1e-12
    assert np.abs(np.diag(c) - 1.0).max() < 1e-9
    assert c.min() >= -1.0 and c.max() <= 1.0
    with pytest.raises(ValueError):
        cosine_matrix(np.empty((3, 0)))


def test_cosine_invariant_to_positive_row_rescale():
    z = RNG.normal(size=(6, 4))
    scales = RNG.uniform(0.1, 10.0, size=(6, 1))
    assert np.abs(cosine_matrix(z * scales) - cosine_matrix(z)).max() < 1e-9


# -- mean similarity -----------------------------------------------------

def test_mu_identical_rows_is_one():
    tr = make_trace([np.tile([2.0, 1.0], (3, 1))] * 2)
    assert layer_mean_similarity(tr)[1] == pytest.approx(1.0, abs=1e-9)


def test_mu_two_orthonormal_rows():
    tr = make_trace([np.eye(2)] * 2)
    # (1 + 0 + 0 + 1) / 4, diagonal included (diagonal is 1 up to the norm guard)
    assert layer_mean_similarity(tr)[0] == pytest.approx(0.5, abs=1e-9)


def test_mu_matches_brute_force_double_loop():
    z = RNG.normal(size=(5, 8))
    tr = make_trace([z, z])
    got = layer_mean_similarity(tr)[0]
    acc = 0.0
    for i in range(5):
        for j in range(5):
            acc += (z[i] @ z[j]) / (np.linalg.norm(z[i]) * np.linalg.norm(z[j]))
    assert got == pytest.approx(acc / 25.0, abs=1e-12)


def test_mu_permutation_invariant():
    z = RNG.normal(size=(6, 4))
    tr1 = make_trace([z, z])
    tr2 = make_trace([z[RNG.permutation(6)], z[RNG.permutation(6)]])
    assert np.abs(layer_mean_similarity(tr1) - layer_mean_similarity(tr2)).max() < 1e-12


# -- histograms ----------------------------------------------------------

def test_histogram_identical_rows_mass_in_last_bin():
    tr = make_trace([np.tile([1.0, 1.0], (3, 1))] * 2)
    hs = histogram_stack(tr, bins=10)
    assert hs.freqs[0, -1] == pytest.approx(1.0, abs=1e-9)
    assert np.abs(hs.freqs.sum(axis=1) - 1.0).max() < 1e-9


def test_histogram_two_orthonormal_rows_two_bins():
    tr = make_trace([np.eye(2)] * 2)
    hs = histogram_stack(tr, bins=2)
    # zeros land in [0, 1) and the diagonal ones in the last (closed) bin
    assert np.allclose(hs.freqs[0], [0.0, 1.0])


def test_histogram_mass_normalized_random():
    tr = make_trace([RNG.normal(size=(9, 5)) for _ in range(4)])
    hs = histogram_stack(tr, bins=101)
    assert hs.freqs.shape == (4, 101)
    assert np.abs(hs.freqs.sum(axis=1) - 1.0).max() < 1e-9


def test_histogram_bin_count_validation():
    tr = make_trace([np.eye(2)] * 2)
    with pytest.raises(ValueError):
        histogram_stack(tr, bins=1)


# -- condensation summary -------------------------------------------------

def _converging_trace(n=8, depth=5, seq="s"):
    """Rows start spread over the circle and rotate toward a common direction."""
    base_angles = np.linspace(0.0, 2 * math.pi, n, endpoint=False)
    mats = []
    for level in range(depth + 1):
        shrink = 1.0 - level / (depth + 1.0)
        ang = base_angles * shrink
        mats.append(np.stack([np.cos(ang), np.sin(ang)], axis=1))
    return make_trace(mats, seq=seq)


def test_summary_strictly_increasing_mu_gives_perfect_correlation():
    mats = [np.eye(4)]
    for level in range(1, 5):
        # rows pulled toward their mean more at each level -> mu increases
        z = np.eye(4) + 0.4 * level
        mats.append(z)
    s = condensation_summary([make_trace(mats)])
    assert np.all(np.diff(s.mu) > 0)
    assert s.spearman_rho == pytest.approx(1.0, abs=1e-12)
    assert s.kendall_tau == pytest.approx(1.0, abs=1e-12)


def test_summary_repeat_invariance_is_exact():
    tr = _converging_trace()
    single = condensation_summary([tr])
    for k in (2, 3, 7):
        copies = [make_trace(tr.layers, seq=f"s{i}") for i in range(k)]
        rep = condensation_summary(copies)
        assert np.array_equal(rep.mu, single.mu)
        assert rep.spearman_rho == single.spearman_rho
        assert rep.kendall_tau == single.kendall_tau
        assert rep.mu_embedding == single.mu_embedding


def test_summary_converging_rotation_trace_strongly_positive():
    s = condensation_summary([_converging_trace(n=10, depth=6)])
    assert s.spearman_rho > 0.9


def test_summary_permuted_rows_identical():
    tr = _converging_trace()
    perm_layers = [m[RNG.permutation(len(m))] for m in tr.layers]
    s1 = condensation_summary([tr])
    s2 = condensation_summary([make_trace(perm_layers)])
    assert np.abs(s1.mu - s2.mu).max() < 1e-12


def test_summary_layer_zero_excluded_and_reported():
    tr = _converging_trace(depth=4)
    s = condensation_summary([tr])
    assert len(s.mu) == 4
    mu_all = layer_mean_similarity(tr)
    assert s.mu_embedding == pytest.approx(mu_all[0], abs=1e-15)
    assert np.allclose(s.mu, mu_all[1:5])


def test_summary_final_norm_reported_separately():
    tr = _converging_trace()
    tr2 = make_trace(tr.layers, final=tr.layers[-1] * 2.0)
    s = condensation_summary([tr2])
    assert s.mu_final_norm is not None
    assert len(s.mu) == tr.depth


def test_summary_inconsistent_depth_errors():
    t1 = _converging_trace(depth=3, seq="a")
    t2 = _converging_trace(depth=4, seq="b")
    with pytest.raises(ValueError, match="inconsistent"):
        condensation_summary([t1, t2])


def test_trace_validation():
    with pytest.raises(ValueError):
        EmbeddingTrace(layers=[np.eye(3)])  # needs at least two entries
    with pytest.raises(ValueError):
        EmbeddingTrace(layers=[np.eye(3), np.eye(4)])
