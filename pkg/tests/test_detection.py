import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from didsim.coding import QPSK
from didsim.detection import (
    ListExplosionError,
    bit_prob,
    build_candidate_list,
    build_candidate_lists,
    demap_llr,
    enumerate_candidates,
    list_size,
    soft_symbol,
    symbol_posterior,
)


def bayes_demap_oracle(r, g, sigma2, priors):
    """Direct probability-domain posterior over the four QPSK points.

    Returns per-bit LLRs with each bit's own prior removed; independent of
    the log-domain implementation path.
    """
    weights = np.array([
        np.exp(-abs(r - g * c) ** 2 / sigma2)
        * np.prod([bit_prob(priors[j], QPSK.signs[j, q]) for j in range(2)])
        for q, c in enumerate(QPSK.points)
    ])
    out = np.empty(2)
    for j in range(2):
        plus = weights[QPSK.signs[j] > 0].sum()
        minus = weights[QPSK.signs[j] < 0].sum()
        out[j] = np.log(plus) - np.log(minus) - priors[j]
    return out


class TestBitProb:
    def test_uninformative(self):
        assert bit_prob(0.0, +1) == 0.5
        assert bit_prob(0.0, -1) == 0.5

    def test_saturated(self):
        assert bit_prob(30.0, +1) == pytest.approx(1.0, abs=1e-12)
        assert bit_prob(1e9, +1) == pytest.approx(1.0, abs=1e-12)

    def test_value(self):
        assert bit_prob(2.0, +1) == pytest.approx((1 + np.tanh(1.0)) / 2)
        assert bit_prob(2.0, +1) == pytest.approx(0.880797, abs=1e-6)

    @given(st.floats(min_value=-100, max_value=100, allow_nan=False))
    @settings(max_examples=200, deadline=None)
    def test_complement_identity(self, llr):
        assert bit_prob(llr, +1) + bit_prob(llr, -1) == pytest.approx(1.0, abs=0)


class TestSymbolPosterior:
    def test_uniform(self):
        np.testing.assert_allclose(symbol_posterior([0.0, 0.0]), 0.25 * np.ones(4))

    def test_certainty(self):
        p = symbol_posterior([30.0, 30.0])
        assert p[0] == pytest.approx(1.0, abs=1e-12)

    def test_direct_product_oracle(self):
        llrs = np.array([2.0, -1.0])
        p = symbol_posterior(llrs)
        for q in range(4):
            expected = bit_prob(llrs[0], QPSK.signs[0, q]) * bit_prob(llrs[1], QPSK.signs[1, q])
            assert p[q] == pytest.approx(expected, abs=1e-15)
        assert p.sum() == pytest.approx(1.0, abs=1e-12)

    def test_normalization_mass(self):
        rng = np.random.default_rng(0)
        llrs = rng.normal(scale=8.0, size=(2, 10_000))
        p = symbol_posterior(llrs)
        assert np.max(np.abs(p.sum(axis=0) - 1.0)) < 1e-10
        assert np.all(p >= 0.0)


class TestSoftSymbol:
    def test_uniform(self):
        mean, var, second = soft_symbol(0.25 * np.ones(4))
        assert mean == pytest.approx(0.0, abs=1e-15)
        assert var == pytest.approx(1.0)
        assert second == pytest.approx(1.0)

    def test_point_mass(self):
        p = np.zeros(4)
        p[2] = 1.0
        mean, var, _ = soft_symbol(p)
        assert mean == pytest.approx(QPSK.points[2])
        assert var == pytest.approx(0.0, abs=1e-15)

    def test_weighted_sum_oracle(self):
        p = np.array([0.7, 0.1, 0.1, 0.1])
        mean, var, second = soft_symbol(p)
        oracle_mean = sum(QPSK.points[q] * p[q] for q in range(4))
        oracle_second = sum(abs(QPSK.points[q]) ** 2 * p[q] for q in range(4))
        assert mean == pytest.approx(oracle_mean)
        assert second == pytest.approx(oracle_second)
        assert var == pytest.approx(oracle_second - abs(oracle_mean) ** 2)

    def test_variance_nonnegative(self):
        rng = np.random.default_rng(1)
        llrs = rng.normal(scale=10.0, size=(2, 5000))
        _, var, _ = soft_symbol(symbol_posterior(llrs))
        assert np.all(var >= 0.0)


class TestCandidateLists:
    def test_no_pruning_full_sort(self):
        lst = build_candidate_list(np.array([0.1, 0.4, 0.3, 0.2]), rho_th=0.0)
        np.testing.assert_array_equal(lst.indices, [1, 2, 3, 0])
        assert len(lst) == 4

    def test_uniform_forced_singleton(self):
        lst = build_candidate_list(0.25 * np.ones(4), rho_th=0.3)
        np.testing.assert_array_equal(lst.indices, [0])

    def test_threshold_rule(self):
        lst = build_candidate_list(np.array([0.5, 0.3, 0.15, 0.05]), rho_th=0.2)
        np.testing.assert_array_equal(lst.indices, [0, 1])
        np.testing.assert_allclose(lst.probs, [0.5, 0.3])

    def test_tau_truncation(self):
        lst = build_candidate_list(np.array([0.3, 0.3, 0.3, 0.1]), rho_th=0.0, tau_max=2)
        assert len(lst) == 2
        np.testing.assert_array_equal(lst.indices, [0, 1])

    def test_rho_zero_is_pure_sort(self):
        rng = np.random.default_rng(2)
        p = rng.dirichlet(np.ones(4))
        lst = build_candidate_list(p, rho_th=0.0)
        assert sorted(lst.indices.tolist()) == [0, 1, 2, 3]
        assert np.all(np.diff(lst.probs) <= 0)

    def test_batched_matches_scalar(self):
        rng = np.random.default_rng(3)
        probs = rng.dirichlet(np.ones(4), size=200).T
        batch = build_candidate_lists(probs, rho_th=0.2, tau_max=4)
        for i in range(200):
            single = build_candidate_list(probs[:, i], rho_th=0.2, tau_max=4)
            got = batch.at(i)
            np.testing.assert_array_equal(got.indices, single.indices)


class TestEnumeration:
    def test_sizes(self):
        assert list_size([[0], [1], [2]]) == 1
        assert list_size([[0, 1], [0, 1, 2], [3]]) == 6

    def test_full_space(self):
        lists = [np.arange(4)] * 3
        assert list_size(lists) == 64

    def test_single_combination(self):
        cands = enumerate_candidates([[2], [3]])
        np.testing.assert_array_equal(cands, [[2], [3]])

    def test_ordering_first_stream_outermost(self):
        cands = enumerate_candidates([[0, 1], [2]])
        np.testing.assert_array_equal(cands, [[0, 1], [2, 2]])

    def test_matches_itertools_product(self):
        lists = [[0, 1], [2, 3], [1, 0]]
        cands = enumerate_candidates(lists)
        oracle = np.array(list(itertools.product(*lists))).T
        np.testing.assert_array_equal(cands, oracle)

    def test_cap(self):
        with pytest.raises(ListExplosionError):
            enumerate_candidates([np.arange(4)] * 3, cap=63)


class TestDemapper:
    def test_symmetry_zero_observation(self):
        out = demap_llr(np.array([0.0 + 0.0j]), 1.0 + 0.5j, 1.0)
        np.testing.assert_allclose(out, np.zeros((2, 1)), atol=1e-12)

    def test_noiseless_recovers_bits(self):
        g = 0.7 - 0.3j
        for q in range(4):
            r = np.array([g * QPSK.points[q]])
            out = demap_llr(r, g, 1e-3)[:, 0]
            signs = np.sign(out)
            np.testing.assert_array_equal(signs, QPSK.signs[:, q])
            assert np.all(np.abs(out) > 50)

    def test_matches_bayes_oracle(self):
        rng = np.random.default_rng(4)
        for _ in range(500):
            r = rng.standard_normal() + 1j * rng.standard_normal()
            g = rng.standard_normal() + 1j * rng.standard_normal()
            sigma2 = rng.uniform(0.05, 2.0)
            priors = rng.normal(scale=3.0, size=2)
            got = demap_llr(np.array([r]), g, sigma2, priors.reshape(2, 1))[:, 0]
            want = bayes_demap_oracle(r, g, sigma2, priors)
            np.testing.assert_allclose(got, want, rtol=0, atol=1e-9)

    def test_maxlog_matches_max_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            r = rng.standard_normal() + 1j * rng.standard_normal()
            g = rng.standard_normal() + 1j * rng.standard_normal()
            sigma2 = rng.uniform(0.05, 2.0)
            priors = rng.normal(scale=3.0, size=2)
            got = demap_llr(np.array([r]), g, sigma2, priors.reshape(2, 1),
                            max_log=True)[:, 0]
            total = np.array([
                -abs(r - g * c) ** 2 / sigma2
                + 0.5 * (QPSK.signs[0, q] * priors[0] + QPSK.signs[1, q] * priors[1])
                for q, c in enumerate(QPSK.points)])
            for j in range(2):
                want = (total[QPSK.signs[j] > 0].max()
                        - total[QPSK.signs[j] < 0].max() - priors[j])
                assert got[j] == pytest.approx(want, abs=1e-12)

    def test_joint_two_stream_shape_and_symmetry(self):
        gain = np.array([[1.0 + 0j, 0.3 - 0.2j], [0.1 + 0.4j, 0.8 + 0j]])
        obs = np.zeros((2, 5), dtype=complex)
        out = demap_llr(obs, gain, 1.0)
        assert out.shape == (4, 5)

    def test_bad_sigma_rejected(self):
        with pytest.raises(ValueError):
            demap_llr(np.array([0j]), 1.0, 0.0)
