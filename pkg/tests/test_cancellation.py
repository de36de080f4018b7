import numpy as np
import pytest

from didsim.cancellation import (
    cancel,
    effective_variance,
    genie_replica,
    hard_replica,
    rmp_replica,
    soft_replica,
    stream_based_replica,
    user_based_replica,
)
from didsim.coding import QPSK


def random_means(rng, shape, scale=0.4):
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


class TestReplicas:
    def test_soft_zero_means(self):
        rep = soft_replica(np.zeros((3, 4), dtype=complex), protect=1)
        assert not rep.values.any()
        assert rep.kind == "soft"

    def test_soft_protected_zeroed(self):
        rng = np.random.default_rng(0)
        means = random_means(rng, (4, 6))
        rep = soft_replica(means, protect=2)
        assert np.all(rep.values[2] == 0.0)
        np.testing.assert_array_equal(rep.values[[0, 1, 3]], means[[0, 1, 3]])

    def test_hard_fixed_point_of_slicer(self):
        pts = QPSK.points[np.array([[0, 1], [2, 3]])]
        rep = hard_replica(pts, protect=0)
        assert np.all(rep.values[0] == 0.0)
        np.testing.assert_allclose(rep.values[1], pts[1])

    def test_hard_tie_break_at_origin(self):
        rep = hard_replica(np.zeros((2, 3), dtype=complex), protect=1)
        np.testing.assert_allclose(rep.values[0], np.full(3, QPSK.points[0]))

    def test_hard_matches_nearest_point_oracle(self):
        rng = np.random.default_rng(1)
        means = random_means(rng, (3, 8), scale=0.8)
        rep = hard_replica(means, protect=2)
        for k in range(2):
            for i in range(8):
                d = np.abs(means[k, i] - QPSK.points)
                assert rep.values[k, i] == QPSK.points[np.argmin(d)]

    def test_user_based_zero_pattern(self):
        rng = np.random.default_rng(2)
        means = random_means(rng, (4, 5))  # K=2 users, N_T=2
        rep = user_based_replica(means, protect_user=0, n_t=2)
        assert np.all(rep.values[0:2] == 0.0)
        np.testing.assert_array_equal(rep.values[2:4], means[2:4])
        assert rep.protected == (0, 1)

    def test_stream_based_zero_pattern(self):
        rng = np.random.default_rng(3)
        means = random_means(rng, (4, 5))
        rep = stream_based_replica(means, protect_user=0, protect_antenna=0, n_t=2)
        assert np.all(rep.values[0] == 0.0)
        np.testing.assert_array_equal(rep.values[1:], means[1:])

    def test_stream_and_user_coincide_single_antenna(self):
        rng = np.random.default_rng(4)
        means = random_means(rng, (3, 5))
        a = user_based_replica(means, protect_user=1, n_t=1)
        b = stream_based_replica(means, protect_user=1, protect_antenna=0, n_t=1)
        c = soft_replica(means, protect=1)
        np.testing.assert_array_equal(a.values, b.values)
        np.testing.assert_array_equal(a.values, c.values)

    def test_rmp_structure(self):
        rng = np.random.default_rng(5)
        idx = rng.integers(0, 4, size=(3, 7))
        rep = rmp_replica(QPSK.points[idx], protect=1)
        assert np.all(rep.values[1] == 0.0)
        for k in (0, 2):
            assert np.all(np.isin(rep.values[k], QPSK.points))
        assert rep.kind == "list"

    def test_rmp_singleton_equals_hard(self):
        rng = np.random.default_rng(6)
        idx = rng.integers(0, 4, size=(3, 7))
        pts = QPSK.points[idx]
        a = rmp_replica(pts, protect=0)
        b = hard_replica(pts, protect=0)
        np.testing.assert_allclose(a.values, b.values)


class TestCancel:
    def test_zero_replica_identity(self):
        rng = np.random.default_rng(7)
        r = random_means(rng, (6,), scale=1.0)
        g = random_means(rng, (3,), scale=1.0)
        rep = soft_replica(np.zeros((3, 6), dtype=complex), protect=0)
        np.testing.assert_array_equal(cancel(r, g, rep), r)

    def test_perfect_cancellation(self):
        rng = np.random.default_rng(8)
        g = random_means(rng, (3,), scale=1.0)
        s = QPSK.points[rng.integers(0, 4, size=(3, 10))]
        r = g @ s  # noiseless received at one BS
        rep = genie_replica(s, protected_rows=(0,))
        residual = cancel(r, g, rep)
        np.testing.assert_allclose(residual, g[0] * s[0], atol=1e-12)

    def test_matches_subtraction_oracle(self):
        rng = np.random.default_rng(9)
        r = random_means(rng, (2, 5), scale=1.0)
        g = random_means(rng, (2, 4), scale=1.0)
        vals = random_means(rng, (4, 5))
        rep = soft_replica(vals, protect=3)
        got = cancel(r, g, rep)
        want = r - np.einsum("ij,jk->ik", g, rep.values)
        np.testing.assert_allclose(got, want, atol=1e-12)

    def test_soft_equals_hard_at_certainty(self):
        rng = np.random.default_rng(10)
        pts = QPSK.points[rng.integers(0, 4, size=(3, 6))]
        r = random_means(rng, (6,), scale=1.0)
        g = random_means(rng, (3,), scale=1.0)
        np.testing.assert_allclose(
            cancel(r, g, soft_replica(pts, protect=1)),
            cancel(r, g, hard_replica(pts, protect=1)), atol=1e-12)

    def test_protected_position_never_contributes(self):
        rng = np.random.default_rng(11)
        means = random_means(rng, (4, 5))
        r = random_means(rng, (5,), scale=1.0)
        g = random_means(rng, (4,), scale=1.0)
        base = cancel(r, g, soft_replica(means, protect=2))
        perturbed = means.copy()
        perturbed[2] += 10.0 + 3.0j
        again = cancel(r, g, soft_replica(perturbed, protect=2))
        np.testing.assert_array_equal(base, again)

    def test_dimension_mismatch(self):
        rep = soft_replica(np.zeros((3, 4), dtype=complex), protect=0)
        with pytest.raises(ValueError):
            cancel(np.zeros(4, dtype=complex), np.zeros(2, dtype=complex), rep)


class TestEffectiveVariance:
    def test_all_zero_variances(self):
        g = np.array([1.0, 0.5j])
        out = effective_variance(g, np.zeros((2, 3)), 0.1)
        np.testing.assert_allclose(out, 0.1 * np.ones(3))

    def test_stated_rule(self):
        # one interferer with variance 1 through |g|^2 = 0.5, noise 0.1 -> 0.6
        g = np.array([np.sqrt(0.5), 0.0])
        v = np.array([[1.0], [0.0]])
        out = effective_variance(g, v, 0.1)
        np.testing.assert_allclose(out, [0.6])

    def test_residual_power_after_perfect_cancellation(self):
        # residual = g_d s_d + v: power rho_d |h_d|^2 sigma_s^2 + sigma_v^2
        rng = np.random.default_rng(12)
        sigma_v2 = 0.2
        acc = 0.0
        n = 4000
        for _ in range(n):
            h = (rng.standard_normal() + 1j * rng.standard_normal()) / np.sqrt(2)
            s = QPSK.points[rng.integers(0, 4)]
            v = np.sqrt(sigma_v2 / 2) * (rng.standard_normal() + 1j * rng.standard_normal())
            acc += abs(h * s + v) ** 2
        assert acc / n == pytest.approx(1.0 + sigma_v2, rel=0.03)
