import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from didsim import coding
from didsim.coding import (
    QPSK,
    Interleaver,
    bruteforce_maxlog_decode,
    encode,
    map_symbols,
    maxlog_map_decode,
    message_length,
    slice_symbols,
)


class TestEncoder:
    def test_block_arithmetic(self):
        assert message_length(1024) == 510
        coded = encode(np.zeros(510, dtype=int))
        assert coded.size == 1024

    def test_all_zero_message(self):
        assert not encode(np.zeros(64, dtype=int)).any()

    def test_impulse_response(self):
        coded = encode([1, 0, 0])
        pairs = coded.reshape(-1, 2)
        expected = np.array([[1, 1], [1, 0], [1, 1], [0, 0], [0, 0]])
        np.testing.assert_array_equal(pairs, expected)

    def test_linearity(self):
        rng = np.random.default_rng(7)
        m1 = rng.integers(0, 2, 40)
        m2 = rng.integers(0, 2, 40)
        np.testing.assert_array_equal(
            encode(m1) ^ encode(m2), encode(m1 ^ m2))

    def test_empty_message_rejected(self):
        with pytest.raises(ValueError):
            encode([])


class TestInterleaver:
    @given(st.integers(min_value=2, max_value=300), st.integers(min_value=0, max_value=2**31))
    @settings(max_examples=30, deadline=None)
    def test_round_trip(self, n, seed):
        il = Interleaver(n, seed)
        x = np.arange(n)
        np.testing.assert_array_equal(il.deinterleave(il.interleave(x)), x)

    def test_determinism(self):
        a = Interleaver(64, 5)
        b = Interleaver(64, 5)
        np.testing.assert_array_equal(a.perm, b.perm)

    def test_not_identity(self):
        il = Interleaver(128, 0)
        x = np.arange(128)
        assert not np.array_equal(il.interleave(il.interleave(x)), x)

    def test_length_mismatch(self):
        il = Interleaver(16, 0)
        with pytest.raises(ValueError):
            il.interleave(np.zeros(15))


class TestQpsk:
    def test_unit_power(self):
        assert np.allclose(np.abs(QPSK.points), 1.0)

    def test_labelling_table(self):
        s = 1 / np.sqrt(2)
        np.testing.assert_allclose(map_symbols([0, 0]), [s + 1j * s])
        np.testing.assert_allclose(map_symbols([0, 1]), [s - 1j * s])
        np.testing.assert_allclose(map_symbols([1, 0]), [-s + 1j * s])
        np.testing.assert_allclose(map_symbols([1, 1]), [-s - 1j * s])

    def test_slice_inverts_map(self):
        for b1 in (0, 1):
            for b2 in (0, 1):
                sym = map_symbols([b1, b2])
                _, pts = slice_symbols(sym)
                np.testing.assert_allclose(pts, sym)

    def test_slice_nearest(self):
        _, pts = slice_symbols(np.array([0.9 + 0.8j]))
        np.testing.assert_allclose(pts, [(1 + 1j) / np.sqrt(2)])

    def test_gray_adjacency(self):
        # geometric neighbours (same real or same imag part) differ in one bit
        for qa in range(4):
            for qb in range(qa + 1, 4):
                dist = abs(QPSK.points[qa] - QPSK.points[qb])
                nbits = int(np.sum(QPSK.bits[qa] != QPSK.bits[qb]))
                if np.isclose(dist, np.sqrt(2)):
                    assert nbits == 1
                else:
                    assert nbits == 2


class TestMaxLogDecoder:
    def test_noiseless_round_trip(self):
        rng = np.random.default_rng(11)
        for _ in range(1000):
            msg = rng.integers(0, 2, 48)
            llrs = 20.0 * (1.0 - 2.0 * encode(msg))
            res = maxlog_map_decode(llrs)
            np.testing.assert_array_equal(res.hard_bits, msg)

    def test_all_zero_input_gives_zero_output(self):
        res = maxlog_map_decode(np.zeros(2 * (16 + 2)))
        np.testing.assert_array_equal(res.message_llrs, np.zeros(16))

    def test_extrinsic_plus_prior_is_posterior(self):
        rng = np.random.default_rng(3)
        llrs = rng.normal(size=2 * (32 + 2))
        res = maxlog_map_decode(llrs)
        np.testing.assert_allclose(res.extrinsic + llrs, res.coded_posterior,
                                   rtol=0, atol=1e-12)

    @pytest.mark.parametrize("n_msg", [4, 8, 10])
    def test_matches_bruteforce(self, n_msg):
        rng = np.random.default_rng(n_msg)
        for _ in range(40):
            llrs = rng.normal(scale=3.0, size=2 * (n_msg + 2))
            res = maxlog_map_decode(llrs)
            bf_coded, bf_msg = bruteforce_maxlog_decode(llrs)
            np.testing.assert_allclose(res.message_llrs, bf_msg, rtol=0, atol=1e-9)
            np.testing.assert_allclose(res.coded_posterior, bf_coded, rtol=0, atol=1e-9)

    def test_bad_length_rejected(self):
        with pytest.raises(ValueError):
            maxlog_map_decode(np.zeros(17))
