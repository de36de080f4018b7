"""Per-user bit pipeline: convolutional encoding, interleaving, symbol mapping.

LLR sign convention throughout the package: Lambda = log P(b=+1)/P(b=-1),
where a bit value 0 maps to the antipodal symbol +1 and a bit value 1 maps
to -1.  Positive LLRs therefore favour bit 0.
"""

from dataclasses import dataclass

import numpy as np
from numba import njit

# Clip applied to LLRs before they enter exp/tanh expressions.
LLR_CLIP = 30.0

# Rate-1/2 feedforward convolutional code, generators [7, 5] octal,
# constraint length 3.  State s = (u[k-1] << 1) | u[k-2].
CODE_MEMORY = 2
_N_STATES = 1 << CODE_MEMORY

_NEG = -1.0e18


def _build_trellis():
    nxt = np.zeros((_N_STATES, 2), dtype=np.int64)
    out_sign = np.zeros((_N_STATES, 2, 2), dtype=np.float64)
    for s in range(_N_STATES):
        u1 = (s >> 1) & 1
        u2 = s & 1
        for u in (0, 1):
            c1 = u ^ u1 ^ u2          # generator 111
            c2 = u ^ u2               # generator 101
            out_sign[s, u, 0] = 1.0 - 2.0 * c1
            out_sign[s, u, 1] = 1.0 - 2.0 * c2
            nxt[s, u] = (u << 1) | u1
    return nxt, out_sign


_NEXT_STATE, _OUT_SIGN = _build_trellis()


def message_length(block_length):
    """Message bits per coded block of `block_length` bits (zero-tail)."""
    if block_length % 2 != 0:
        raise ValueError("coded block length must be even for a rate-1/2 code")
    n_msg = block_length // 2 - CODE_MEMORY
    if n_msg < 1:
        raise ValueError(f"block length {block_length} too short")
    return n_msg


def encode(message_bits):
    """Encode with the zero-tail [7,5] code; output interlaces (g1, g2) pairs.

    Returns an int8 array of length 2 * (len(message_bits) + 2).
    """
    m = np.asarray(message_bits, dtype=np.int8).ravel()
    if m.size == 0:
        raise ValueError("empty message")
    u = np.concatenate([m, np.zeros(CODE_MEMORY, dtype=np.int8)])
    n = u.size
    c1 = np.convolve(u, np.array([1, 1, 1], dtype=np.int8))[:n] % 2
    c2 = np.convolve(u, np.array([1, 0, 1], dtype=np.int8))[:n] % 2
    coded = np.empty(2 * n, dtype=np.int8)
    coded[0::2] = c1
    coded[1::2] = c2
    return coded


@njit(cache=True)
def _bcjr_maxlog(chan, n_msg, next_state, out_sign):
    """Max-log forward/backward recursion over the zero-tail trellis.

    chan: (n_in, 2) per-step LLRs for the two coded bits.
    Returns (coded_posterior (n_in, 2), message_posterior (n_msg,)).
    """
    n_in = chan.shape[0]
    n_states = next_state.shape[0]

    alpha = np.full((n_in + 1, n_states), _NEG)
    alpha[0, 0] = 0.0
    for k in range(n_in):
        for s in range(n_states):
            a = alpha[k, s]
            if a <= _NEG:
                continue
            for u in range(2):
                g = 0.5 * (out_sign[s, u, 0] * chan[k, 0]
                           + out_sign[s, u, 1] * chan[k, 1])
                ns = next_state[s, u]
                cand = a + g
                if cand > alpha[k + 1, ns]:
                    alpha[k + 1, ns] = cand

    beta = np.full((n_in + 1, n_states), _NEG)
    beta[n_in, 0] = 0.0
    for k in range(n_in - 1, -1, -1):
        for s in range(n_states):
            best = _NEG
            for u in range(2):
                b = beta[k + 1, next_state[s, u]]
                if b <= _NEG:
                    continue
                g = 0.5 * (out_sign[s, u, 0] * chan[k, 0]
                           + out_sign[s, u, 1] * chan[k, 1])
                cand = g + b
                if cand > best:
                    best = cand
            beta[k, s] = best

    coded_post = np.empty((n_in, 2))
    msg_post = np.empty(n_msg)
    for k in range(n_in):
        m0_c1 = _NEG
        m1_c1 = _NEG
        m0_c2 = _NEG
        m1_c2 = _NEG
        m0_u = _NEG
        m1_u = _NEG
        for s in range(n_states):
            a = alpha[k, s]
            if a <= _NEG:
                continue
            for u in range(2):
                b = beta[k + 1, next_state[s, u]]
                if b <= _NEG:
                    continue
                g = 0.5 * (out_sign[s, u, 0] * chan[k, 0]
                           + out_sign[s, u, 1] * chan[k, 1])
                metric = a + g + b
                if out_sign[s, u, 0] > 0.0:
                    if metric > m0_c1:
                        m0_c1 = metric
                else:
                    if metric > m1_c1:
                        m1_c1 = metric
                if out_sign[s, u, 1] > 0.0:
                    if metric > m0_c2:
                        m0_c2 = metric
                else:
                    if metric > m1_c2:
                        m1_c2 = metric
                if u == 0:
                    if metric > m0_u:
                        m0_u = metric
                else:
                    if metric > m1_u:
                        m1_u = metric
        coded_post[k, 0] = m0_c1 - m1_c1
        coded_post[k, 1] = m0_c2 - m1_c2
        if k < n_msg:
            msg_post[k] = m0_u - m1_u

    return coded_post, msg_post


@dataclass
class DecodeResult:
    extrinsic: np.ndarray        # on coded bits, encoder order
    coded_posterior: np.ndarray  # on coded bits, encoder order
    message_llrs: np.ndarray     # a posteriori on message bits
    hard_bits: np.ndarray        # sign decisions on message bits


def maxlog_map_decode(llr_coded):
    """Max-log MAP decode of coded-bit LLRs (encoder order, zero-tail).

    Parameters
    ----------
    llr_coded : array of length 2*(n_msg + 2)
        A-priori LLRs on the coded bits.

    Returns
    -------
    DecodeResult with extrinsic coded-bit LLRs (posterior minus input),
    the full coded-bit posterior, message-bit a posteriori LLRs and hard
    message decisions (LLR < 0 -> bit 1).
    """
    llrs = np.asarray(llr_coded, dtype=np.float64).ravel()
    if llrs.size % 2 != 0 or llrs.size < 2 * (CODE_MEMORY + 1):
        raise ValueError(f"bad coded LLR frame length {llrs.size}")
    n_in = llrs.size // 2
    n_msg = n_in - CODE_MEMORY
    chan = llrs.reshape(n_in, 2)
    coded_post, msg_post = _bcjr_maxlog(chan, n_msg, _NEXT_STATE, _OUT_SIGN)
    coded_post = coded_post.ravel()
    return DecodeResult(
        extrinsic=coded_post - llrs,
        coded_posterior=coded_post,
        message_llrs=msg_post,
        hard_bits=(msg_post < 0).astype(np.int8),
    )


def bruteforce_maxlog_decode(llr_coded):
    """Exhaustive-codeword max-log MAP reference (message length <= ~16).

    Enumerates every message, scores each codeword against the coded-bit
    LLRs, and takes per-bit maxima.  Independent of the trellis recursion.
    """
    llrs = np.asarray(llr_coded, dtype=np.float64).ravel()
    n_msg = llrs.size // 2 - CODE_MEMORY
    if n_msg > 16:
        raise ValueError("brute force limited to short messages")
    msgs = ((np.arange(2 ** n_msg)[:, None] >> np.arange(n_msg)[None, ::-1]) & 1)
    codewords = np.stack([encode(m) for m in msgs.astype(np.int8)])
    scores = (1.0 - 2.0 * codewords) @ (llrs / 2.0)
    msg_post = np.empty(n_msg)
    for k in range(n_msg):
        mask = msgs[:, k] == 0
        msg_post[k] = scores[mask].max() - scores[~mask].max()
    coded_post = np.empty(llrs.size)
    for k in range(llrs.size):
        mask = codewords[:, k] == 0
        coded_post[k] = scores[mask].max() - scores[~mask].max()
    return coded_post, msg_post


class Interleaver:
    """Seeded pseudo-random bit permutation, fixed for its lifetime."""

    def __init__(self, length, seed):
        self.length = int(length)
        rng = np.random.default_rng(seed)
        self.perm = rng.permutation(self.length)
        self._inv = np.empty(self.length, dtype=np.int64)
        self._inv[self.perm] = np.arange(self.length)

    def interleave(self, x):
        x = np.asarray(x)
        if x.shape[-1] != self.length:
            raise ValueError(f"length {x.shape[-1]} != permutation length {self.length}")
        return x[..., self.perm]

    def deinterleave(self, x):
        x = np.asarray(x)
        if x.shape[-1] != self.length:
            raise ValueError(f"length {x.shape[-1]} != permutation length {self.length}")
        return x[..., self._inv]


class Constellation:
    """Unit-power complex constellation with per-point bit labels.

    bits[q] holds the J-bit label of point q; signs[j, q] = 1 - 2*bits[q, j]
    is the antipodal value of bit j on point q.
    """

    def __init__(self, name, points, bits):
        self.name = name
        self.points = np.asarray(points, dtype=np.complex128)
        self.bits = np.asarray(bits, dtype=np.int8)
        self.size = self.points.size
        self.bits_per_symbol = self.bits.shape[1]
        self.signs = (1.0 - 2.0 * self.bits.astype(np.float64)).T.copy()
        power = np.mean(np.abs(self.points) ** 2)
        if not np.isclose(power, 1.0):
            raise ValueError(f"constellation {name} has mean power {power}")

    def __repr__(self):
        return f"Constellation({self.name!r}, {self.size} points)"


def qpsk():
    """Gray-labelled QPSK: (b1 b2) -> ((1-2*b1) + 1j*(1-2*b2)) / sqrt(2)."""
    bits = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=np.int8)
    points = ((1.0 - 2.0 * bits[:, 0]) + 1j * (1.0 - 2.0 * bits[:, 1])) / np.sqrt(2.0)
    return Constellation("qpsk", points, bits)


QPSK = qpsk()


def map_symbols(bits, constellation=QPSK):
    """Map a bit sequence (length divisible by J) to constellation points."""
    b = np.asarray(bits).ravel()
    j = constellation.bits_per_symbol
    if b.size % j != 0:
        raise ValueError(f"bit count {b.size} not divisible by {j}")
    weights = 1 << np.arange(j - 1, -1, -1)
    idx = b.reshape(-1, j) @ weights
    return constellation.points[idx]


def slice_symbols(values, constellation=QPSK):
    """Nearest-point quantization; ties resolve to the smallest point index.

    Returns (indices, points).
    """
    v = np.asarray(values, dtype=np.complex128)
    d = np.abs(v[..., None] - constellation.points) ** 2
    idx = np.argmin(d, axis=-1)
    return idx, constellation.points[idx]


def symbols_to_bits(indices, constellation=QPSK):
    """Inverse of the label mapping: point indices -> flat bit sequence."""
    idx = np.asarray(indices, dtype=np.int64)
    return constellation.bits[idx].ravel()
