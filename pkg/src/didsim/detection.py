"""Per-BS soft demapping, symbol statistics and candidate-list machinery.

All frame-level functions are vectorized over the symbol (time) axis: LLR
arrays have shape (J, n_sym) for one stream or (S*J, n_sym) for S jointly
demapped streams, posteriors have shape (A, n_sym).
"""

from dataclasses import dataclass

import numpy as np

from .coding import LLR_CLIP, QPSK


class ListExplosionError(RuntimeError):
    """Joint candidate list exceeded the configured cap."""


def bit_prob(llr, sign):
    """P[b = sign] for sign in {+1, -1}: 0.5 * (1 + sign * tanh(llr / 2))."""
    lam = np.clip(llr, -LLR_CLIP, LLR_CLIP)
    return 0.5 * (1.0 + sign * np.tanh(lam / 2.0))


def symbol_posterior(llrs, constellation=QPSK):
    """Symbol probabilities from per-bit LLRs (independent-bit product).

    llrs: (J,) or (J, n_sym).  Returns (A,) or (A, n_sym); each column sums
    to 1 by construction.
    """
    lam = np.clip(np.asarray(llrs, dtype=np.float64), -LLR_CLIP, LLR_CLIP)
    squeeze = lam.ndim == 1
    if squeeze:
        lam = lam[:, None]
    if lam.shape[0] != constellation.bits_per_symbol:
        raise ValueError(f"expected {constellation.bits_per_symbol} LLRs per symbol")
    t = np.tanh(lam / 2.0)                       # (J, N)
    probs = np.prod(0.5 * (1.0 + constellation.signs[:, :, None] * t[:, None, :]),
                    axis=0)                      # (A, N)
    return probs[:, 0] if squeeze else probs


def soft_symbol(posterior, constellation=QPSK):
    """Posterior mean, variance and second moment of the symbol.

    posterior: (A,) or (A, n_sym).  Returns (mean, variance, second_moment).
    """
    p = np.asarray(posterior, dtype=np.float64)
    mean = constellation.points @ p
    second = (np.abs(constellation.points) ** 2) @ p
    var = np.maximum(second - np.abs(mean) ** 2, 0.0)
    return mean, var, second


@dataclass
class CandidateList:
    """Sorted tentative decisions for one symbol of one stream."""
    indices: np.ndarray     # constellation indices, probability descending
    probs: np.ndarray
    threshold: float

    def __len__(self):
        return self.indices.size


@dataclass
class CandidateLists:
    """Per-symbol candidate lists for one stream over a frame (struct of arrays)."""
    entries: np.ndarray     # (A, n_sym) constellation indices, sorted
    probs: np.ndarray       # (A, n_sym) matching probabilities
    lengths: np.ndarray     # (n_sym,) retained list lengths
    threshold: float

    def at(self, i):
        n = self.lengths[i]
        return CandidateList(self.entries[:n, i].copy(), self.probs[:n, i].copy(),
                             self.threshold)


def build_candidate_list(posterior, rho_th, tau_max=None):
    """Candidate list for a single symbol: sort, threshold, truncate.

    Points are ordered by probability descending with ties broken by
    ascending constellation index; entries below rho_th are dropped, the
    remainder truncated to tau_max.  The argmax survives even when nothing
    clears the threshold.
    """
    p = np.asarray(posterior, dtype=np.float64)
    a = p.size
    if tau_max is None:
        tau_max = a
    if not (0.0 <= rho_th < 1.0):
        raise ValueError("rho_th must lie in [0, 1)")
    if not (1 <= tau_max <= a):
        raise ValueError("tau_max must lie in [1, A]")
    order = np.lexsort((np.arange(a), -p))
    n = int(np.sum(p[order] >= rho_th))
    n = max(1, min(n, tau_max))
    return CandidateList(order[:n], p[order[:n]], float(rho_th))


def build_candidate_lists(posteriors, rho_th, tau_max=None):
    """Vectorized build_candidate_list over a frame: posteriors (A, n_sym)."""
    p = np.asarray(posteriors, dtype=np.float64)
    a, n_sym = p.shape
    if tau_max is None:
        tau_max = a
    if not (0.0 <= rho_th < 1.0):
        raise ValueError("rho_th must lie in [0, 1)")
    if not (1 <= tau_max <= a):
        raise ValueError("tau_max must lie in [1, A]")
    idx = np.broadcast_to(np.arange(a)[:, None], p.shape)
    order = np.lexsort((idx, -p), axis=0)
    probs_sorted = np.take_along_axis(p, order, axis=0)
    lengths = np.sum(probs_sorted >= rho_th, axis=0)
    lengths = np.clip(lengths, 1, tau_max).astype(np.int64)
    return CandidateLists(order.astype(np.int64), probs_sorted, lengths, float(rho_th))


def list_size(lists):
    """Joint list size: product of the per-stream list lengths."""
    gamma = 1
    for entry in lists:
        n = len(entry)
        if n < 1:
            raise ValueError("candidate lists must be nonempty")
        gamma *= n
    return gamma


def enumerate_candidates(entry_lists, cap=None):
    """All combinations of per-stream candidate indices, stream 1 outermost.

    entry_lists: sequence of 1-D index arrays (one per stream).  Returns an
    (S, Gamma) int array in deterministic lexicographic order.  Raises
    ListExplosionError when Gamma exceeds the cap.
    """
    gamma = list_size(entry_lists)
    if cap is not None and gamma > cap:
        raise ListExplosionError(f"joint list size {gamma} exceeds cap {cap}")
    grids = np.meshgrid(*[np.asarray(e, dtype=np.int64) for e in entry_lists],
                        indexing="ij")
    return np.stack([g.reshape(-1) for g in grids])


class JointEnumeration:
    """Precomputed enumeration of |A|^S joint candidates for S streams.

    Used by the joint demapper; ordering matches enumerate_candidates with
    full per-stream lists (stream 1 outermost).
    """

    def __init__(self, constellation, n_streams):
        a = constellation.size
        j = constellation.bits_per_symbol
        self.indices = enumerate_candidates([np.arange(a)] * n_streams)  # (S, C)
        self.points = constellation.points[self.indices]                 # (S, C)
        # signs[b, c] for the b-th of the S*J bits of candidate c
        self.signs = (constellation.signs[:, self.indices]
                      .transpose(1, 0, 2).reshape(n_streams * j, -1))
        self.plus_masks = self.signs > 0
        self.n_streams = n_streams
        self.constellation = constellation


_JOINT_CACHE = {}


def joint_enumeration(constellation, n_streams):
    key = (constellation.name, constellation.size, n_streams)
    if key not in _JOINT_CACHE:
        _JOINT_CACHE[key] = JointEnumeration(constellation, n_streams)
    return _JOINT_CACHE[key]


def _logsumexp(x, axis=0):
    m = np.max(x, axis=axis, keepdims=True)
    return (m + np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True))).squeeze(axis)


def demap_llr(observation, gain, sigma_eff2, priors=None, constellation=QPSK,
              max_log=False):
    """A-posteriori bit LLRs for S jointly demapped streams.

    Parameters
    ----------
    observation : complex array (n_sym,) or (D, n_sym)
        Post-cancellation observation; D receive dimensions.
    gain : complex scalar, (D,), (D, S) or (D, S, n_sym)
        Effective channel of the demapped stream(s); a trailing time axis
        means the channel fades per symbol.
    sigma_eff2 : float, (n_sym,) or (D, n_sym)
        Effective noise variance (uncancelled interference included).
    priors : (S*J, n_sym) or None
        A-priori LLRs from the decoder; None means all zero.
    max_log : bool
        Replace log-sum-exp with max, mirroring the max-log decoder.

    Returns (S*J, n_sym) LLRs.  Each output excludes the bit's own prior
    (extrinsic with respect to that bit, channel plus other-bit priors).
    """
    obs = np.atleast_2d(np.asarray(observation, dtype=np.complex128))  # (D, N)
    g = np.asarray(gain, dtype=np.complex128)
    if g.ndim == 0:
        g = g.reshape(1, 1)
    elif g.ndim == 1:
        g = g.reshape(-1, 1)
    d, s = g.shape[0], g.shape[1]
    if obs.shape[0] != d:
        raise ValueError(f"observation dim {obs.shape[0]} != gain rows {d}")
    n_sym = obs.shape[1]
    if g.ndim == 3 and g.shape[2] != n_sym:
        raise ValueError("per-symbol gain must match the observation length")
    sig = np.asarray(sigma_eff2, dtype=np.float64)
    if np.any(sig <= 0.0):
        raise ValueError("sigma_eff2 must be positive")
    if sig.ndim == 0:
        sig = np.full((d, 1), float(sig))
    elif sig.ndim == 1 and sig.size == n_sym:
        sig = np.broadcast_to(sig, (d, n_sym))
    elif sig.ndim == 1 and sig.size == d:
        sig = sig[:, None]
    enum = joint_enumeration(constellation, s)
    j_total = s * constellation.bits_per_symbol
    if priors is None:
        priors = np.zeros((j_total, n_sym))
    else:
        priors = np.asarray(priors, dtype=np.float64)
        if priors.shape[0] != j_total:
            raise ValueError(f"expected {j_total} prior rows, got {priors.shape[0]}")

    if g.ndim == 3:
        gp = np.einsum("dst,sc->dct", g, enum.points)   # (D, C, N)
    else:
        gp = (g @ enum.points)[:, :, None]              # (D, C, 1)
    diff = obs[:, None, :] - gp                         # (D, C, N)
    metric = -np.sum((diff.real ** 2 + diff.imag ** 2) / sig[:, None, :], axis=0)
    total = metric + 0.5 * (enum.signs.T @ priors)      # (C, N)

    reduce = (lambda x: np.max(x, axis=0)) if max_log else _logsumexp
    out = np.empty((j_total, n_sym))
    for b in range(j_total):
        mask = enum.plus_masks[b]
        out[b] = reduce(total[mask]) - reduce(total[~mask]) - priors[b]
    return out
