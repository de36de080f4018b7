"""Multi-cell uplink channel: coupling matrix, fading, transmission, noise.

The network has M base stations and K single- or multi-antenna users, one
desired user per BS.  Link powers are collected in an M x K coupling matrix
whose row m holds the desired-link power rho_d at column m, rho_n at the
strong-interferer columns and rho_o elsewhere.  Fading is i.i.d. CN(0,1),
quasi-static over one coded frame.
"""

from dataclasses import dataclass, field

import numpy as np

SYMBOL_POWER = 1.0  # sigma_s^2; all powers are relative to it

MAX_STRONG_INTERFERERS = 5


class TopologyError(ValueError):
    pass


@dataclass
class CouplingMatrix:
    entries: np.ndarray                 # (M, K) link powers
    strong_sets: list                   # per BS, tuple of strong user indices
    weak_sets: list                     # per BS, tuple of weak user indices
    rho_d: float
    rho_n: float
    rho_o: float
    zeta: int

    @property
    def n_bs(self):
        return self.entries.shape[0]

    @property
    def n_users(self):
        return self.entries.shape[1]

    def desired_user(self, m):
        return m


@dataclass
class ChannelRealization:
    """One fading realization.

    With n_symbols=None the arrays are (M, K) and (M*n_r, K*n_t): one
    quasi-static draw.  With n_symbols=T a trailing time axis is added and
    every symbol slot fades independently.
    """
    gains: np.ndarray                   # (M, K[, T]) sqrt(rho) * h
    fading: np.ndarray                  # (M, K[, T]) CN(0,1) draws
    coupling: CouplingMatrix
    n_t: int = 1
    n_r: int = 1
    mimo_block: np.ndarray = field(default=None)  # (M*n_r, K*n_t[, T])

    def bs_row(self, m):
        """Channel seen by BS m: gains row or block-row, time axis preserved."""
        if self.n_t == 1 and self.n_r == 1:
            return self.gains[m]
        return self.mimo_block[m * self.n_r:(m + 1) * self.n_r]


@dataclass
class NoiseSpec:
    variance: float                     # sigma_v^2, total complex variance

    @property
    def per_dimension(self):
        return self.variance / 2.0


def build_coupling_matrix(n_bs, n_users, zeta, rho_d=1.0, rho_n=0.5, rho_o=0.0):
    """Cyclic coupling matrix: BS m hears users (m+1 .. m+zeta) mod K strongly.

    Requires the symmetric layout n_bs == n_users with one desired user per
    BS; at most five strong interferers per BS.
    """
    if n_bs != n_users:
        raise TopologyError(f"symmetric layout requires M == K, got {n_bs} != {n_users}")
    if zeta > n_users - 1:
        raise TopologyError(f"zeta={zeta} exceeds K-1={n_users - 1}")
    if zeta > MAX_STRONG_INTERFERERS:
        raise TopologyError(f"zeta={zeta} exceeds the limit of {MAX_STRONG_INTERFERERS}")
    if zeta < 0:
        raise TopologyError("zeta must be nonnegative")
    if rho_d <= 0 or rho_n < 0 or rho_o < 0:
        raise ValueError("link powers must be nonnegative (rho_d positive)")

    entries = np.full((n_bs, n_users), rho_o, dtype=np.float64)
    strong_sets = []
    weak_sets = []
    for m in range(n_bs):
        strong = tuple(sorted((m + 1 + i) % n_users for i in range(zeta)))
        entries[m, list(strong)] = rho_n
        entries[m, m] = rho_d
        strong_sets.append(strong)
        weak_sets.append(tuple(k for k in range(n_users) if k != m and k not in strong))
    return CouplingMatrix(entries, strong_sets, weak_sets,
                          float(rho_d), float(rho_n), float(rho_o), int(zeta))


def _cn01(rng, shape):
    """i.i.d. CN(0,1) draws."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def draw_channel(coupling, rng, n_t=1, n_r=1, n_symbols=None):
    """Draw a network fading realization.

    n_symbols=None gives one quasi-static draw; n_symbols=T appends a time
    axis with an independent draw per symbol slot.
    """
    if n_t < 1 or n_r < 1:
        raise ValueError("antenna counts must be >= 1")
    m, k = coupling.entries.shape
    shape = (m, k) if n_symbols is None else (m, k, n_symbols)
    scale = np.sqrt(coupling.entries)
    fading = _cn01(rng, shape)
    gains = (scale if n_symbols is None else scale[:, :, None]) * fading
    if n_t == 1 and n_r == 1:
        block = gains
    else:
        if n_symbols is None:
            draws = _cn01(rng, (m, n_r, k, n_t))
            block = (scale[:, None, :, None] * draws).reshape(m * n_r, k * n_t)
        else:
            draws = _cn01(rng, (m, n_r, k, n_t, n_symbols))
            block = (scale[:, None, :, None, None] * draws).reshape(
                m * n_r, k * n_t, n_symbols)
    return ChannelRealization(gains, fading, coupling, n_t, n_r, block)


def calibrate_noise(target_snr_db, coupling):
    """Noise variance for a target desired-link SNR (unit symbol power)."""
    sigma_v2 = coupling.rho_d * SYMBOL_POWER / (10.0 ** (target_snr_db / 10.0))
    return NoiseSpec(sigma_v2)


def compute_sir(coupling, m):
    """Average signal-to-interference ratio at BS m, in dB.

    Returns math.inf when the row carries no interference power.
    """
    strong = len(coupling.strong_sets[m]) * coupling.rho_n
    weak = len(coupling.weak_sets[m]) * coupling.rho_o
    interference = (strong + weak) * SYMBOL_POWER
    if interference == 0.0:
        return np.inf
    return 10.0 * np.log10(coupling.rho_d * SYMBOL_POWER / interference)


def transmit(channel, symbols, noise, rng):
    """Propagate one block of symbols through the network.

    symbols: (K*n_t,) or (K*n_t, n_sym) complex array, unit average power.
    Returns (M*n_r,) or (M*n_r, n_sym): G s + v with v complex Gaussian of
    total variance sigma_v^2 per receive dimension.  A per-symbol channel
    (time axis on the realization) applies G[..., i] to symbol column i.
    """
    s = np.asarray(symbols, dtype=np.complex128)
    g = channel.mimo_block
    if s.shape[0] != g.shape[1]:
        raise ValueError(f"symbol dimension {s.shape[0]} != channel inputs {g.shape[1]}")
    if g.ndim == 3:
        if s.ndim != 2 or s.shape[1] != g.shape[2]:
            raise ValueError("per-symbol channel needs matching symbol columns")
        clean = np.einsum("rst,st->rt", g, s)
    else:
        clean = g @ s
    if noise.variance == 0.0:
        return clean
    v = np.sqrt(noise.variance) * _cn01(rng, clean.shape)
    return clean + v
