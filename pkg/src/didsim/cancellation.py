"""Interference-replica construction and cancellation.

A replica spans all K*N_T transmit streams of a frame, with the protected
stream(s) zeroed so that subtracting it never touches the signal under
detection.  Soft replicas hold posterior means, hard and list replicas hold
exact constellation points.
"""

from dataclasses import dataclass

import numpy as np

from .coding import QPSK, slice_symbols


@dataclass
class ReplicaVector:
    values: np.ndarray          # (n_streams, n_sym) complex
    kind: str                   # soft | hard | list | genie
    protected: tuple            # zeroed stream indices


def soft_replica(soft_means, protect):
    """Replica of posterior means with stream `protect` zeroed."""
    values = np.array(soft_means, dtype=np.complex128)
    values[protect] = 0.0
    return ReplicaVector(values, "soft", (protect,))


def hard_replica(soft_means, protect, constellation=QPSK):
    """Replica of sliced (nearest-point) decisions with stream `protect` zeroed."""
    means = np.asarray(soft_means, dtype=np.complex128)
    _, points = slice_symbols(means, constellation)
    points[protect] = 0.0
    return ReplicaVector(points, "hard", (protect,))


def user_based_replica(soft_means, protect_user, n_t):
    """Zero all N_T streams of the protected user; other users' streams stay.

    soft_means: (K*n_t, n_sym); streams of user k occupy rows k*n_t..(k+1)*n_t-1.
    """
    values = np.array(soft_means, dtype=np.complex128)
    rows = tuple(range(protect_user * n_t, (protect_user + 1) * n_t))
    values[list(rows)] = 0.0
    return ReplicaVector(values, "soft", rows)


def stream_based_replica(soft_means, protect_user, protect_antenna, n_t):
    """Zero a single stream; every other stream, own user's included, remains."""
    values = np.array(soft_means, dtype=np.complex128)
    row = protect_user * n_t + protect_antenna
    values[row] = 0.0
    return ReplicaVector(values, "soft", (row,))


def rmp_replica(selected_points, protect, rows=None):
    """Replica from a selected joint candidate (exact constellation points).

    selected_points: (n_streams, n_sym) complex points of the chosen
    candidate vector.  `protect` zeroes one stream, or the row range given
    by `rows` for multi-stream protection.
    """
    values = np.array(selected_points, dtype=np.complex128)
    protected = tuple(rows) if rows is not None else (protect,)
    values[list(protected)] = 0.0
    return ReplicaVector(values, "list", protected)


def genie_replica(true_symbols, protected_rows):
    """Perfect-knowledge replica: the transmitted symbols, protected rows zeroed."""
    values = np.array(true_symbols, dtype=np.complex128)
    values[list(protected_rows)] = 0.0
    return ReplicaVector(values, "genie", tuple(protected_rows))


def cancel(received, gains, replica):
    """Subtract the replica's contribution: r - g u (scalar) or r - G u (MIMO).

    received: (n_sym,) with gains (n_streams,) or (n_streams, n_sym), or
    (n_r, n_sym) with gains (n_r, n_streams) or (n_r, n_streams, n_sym);
    a trailing time axis on the gains means per-symbol fading.
    """
    r = np.asarray(received, dtype=np.complex128)
    g = np.asarray(gains, dtype=np.complex128)
    u = replica.values
    expect = g.shape[0] if r.ndim == 1 else g.shape[1]
    if expect != u.shape[0]:
        raise ValueError(f"gain streams {expect} != replica streams {u.shape[0]}")
    if r.ndim == 1:
        if g.ndim == 1:
            return r - g @ u
        return r - np.einsum("st,st->t", g, u)
    if g.ndim == 2:
        return r - g @ u
    return r - np.einsum("rst,st->rt", g, u)


def effective_variance(gains, residual_variances, noise_variance,
                       time_varying=False):
    """Residual observation variance after cancellation.

    residual_variances: (n_streams, n_sym) per-stream symbol variances left
    after cancellation -- posterior variances for soft-cancelled streams,
    0 for hard/list/genie-cancelled streams, sigma_s^2 for streams treated
    as noise, and 0 at the protected stream.  Returns (n_sym,) for a row
    gain vector or (n_r, n_sym) per receive antenna.  Set time_varying for
    gains carrying a trailing per-symbol axis.
    """
    g2 = np.abs(np.asarray(gains, dtype=np.complex128)) ** 2
    v = np.asarray(residual_variances, dtype=np.float64)
    if not time_varying:
        return noise_variance + g2 @ v
    if g2.ndim == 2:
        return noise_variance + np.einsum("st,st->t", g2, v)
    return noise_variance + np.einsum("rst,st->rt", g2, v)
