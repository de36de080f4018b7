"""Network-level cooperation: per-frame iteration schedule, message exchange,
selection unit and backhaul metering.

One frame is processed in `network_iterations` rounds.  Each round every BS
cancels interference with the replicas assembled from the previous round's
messages, runs its local turbo loop (demapper and decoder exchanging
extrinsic LLRs), and then publishes strategy-specific messages:

  soft      quantized posterior-mean symbols of the desired user
  hard      sliced constellation indices (flipped symbols only after round 1)
  list      sorted candidate lists plus per-BS minimum-partial-weight votes,
            combined by the selection unit
  genie     perfect replicas of the true symbols (bound; nothing exchanged)
  isolated  no cooperation; interference is treated as Gaussian noise
  joint     centralized exhaustive joint-ML reference over all streams

A BS reads only its own received block and channel row; everything else
arrives through the messages of the previous round, so per-BS processing is
replayable from (received, gains, messages).
"""

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

import math

from .cancellation import ReplicaVector, cancel, effective_variance
from .channel import SYMBOL_POWER
from .coding import CODE_MEMORY, LLR_CLIP, QPSK, maxlog_map_decode, slice_symbols
from .detection import (
    ListExplosionError,
    build_candidate_lists,
    demap_llr,
    enumerate_candidates,
    soft_symbol,
    symbol_posterior,
)

STRATEGIES = ("soft", "hard", "list", "genie", "isolated", "joint")
SU_MODES = ("plurality", "local", "sum")

KIND_SOFT = "soft_symbol"
KIND_HARD = "hard_index"
KIND_LIST = "list_index"
KIND_ARGMIN = "argmin_index"
KIND_PARTIAL = "partial_weight"

_TURBO_FIXED_POINT_TOL = 1e-8


@dataclass
class IterationSchedule:
    network_iterations: int = 4
    turbo_iterations: int = 10

    def __post_init__(self):
        if self.network_iterations < 1 or self.turbo_iterations < 1:
            raise ValueError("iteration counts must be >= 1")


@dataclass
class DetectorConfig:
    rho_th: float = 0.2
    tau_max: int = 4
    gamma_cap: int = 4096
    su_mode: str = "sum"
    quantizer_bits: int = 6
    mimo_mode: str = "user"          # user | stream cancellation granularity
    demap_max_log: bool = False

    def __post_init__(self):
        if self.su_mode not in SU_MODES:
            raise ValueError(f"unknown SU mode {self.su_mode!r}")
        if self.mimo_mode not in ("user", "stream"):
            raise ValueError(f"unknown MIMO mode {self.mimo_mode!r}")


class BackhaulLedger:
    """Per (iteration, link, kind) bit counters."""

    def __init__(self):
        self.counts = {}

    def record(self, iteration, link, kind, bits):
        bits = int(bits)
        if bits < 0:
            raise ValueError("bit counts must be nonnegative")
        if bits == 0:
            return
        key = (iteration, link, kind)
        self.counts[key] = self.counts.get(key, 0) + bits

    def total(self, kind=None, iteration=None, link=None):
        return sum(b for (it, lk, kd), b in self.counts.items()
                   if (kind is None or kd == kind)
                   and (iteration is None or it == iteration)
                   and (link is None or lk == link))

    def per_iteration(self):
        out = {}
        for (it, _, _), b in self.counts.items():
            out[it] = out.get(it, 0) + b
        return out

    def merge(self, other):
        for key, b in other.counts.items():
            self.counts[key] = self.counts.get(key, 0) + b


@dataclass
class BsNode:
    index: int
    desired_user: int
    received: np.ndarray          # (T,) scalar case or (n_r, T)
    gains: np.ndarray             # (S[,T]) scalar case or (n_r, S[,T])
    noise_variance: float
    n_t: int = 1
    prior_llrs: np.ndarray = field(default=None)   # persisted decoder extrinsic

    @property
    def own_streams(self):
        return tuple(range(self.desired_user * self.n_t,
                           (self.desired_user + 1) * self.n_t))

    @property
    def time_varying(self):
        base = 1 if self.received.ndim == 1 else 2
        return self.gains.ndim == base + 1

    def stream_gain(self, streams):
        """Normalized gain of the given streams: (D, len) or (D, len, T)."""
        idx = list(streams)
        if self.received.ndim == 1:
            sel = self.gains[idx]
            return sel[None] if sel.ndim == 2 else sel[None, :]
        return self.gains[:, idx]

    def gain_cols(self, streams, cols):
        """(D, len(streams), len(cols)) gain slice at the given symbol slots."""
        idx = list(streams)
        n = len(cols)
        if self.received.ndim == 1:
            sel = self.gains[idx]
            if sel.ndim == 2:
                return sel[:, cols][None]
            return np.broadcast_to(sel[None, :, None], (1, len(idx), n))
        sel = self.gains[:, idx]
        if sel.ndim == 3:
            return sel[:, :, cols]
        return np.broadcast_to(sel[:, :, None], sel.shape + (n,))

    def observation_cols(self, cols):
        """(D, len(cols)) received samples at the given symbol slots."""
        return np.atleast_2d(self.received[..., cols])


@dataclass
class SelectionUnit:
    """Stores candidate lists and per-BS votes; combines them per su_mode.

    The plurality and local modes keep the unit computation-free (it only
    stores and forwards indices); the sum mode is the exact-ML oracle and
    its reports are metered as non-reduced.
    """
    mode: str = "plurality"

    def select(self, reports):
        return su_select(self.mode, reports)


def su_select(mode, reports, sizes=None, voters=None):
    """Combine per-BS reports into the selected candidate index per BS.

    reports: one entry per BS -- the local argmin index (plurality/local
    modes) or the full partial-weight vector (sum mode).  Returns an (M,)
    int array of selected global candidate indices; entries are identical
    except in local mode.  A missing (None) report raises.

    Plurality is coordinate-wise when `sizes` (per-stream list lengths) is
    given: each stream's digit is the majority among the reports of the
    BSs listed in voters[stream] (all BSs when voters is None), ties to
    the smaller digit, i.e. the more probable entry.  Whole-index voting
    collapses to its tie-break almost always once reports disagree in any
    coordinate, so the entry-wise count is used instead; without `sizes`
    the whole-index vote (ties to the smallest index) is applied.
    """
    if mode not in SU_MODES:
        raise ValueError(f"unknown SU mode {mode!r}")
    if len(reports) == 0 or any(r is None for r in reports):
        raise ValueError("missing BS report")
    if mode == "sum":
        total = np.sum(np.vstack(reports), axis=0)
        winner = int(np.argmin(total))
        return np.full(len(reports), winner, dtype=np.int64)
    indices = [int(r) for r in reports]
    if mode == "local":
        return np.asarray(indices, dtype=np.int64)
    if sizes is None:
        counts = Counter(indices)
        best = max(counts.items(), key=lambda kv: (kv[1], -kv[0]))[0]
        return np.full(len(reports), best, dtype=np.int64)
    sizes = np.asarray(sizes, dtype=np.int64)
    digit_table = np.vstack([_index_to_digits(idx, sizes) for idx in indices])
    winner = 0
    for s, size in enumerate(sizes):
        eligible = (digit_table[:, s] if voters is None
                    else digit_table[list(voters[s]), s])
        tally = np.bincount(eligible, minlength=size)
        winner = winner * size + int(np.argmax(tally))
    return np.full(len(reports), winner, dtype=np.int64)


def quantize_soft(values, bits, limit=None):
    """Uniform per-real-dimension quantizer over the constellation hull."""
    if limit is None:
        limit = 1.0 / np.sqrt(2.0)
    levels = 1 << bits
    delta = 2.0 * limit / levels

    def q(x):
        idx = np.clip(np.floor((x + limit) / delta), 0, levels - 1)
        return -limit + (idx + 0.5) * delta

    v = np.asarray(values, dtype=np.complex128)
    return q(v.real) + 1j * q(v.imag)


def meter_soft(ledger, iteration, links, n_symbols, quantizer_bits):
    """Quantized soft means: 2*q bits per symbol per link, every iteration."""
    for link in links:
        ledger.record(iteration, link, KIND_SOFT, 2 * quantizer_bits * n_symbols)


def meter_hard(ledger, iteration, links, decisions, previous, bits_per_symbol):
    """Constellation indices: full frame at round 1, flipped symbols after."""
    if previous is None:
        n = decisions.size
    else:
        n = int(np.sum(decisions != previous))
    for link in links:
        ledger.record(iteration, link, KIND_HARD, bits_per_symbol * n)


def meter_rmp(ledger, iteration, link, lists, prev_lists, bits_per_symbol):
    """Candidate-list upload for one stream: J bits per retained entry,
    delta-encoded (symbols whose list is unchanged cost nothing)."""
    if prev_lists is None:
        changed = np.ones(lists.lengths.size, dtype=bool)
    else:
        changed = _lists_changed(lists, prev_lists)
    bits = bits_per_symbol * int(np.sum(lists.lengths[changed]))
    ledger.record(iteration, link, KIND_LIST, bits)
    return bits


def _lists_changed(new, old):
    a = new.entries.shape[0]
    rows = np.arange(a)[:, None]
    new_masked = np.where(rows < new.lengths[None, :], new.entries, -1)
    old_masked = np.where(rows < old.lengths[None, :], old.entries, -1)
    return ~(np.all(new_masked == old_masked, axis=0)
             & (new.lengths == old.lengths))


def meter_argmin_reports(ledger, iteration, bs_indices, gammas):
    """ceil(log2 Gamma) bits per reporting BS per symbol."""
    bits = sum((int(g) - 1).bit_length() for g in gammas)
    for m in bs_indices:
        ledger.record(iteration, f"bs{m}->su", KIND_ARGMIN, bits)


def meter_partial_reports(ledger, iteration, bs_indices, gammas, quantizer_bits):
    """Sum-of-partials oracle: 2*q bits per candidate per BS (non-reduced)."""
    bits = int(2 * quantizer_bits * sum(int(g) for g in gammas))
    for m in bs_indices:
        ledger.record(iteration, f"bs{m}->su", KIND_PARTIAL, bits)


def average_gamma(frame_gamma_means):
    """Per-iteration mean joint list size over frames.

    frame_gamma_means: iterable of (network_iterations,) arrays.
    """
    stack = np.vstack(list(frame_gamma_means))
    return np.nanmean(stack, axis=0)


@dataclass
class NetworkSetup:
    """Per-run context shared by every frame; the fading realization of the
    current frame is attached with attach_channel()."""
    coupling: object
    constellation: object
    interleavers: list            # one per user
    n_t: int = 1
    n_r: int = 1
    channel_gains: np.ndarray = None
    channel_block: np.ndarray = None

    @property
    def n_users(self):
        return self.coupling.n_users

    @property
    def n_bs(self):
        return self.coupling.n_bs

    @property
    def n_streams(self):
        return self.n_users * self.n_t

    def user_streams(self, k):
        return tuple(range(k * self.n_t, (k + 1) * self.n_t))


def attach_channel(setup, channel):
    setup.channel_gains = channel.gains
    setup.channel_block = channel.mimo_block
    return setup


@dataclass
class FrameTruth:
    symbols: np.ndarray           # (n_streams, T) transmitted points
    message_bits: np.ndarray      # (K, n_msg)


@dataclass
class FrameResult:
    decisions: np.ndarray         # (K, n_msg) hard message bits
    ledger: BackhaulLedger
    # mean tentative decisions (list entries) per symbol, one value per
    # network iteration; nan for strategies without candidate lists
    gamma_means: np.ndarray
    failed: bool = False
    failure_reason: str = ""
    ber_trace: np.ndarray = None  # per-iteration BER against truth


def build_nodes(setup, received, noise_variance):
    """Split the network receive block into per-BS nodes.

    received: (M*n_r, T); requires attach_channel() to have been called.
    """
    r = np.atleast_2d(np.asarray(received, dtype=np.complex128))
    if r.shape[0] != setup.n_bs * setup.n_r:
        raise ValueError("received rows do not match M * n_r")
    nodes = []
    for m in range(setup.n_bs):
        if setup.n_r == 1 and setup.n_t == 1:
            gains = setup.channel_gains[m]
            rx = r[m]
        else:
            gains = setup.channel_block[m * setup.n_r:(m + 1) * setup.n_r]
            rx = r[m * setup.n_r:(m + 1) * setup.n_r]
        nodes.append(BsNode(index=m, desired_user=setup.coupling.desired_user(m),
                            received=rx, gains=gains,
                            noise_variance=float(noise_variance), n_t=setup.n_t))
    return nodes


def _grid(flat, rows):
    """Coded-bit frame (Q,) -> (rows, T) grid of time-major symbols."""
    return flat.reshape(-1, rows).T


def _flat(grid):
    return grid.T.ravel()


def turbo_detect(node, observation, sigma_eff2, gain, interleaver, schedule,
                 constellation=QPSK, max_log_demap=False):
    """Local turbo loop at one BS: demap -> decode, extrinsic exchanged.

    observation: post-cancellation (T,) or (n_r, T); gain: the effective
    channel of the jointly demapped stream(s).  Persists the decoder
    extrinsic in node.prior_llrs and returns (coded posterior grid,
    message a-posteriori LLRs).  Exits early once the extrinsic reaches a
    fixed point: the remaining iterations would reproduce it.
    """
    rows = node.prior_llrs.shape[0]
    lam2 = node.prior_llrs
    dec = None
    for _ in range(schedule.turbo_iterations):
        lam1 = demap_llr(observation, gain, sigma_eff2, lam2, constellation,
                         max_log=max_log_demap)
        np.clip(lam1, -LLR_CLIP, LLR_CLIP, out=lam1)
        dec = maxlog_map_decode(interleaver.deinterleave(_flat(lam1)))
        new_lam2 = _grid(np.clip(interleaver.interleave(dec.extrinsic),
                                 -LLR_CLIP, LLR_CLIP), rows)
        done = np.max(np.abs(new_lam2 - lam2)) < _TURBO_FIXED_POINT_TOL
        lam2 = new_lam2
        if done:
            break
    node.prior_llrs = lam2
    coded_post = _grid(interleaver.interleave(dec.coded_posterior), rows)
    return coded_post, dec.message_llrs


def stream_posteriors(coded_post_grid, n_streams, constellation=QPSK):
    """Split an (S*J, T) posterior-LLR grid into per-stream symbol posteriors."""
    j = constellation.bits_per_symbol
    return [symbol_posterior(coded_post_grid[s * j:(s + 1) * j], constellation)
            for s in range(n_streams)]


class _ReplicaState:
    """Replica means and residual variances one BS holds for the next round."""

    def __init__(self, setup, n_sym):
        n = setup.n_streams
        self.means = np.zeros((n, n_sym), dtype=np.complex128)
        # Streams with no estimate yet count at full symbol power.
        self.variances = np.full((n, n_sym), SYMBOL_POWER)

    def protect(self, rows):
        means = self.means.copy()
        variances = self.variances.copy()
        means[list(rows)] = 0.0
        variances[list(rows)] = 0.0
        return means, variances


def _decisions(message_llrs):
    return np.vstack([(llrs < 0).astype(np.int8) for llrs in message_llrs])


def run_frame(strategy, nodes, setup, schedule, config, truth=None):
    """Process one transmitted frame under a cooperation strategy.

    Returns a FrameResult with per-user hard decisions, the backhaul
    ledger, the per-iteration mean joint list size (list strategy) and,
    when truth is given, a per-iteration BER trace.  A joint list size
    above config.gamma_cap marks the frame failed instead of silently
    degrading it.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    if strategy == "genie" and truth is None:
        raise ValueError("genie strategy requires the transmitted symbols")

    n_users = setup.n_users
    n_sym = nodes[0].received.shape[-1]
    j = setup.constellation.bits_per_symbol
    n_msg = setup.interleavers[0].length // 2 - CODE_MEMORY
    ledger = BackhaulLedger()
    n_iter = schedule.network_iterations
    gamma_means = np.full(n_iter, np.nan)

    for node in nodes:
        if node.prior_llrs is None:
            node.prior_llrs = np.zeros((setup.n_t * j, n_sym))

    if strategy == "joint":
        return _run_joint(nodes, setup, schedule, config, ledger, truth)

    states = [_ReplicaState(setup, n_sym) for _ in range(setup.n_bs)]
    if strategy == "genie":
        for state in states:
            state.means = np.array(truth.symbols, dtype=np.complex128)
            state.variances = np.zeros_like(state.variances)

    prev_hard = [None] * n_users
    prev_lists = None
    if strategy == "list":
        # delta-encoding baseline: the threshold applied to uniform
        # posteriors, known network-wide before anything is sent
        uniform = build_candidate_lists(
            np.full((setup.constellation.size, n_sym),
                    1.0 / setup.constellation.size),
            config.rho_th, config.tau_max)
        prev_lists = [uniform] * setup.n_streams
    message_llrs = [None] * n_users
    posteriors = [None] * n_users
    ber_trace = np.full(n_iter, np.nan) if truth is not None else None

    for it in range(1, n_iter + 1):
        # --- candidate lists travel at the start of each round; round 1
        # --- works from the uniform decoder state
        if strategy == "list":
            try:
                gamma_means[it - 1] = _exchange_list(
                    it, nodes, setup, config, states, posteriors, prev_lists,
                    ledger)
            except ListExplosionError as exc:
                decisions = (np.zeros((n_users, n_msg), dtype=np.int8)
                             if message_llrs[0] is None
                             else _decisions(message_llrs))
                return FrameResult(decisions=decisions, ledger=ledger,
                                   gamma_means=gamma_means, failed=True,
                                   failure_reason=str(exc), ber_trace=ber_trace)

        # --- detection at every BS, from the latest replicas ---
        for m, node in enumerate(nodes):
            own = node.own_streams
            means, variances = states[m].protect(own)
            if config.mimo_mode == "stream" and setup.n_t > 1:
                coded_post, msg_llrs = _stream_detect(
                    node, setup, schedule, config, means, variances)
            else:
                residual = cancel(node.received, node.gains,
                                  ReplicaVector(means, strategy, own))
                sigma_eff = effective_variance(node.gains, variances,
                                               node.noise_variance,
                                               node.time_varying)
                coded_post, msg_llrs = turbo_detect(
                    node, residual, sigma_eff, node.stream_gain(own),
                    setup.interleavers[node.desired_user], schedule,
                    setup.constellation, config.demap_max_log)
            posteriors[node.desired_user] = coded_post
            message_llrs[node.desired_user] = msg_llrs

        if ber_trace is not None:
            ber_trace[it - 1] = np.mean(_decisions(message_llrs)
                                        != truth.message_bits)

        # --- soft/hard estimates travel after detection ---
        if strategy == "soft":
            _exchange_soft(it, setup, config, states, posteriors, ledger)
        elif strategy == "hard":
            _exchange_hard(it, setup, config, states, posteriors, prev_hard,
                           ledger)

    return FrameResult(decisions=_decisions(message_llrs), ledger=ledger,
                       gamma_means=gamma_means, ber_trace=ber_trace)


def _listeners(setup, user):
    """BSs that hear `user` strongly (its serving BS exchanges with them)."""
    return [m for m in range(setup.n_bs)
            if user in setup.coupling.strong_sets[m]]


def _exchange_soft(it, setup, config, states, posteriors, ledger):
    for k in range(setup.n_users):
        listeners = _listeners(setup, k)
        if not listeners:
            continue
        rows = setup.user_streams(k)
        posts = stream_posteriors(posteriors[k], setup.n_t, setup.constellation)
        quantized = np.vstack([
            quantize_soft(soft_symbol(p, setup.constellation)[0],
                          config.quantizer_bits)
            for p in posts])
        meter_soft(ledger, it, [f"bs{k}->bs{m}" for m in listeners],
                   quantized.size, config.quantizer_bits)
        residual_var = np.maximum(SYMBOL_POWER - np.abs(quantized) ** 2, 0.0)
        for m in listeners:
            states[m].means[list(rows)] = quantized
            states[m].variances[list(rows)] = residual_var


def _exchange_hard(it, setup, config, states, posteriors, prev_hard, ledger):
    for k in range(setup.n_users):
        listeners = _listeners(setup, k)
        rows = setup.user_streams(k)
        posts = stream_posteriors(posteriors[k], setup.n_t, setup.constellation)
        means = np.vstack([soft_symbol(p, setup.constellation)[0] for p in posts])
        idx, points = slice_symbols(means, setup.constellation)
        if listeners:
            meter_hard(ledger, it, [f"bs{k}->bs{m}" for m in listeners],
                       idx, prev_hard[k], setup.constellation.bits_per_symbol)
            for m in listeners:
                states[m].means[list(rows)] = points
                states[m].variances[list(rows)] = 0.0
        prev_hard[k] = idx


def _exchange_list(it, nodes, setup, config, states, posteriors, prev_lists,
                   ledger):
    """Candidate-list exchange and SU selection.

    Lists come from the current decoder state -- the uniform one before the
    first detection round, so the first selection runs over the full
    constellation product.  Returns the mean list length per symbol.
    """
    const = setup.constellation
    j = const.bits_per_symbol
    n_streams = setup.n_streams
    n_sym = nodes[0].received.shape[-1]

    if posteriors[0] is None:
        lists = list(prev_lists)  # threshold applied to uniform posteriors
    else:
        lists = []
        for k in range(setup.n_users):
            for p in stream_posteriors(posteriors[k], setup.n_t, const):
                lists.append(build_candidate_lists(p, config.rho_th,
                                                   config.tau_max))

    lengths = np.vstack([cl.lengths for cl in lists])          # (S, T)
    gammas = [math.prod(int(x) for x in lengths[:, i]) for i in range(n_sym)]

    for k in range(setup.n_users):
        for s in setup.user_streams(k):
            meter_rmp(ledger, it, f"bs{k}->su", lists[s], prev_lists[s], j)
            prev_lists[s] = lists[s]

    reporting = [node.index for node in nodes]
    if config.su_mode == "sum":
        if max(gammas) > config.gamma_cap:
            raise ListExplosionError(
                f"joint list size {max(gammas)} exceeds cap {config.gamma_cap}")
        meter_partial_reports(ledger, it, reporting, gammas,
                              config.quantizer_bits)
    else:
        meter_argmin_reports(ledger, it, reporting, gammas)

    selected = _su_selection(nodes, setup, config, lists, lengths,
                             np.asarray(gammas) == 1)
    for m in range(setup.n_bs):
        states[m].means = selected[m]
        states[m].variances = np.zeros((n_streams, n_sym))
        unheard = _unheard_streams(setup, m)
        if unheard:
            states[m].means[list(unheard)] = 0.0
            states[m].variances[list(unheard)] = SYMBOL_POWER

    return float(np.mean(lengths))


def _su_selection(nodes, setup, config, lists, lengths, singleton):
    """Selected candidate points per BS: (M, S, T).

    Symbols are grouped by their per-stream list-length pattern so the
    per-BS partial weights and the combining rule run vectorized per group.
    """
    const = setup.constellation
    n_streams, n_sym = lengths.shape
    selected = np.empty((setup.n_bs, n_streams, n_sym), dtype=np.complex128)
    top_entries = np.vstack([cl.entries[0] for cl in lists])   # (S, T)
    selected[:, :, singleton] = const.points[top_entries[:, singleton]][None]

    multi = np.nonzero(~singleton)[0]
    if multi.size == 0:
        return selected
    patterns, inverse = np.unique(lengths[:, multi], axis=1, return_inverse=True)
    for g in range(patterns.shape[1]):
        cols = multi[inverse == g]
        sizes = patterns[:, g]
        if config.su_mode == "sum":
            win = _group_sum_digits(nodes, setup, config, lists, sizes, cols)
            per_bs = [win] * setup.n_bs
        else:
            bs_digits = [_group_argmin_digits(node, setup, config, lists,
                                              sizes, cols)
                         for node in nodes]
            if config.su_mode == "local":
                per_bs = bs_digits
            else:
                win = _group_majority_digits(bs_digits, setup, sizes, cols.size)
                per_bs = [win] * setup.n_bs
        for m in range(setup.n_bs):
            for s in range(n_streams):
                entries = lists[s].entries[per_bs[m][s], cols]
                selected[m, s, cols] = const.points[entries]
    return selected


def _group_argmin_digits(node, setup, config, lists, sizes, cols):
    """Local minimum-partial-weight digits of one BS for a symbol group.

    The argmin runs over the sub-enumeration of the BS's nonzero-gain
    streams (absent streams pinned to their most probable entry), which
    equals the argmin over the full lexicographic enumeration at a cost of
    the audible list product only.  Returns (S, n) digit rows.
    """
    const = setup.constellation
    aud = _audible_streams(node, setup)
    digits = enumerate_candidates([np.arange(sizes[s]) for s in aud],
                                  cap=config.gamma_cap)       # (A', C)
    n_cand = digits.shape[1]
    pts = np.empty((len(aud), n_cand, cols.size), dtype=np.complex128)
    for pos, s in enumerate(aud):
        entries = lists[s].entries[digits[pos][:, None], cols[None, :]]
        pts[pos] = const.points[entries]
    gain = node.gain_cols(aud, cols)                          # (D, A', n)
    pred = np.einsum("dan,acn->dcn", gain, pts)
    obs = node.observation_cols(cols)                         # (D, n)
    dist = np.sum(np.abs(obs[:, None, :] - pred) ** 2, axis=0)
    best = np.argmin(dist, axis=0)                            # (n,)
    out = np.zeros((sizes.size, cols.size), dtype=np.int64)
    out[list(aud)] = digits[:, best]
    return out


def _group_sum_digits(nodes, setup, config, lists, sizes, cols):
    """Sum-of-partials (exact ML over the joint list) digits for a group."""
    const = setup.constellation
    n_streams = sizes.size
    digits = enumerate_candidates([np.arange(s) for s in sizes],
                                  cap=config.gamma_cap)       # (S, C)
    n_cand = digits.shape[1]
    pts = np.empty((n_streams, n_cand, cols.size), dtype=np.complex128)
    for s in range(n_streams):
        entries = lists[s].entries[digits[s][:, None], cols[None, :]]
        pts[s] = const.points[entries]
    total = 0.0
    for node in nodes:
        gain = node.gain_cols(range(n_streams), cols)         # (D, S, n)
        pred = np.einsum("dsn,scn->dcn", gain, pts)
        obs = node.observation_cols(cols)
        total = total + np.sum(np.abs(obs[:, None, :] - pred) ** 2, axis=0)
    best = np.argmin(total, axis=0)
    return digits[:, best]


def _group_majority_digits(bs_digits, setup, sizes, n_cols):
    """Entry-wise plurality: each stream's digit is the majority among the
    BSs that hear its user, ties to the smaller digit (more probable)."""
    win = np.zeros((sizes.size, n_cols), dtype=np.int64)
    for s in range(sizes.size):
        user = s // setup.n_t
        voters = [m for m in range(setup.n_bs)
                  if setup.coupling.entries[m, user] > 0.0]
        votes = np.stack([bs_digits[m][s] for m in voters])   # (V, n)
        tallies = np.stack([(votes == d).sum(axis=0) for d in range(sizes[s])])
        win[s] = np.argmax(tallies, axis=0)
    return win


def _unheard_streams(setup, m):
    """Streams of users with zero coupling power at BS m (left as noise)."""
    out = []
    for k in range(setup.n_users):
        if k == setup.coupling.desired_user(m):
            continue
        if setup.coupling.entries[m, k] == 0.0:
            out.extend(setup.user_streams(k))
    return out


def _audible_streams(node, setup):
    m = node.index
    out = []
    for k in range(setup.n_users):
        if setup.coupling.entries[m, k] > 0.0:
            out.extend(setup.user_streams(k))
    return out


def _index_to_digits(index, sizes):
    digits = np.zeros(sizes.size, dtype=np.int64)
    rem = int(index)
    for s in range(sizes.size - 1, -1, -1):
        digits[s] = rem % sizes[s]
        rem //= sizes[s]
    return digits


def _stream_detect(node, setup, schedule, config, means, variances):
    """Stream-based cancellation: each own stream demapped alone, the own
    sibling streams re-cancelled from local posteriors every turbo pass."""
    const = setup.constellation
    j = const.bits_per_symbol
    own = node.own_streams
    lam2 = node.prior_llrs
    interleaver = setup.interleavers[node.desired_user]
    dec = None
    for _ in range(schedule.turbo_iterations):
        own_stats = [soft_symbol(symbol_posterior(lam2[p * j:(p + 1) * j], const),
                                 const)
                     for p in range(len(own))]
        lam1 = np.empty_like(lam2)
        for pos, s in enumerate(own):
            m2 = means.copy()
            v2 = variances.copy()
            for pos2, s2 in enumerate(own):
                m2[s2] = own_stats[pos2][0]
                v2[s2] = own_stats[pos2][1]
            m2[s] = 0.0
            v2[s] = 0.0
            residual = cancel(node.received, node.gains,
                              ReplicaVector(m2, "soft", (s,)))
            sigma_eff = effective_variance(node.gains, v2, node.noise_variance,
                                           node.time_varying)
            lam1[pos * j:(pos + 1) * j] = demap_llr(
                residual, node.stream_gain((s,)), sigma_eff,
                lam2[pos * j:(pos + 1) * j], const,
                max_log=config.demap_max_log)
        np.clip(lam1, -LLR_CLIP, LLR_CLIP, out=lam1)
        dec = maxlog_map_decode(interleaver.deinterleave(_flat(lam1)))
        new_lam2 = _grid(np.clip(interleaver.interleave(dec.extrinsic),
                                 -LLR_CLIP, LLR_CLIP), lam2.shape[0])
        done = np.max(np.abs(new_lam2 - lam2)) < _TURBO_FIXED_POINT_TOL
        lam2 = new_lam2
        if done:
            break
    node.prior_llrs = lam2
    coded_post = _grid(interleaver.interleave(dec.coded_posterior), lam2.shape[0])
    return coded_post, dec.message_llrs


def _run_joint(nodes, setup, schedule, config, ledger, truth):
    """Centralized exhaustive joint-ML reference (unlimited backhaul)."""
    const = setup.constellation
    j = const.bits_per_symbol
    n_streams = setup.n_streams
    n_users = setup.n_users
    if const.size ** n_streams > config.gamma_cap:
        raise ListExplosionError(
            f"joint reference needs {const.size ** n_streams} candidates, "
            f"cap is {config.gamma_cap}")
    obs = np.vstack([np.atleast_2d(node.received) for node in nodes])
    gain = setup.channel_block
    sigma = nodes[0].noise_variance
    n_sym = obs.shape[1]

    lam2 = np.zeros((n_streams * j, n_sym))
    message_llrs = [None] * n_users
    n_iter = schedule.network_iterations
    ber_trace = np.full(n_iter, np.nan) if truth is not None else None
    for it in range(n_iter):
        for _ in range(schedule.turbo_iterations):
            lam1 = demap_llr(obs, gain, sigma, lam2, const,
                             max_log=config.demap_max_log)
            np.clip(lam1, -LLR_CLIP, LLR_CLIP, out=lam1)
            new_lam2 = np.empty_like(lam2)
            for k in range(n_users):
                rows = slice(k * setup.n_t * j, (k + 1) * setup.n_t * j)
                il = setup.interleavers[k]
                dec = maxlog_map_decode(il.deinterleave(_flat(lam1[rows])))
                new_lam2[rows] = _grid(np.clip(il.interleave(dec.extrinsic),
                                               -LLR_CLIP, LLR_CLIP),
                                       setup.n_t * j)
                message_llrs[k] = dec.message_llrs
            done = np.max(np.abs(new_lam2 - lam2)) < _TURBO_FIXED_POINT_TOL
            lam2 = new_lam2
            if done:
                break
        if ber_trace is not None:
            ber_trace[it] = np.mean(_decisions(message_llrs) != truth.message_bits)
    return FrameResult(decisions=_decisions(message_llrs), ledger=ledger,
                       gamma_means=np.full(n_iter, np.nan), ber_trace=ber_trace)
