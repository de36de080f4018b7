"""Reproducible Monte Carlo experiment harness.

A sweep is driven by a SimConfig (flat key=value file plus CLI overrides).
Frames are seeded by a counter-based split of the master seed, so frame i
of a given SNR point is identical regardless of batching, worker layout or
which strategies share the run; strategies at the same point are paired on
the same channel/noise realizations.
"""

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .channel import build_coupling_matrix, calibrate_noise, draw_channel, transmit
from .coding import QPSK, Interleaver, encode, map_symbols, message_length
from .network import (
    BackhaulLedger,
    DetectorConfig,
    FrameTruth,
    IterationSchedule,
    NetworkSetup,
    attach_channel,
    build_nodes,
    run_frame,
)

_BATCH = 32  # stopping rule evaluated on fixed-size batches


@dataclass
class SimConfig:
    # topology
    n_bs: int = 4
    n_users: int = 4
    zeta: int = 2
    rho_d: float = 1.0
    rho_n: float = 0.5
    rho_o: float = 0.0
    n_t: int = 1
    n_r: int = 1
    phi: int = 1
    # channel
    coherence: str = "symbol"         # symbol (i.i.d. per slot) | frame
    # code and constellation selections
    code: str = "conv75"
    constellation: str = "qpsk"
    block_length: int = 1024
    # strategy and selection unit
    strategy: str = "list"            # comma-separated ids are swept in order
    su_mode: str = "plurality"
    rho_th: float = 0.2
    tau_max: int = 4
    gamma_cap: int = 4096
    quantizer_bits: int = 6
    mimo_mode: str = "user"
    # schedule
    network_iterations: int = 4
    turbo_iterations: int = 10
    # sweep
    snr_db: tuple = (0.0, 2.0, 4.0, 6.0, 8.0, 10.0)
    # stopping
    min_frames: int = 200
    min_bit_errors: int = 100
    max_frames: int = 2000
    # reproducibility
    seed: int = 1

    def __post_init__(self):
        if isinstance(self.snr_db, (int, float)):
            self.snr_db = (float(self.snr_db),)
        self.snr_db = tuple(float(s) for s in self.snr_db)
        if not self.snr_db:
            raise ValueError("snr_db list must be nonempty")
        for name in ("n_bs", "n_users", "n_t", "n_r", "phi", "block_length",
                     "network_iterations", "turbo_iterations", "min_frames",
                     "max_frames"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.code != "conv75":
            raise ValueError(f"unknown code {self.code!r}")
        if self.constellation != "qpsk":
            raise ValueError(f"unknown constellation {self.constellation!r}")
        if self.coherence not in ("symbol", "frame"):
            raise ValueError(f"unknown coherence {self.coherence!r}")

    def strategies(self):
        return tuple(s.strip() for s in self.strategy.split(",") if s.strip())


@dataclass
class ResultRow:
    strategy: str
    snr_db: float
    frames: int
    bit_errors: int
    ber: float
    gamma_means: tuple              # per network iteration, empty if n/a
    total_backhaul_bits: int
    backhaul_bits_per_symbol: float
    failed_frames: int = 0
    low_confidence: bool = False


@dataclass
class PointResult:
    """Raw accumulators of one (strategy, SNR) point, for tests/diagnostics."""
    row: ResultRow
    frame_bers: np.ndarray          # per successful frame
    gamma_iter_means: np.ndarray    # per network iteration (nan if n/a)
    ber_traces: np.ndarray = None   # (frames, n_iter) when collected

    @property
    def std_error(self):
        """Monte Carlo standard error of the BER estimate (frame-level)."""
        n = self.frame_bers.size
        if n < 2:
            return np.inf
        return float(np.std(self.frame_bers, ddof=1) / np.sqrt(n))


def _build_run_context(config):
    coupling = build_coupling_matrix(config.n_bs, config.n_users, config.zeta,
                                     config.rho_d, config.rho_n, config.rho_o)
    n_msg = message_length(config.block_length)
    interleavers = [Interleaver(config.block_length, [config.seed, 0, k])
                    for k in range(config.n_users)]
    setup = NetworkSetup(coupling=coupling, constellation=QPSK,
                         interleavers=interleavers, n_t=config.n_t,
                         n_r=config.n_r)
    schedule = IterationSchedule(config.network_iterations,
                                 config.turbo_iterations)
    det = DetectorConfig(rho_th=config.rho_th, tau_max=config.tau_max,
                         gamma_cap=config.gamma_cap, su_mode=config.su_mode,
                         quantizer_bits=config.quantizer_bits,
                         mimo_mode=config.mimo_mode)
    return coupling, setup, schedule, det, n_msg


def _frame_rng(config, snr_db, frame_index):
    point_key = int(round(snr_db * 1000.0)) % (2 ** 32)
    return np.random.default_rng([config.seed, 1, point_key, frame_index])


def generate_frame(config, setup, noise, rng, n_msg):
    """Draw one frame: messages, coded symbols, fading, received block."""
    k = config.n_users
    qs = config.block_length // setup.constellation.bits_per_symbol
    t = qs // config.n_t
    messages = rng.integers(0, 2, size=(k, n_msg), dtype=np.int8)
    symbols = np.empty((k * config.n_t, t), dtype=np.complex128)
    for u in range(k):
        coded = encode(messages[u])
        syms = map_symbols(setup.interleavers[u].interleave(coded),
                           setup.constellation)
        symbols[u * config.n_t:(u + 1) * config.n_t] = syms.reshape(t, config.n_t).T
    n_slots = t if config.coherence == "symbol" else None
    channel = draw_channel(setup.coupling, rng, config.n_t, config.n_r, n_slots)
    received = transmit(channel, symbols, noise, rng)
    return FrameTruth(symbols, messages), channel, received


def run_point(config, strategy, snr_db, collect_traces=False):
    """Monte Carlo accumulation of one (strategy, SNR) point."""
    coupling, setup, schedule, det, n_msg = _build_run_context(config)
    noise = calibrate_noise(snr_db, coupling)
    qs = config.block_length // setup.constellation.bits_per_symbol

    frames = 0
    failed = 0
    errors = 0
    frame_bers = []
    traces = []
    gamma_sum = np.zeros(config.network_iterations)
    gamma_count = np.zeros(config.network_iterations, dtype=np.int64)
    ledger = BackhaulLedger()

    frame_index = 0
    while True:
        for _ in range(_BATCH):
            rng = _frame_rng(config, snr_db, frame_index)
            frame_index += 1
            truth, channel, received = generate_frame(config, setup, noise,
                                                      rng, n_msg)
            attach_channel(setup, channel)
            nodes = build_nodes(setup, received, noise.variance)
            result = run_frame(strategy, nodes, setup, schedule, det,
                               truth=truth)
            if result.failed:
                failed += 1
                continue
            frames += 1
            frame_errors = int(np.sum(result.decisions != truth.message_bits))
            errors += frame_errors
            frame_bers.append(frame_errors / truth.message_bits.size)
            ledger.merge(result.ledger)
            ok = ~np.isnan(result.gamma_means)
            gamma_sum[ok] += result.gamma_means[ok]
            gamma_count[ok] += 1
            if collect_traces and result.ber_trace is not None:
                traces.append(result.ber_trace)
        done_frames = frames + failed
        if done_frames >= config.max_frames:
            break
        if frames >= config.min_frames and errors >= config.min_bit_errors:
            break

    total_bits = frames * config.n_users * n_msg
    ber = errors / total_bits if total_bits else np.nan
    with np.errstate(invalid="ignore"):
        gamma_iter = np.where(gamma_count > 0, gamma_sum / np.maximum(gamma_count, 1),
                              np.nan)
    has_gamma = np.any(gamma_count > 0)
    total_backhaul = ledger.total()
    detections = frames * config.n_bs * qs
    row = ResultRow(
        strategy=strategy,
        snr_db=float(snr_db),
        frames=frames,
        bit_errors=errors,
        ber=ber,
        gamma_means=tuple(float(g) for g in gamma_iter) if has_gamma else (),
        total_backhaul_bits=total_backhaul,
        backhaul_bits_per_symbol=(total_backhaul / detections if detections else 0.0),
        failed_frames=failed,
        low_confidence=errors < config.min_bit_errors,
    )
    return PointResult(row=row, frame_bers=np.asarray(frame_bers),
                       gamma_iter_means=gamma_iter,
                       ber_traces=np.vstack(traces) if traces else None)


def run_sweep(config):
    """All (strategy, SNR) points of the config, sorted by (strategy, SNR)."""
    rows = []
    for strategy in config.strategies():
        for snr in config.snr_db:
            rows.append(run_point(config, strategy, snr).row)
    rows.sort(key=lambda r: (r.strategy, r.snr_db))
    return rows


# ---------------------------------------------------------------------------
# config file and CSV plumbing

_CSV_HEADER = ("strategy,snr_db,frames,bit_errors,ber,gamma_means,"
               "total_backhaul_bits,backhaul_bits_per_symbol,"
               "failed_frames,low_confidence")


def load_config(path, overrides=None):
    """Flat key=value config file; '#' starts a comment.

    overrides: mapping applied after the file (CLI flags win).
    """
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {raw!r}")
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    return config_from_mapping(values)


def config_from_mapping(values):
    fields = {f.name: f for f in dataclasses.fields(SimConfig)}
    kwargs = {}
    for key, value in values.items():
        if key not in fields:
            raise ValueError(f"unknown config key {key!r}")
        if isinstance(value, str):
            kwargs[key] = _coerce(key, value, fields[key].type)
        else:
            kwargs[key] = value
    return SimConfig(**kwargs)


def _coerce(key, text, ftype):
    if key == "snr_db":
        return tuple(float(v) for v in text.replace(",", " ").split())
    if ftype == "int":
        return int(text)
    if ftype == "float":
        return float(text)
    return text


def config_items(config):
    """Config fields as (key, printable value) pairs, echoed into outputs."""
    out = []
    for f in dataclasses.fields(SimConfig):
        v = getattr(config, f.name)
        if f.name == "snr_db":
            v = ",".join(_fmt(x) for x in v)
        out.append((f.name, str(v)))
    return out


def _fmt(x):
    return repr(float(x)) if isinstance(x, float) or isinstance(x, np.floating) else str(x)


def emit_csv(rows, path, config=None):
    """Write result rows as CSV (UTF-8, LF).  Config fields are echoed as
    leading '#' comment lines when given; no rows still yields the header."""
    lines = []
    if config is not None:
        for key, value in config_items(config):
            lines.append(f"# {key} = {value}")
    lines.append(_CSV_HEADER)
    for r in rows:
        gamma = ";".join(repr(g) for g in r.gamma_means)
        lines.append(",".join([
            r.strategy,
            repr(float(r.snr_db)),
            str(r.frames),
            str(r.bit_errors),
            repr(float(r.ber)),
            gamma,
            str(r.total_backhaul_bits),
            repr(float(r.backhaul_bits_per_symbol)),
            str(r.failed_frames),
            "1" if r.low_confidence else "0",
        ]))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def parse_results_csv(path):
    """Inverse of emit_csv: recover the ResultRow list exactly."""
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if not ln.startswith("#")]
    if not lines or lines[0] != _CSV_HEADER:
        raise ValueError(f"{path}: not a results CSV")
    for line in lines[1:]:
        if not line:
            continue
        parts = line.split(",")
        gamma = tuple(float(g) for g in parts[5].split(";")) if parts[5] else ()
        rows.append(ResultRow(
            strategy=parts[0], snr_db=float(parts[1]), frames=int(parts[2]),
            bit_errors=int(parts[3]), ber=float(parts[4]), gamma_means=gamma,
            total_backhaul_bits=int(parts[6]),
            backhaul_bits_per_symbol=float(parts[7]),
            failed_frames=int(parts[8]), low_confidence=parts[9] == "1"))
    return rows


def backhaul_curve(config, zeta_range=(1, 2, 3, 4, 5)):
    """Closed-form bits per detected symbol versus strong-interferer count.

    Receive-side accounting with nominal (no-savings) per-iteration costs:
    soft exchanges 2q bits per dimension pair per in-link every iteration;
    hard exchanges J index bits per in-link in the first round; the list
    scheme uploads one J-bit entry per user per iteration (ζ-independent).
    """
    j = QPSK.bits_per_symbol
    t = config.network_iterations
    out = []
    for zeta in zeta_range:
        out.append({
            "zeta": zeta,
            "soft_q3": 2 * 3 * zeta * t,
            "soft_q6": 2 * 6 * zeta * t,
            "hard": j * zeta,
            "list": j * t,
        })
    return out


def emit_backhaul_curve(config, path, zeta_range=(1, 2, 3, 4, 5)):
    rows = backhaul_curve(config, zeta_range)
    lines = ["zeta,soft_q3,soft_q6,hard,list"]
    for r in rows:
        lines.append(f"{r['zeta']},{r['soft_q3']},{r['soft_q6']},{r['hard']},{r['list']}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


_GNUPLOT_BER = """# BER versus SNR, one curve per strategy (generated; CSV is normative)
set datafile separator ","
set logscale y
set xlabel "SNR (dB)"
set ylabel "average BER"
set grid
set key bottom left
set terminal pngcairo size 800,600
set output "{out_png}"
plot {plots}
"""

_GNUPLOT_BACKHAUL = """# Bits per detected symbol versus strong interferers (generated)
set datafile separator ","
set xlabel "strong interferers"
set ylabel "bits per symbol detection"
set grid
set key top left
set terminal pngcairo size 800,600
set output "{out_png}"
plot "{csv}" using 1:2 with linespoints title "soft q=3", \\
     "{csv}" using 1:3 with linespoints title "soft q=6", \\
     "{csv}" using 1:4 with linespoints title "hard", \\
     "{csv}" using 1:5 with linespoints title "list"
"""

_GNUPLOT_GAMMA = """# Mean joint list size per network iteration versus SNR (generated)
set xlabel "SNR (dB)"
set ylabel "mean joint list size"
set grid
set key top right
set terminal pngcairo size 800,600
set output "{out_png}"
# column 6 of the CSV holds per-iteration values joined by ';'
plot {plots}
"""


def emit_plot_script(csv_path, kind, path, strategies=None, n_iterations=4):
    """Generate a gnuplot script rendering the CSV; advisory output."""
    out_png = str(path).rsplit(".", 1)[0] + ".png"
    if kind == "ber":
        strategies = strategies or ("list", "soft", "hard")
        plots = ", \\\n     ".join(
            f'"{csv_path}" using 2:(strcol(1) eq "{s}" ? column(5) : 1/0) '
            f'with linespoints title "{s}"' for s in strategies)
        text = _GNUPLOT_BER.format(out_png=out_png, plots=plots)
    elif kind == "backhaul":
        text = _GNUPLOT_BACKHAUL.format(csv=csv_path, out_png=out_png)
    elif kind == "gamma":
        awk = ("\"< awk -F, '!/^#/ && NR>1 && $6!=\\\"\\\" "
               "{{split($6,g,\\\";\\\"); print $2, g[{idx}]}}' {csv}\"")
        plots = ", \\\n     ".join(
            awk.format(idx=i + 1, csv=csv_path)
            + f' using 1:2 with linespoints title "iteration {i + 1}"'
            for i in range(n_iterations))
        text = _GNUPLOT_GAMMA.format(out_png=out_png, plots=plots)
    else:
        raise ValueError(f"unknown plot kind {kind!r}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return path
