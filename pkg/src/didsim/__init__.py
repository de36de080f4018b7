"""Link-level simulator of a cooperative multi-cell uplink.

Modules
-------
channel       coupling matrix, fading, transmission, noise calibration
coding        convolutional code, max-log MAP decoder, interleaver, QPSK
detection     soft demapper, symbol statistics, candidate lists
cancellation  soft/hard/list interference replicas and cancellation
network       per-frame orchestration of the cooperation strategies,
              selection unit, backhaul ledger
sim           Monte Carlo sweeps, CSV emission, plot-script generation
cli           command-line front end (sweep / backhaul / plot)
"""

from . import cancellation, channel, coding, detection

__all__ = ["cancellation", "channel", "coding", "detection"]
__version__ = "0.1.0"
