"""Asset transfer without consensus: shared-memory and message-passing
algorithms, a seeded network simulator with Byzantine adversaries, and exact
security bounds for the probabilistic broadcast stack."""

from .core import Transfer, TransferMessage, balance
from .simnet import SimConfig, Simulator, run

__all__ = ["Transfer", "TransferMessage", "balance", "SimConfig", "Simulator", "run"]
__version__ = "0.1.0"
