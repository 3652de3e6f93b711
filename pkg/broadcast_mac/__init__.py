"""Top-level package for Broadcast MAC."""

__version__ = "0.1.0"

from .broadcast_mac_core import BroadcastMac, RunConfig, Sweep
from .channel import ChannelModel, PowerAllocation, RateRegion, RateVector
from .simulation import SimConfig, run_sim

__all__ = [
    "BroadcastMac",
    "RunConfig",
    "Sweep",
    "ChannelModel",
    "PowerAllocation",
    "RateRegion",
    "RateVector",
    "SimConfig",
    "run_sim",
]
