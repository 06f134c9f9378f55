"""Cycle-level simulator of a memory-bus integrated, bank-level PIM system."""

from pimbus.addrmap import (
    DramCoord,
    GeometryConfig,
    HetMapConfig,
    MappingFunction,
    MappingKind,
    Region,
    channel_balance,
    decode,
    default_xor_masks,
    encode,
    route,
)
from pimbus.errors import ConfigError, SimulationAbort, TimingViolationError

__version__ = "0.1.0"
