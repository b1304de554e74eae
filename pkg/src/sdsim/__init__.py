"""Cross-layer service discovery for mobile ad-hoc networks, with a simulator."""

from .config import ScenarioConfig, parse_config
from .proto import (
    MalformedMessage,
    ServiceEntry,
    ServiceQuery,
    decode_message,
    encode_message,
    service_matches,
)
from .simnet import Simulator, Topology, run

__all__ = [
    "MalformedMessage",
    "ScenarioConfig",
    "ServiceEntry",
    "ServiceQuery",
    "Simulator",
    "Topology",
    "decode_message",
    "encode_message",
    "parse_config",
    "run",
    "service_matches",
]
__version__ = "0.1.0"
