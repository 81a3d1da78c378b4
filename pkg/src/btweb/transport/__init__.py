"""Datagram transports: deterministic simulator and loopback UDP."""

from .base import PayloadTooLarge, UnknownEndpoint, Wire
from .sim import SimConfig, Simulator, SimWire
from .udp import UdpEndpoint

__all__ = [
    "PayloadTooLarge",
    "SimConfig",
    "SimWire",
    "Simulator",
    "UdpEndpoint",
    "UnknownEndpoint",
    "Wire",
]
