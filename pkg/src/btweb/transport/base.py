"""The wire surface node logic sees, independent of backend."""

from __future__ import annotations

from typing import Callable, Protocol

from ..dht.routing import CompactPeer


class PayloadTooLarge(ValueError):
    pass


class UnknownEndpoint(KeyError):
    pass


class Wire(Protocol):
    """What a node is handed instead of sockets and clocks.

    now() is monotonic seconds (sim or loop time); wall_now() is seconds
    since the epoch for timestamps written to disk.  Implementations never
    run two callbacks of one node concurrently.
    """

    local: CompactPeer

    def send(self, dest: CompactPeer, payload: bytes) -> None: ...

    def now(self) -> float: ...

    def wall_now(self) -> float: ...

    def call_later(self, delay: float, fn: Callable[[], None]) -> None: ...

    def close(self) -> None: ...
