"""Loopback UDP backend with the same Wire surface as the simulator."""

from __future__ import annotations

import asyncio
import time
from typing import Callable

from ..dht.routing import CompactPeer
from .base import PayloadTooLarge

UDP_MAX = 65507


class _Protocol(asyncio.DatagramProtocol):
    def __init__(self, endpoint: "UdpEndpoint"):
        self.endpoint = endpoint

    def datagram_received(self, data: bytes, addr) -> None:
        handler = self.endpoint.handler
        if handler is None:
            return
        try:
            source = CompactPeer.make(addr[0], addr[1])
        except (ValueError, OSError):
            return  # non-IPv4 source; out of scope
        handler(data, source)


class UdpEndpoint:
    """One bound socket; handler runs on the event loop, never concurrently."""

    def __init__(self):
        self.transport: asyncio.DatagramTransport | None = None
        self.handler: Callable[[bytes, CompactPeer], None] | None = None
        self.local: CompactPeer | None = None
        self.max_datagram = UDP_MAX

    @classmethod
    async def create(
        cls,
        host: str = "127.0.0.1",
        port: int = 0,
        handler: Callable[[bytes, CompactPeer], None] | None = None,
    ) -> "UdpEndpoint":
        self = cls()
        self.handler = handler
        loop = asyncio.get_running_loop()
        self.transport, _ = await loop.create_datagram_endpoint(
            lambda: _Protocol(self), local_addr=(host, port)
        )
        sock_host, sock_port = self.transport.get_extra_info("sockname")[:2]
        self.local = CompactPeer.make(sock_host, sock_port)
        return self

    def send(self, dest: CompactPeer, payload: bytes) -> None:
        if len(payload) > self.max_datagram:
            raise PayloadTooLarge(f"{len(payload)} > {self.max_datagram}")
        assert self.transport is not None
        self.transport.sendto(payload, (dest.ip_str, dest.port))

    def now(self) -> float:
        return asyncio.get_event_loop().time()

    def wall_now(self) -> float:
        return time.time()

    def call_later(self, delay: float, fn: Callable[[], None]) -> None:
        asyncio.get_event_loop().call_later(delay, fn)

    def close(self) -> None:
        if self.transport is not None:
            self.transport.close()
            self.transport = None
