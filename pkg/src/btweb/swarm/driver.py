"""Glue between a SwarmEngine and a datagram wire.

Mirrors the DHT driver: feed datagrams in, flush outgoing batches, run
the retry tick on the wire's timer, forward drained events.
"""

from __future__ import annotations

from typing import Callable

from ..dht.routing import CompactPeer
from .engine import SwarmEngine
from .messages import encode_swarm

TICK_INTERVAL = 0.5  # seconds


class SwarmDriver:
    def __init__(self, engine: SwarmEngine, wire, tick_interval: float = TICK_INTERVAL):
        self.engine = engine
        self.wire = wire
        self.tick_interval = tick_interval
        self.running = False
        self.on_event: Callable[[tuple], None] | None = None

    def start(self) -> None:
        self.running = True
        self.wire.call_later(self.tick_interval, self._tick)

    def stop(self) -> None:
        self.running = False

    def on_datagram(self, payload: bytes, source: CompactPeer) -> bool:
        """Feed one datagram; returns False if it is not a swarm frame."""
        consumed, out = self.engine.on_datagram(payload, source, self.wire.now())
        if consumed:
            self._flush(out)
            self._drain()
        return consumed

    def begin_download(
        self, infohash: bytes, peers: list[CompactPeer], policy: str = "sequential"
    ) -> None:
        out = self.engine.begin_download(infohash, peers, self.wire.now(), policy=policy)
        self._flush(out)
        self._drain()

    def add_peers(self, infohash: bytes, peers: list[CompactPeer]) -> None:
        out = self.engine.add_peers(infohash, peers, self.wire.now())
        self._flush(out)
        self._drain()

    def _tick(self) -> None:
        if not self.running:
            return
        self._flush(self.engine.tick(self.wire.now()))
        self._drain()
        self.wire.call_later(self.tick_interval, self._tick)

    def _flush(self, outgoing) -> None:
        for dest, msg in outgoing:
            self.wire.send(dest, encode_swarm(msg))

    def _drain(self) -> None:
        if self.on_event is None:
            self.engine.drain_events()
            return
        for event in self.engine.drain_events():
            self.on_event(event)
