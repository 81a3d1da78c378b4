"""Glue between a DhtState and a datagram wire.

The state machine is pure; this driver feeds it decoded messages and the
wire clock, flushes its outgoing queue, and runs the retry tick.  It works
identically over the simulator and UDP because it only touches the Wire
surface.
"""

from __future__ import annotations

from typing import Callable

from ..bencode import MalformedInput
from .routing import CompactPeer, WrongLength
from .state import DhtState, announce, bootstrap, find_peers, handle_message, tick
from .wire import DhtMessage, decode_message, encode_message

TICK_INTERVAL = 0.5  # seconds


class DhtDriver:
    def __init__(self, state: DhtState, wire, tick_interval: float = TICK_INTERVAL):
        self.state = state
        self.wire = wire
        self.tick_interval = tick_interval
        self.running = False
        self.on_event: Callable[[tuple], None] | None = None

    # -- lifecycle ----------------------------------------------------

    def start(self, router: CompactPeer | None = None, seeds: tuple[CompactPeer, ...] = ()) -> None:
        self.running = True
        now = self.wire.now()
        if router is not None:
            _, out = bootstrap(self.state, router, now)
            self._flush(out)
        elif seeds:
            _, out = self.state.start_lookup(
                self.state.own_id, now, mode="nodes", seeds=tuple(seeds), is_bootstrap=True
            )
            self._flush(out)
        self._drain()
        self.wire.call_later(self.tick_interval, self._tick)

    def stop(self) -> None:
        self.running = False

    # -- traffic ------------------------------------------------------

    def on_datagram(self, payload: bytes, source: CompactPeer) -> bool:
        """Feed one datagram; returns False if it is not a DHT message."""
        try:
            msg = decode_message(payload, source)
        except (MalformedInput, WrongLength):
            return False
        self.deliver(msg)
        return True

    def deliver(self, msg: DhtMessage) -> None:
        _, out = handle_message(self.state, msg, self.wire.now())
        self._flush(out)
        self._drain()

    def lookup_nodes(self, target: bytes) -> None:
        """Iterative find_nodes toward target; refreshes table knowledge."""
        _, out = self.state.start_lookup(target, self.wire.now(), mode="nodes")
        self._flush(out)
        self._drain()

    def lookup_peers(self, infohash: bytes, announce_port: int | None = None) -> None:
        now = self.wire.now()
        if announce_port is not None:
            me = getattr(self.wire, "local", None)
            _, out = announce(self.state, infohash, announce_port, now, self_peer=me)
        else:
            _, out = find_peers(self.state, infohash, now)
        self._flush(out)
        self._drain()

    def _tick(self) -> None:
        if not self.running:
            return
        _, out = tick(self.state, self.wire.now())
        self._flush(out)
        self._drain()
        self.wire.call_later(self.tick_interval, self._tick)

    def _flush(self, outgoing) -> None:
        for dest, msg in outgoing:
            self.wire.send(dest, encode_message(msg))

    def _drain(self) -> None:
        if self.on_event is None:
            self.state.drain_events()
            return
        for event in self.state.drain_events():
            self.on_event(event)
