"""Deterministic discrete-event network simulator.

Time is float milliseconds.  One RNG, owned by the simulator, drives loss
and latency; loss and latency are both drawn for every send (even when the
loss draw wins) so traces depend only on the send sequence.  Events tie by
(time, insertion sequence), which makes every run with the same seed and
the same scripted inputs byte-identical.
"""

from __future__ import annotations

import heapq
import itertools
import random
from dataclasses import dataclass
from typing import Callable

from ..dht.routing import CompactPeer
from .base import PayloadTooLarge, UnknownEndpoint


@dataclass(frozen=True)
class SimConfig:
    seed: int = 0
    latency_min_ms: float = 5.0
    latency_max_ms: float = 50.0
    loss_probability: float = 0.0
    max_datagram: int = 1472
    epoch_base: float = 1_700_000_000.0  # wall clock at sim time zero

    def __post_init__(self):
        if self.latency_min_ms < 0 or self.latency_min_ms > self.latency_max_ms:
            raise ValueError("latency bounds must satisfy 0 <= min <= max")
        if not 0.0 <= self.loss_probability < 1.0:
            raise ValueError("loss probability must be in [0, 1)")
        if self.max_datagram < 64:
            raise ValueError("max_datagram unusably small")


@dataclass
class PairStats:
    sent: int = 0
    delivered: int = 0
    dropped: int = 0


class Simulator:
    def __init__(self, config: SimConfig | None = None):
        self.config = config or SimConfig()
        self.rng = random.Random(self.config.seed)
        self.now = 0.0  # milliseconds
        self._heap: list[tuple[float, int, Callable[[], None]]] = []
        self._seq = itertools.count()
        self._handlers: dict[CompactPeer, Callable[[bytes, CompactPeer], None]] = {}
        self.stats: dict[tuple[CompactPeer, CompactPeer], PairStats] = {}
        self.trace: list[tuple] = []  # (time_ms, "deliver"|"drop", src, dst, size)

    @property
    def now_s(self) -> float:
        return self.now / 1000.0

    def wall_now(self) -> float:
        return self.config.epoch_base + self.now_s

    def add_endpoint(
        self, peer: CompactPeer, handler: Callable[[bytes, CompactPeer], None]
    ) -> None:
        if self._handlers.get(peer) is not None:
            raise ValueError(f"endpoint {peer} already registered")
        self._handlers[peer] = handler

    def remove_endpoint(self, peer: CompactPeer) -> None:
        # a removed endpoint keeps swallowing datagrams like a dead UDP
        # host; sending to a peer that never existed is still an error
        if peer in self._handlers:
            self._handlers[peer] = None

    def _schedule(self, at_ms: float, fn: Callable[[], None]) -> None:
        heapq.heappush(self._heap, (at_ms, next(self._seq), fn))

    def call_later(self, delay_ms: float, fn: Callable[[], None]) -> None:
        self._schedule(self.now + max(0.0, delay_ms), fn)

    def send(self, src: CompactPeer, dst: CompactPeer, payload: bytes) -> None:
        if len(payload) > self.config.max_datagram:
            raise PayloadTooLarge(f"{len(payload)} > {self.config.max_datagram}")
        if dst not in self._handlers:
            raise UnknownEndpoint(str(dst))
        pair = self.stats.setdefault((src, dst), PairStats())
        pair.sent += 1
        # both draws always happen, keeping the RNG stream aligned with the
        # send sequence regardless of outcomes
        lost = self.rng.random() < self.config.loss_probability
        latency = self.rng.uniform(self.config.latency_min_ms, self.config.latency_max_ms)
        if lost:
            pair.dropped += 1
            self.trace.append((self.now, "drop", src, dst, len(payload)))
            return
        at = self.now + latency

        def deliver(payload=payload, src=src, dst=dst, pair=pair):
            handler = self._handlers.get(dst)
            pair.delivered += 1
            self.trace.append((self.now, "deliver", src, dst, len(payload)))
            if handler is not None:
                handler(payload, src)

        self._schedule(at, deliver)

    def run_until(self, t_ms: float) -> int:
        """Process every event with timestamp <= t_ms; returns the count."""
        if t_ms < self.now:
            raise ValueError("time cannot go backwards")
        processed = 0
        while self._heap and self._heap[0][0] <= t_ms:
            at, _, fn = heapq.heappop(self._heap)
            self.now = max(self.now, at)
            fn()
            processed += 1
        self.now = max(self.now, t_ms)
        return processed

    def run(self, duration_ms: float) -> int:
        return self.run_until(self.now + duration_ms)

    def conservation_holds(self) -> bool:
        return all(p.sent == p.delivered + p.dropped for p in self.stats.values())


class SimWire:
    """Adapter giving one simulated node the Wire surface (seconds)."""

    def __init__(self, sim: Simulator, local: CompactPeer):
        self.sim = sim
        self.local = local

    def send(self, dest: CompactPeer, payload: bytes) -> None:
        self.sim.send(self.local, dest, payload)

    def now(self) -> float:
        return self.sim.now_s

    def wall_now(self) -> float:
        return self.sim.wall_now()

    def call_later(self, delay: float, fn: Callable[[], None]) -> None:
        self.sim.call_later(delay * 1000.0, fn)

    def close(self) -> None:
        self.sim.remove_endpoint(self.local)
