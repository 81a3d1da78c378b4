"""Helpers to stand up full gateway nodes (DHT + swarm + store) on the
simulator."""

from __future__ import annotations

import random

from btweb.gateway import Node, handle_request
from btweb.store import ProfileStore, Settings
from btweb.transport import SimWire, Simulator

from dhtnet import peer_for
from swarmnet import swarm_sim

__all__ = ["GatewayNode", "advance", "gateway_sim", "peer_for"]


def gateway_sim(seed: int = 0, loss: float = 0.0) -> Simulator:
    return swarm_sim(seed=seed, loss=loss)


def advance(sim: Simulator, seconds: float, pred=None, step_ms: float = 100.0):
    """Run the sim in small steps until pred() holds or the budget is spent."""
    deadline = sim.now + seconds * 1000.0
    while sim.now < deadline:
        if pred is not None and pred():
            return True
        sim.run(min(step_ms, deadline - sim.now))
    return pred() if pred is not None else False


class GatewayNode:
    """One simulated machine running the whole stack against a profile
    directory that survives restarts."""

    def __init__(self, sim: Simulator, index: int, tmp_path, settings: Settings | None = None):
        self.sim = sim
        self.index = index
        self.root = tmp_path / f"gw{index}"
        self._build(settings)

    def _build(self, settings: Settings | None = None) -> None:
        self.peer = peer_for(self.index)
        self.wire = SimWire(self.sim, self.peer)
        if self.root.exists():
            assert settings is None, "settings only seed a fresh profile"
            self.store = ProfileStore(self.root, clock=self.wire.wall_now)
        else:
            self.store = ProfileStore.create(
                self.root,
                clock=self.wire.wall_now,
                rng=random.Random(self.index),
                settings=(settings or Settings()).replace(port=self.peer.port),
            )
        self.node = Node(self.store, self.wire, rng=random.Random(1000 + self.index))

    def start(self, bootstrap=()) -> "GatewayNode":
        self.sim.add_endpoint(self.peer, self.node.on_datagram)
        peers = tuple(b.peer if isinstance(b, GatewayNode) else b for b in bootstrap)
        self.node.start(bootstrap=peers)
        return self

    def restart(self, bootstrap=()) -> "GatewayNode":
        """Bring the same profile back up as a new process would."""
        self._build()
        return self.start(bootstrap)

    def get(self, target: str, headers: dict | None = None):
        return handle_request(self.node, "GET", target, headers)
