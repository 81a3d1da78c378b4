"""Passive swarm monitor: a DHT crawler that enumerates the peers
serving an infohash over time.

The crawler is a plain DHT participant.  Every poll it widens its view
of the table from a few random regions, runs a get_peers lookup toward
the target, and sweeps announces that landed in its own storage.  It
never joins the swarm: no piece-protocol frame leaves this node, so the
peers it counts cannot tell a monitor from an idle neighbour.

Peers are identified by IP:port — peer lists carry no node ids — so two
visitors behind one address fold into one record.  Reports state that
limitation, and "files downloaded" is only observable when this node
also seeds and witnesses requests itself.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path

from .dht.driver import DhtDriver
from .dht.routing import CompactPeer
from .dht.state import DhtState

REPORT_VERSION = 1
POLL_INTERVAL = 30.0
REGIONS_PER_POLL = 4  # random table regions refreshed before each lookup
LOOKUP_FANOUT = 3  # lookups already run this many queries wide

IDENTITY_LIMITATION = (
    "peers are identified by IP:port; peer lists carry no node ids, so "
    "distinct visitors behind one address are counted once"
)
FILES_LIMITATION = (
    "files downloaded are only observable when the monitor also seeds "
    "and witnesses piece requests; a DHT vantage alone cannot see them"
)


class NotBootstrapped(RuntimeError):
    pass


@dataclass
class Observation:
    infohash: bytes
    peer: CompactPeer
    first_seen: float
    last_seen: float
    count: int = 1
    sources: tuple[str, ...] = ()  # "get_peers" and/or "announce"


@dataclass
class ObservationLog:
    target: bytes
    poll_interval: float
    started: float
    ended: float | None = None
    polls: int = 0
    observations: dict[CompactPeer, Observation] = field(default_factory=dict)
    swarm_sizes: list[tuple[float, int]] = field(default_factory=list)


class Monitor:
    """One crawl task: owns its own DHT identity on a wire."""

    def __init__(
        self,
        wire,
        *,
        node_id: bytes | None = None,
        rng: random.Random | None = None,
        jsonl_path: str | Path | None = None,
    ):
        self.rng = rng or random.Random()
        self.wire = wire
        self.state = DhtState(node_id or self.rng.randbytes(20))
        self.driver = DhtDriver(self.state, wire)
        self.driver.on_event = self._on_event
        self.jsonl_path = Path(jsonl_path) if jsonl_path else None
        self.log: ObservationLog | None = None
        self.done = False
        self._deadline = 0.0
        self._poll_seen: set[CompactPeer] = set()

    def start(self, *, bootstrap=(), router: CompactPeer | None = None) -> None:
        self.driver.start(router=router, seeds=tuple(bootstrap))

    def on_datagram(self, payload: bytes, source: CompactPeer) -> bool:
        return self.driver.on_datagram(payload, source)

    def crawl(
        self,
        infohash: bytes,
        duration: float,
        poll_interval: float = POLL_INTERVAL,
    ) -> ObservationLog:
        """Begin observing; the log fills in as the clock advances and is
        final once `done` flips."""
        if len(self.state.table) == 0:
            raise NotBootstrapped("the crawler has no routing table entries")
        now = self.wire.now()
        self.log = ObservationLog(
            target=infohash, poll_interval=poll_interval, started=now
        )
        self._deadline = now + duration
        self._poll_seen = set()
        self.done = False
        self._poll()
        return self.log

    # -- internals ------------------------------------------------------

    def _poll(self) -> None:
        if self.done or self.log is None:
            return
        now = self.wire.now()
        self._sweep_storage()
        if self.log.polls > 0:
            self.log.swarm_sizes.append((now, len(self._poll_seen)))
            self._poll_seen = set()
        if now >= self._deadline:
            self.log.ended = now
            self.done = True
            return
        for _ in range(REGIONS_PER_POLL):
            self.driver.lookup_nodes(self.rng.randbytes(20))
        self.driver.lookup_peers(self.log.target)
        self.log.polls += 1
        remaining = self._deadline - now
        self.wire.call_later(min(self.log.poll_interval, remaining), self._poll)

    def _sweep_storage(self) -> None:
        """Announces that landed on this node are sightings too."""
        stored = self.state.storage.get(self.log.target, {})
        for peer, when in sorted(stored.items(), key=lambda kv: (kv[1], str(kv[0]))):
            existing = self.log.observations.get(peer)
            if existing is None or when > existing.last_seen:
                self._sight(peer, when, "announce")

    def _on_event(self, event: tuple) -> None:
        if self.log is None or self.done or event[0] != "peers_found":
            return
        _, target, peers = event
        if target != self.log.target:
            return
        now = self.wire.now()
        for peer in peers:
            self._sight(peer, now, "get_peers")

    def _sight(self, peer: CompactPeer, when: float, source: str) -> None:
        self._poll_seen.add(peer)
        existing = self.log.observations.get(peer)
        if existing is None:
            observation = Observation(
                infohash=self.log.target,
                peer=peer,
                first_seen=when,
                last_seen=when,
                sources=(source,),
            )
            self.log.observations[peer] = observation
        else:
            existing.count += 1
            existing.first_seen = min(existing.first_seen, when)
            existing.last_seen = max(existing.last_seen, when)
            if source not in existing.sources:
                existing.sources = tuple(sorted((*existing.sources, source)))
            observation = existing
        if self.jsonl_path is not None:
            record = {
                "t": when,
                "target": self.log.target.hex(),
                "peer": str(peer),
                "source": source,
                "count": observation.count,
            }
            with open(self.jsonl_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")


# -- reporting ---------------------------------------------------------------


def report_dict(log: ObservationLog) -> dict:
    observations = sorted(
        log.observations.values(), key=lambda o: (o.first_seen, o.peer.ip, o.peer.port)
    )
    histogram: dict[str, int] = {}
    for o in observations:
        histogram[str(o.count)] = histogram.get(str(o.count), 0) + 1
    return {
        "version": REPORT_VERSION,
        "target": log.target.hex(),
        "started": log.started,
        "ended": log.ended,
        "polls": log.polls,
        "poll_interval": log.poll_interval,
        "unique_peers": len(observations),
        "peers": [
            {
                "peer": str(o.peer),
                "first_seen": o.first_seen,
                "last_seen": o.last_seen,
                "duration": o.last_seen - o.first_seen,
                "sightings": o.count,
                "sources": list(o.sources),
            }
            for o in observations
        ],
        "sightings_histogram": histogram,
        "swarm_size_series": [[t, n] for t, n in log.swarm_sizes],
        "limitations": [IDENTITY_LIMITATION, FILES_LIMITATION],
    }


def report_json(log: ObservationLog) -> bytes:
    return (
        json.dumps(report_dict(log), sort_keys=True, indent=2, ensure_ascii=True)
        + "\n"
    ).encode()


def report_text(log: ObservationLog) -> str:
    data = report_dict(log)
    lines = [
        f"target: {data['target']}",
        f"window: {data['started']} .. {data['ended']}  ({data['polls']} polls)",
        f"unique peers: {data['unique_peers']}",
    ]
    for peer in data["peers"]:
        lines.append(
            f"  {peer['peer']}  seen x{peer['sightings']}  "
            f"present {peer['duration']:.1f}s  via {','.join(peer['sources'])}"
        )
    lines.append("swarm size by poll:")
    for t, n in data["swarm_size_series"]:
        lines.append(f"  t={t:.1f}  peers={n}")
    for limitation in data["limitations"]:
        lines.append(f"limitation: {limitation}")
    return "\n".join(lines) + "\n"
