"""Monitor tests: crawl coverage, passivity, and reporting."""

import json
import math

import pytest

from btweb.dht.routing import CompactPeer
from btweb.monitor import (
    Monitor,
    NotBootstrapped,
    Observation,
    ObservationLog,
    report_dict,
    report_json,
    report_text,
)
from btweb.swarm import decode_swarm
from btweb.transport import SimWire
from btweb.bencode import MalformedInput, decode

from dhtnet import peer_for
from monitornet import Announcer, RecordingWire, churn_net

TARGET = bytes.fromhex("f" * 40)


def run_crawl(seed=41, fetchers=10, duration=600.0, poll=30.0, jsonl=None):
    sim, anchor, visitors, truth = churn_net(seed, TARGET, fetchers=fetchers)
    wire = RecordingWire(SimWire(sim, peer_for(99)))
    monitor = Monitor(wire, jsonl_path=jsonl)
    sim.add_endpoint(wire.local, monitor.on_datagram)
    monitor.start(bootstrap=[anchor.peer])
    sim.run(5_000)
    log = monitor.crawl(TARGET, duration=duration, poll_interval=poll)
    sim.run(duration * 1000.0 + 10_000)
    assert monitor.done
    return sim, monitor, log, truth, wire


def test_churn_coverage_reaches_ground_truth(tmp_path):
    jsonl = tmp_path / "sightings.jsonl"
    sim, monitor, log, truth, wire = run_crawl(jsonl=jsonl)

    observed = set(log.observations)
    needed = math.ceil(0.9 * len(truth))
    assert len(observed & truth) >= needed
    for observation in log.observations.values():
        assert observation.first_seen <= observation.last_seen
        assert observation.count >= 1

    lines = [json.loads(l) for l in jsonl.read_text().splitlines()]
    assert len(lines) >= len(observed)  # append-only sighting stream
    assert all(l["target"] == TARGET.hex() for l in lines)


def test_monitor_never_speaks_the_piece_protocol():
    sim, monitor, log, truth, wire = run_crawl(seed=42, duration=300.0)
    assert wire.sent
    for payload in wire.sent:
        value = decode(payload)
        assert value.get(b"y") in (b"q", b"r", b"e")  # KRPC only
        with pytest.raises(MalformedInput):
            decode_swarm(payload)


def test_empty_swarm_gives_empty_log():
    sim, anchor, visitors, truth = churn_net(43, TARGET, fetchers=0)
    wire = SimWire(sim, peer_for(99))
    monitor = Monitor(wire)
    sim.add_endpoint(wire.local, monitor.on_datagram)
    monitor.start(bootstrap=[anchor.peer])
    sim.run(3_000)
    other = bytes.fromhex("a" * 40)  # nobody announces this one
    log = monitor.crawl(other, duration=120.0, poll_interval=30.0)
    sim.run(140_000)
    assert monitor.done
    assert log.observations == {}
    data = report_dict(log)
    assert data["unique_peers"] == 0
    assert data["peers"] == []


def test_rejoining_peer_widens_one_observation():
    sim, anchor, _, _ = churn_net(44, TARGET, fetchers=0)
    monitor_wire = SimWire(sim, peer_for(99))
    monitor = Monitor(monitor_wire)
    sim.add_endpoint(monitor_wire.local, monitor.on_datagram)
    monitor.start(bootstrap=[anchor.peer])
    sim.run(3_000)
    log = monitor.crawl(TARGET, duration=400.0, poll_interval=20.0)

    visitor = Announcer(sim, 7)
    visitor.join([anchor.peer])
    visitor.announce(TARGET)
    sim.run(60_000)
    visitor.leave()
    sim.run(120_000)

    revenant = Announcer(sim, 7)  # the same machine returns: same ip:port
    revenant.join([anchor.peer])
    revenant.announce(TARGET)
    sim.run(240_000)

    assert monitor.done
    assert visitor.peer == revenant.peer
    observation = log.observations[visitor.peer]
    assert observation.count >= 2
    assert observation.last_seen - observation.first_seen >= 100.0
    assert len([p for p in log.observations if p == visitor.peer]) == 1


def test_not_bootstrapped_raises():
    sim, anchor, _, _ = churn_net(45, TARGET, fetchers=0)
    wire = SimWire(sim, peer_for(98))
    lonely = Monitor(wire)
    sim.add_endpoint(wire.local, lonely.on_datagram)
    with pytest.raises(NotBootstrapped):
        lonely.crawl(TARGET, duration=10.0)


def test_report_durations_match_hand_computation():
    log = ObservationLog(target=TARGET, poll_interval=30.0, started=100.0, ended=400.0)
    log.polls = 10
    for ip, first, last, count in (
        ("10.0.0.1", 110.0, 370.0, 9),
        ("10.0.0.2", 150.0, 150.0, 1),
        ("10.0.0.3", 200.0, 260.0, 3),
    ):
        peer = CompactPeer.make(ip, 6881)
        log.observations[peer] = Observation(
            infohash=TARGET,
            peer=peer,
            first_seen=first,
            last_seen=last,
            count=count,
            sources=("get_peers",),
        )
    data = report_dict(log)
    assert data["unique_peers"] == 3
    durations = {p["peer"]: p["duration"] for p in data["peers"]}
    assert durations == {
        "10.0.0.1:6881": 260.0,
        "10.0.0.2:6881": 0.0,
        "10.0.0.3:6881": 60.0,
    }
    assert data["sightings_histogram"] == {"9": 1, "1": 1, "3": 1}
    text = report_text(log)
    assert "unique peers: 3" in text
    assert "limitation:" in text
    assert report_json(log) == report_json(log)
