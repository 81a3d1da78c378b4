import random

import pytest

from btweb.bencode import MalformedInput
from btweb.dht import (
    BadIdLength,
    DhtState,
    PeersBlobNotMultipleOf6,
    decode_message,
    encode_compact_peer,
    encode_message,
    handle_message,
    load_dht_dat,
    save_dht_dat,
)
from btweb.dht.routing import CompactPeer

from dhtnet import SimNode, bootstrap_all, build_net, peer_for
from oracles import k_nearest


def table_dump(node: SimNode):
    return sorted((e.id, e.peer) for e in node.state.table.entries())


def test_bootstrap_through_busy_router_fills_table():
    sim, nodes = build_net(22, seed=11)
    bootstrap_all(sim, nodes)
    # router learned everyone who queried it
    assert len(nodes[0].state.table) >= 20
    # the last joiner walked the network and kept at least a full bucket's worth
    assert len(nodes[-1].state.table) >= 8
    assert any(e[0] == "bootstrap_done" for e in nodes[-1].events)
    assert sim.conservation_holds()


def test_bootstrap_against_empty_router():
    sim, nodes = build_net(2, seed=3)
    router, joiner = nodes
    router.driver.running = True
    joiner.driver.start(router=router.peer)
    sim.run(5000)
    assert table_dump(joiner) == [(router.state.own_id, router.peer)]
    assert any(e[0] == "bootstrap_done" for e in joiner.events)


def test_bootstrap_unanswered_router_fails():
    sim, nodes = build_net(2, seed=4)
    joiner = nodes[1]
    sim.remove_endpoint(nodes[0].peer)
    sim.add_endpoint(nodes[0].peer, lambda payload, src: None)  # black hole
    joiner.driver.start(router=nodes[0].peer)
    sim.run(60_000)
    assert any(e[0] == "bootstrap_failed" for e in joiner.events)
    assert len(joiner.state.table) == 0


def test_identical_seeds_identical_tables_and_traces():
    def run(seed):
        sim, nodes = build_net(12, seed=seed)
        bootstrap_all(sim, nodes, settle_ms=2000)
        return [table_dump(n) for n in nodes], sim.trace, len(sim.trace)

    a = run(99)
    b = run(99)
    c = run(100)
    assert a[0] == b[0]
    assert a[1] == b[1]
    assert c[1] != a[1]  # different seed, different trace


def test_bootstrap_survives_loss_via_retries():
    sim, nodes = build_net(10, seed=5, loss=0.10)
    bootstrap_all(sim, nodes, settle_ms=15_000)
    assert sim.conservation_holds()
    assert any(p.dropped for p in sim.stats.values())
    for node in nodes[1:]:
        assert len(node.state.table) >= 1


def test_announce_then_lookup_finds_the_seeder():
    sim, nodes = build_net(12, seed=21)
    bootstrap_all(sim, nodes)
    infohash = random.Random(555).randbytes(20)
    seeder, searcher = nodes[3], nodes[9]
    seeder.driver.lookup_peers(infohash, announce_port=seeder.peer.port)
    sim.run(20_000)
    assert any(e[0] == "announced" for e in seeder.events)
    searcher.driver.lookup_peers(infohash)
    sim.run(20_000)
    found = [e for e in searcher.events if e[0] == "peers_found" and e[1] == infohash]
    assert found, "lookup never completed"
    assert seeder.peer in found[-1][2]


def test_every_find_nodes_response_matches_bruteforce_oracle():
    """40-node network where each response is checked against a linear
    scan of the responder's table at answer time."""
    sim, nodes = build_net(40, seed=31)
    checks = 0

    def checked(node: SimNode):
        def on_datagram(payload: bytes, source):
            nonlocal checks
            try:
                msg = decode_message(payload, source)
            except Exception:
                return
            expected = None
            if msg.kind == "find_nodes":
                expected = k_nearest(node.state.table.entries(), msg.target, 8)
            _, out = handle_message(node.state, msg, node.wire.now())
            if expected is not None:
                blob = out[0][1].nodes
                got = [blob[i : i + 20] for i in range(0, len(blob), 26)]
                assert got == expected
                node.state.table.check_invariants()
                checks += 1
            for dest, reply in out:
                node.wire.send(dest, encode_message(reply))

        return on_datagram

    for node in nodes:
        sim.remove_endpoint(node.peer)
        sim.add_endpoint(node.peer, checked(node))

    bootstrap_all(sim, nodes, settle_ms=2000)
    assert checks > 100


def test_dht_dat_empty_state_exact_bytes():
    state = DhtState(b"\xaa" * 20)
    raw = save_dht_dat(state)
    assert raw == b"d2:id20:" + b"\xaa" * 20 + b"5:nodesi0e5:peers0:e"
    assert raw.startswith(b"d2:id20:")


def test_dht_dat_roundtrip_50_nodes():
    rng = random.Random(50)
    state = DhtState(rng.randbytes(20))
    peers_in = []
    for i in range(50):
        peer = CompactPeer(rng.randbytes(4), 1 + rng.randrange(0xFFFF))
        if state.table.insert(rng.randbytes(20), peer, now=0.0):
            peers_in.append(peer)
    raw = save_dht_dat(state)
    assert b"id20:" in raw
    dat = load_dht_dat(raw)
    assert dat.own_id == state.own_id
    assert dat.stride == 6
    assert dat.consistent
    assert sorted(dat.peers) == sorted(peers_in)


def test_dht_dat_after_sim_bootstrap_roundtrips():
    sim, nodes = build_net(10, seed=77)
    bootstrap_all(sim, nodes)
    for node in nodes:
        dat = load_dht_dat(save_dht_dat(node.state))
        assert dat.own_id == node.state.own_id
        assert sorted(dat.peers) == sorted(e.peer for e in node.state.table.entries())


def test_dht_dat_26_byte_stride_autodetected():
    rng = random.Random(26)
    own = rng.randbytes(20)
    entries = [(rng.randbytes(20), CompactPeer(rng.randbytes(4), 6881)) for _ in range(4)]
    blob = b"".join(i + encode_compact_peer(p) for i, p in entries)
    from btweb import bencode

    raw = bencode.encode({b"id": own, b"nodes": 4, b"peers": blob})
    dat = load_dht_dat(raw)
    assert dat.stride == 26
    assert dat.node_ids == tuple(i for i, _ in entries)
    assert dat.peers == tuple(p for _, p in entries)
    assert dat.consistent


def test_dht_dat_load_errors():
    from btweb import bencode

    with pytest.raises(MalformedInput):
        load_dht_dat(b"garbage")
    with pytest.raises(BadIdLength):
        load_dht_dat(bencode.encode({b"id": b"short", b"nodes": 0, b"peers": b""}))
    with pytest.raises(PeersBlobNotMultipleOf6):
        load_dht_dat(bencode.encode({b"id": bytes(20), b"nodes": 1, b"peers": b"12345"}))
