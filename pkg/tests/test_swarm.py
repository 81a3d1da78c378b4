"""Swarm wire codec, rate limiting, piece selection, serve policy, and
engine end-to-end transfers on the simulator."""

import random

import pytest

from btweb.bencode import MalformedInput
from btweb.dht import CompactPeer
from btweb.dht.wire import decode_message
from btweb.store import ProfileStore, ResumeFile, Settings
from btweb.swarm import (
    CapExceeded,
    MissingPiece,
    NoPeers,
    PIPELINE_DEPTH,
    PeerSession,
    RatioExceeded,
    SwarmMessage,
    Throttled,
    TokenBucket,
    TransferStats,
    check_serve,
    decode_swarm,
    encode_swarm,
    next_request,
    serve_piece,
)
from btweb.torrent import build_torrent

from swarmnet import LyingMetadataPeer, SwarmNode, swarm_sim

PEER = CompactPeer.make("10.0.0.9", 6881)


# -- wire codec -------------------------------------------------------------


def sample_messages(rng):
    ih = rng.randbytes(20)
    return [
        SwarmMessage("handshake", ih, peer_id=rng.randbytes(20)),
        SwarmMessage(
            "bitfield",
            ih,
            peer_id=rng.randbytes(20),
            bitfield=rng.randbytes(rng.randrange(1, 9)),
            piece_count=rng.randrange(1, 65),
        ),
        SwarmMessage("request", ih, index=rng.randrange(1000)),
        SwarmMessage("piece", ih, index=rng.randrange(1000), data=rng.randbytes(100)),
        SwarmMessage("metadata_request", ih, chunk=rng.randrange(10)),
        SwarmMessage(
            "metadata_data",
            ih,
            chunk=rng.randrange(10),
            total_size=rng.randrange(1, 10**6),
            data=rng.randbytes(50),
        ),
        SwarmMessage("refuse", ih, code=b"ratio", index=3),
        SwarmMessage("refuse", ih, code=b"throttle", retry_after=1.5, chunk=0),
    ]


def test_swarm_message_roundtrip():
    rng = random.Random(0x57A0)
    for _ in range(50):
        for msg in sample_messages(rng):
            assert decode_swarm(encode_swarm(msg)) == msg


def test_swarm_frames_are_disjoint_from_krpc():
    swarm_frame = encode_swarm(SwarmMessage("request", b"\x01" * 20, index=0))
    with pytest.raises(Exception):
        decode_message(swarm_frame)
    krpc = b"d1:t2:aa1:y1:q1:q4:ping1:ad2:id20:" + b"\x01" * 20 + b"ee"
    with pytest.raises(MalformedInput):
        decode_swarm(krpc)
    with pytest.raises(MalformedInput):
        decode_swarm(b"not bencode at all")


def test_refuse_retry_is_milliseconds_on_wire():
    msg = SwarmMessage("refuse", b"\x01" * 20, code=b"throttle", retry_after=0.25)
    assert b"5:retryi250e" in encode_swarm(msg)
    assert decode_swarm(encode_swarm(msg)).retry_after == 0.25


# -- token bucket -------------------------------------------------------------


def test_unlimited_bucket_always_admits():
    bucket = TokenBucket(None)
    for i in range(100):
        assert bucket.try_take(10**9, float(i) / 7)
        assert bucket.retry_after(10**9, float(i) / 7) == 0.0


def test_bucket_enforces_rate_with_second_granularity():
    bucket = TokenBucket(100)
    assert bucket.try_take(100, 0.0)  # initial burst = capacity
    assert not bucket.try_take(1, 0.0)
    assert not bucket.try_take(1, 0.9)  # mid-second: nothing refilled
    assert bucket.try_take(100, 1.0)
    assert not bucket.try_take(1, 1.5)


def test_bucket_admission_never_exceeds_rate_budget():
    rng = random.Random(0xB0C5E7)
    rate = 1000
    bucket = TokenBucket(rate)
    admitted = 0
    now = 0.0
    for _ in range(500):
        now += rng.random() * 0.3
        n = rng.randrange(1, 400)
        if bucket.try_take(n, now):
            admitted += n
    # budget: initial burst plus at most rate per whole elapsed second
    assert admitted <= rate + int(now + 1) * rate


def test_retry_after_names_a_time_that_works():
    rng = random.Random(0x9E781)
    bucket = TokenBucket(97)
    now = 0.0
    for _ in range(200):
        now += rng.random()
        n = rng.randrange(1, 300)
        if bucket.try_take(n, now):
            continue
        wait = bucket.retry_after(n, now)
        assert wait > 0
        assert bucket.try_take(n, now + wait)


def test_bucket_capacity_grows_for_oversized_grant():
    bucket = TokenBucket(10)
    assert not bucket.try_take(50, 0.0)  # larger than capacity: delayed
    assert bucket.try_take(50, 4.0)  # not deadlocked: capacity grew


# -- piece selection -----------------------------------------------------------


def session_with(bits: str, ih=b"\x01" * 20) -> PeerSession:
    session = PeerSession(remote=PEER, infohash=ih)
    field = bytearray((len(bits) + 7) // 8)
    for i, bit in enumerate(bits):
        if bit == "1":
            field[i // 8] |= 1 << (7 - i % 8)
    session.set_their_bitfield(bytes(field), len(bits))
    return session


def have_bits(bits: str) -> ResumeFile:
    resume = ResumeFile.fresh(b"\x01" * 20, len(bits), now=0)
    for i, bit in enumerate(bits):
        if bit == "1":
            resume.set_piece(i)
    return resume


def test_sequential_picks_lowest_missing():
    session = session_with("1111")
    assert next_request(session, have_bits("1010")) == 1
    assert next_request(session, have_bits("0000")) == 0
    assert next_request(session, have_bits("1111")) is None


def test_sequential_respects_peer_holdings_and_claims():
    session = session_with("0011")
    assert next_request(session, have_bits("0000")) == 2
    assert next_request(session, have_bits("0000"), claimed={2}) == 3
    session.in_flight[3] = 0.0
    assert next_request(session, have_bits("0000"), claimed={2}) is None


def test_rarest_first_matches_counting_oracle():
    rng = random.Random(0x4A4E)
    for _ in range(30):
        n = rng.randrange(4, 24)
        maps = ["".join(rng.choice("01") for _ in range(n)) for _ in range(3)]
        have = "".join(rng.choice("001") for _ in range(n))
        session = session_with(maps[0])
        counts = {
            i: sum(m[i] == "1" for m in maps) for i in range(n)
        }
        got = next_request(
            session, have_bits(have), policy="rarest", availability=counts
        )
        want = min(
            (
                i
                for i in range(n)
                if have[i] == "0" and maps[0][i] == "1"
            ),
            key=lambda i: (counts[i], i),
            default=None,
        )
        assert got == want


# -- serve policy ---------------------------------------------------------------


def serve_args(**over):
    args = dict(
        stats=TransferStats(),
        settings=Settings(),
        publisher=False,
        bucket=TokenBucket(None),
        total_uploaded=0,
        now=0.0,
    )
    args.update(over)
    return args


def test_ratio_zero_refuses_everyone_but_publisher():
    with pytest.raises(RatioExceeded):
        check_serve(
            100,
            **serve_args(
                settings=Settings(share_ratio_limit=0.0),
                stats=TransferStats(uploaded=0, downloaded=10**6),
            ),
        )
    check_serve(
        100,
        **serve_args(settings=Settings(share_ratio_limit=0.0), publisher=True),
    )


def test_publisher_exemption_at_zero_downloaded():
    # default ratio 1.0, nothing downloaded: only a publisher may serve
    check_serve(100, **serve_args(publisher=True))
    with pytest.raises(RatioExceeded):
        check_serve(100, **serve_args())


def test_ratio_boundary_refuses_at_exact_limit():
    mib = 1024 * 1024
    stats = TransferStats(uploaded=mib, downloaded=mib)
    with pytest.raises(RatioExceeded):
        check_serve(100, **serve_args(stats=stats))
    stats = TransferStats(uploaded=mib - 1, downloaded=mib)
    check_serve(100, **serve_args(stats=stats))


def test_unlimited_ratio_always_serves():
    stats = TransferStats(uploaded=10**9, downloaded=1)
    check_serve(100, **serve_args(settings=Settings(share_ratio_limit=None), stats=stats))


def test_transfer_cap_boundary():
    settings = Settings(transfer_cap=1000)
    check_serve(100, **serve_args(settings=settings, publisher=True, total_uploaded=900))
    with pytest.raises(CapExceeded):
        check_serve(
            101, **serve_args(settings=settings, publisher=True, total_uploaded=900)
        )


def test_throttle_refusal_carries_retry_hint():
    settings = Settings(upload_rate=100)
    bucket = TokenBucket(100)
    check_serve(100, **serve_args(settings=settings, publisher=True, bucket=bucket))
    with pytest.raises(Throttled) as err:
        check_serve(
            100, **serve_args(settings=settings, publisher=True, bucket=bucket)
        )
    assert err.value.retry_after == 1.0


def test_refusal_order_ratio_before_cap_before_throttle():
    # all three would refuse; the first check in order wins
    settings = Settings(share_ratio_limit=0.0, transfer_cap=10, upload_rate=1)
    bucket = TokenBucket(1)
    bucket.tokens = 0
    with pytest.raises(RatioExceeded):
        check_serve(100, **serve_args(settings=settings, total_uploaded=999, bucket=bucket))
    settings = Settings(transfer_cap=10, upload_rate=1)
    with pytest.raises(CapExceeded):
        check_serve(
            100,
            **serve_args(settings=settings, publisher=True, total_uploaded=999, bucket=bucket),
        )


def test_doomed_request_burns_no_rate_budget():
    settings = Settings(transfer_cap=10, upload_rate=1000)
    bucket = TokenBucket(1000)
    with pytest.raises(CapExceeded):
        check_serve(
            100,
            **serve_args(settings=settings, publisher=True, total_uploaded=999, bucket=bucket),
        )
    assert bucket.tokens == 1000  # untouched


def test_serve_piece_accounts_and_rejects_missing(tmp_path):
    store = ProfileStore.create(tmp_path / "p", rng=random.Random(3))
    content = bytes(range(256)) * 100
    meta = build_torrent({"a.bin": content}, 16384)
    store.store_content(meta, content, publisher=True)
    stats = TransferStats()
    data = serve_piece(
        store,
        meta.infohash,
        0,
        **serve_args(stats=stats, publisher=True),
    )
    assert data == content[:16384]
    assert stats.uploaded == 16384
    other = build_torrent({"b.bin": b"\x01" * 20000}, 16384)
    store.add_torrent(other)  # registered but no pieces cached
    with pytest.raises(MissingPiece):
        serve_piece(store, other.infohash, 0, **serve_args(publisher=True))


# -- engine end-to-end over the simulator ------------------------------------


SITE = {
    "index.html": b"<html>swarm test</html>",
    "assets/a.bin": bytes(range(256)) * 256,  # 4 pieces at 16 KiB
}


def test_magnet_style_download_via_metadata(tmp_path):
    sim = swarm_sim(seed=1)
    rng = random.Random(0xE2E)
    seeder = SwarmNode(sim, 1, tmp_path, rng)
    leecher = SwarmNode(sim, 2, tmp_path, rng)
    metas, _ = seeder.publish(SITE)
    ih = metas[0].infohash

    assert not leecher.store.has_torrent(ih)
    leecher.driver.begin_download(ih, [seeder.peer])
    sim.run(20_000)

    kinds = leecher.kinds()
    assert "metadata" in kinds and "complete" in kinds
    assert kinds.index("metadata") < kinds.index("piece") < kinds.index("complete")
    assert leecher.store.read_content(ih) == seeder.store.read_content(ih)
    assert sim.conservation_holds()


def test_download_survives_lying_metadata_peer(tmp_path):
    sim = swarm_sim(seed=2)
    rng = random.Random(0xBAD)
    seeder = SwarmNode(sim, 1, tmp_path, rng)
    leecher = SwarmNode(sim, 2, tmp_path, rng)
    liar = LyingMetadataPeer(sim, 3)
    metas, _ = seeder.publish(SITE)
    ih = metas[0].infohash

    leecher.driver.begin_download(ih, [liar.peer, seeder.peer])
    sim.run(30_000)

    assert liar.requests > 0  # the liar was consulted first
    rejected = [e for e in leecher.events if e[0] == "metadata_rejected"]
    assert rejected and rejected[0][2] == liar.peer
    assert "complete" in leecher.kinds()
    assert leecher.store.read_content(ih) == seeder.store.read_content(ih)


def test_zero_peers_raises_no_peers(tmp_path):
    sim = swarm_sim(seed=3)
    node = SwarmNode(sim, 1, tmp_path, random.Random(1))
    with pytest.raises(NoPeers):
        node.engine.begin_download(b"\x42" * 20, [], now=0.0)
    assert node.engine.downloads == {}


def test_cached_torrent_completes_without_network(tmp_path):
    sim = swarm_sim(seed=4)
    node = SwarmNode(sim, 1, tmp_path, random.Random(2))
    metas, _ = node.publish(SITE)
    out = node.engine.begin_download(metas[0].infohash, [], now=0.0)
    assert out == []
    assert node.engine.drain_events() == [("complete", metas[0].infohash)]
    assert len(sim.trace) == 0


def test_pipeline_depth_never_exceeded(tmp_path):
    sim = swarm_sim(seed=5, latency=(20.0, 80.0))
    rng = random.Random(0xD3)
    seeder = SwarmNode(sim, 1, tmp_path, rng)
    leecher = SwarmNode(sim, 2, tmp_path, rng)
    big = {"index.html": b"x", "blob.bin": random.Random(9).randbytes(16384 * 12)}
    metas, _ = seeder.publish(big)
    ih = metas[0].infohash

    leecher.driver.begin_download(ih, [seeder.peer])
    deadline = 60_000
    t = 0
    while t < deadline:
        t += 50
        sim.run_until(t)
        for download in leecher.engine.downloads.values():
            for session in download.sessions.values():
                assert len(session.in_flight) <= PIPELINE_DEPTH
    assert "complete" in leecher.kinds()


def test_visitor_becomes_host_and_ratio_bounds_upload(tmp_path):
    # A publishes; B fetches from A; C fetches from B alone. B's default
    # ratio limit (1.0) permits uploading at most what it downloaded,
    # plus one piece of slack.
    sim = swarm_sim(seed=6)
    rng = random.Random(0xABC)
    a = SwarmNode(sim, 1, tmp_path, rng)
    b = SwarmNode(sim, 2, tmp_path, rng)
    c = SwarmNode(sim, 3, tmp_path, rng)
    metas, _ = a.publish(SITE)
    ih = metas[0].infohash
    piece_length = metas[0].info.piece_length

    b.driver.begin_download(ih, [a.peer])
    sim.run(20_000)
    assert "complete" in b.kinds()

    c.driver.begin_download(ih, [b.peer])
    sim.run(20_000)
    assert "complete" in c.kinds()
    assert c.store.read_content(ih) == a.store.read_content(ih)

    b_stats = b.engine.stats_for(ih)
    assert b_stats.downloaded > 0
    assert b_stats.uploaded <= 1.0 * b_stats.downloaded + piece_length


def test_ratio_zero_node_serves_nothing(tmp_path):
    sim = swarm_sim(seed=7)
    rng = random.Random(0xDEF)
    a = SwarmNode(sim, 1, tmp_path, rng)
    b = SwarmNode(sim, 2, tmp_path, rng, settings=Settings(share_ratio_limit=0.0))
    c = SwarmNode(sim, 3, tmp_path, rng)
    metas, _ = a.publish(SITE)
    ih = metas[0].infohash

    b.driver.begin_download(ih, [a.peer])
    sim.run(20_000)
    assert "complete" in b.kinds()

    c.driver.begin_download(ih, [b.peer])
    sim.run(20_000)
    assert "complete" not in c.kinds()
    assert b.engine.stats_for(ih).uploaded == 0
    refusals = [e for e in b.events if e[0] == "refused" and e[2] == b"ratio"]
    assert refusals


def test_throttled_seeder_paces_but_completes(tmp_path):
    sim = swarm_sim(seed=8, latency=(1.0, 2.0))
    rng = random.Random(0x7407)
    seeder = SwarmNode(
        sim, 1, tmp_path, rng, settings=Settings(upload_rate=16384)
    )
    leecher = SwarmNode(sim, 2, tmp_path, rng)
    metas, _ = seeder.publish(SITE)  # 4 content pieces + manifest page
    ih = metas[0].infohash

    leecher.driver.begin_download(ih, [seeder.peer])
    t = 0
    while "complete" not in leecher.kinds() and t < 60_000:
        t += 100
        sim.run_until(t)
    assert "complete" in leecher.kinds()
    throttles = [e for e in seeder.events if e[0] == "refused" and e[2] == b"throttle"]
    assert throttles  # pipeline outran the limiter at least once
    # N bytes at 16 KiB/s with a one-piece initial burst takes time
    total = metas[0].info.total_length
    assert sim.now_s >= (total / 16384) - 1.5


def test_persisted_counters_survive_engine_restart(tmp_path):
    sim = swarm_sim(seed=9)
    rng = random.Random(0x51)
    seeder = SwarmNode(sim, 1, tmp_path, rng)
    leecher = SwarmNode(sim, 2, tmp_path, rng)
    metas, _ = seeder.publish(SITE)
    ih = metas[0].infohash
    leecher.driver.begin_download(ih, [seeder.peer])
    sim.run(20_000)
    downloaded = leecher.engine.stats_for(ih).downloaded
    assert downloaded == metas[0].info.total_length

    from btweb.swarm import SwarmEngine

    reborn = SwarmEngine(leecher.store, peer_id=rng.randbytes(20))
    assert reborn.stats_for(ih).downloaded == downloaded
    assert reborn.stats_for(ih).uploaded == 0
    seeder_reborn = SwarmEngine(seeder.store, peer_id=rng.randbytes(20))
    assert seeder_reborn.stats_for(ih).uploaded == downloaded
