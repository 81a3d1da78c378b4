"""Forensic inspector tests: inspect, reconstruct, remnants."""

import hashlib
import shutil

import pytest

from btweb.bundle import MemberIncomplete
from btweb.dht.datfile import load_dht_dat
from btweb.fixtures import install_startpage
from btweb.forensics import (
    NoMatchingTorrent,
    detect_remnants,
    export_raw_pieces,
    inspect_profile,
    reconstruct_site,
    reconstruct_torrent,
    remnant_json,
    report_json,
)
from btweb.store import ProfileStore
from btweb.torrent import build_torrent

from gatewaynet import GatewayNode, advance, gateway_sim
from test_gateway import SITE, magnet_for


def tree_fingerprint(root):
    """Hash of every path, mtime, and byte under root."""
    digest = hashlib.sha256()
    for path in sorted(root.rglob("*")):
        digest.update(path.relative_to(root).as_posix().encode())
        if path.is_file():
            stat = path.stat()
            digest.update(f"{stat.st_mtime_ns}:{stat.st_size}".encode())
            digest.update(path.read_bytes())
    return digest.hexdigest()


@pytest.fixture(scope="module")
def visited_profile(tmp_path_factory):
    """A profile directory left behind by a node that loaded one site."""
    tmp = tmp_path_factory.mktemp("net")
    sim = gateway_sim(seed=31)
    a = GatewayNode(sim, 0, tmp).start()
    metas, _ = a.node.publish_site(SITE, 8192, name="pages")
    b = GatewayNode(sim, 1, tmp).start(bootstrap=[a])
    advance(sim, 2.0)
    job = b.node.load_site(magnet_for(metas[0].infohash))
    assert advance(sim, 30.0, lambda: job.terminal)
    assert job.phase == "ready"
    b.node.shutdown()
    a.node.shutdown()
    return b.root, metas[0].infohash


def test_inspect_recovers_what_the_node_held(visited_profile):
    root, base = visited_profile
    store = ProfileStore(root)
    report = inspect_profile(root)

    expected = {h.lower() for h in store.list_torrents()}
    assert {t.infohash.hex() for t in report.torrents} == expected
    assert all(t.completeness == 1.0 for t in report.torrents)
    assert all(not t.publisher for t in report.torrents)

    dat = load_dht_dat(store.load_dht())
    assert sorted(report.peers) == sorted(str(p) for p in dat.peers)
    assert report.node_id == dat.own_id
    assert report.dht_stride in (6, 26)

    first = report.timeline[0]
    assert first.kind == "torrent_first_processed"
    earliest = min(t.created_at for t in report.torrents)
    assert first.timestamp == earliest


def test_inspection_is_read_only_and_deterministic(visited_profile):
    root, _ = visited_profile
    before = tree_fingerprint(root)
    first = report_json(inspect_profile(root))
    second = report_json(inspect_profile(root))
    assert first == second
    assert tree_fingerprint(root) == before


def test_empty_directory_gives_empty_report(tmp_path):
    report = inspect_profile(tmp_path)
    assert report.torrents == ()
    assert report.anomalies == ()
    assert report.node_id is None
    assert report.timeline == ()


def test_missing_directory_raises(tmp_path):
    with pytest.raises(NotADirectoryError):
        inspect_profile(tmp_path / "nope")


def test_startpage_profile_timeline_anchor(tmp_path):
    store = ProfileStore.create(tmp_path / "p", clock=lambda: 1234.0)
    meta = install_startpage(store)
    report = inspect_profile(store.root)
    first = report.timeline[0]
    assert first.kind == "torrent_first_processed"
    assert first.subject == meta.infohash.hex()
    assert first.timestamp == 1234.0
    assert first.source == f"{meta.hex}.resume"


def test_corrupt_artifacts_become_anomalies_not_crashes(visited_profile, tmp_path):
    root, base = visited_profile
    work = tmp_path / "copy"
    shutil.copytree(root, work)
    (work / "AAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAA.torrent").write_bytes(b"not bencode")
    (work / "BBBBBBBBBBBBBBBBBBBBBBBBBBBBBBBBBBBBBBBB.resume").write_bytes(b"d3:fooe")
    good = (work / f"{base.hex().upper()}.torrent").read_bytes()
    (work / "DEADBEEFDEADBEEFDEADBEEFDEADBEEFDEADBEEF.torrent").write_bytes(good)

    report = inspect_profile(work)
    problems = dict(report.anomalies)
    assert "AAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAA.torrent" in problems
    assert "BBBBBBBBBBBBBBBBBBBBBBBBBBBBBBBBBBBBBBBB.resume" in problems
    assert "does not match" in problems["DEADBEEFDEADBEEFDEADBEEFDEADBEEFDEADBEEF.torrent"]
    assert {t.infohash.hex() for t in report.torrents} >= {base.hex()}


def test_reconstruct_site_matches_published_bytes(visited_profile):
    root, base = visited_profile
    assert reconstruct_site(root, base) == SITE


def test_reconstruct_flags_rotted_pieces(tmp_path):
    store = ProfileStore.create(tmp_path / "p", clock=lambda: 42.0)
    payload = bytes(range(256)) * 192  # 3 pieces
    meta = build_torrent({"blob.bin": payload})
    store.store_content(meta, payload, publisher=True)

    content = store._content_path(meta)
    raw = bytearray(content.read_bytes())
    raw[16384 : 2 * 16384] = b"\0" * 16384  # piece 1 rots on disk
    content.write_bytes(bytes(raw))

    rebuilt = reconstruct_torrent(store.root, meta.infohash)
    assert rebuilt.pieces_present == 2
    assert rebuilt.gaps == {"blob.bin": ((16384, 32768),)}
    tree_bytes = rebuilt.tree["blob.bin"]
    assert tree_bytes[:16384] == payload[:16384]
    assert tree_bytes[2 * 16384 :] == payload[2 * 16384 :]
    assert tree_bytes[16384 : 2 * 16384] == b"\0" * 16384
    with pytest.raises(MemberIncomplete):
        reconstruct_site(store.root, meta.infohash)


def test_cache_without_torrent_exports_raw_pieces(tmp_path):
    store = ProfileStore.create(tmp_path / "p", clock=lambda: 42.0)
    payload = bytes(range(256)) * 100
    meta = build_torrent({"blob.bin": payload})
    store.store_content(meta, payload, publisher=True)
    store.torrent_path(meta.hex).unlink()

    with pytest.raises(NoMatchingTorrent):
        reconstruct_torrent(store.root, meta.infohash)
    pieces = export_raw_pieces(store.root, meta.infohash)
    assert b"".join(p.data for p in pieces) == payload
    assert all(p.sha1 == hashlib.sha1(p.data).hexdigest() for p in pieces)


def machine_with(profile_root, tmp_path, user_data=True):
    machine = tmp_path / "machine"
    roaming = machine / "AppData" / "Roaming" / "BitTorrent" / "Maelstrom"
    shutil.copytree(profile_root, roaming)
    if user_data:
        default = machine / "AppData" / "Local" / "Maelstrom" / "User Data" / "Default"
        default.mkdir(parents=True)
        (default / "History").write_bytes(b"sqlite-ish")
    return machine


def test_remnants_full_install_is_history_kept(visited_profile, tmp_path):
    root, base = visited_profile
    machine = machine_with(root, tmp_path, user_data=True)
    report = detect_remnants(machine)
    assert report.mode == "history_kept"
    assert report.profile_roots == ("AppData/Roaming/BitTorrent/Maelstrom",)
    assert report.user_data_roots == ("AppData/Local/Maelstrom/User Data",)


def test_remnants_after_history_removing_uninstall(visited_profile, tmp_path):
    root, base = visited_profile
    machine = machine_with(root, tmp_path, user_data=True)
    shutil.rmtree(machine / "AppData" / "Local")

    report = detect_remnants(machine)
    assert report.mode == "history_removed"
    assert (base.hex(), True) in report.sites
    recovered = report.profiles[0]
    assert {t.infohash.hex() for t in recovered.torrents} == {
        h.lower() for h in ProfileStore(root).list_torrents()
    }
    # the surviving store still yields the site, byte for byte
    rebuilt = reconstruct_site(
        machine / "AppData" / "Roaming" / "BitTorrent" / "Maelstrom", base
    )
    assert rebuilt == SITE
    assert remnant_json(report) == remnant_json(detect_remnants(machine))


def test_remnants_empty_tree_and_user_data_only(tmp_path):
    empty = tmp_path / "empty"
    empty.mkdir()
    assert detect_remnants(empty).mode == "no_evidence"

    odd = tmp_path / "odd" / "AppData" / "Local" / "Maelstrom" / "User Data"
    odd.mkdir(parents=True)
    assert detect_remnants(tmp_path / "odd").mode == "unknown"
