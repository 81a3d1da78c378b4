"""Node orchestration: the page-load pipeline over DHT, swarm, and store.

A Node owns one datagram endpoint and composes the routing table, the
piece engine, and the profile store into the thing a browser talks to.
Page loads run as LoadJobs through six phases — resolving, discovering,
fetching_metadata, transferring, assembling, ready — with failed as the
terminal error state carrying "<phase>: <cause>".  Phases only move
forward, and at most one job exists per site; concurrent requests for
the same infohash join it.

There are no trackers here, so the info dictionary itself comes from
peers found via the DHT; a job's milestone log therefore shows peer
discovery completing before metadata resolution.
"""

from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass, field

from ..bundle import (
    DEFAULT_ENTRY,
    MANIFEST_PATH,
    BundleManifest,
    Member,
    assemble,
    decode_manifest,
    load_aliases,
    member_tree,
    publish,
    resolve_url,
    save_aliases,
    torrent_trees,
)
from ..dht.datfile import load_dht_dat, save_dht_dat
from ..dht.driver import DhtDriver
from ..dht.routing import CompactPeer
from ..dht.state import DhtState
from ..store.profile import ProfileStore
from ..swarm.driver import SwarmDriver
from ..swarm.engine import DEFAULT_MAX_SESSIONS, SwarmEngine
from ..torrent import InfoDict, TorrentMeta, concat_files, parse_magnet

PHASES = (
    "resolving",
    "discovering",
    "fetching_metadata",
    "transferring",
    "assembling",
    "ready",
    "failed",
)

LOAD_TIMEOUT = 30.0  # seconds from load start to forced failure
LOOKUP_RETRY = 5.0  # re-poll interval while discovery finds nobody
ANNOUNCE_INTERVAL = 900.0  # re-announce served content this often
NODE_TICK = 1.0


class GatewayStopped(RuntimeError):
    pass


@dataclass
class LoadJob:
    url: str
    infohash: bytes
    path: str
    started_at: float
    deadline: float
    phase: str = "resolving"
    phase_log: list[tuple[float, str]] = field(default_factory=list)
    steps: list[tuple] = field(default_factory=list)
    error: str | None = None
    pieces_done: int = 0
    pieces_total: int = 0
    manifest: BundleManifest | None = None
    members_pending: set[bytes] = field(default_factory=set)
    peers: list[CompactPeer] = field(default_factory=list)
    lookup_at: float = 0.0

    @property
    def terminal(self) -> bool:
        return self.phase in ("ready", "failed")

    def advance(self, phase: str, now: float) -> None:
        if PHASES.index(phase) <= PHASES.index(self.phase):
            raise ValueError(f"cannot move from {self.phase} to {phase}")
        self.phase = phase
        self.phase_log.append((now, phase))


@dataclass(frozen=True)
class SharingStatus:
    infohash: bytes
    served: bool
    peer_count: int
    uploaded: int
    downloaded: int


def _file_span(info: InfoDict, path: bytes) -> tuple[int, int] | None:
    """Byte range of one file inside the torrent's concatenation."""
    if info.files is None:
        return (0, info.length or 0) if path == info.name else None
    offset = 0
    for entry in info.files:
        length = entry.length
        if b"/".join(entry.path) == path:
            return offset, offset + length
        offset += length
    return None


class Node:
    def __init__(
        self,
        store: ProfileStore,
        wire,
        *,
        rng: random.Random | None = None,
        max_sessions: int = DEFAULT_MAX_SESSIONS,
    ):
        self.store = store
        self.wire = wire
        self.settings = store.load_settings()

        # identity and bootstrap peers come from a previous run when one exists
        node_id = None
        self.saved_peers: tuple[CompactPeer, ...] = ()
        raw = store.load_dht()
        if raw is not None:
            try:
                dat = load_dht_dat(raw)
                node_id = dat.own_id
                self.saved_peers = dat.peers
            except Exception:
                pass  # unreadable snapshot: start a fresh identity
        if node_id is None:
            node_id = (rng or random.Random()).randbytes(20)
        self.node_id = node_id

        self.dht = DhtState(node_id)
        self.dht_driver = DhtDriver(self.dht, wire)
        self.engine = SwarmEngine(
            store, peer_id=node_id, settings=self.settings, max_sessions=max_sessions
        )
        self.swarm_driver = SwarmDriver(self.engine, wire)
        self.dht_driver.on_event = self._on_dht_event
        self.swarm_driver.on_event = self._on_swarm_event

        self.aliases = load_aliases(store._read(store.aliases_path))
        self.jobs: dict[bytes, LoadJob] = {}
        self.site_trees: dict[bytes, dict[str, bytes]] = {}
        self.served_sites: dict[bytes, tuple[bytes, ...]] = {}
        self.log: deque[tuple] = deque(maxlen=2000)
        self.running = False
        self.http_enabled = False
        self._member_sites: dict[bytes, bytes] = {}
        self._announce_due: dict[bytes, float] = {}

    # -- lifecycle -----------------------------------------------------

    def start(
        self,
        *,
        bootstrap: tuple[CompactPeer, ...] = (),
        router: CompactPeer | None = None,
    ) -> None:
        self.store.acquire_lock()  # raises ProfileLocked for a second writer
        self.running = True
        self.http_enabled = True
        now = self.wire.now()

        settings = self.store.load_settings()
        changes = {"sessions": settings.sessions + 1}
        if settings.port != self.wire.local.port:
            # the endpoint actually bound wins over whatever was stored
            changes["port"] = self.wire.local.port
        self.store.save_settings(settings.replace(**changes))
        self.settings = self.store.load_settings()
        self.engine.settings = self.settings

        seeds = tuple(
            p
            for p in dict.fromkeys(tuple(bootstrap) + self.saved_peers)
            if p != self.wire.local
        )
        self.dht_driver.start(router=router, seeds=seeds)
        self.swarm_driver.start()

        for hex_name in sorted(self.store.list_torrents()):
            infohash = bytes.fromhex(hex_name)
            if self.store.resume(infohash).is_complete:
                self._announce(infohash, now)
        self._restore_sites()
        self.wire.call_later(NODE_TICK, self._tick)

    def stop_http(self) -> None:
        """Close the browser-facing surface.  With background seeding on,
        DHT participation and piece serving continue; with it off the
        whole node goes down."""
        self.http_enabled = False
        if not self.settings.background_seed:
            self.shutdown()

    def shutdown(self) -> None:
        if not self.running:
            return
        self.running = False
        self.http_enabled = False
        self.dht_driver.stop()
        self.swarm_driver.stop()
        self.store.save_dht(save_dht_dat(self.dht))
        settings = self.store.load_settings()
        self.store.save_settings(
            settings.replace(
                uploaded_total=settings.uploaded_total + self.engine.session_uploaded,
                downloaded_total=settings.downloaded_total
                + self.engine.session_downloaded,
            )
        )
        self.store.release_lock()
        close = getattr(self.wire, "close", None)
        if close is not None:
            close()

    def on_datagram(self, payload: bytes, source: CompactPeer) -> bool:
        """Route one datagram to whichever protocol claims it."""
        if self.dht_driver.on_datagram(payload, source):
            return True
        return self.swarm_driver.on_datagram(payload, source)

    def _tick(self) -> None:
        if not self.running:
            return
        now = self.wire.now()
        for job in list(self.jobs.values()):
            if job.terminal:
                continue
            if now >= job.deadline:
                cause = "NoPeers" if job.phase == "discovering" else "Timeout"
                self._fail(job, now, cause)
                continue
            if job.phase == "discovering" and now - job.lookup_at >= LOOKUP_RETRY:
                self._poll_peers(job, now)
            elif job.lookup_at == 0.0:
                # a starved transfer asked for fresh sources
                self._poll_peers(job, now)
                # sorted so send order never depends on set hashing; replays
                # of the same seed must emit identical message sequences
                for member in sorted(job.members_pending):
                    if member != job.infohash:
                        self.dht_driver.lookup_peers(member)
        for infohash, due in list(self._announce_due.items()):
            if now >= due:
                self._announce(infohash, now)
        self.wire.call_later(NODE_TICK, self._tick)

    # -- publishing ------------------------------------------------------

    def publish_site(
        self,
        tree,
        split_threshold: int | None = None,
        *,
        name: str = "site",
        alias: str | None = None,
    ) -> tuple[list[TorrentMeta], BundleManifest]:
        metas, manifest = publish(tree, split_threshold, name=name)
        trees = torrent_trees(tree, manifest)
        for meta in metas:
            content = concat_files(meta.info, trees[meta.infohash])
            self.store.store_content(meta, content, publisher=True)
        site = metas[0].infohash
        members = tuple(m.infohash for m in manifest.members)
        self.site_trees[site] = assemble(manifest, trees)
        self.served_sites[site] = members
        if alias:
            self.aliases[alias] = site
            self._write_aliases()
        if self.running:
            now = self.wire.now()
            for infohash in members:
                self._announce(infohash, now)
        return metas, manifest

    def _write_aliases(self) -> None:
        path = self.store.aliases_path
        tmp = path.with_suffix(".tmp")
        tmp.write_bytes(save_aliases(self.aliases))
        tmp.replace(path)

    # -- the load pipeline -------------------------------------------------

    def load_site(self, url: str) -> LoadJob:
        now = self.wire.now()
        if url.lower().startswith("magnet:"):
            infohash = parse_magnet(url).infohash
            path = DEFAULT_ENTRY
        else:
            infohash, path = resolve_url(url, self.aliases)
        existing = self.jobs.get(infohash)
        if existing is not None and existing.phase != "failed":
            return existing
        job = LoadJob(
            url=url,
            infohash=infohash,
            path=path,
            started_at=now,
            deadline=now + LOAD_TIMEOUT,
        )
        job.phase_log.append((now, "resolving"))
        self.jobs[infohash] = job
        job.advance("discovering", now)
        if not self._finish_if_cached(job, now):
            self._poll_peers(job, now)
        return job

    def _finish_if_cached(self, job: LoadJob, now: float) -> bool:
        """A site whose members are all complete locally needs no network."""
        if not self.store.has_torrent(job.infohash):
            return False
        if not self.store.resume(job.infohash).is_complete:
            return False
        manifest = self._read_manifest(job.infohash)
        if manifest is None:
            return False
        for member in manifest.members:
            if not self.store.has_torrent(member.infohash):
                return False
            if not self.store.resume(member.infohash).is_complete:
                return False
        job.advance("fetching_metadata", now)
        job.steps.append(("metadata", job.infohash, "cached"))
        job.advance("transferring", now)
        job.manifest = manifest
        job.steps.append(("manifest", tuple(m.infohash for m in manifest.members)))
        self._refresh_progress(job)
        self._finish(job, now)
        return True

    def _poll_peers(self, job: LoadJob, now: float) -> None:
        job.lookup_at = now
        self.dht_driver.lookup_peers(job.infohash)

    def _site_peers(self, job: LoadJob, peers, now: float) -> None:
        for peer in peers:
            if peer != self.wire.local and peer not in job.peers:
                job.peers.append(peer)
        if job.phase == "discovering":
            if not job.peers:
                return  # the tick keeps polling until the deadline
            job.steps.append(("peers", job.infohash, len(job.peers)))
            job.advance("fetching_metadata", now)
            if self.store.has_torrent(job.infohash):
                job.steps.append(("metadata", job.infohash, "cached"))
                job.advance("transferring", now)
            self.swarm_driver.begin_download(job.infohash, list(job.peers))
        elif not job.terminal and peers:
            self.swarm_driver.add_peers(job.infohash, list(job.peers))

    def _read_manifest(self, infohash: bytes) -> BundleManifest | None:
        """Decode the site manifest from cached pieces, or synthesize the
        one-member form for a torrent published without one.  None while
        the manifest file's pieces are still missing."""
        meta = self.store.torrent_meta(infohash)
        span = _file_span(meta.info, MANIFEST_PATH)
        if span is None:
            name = meta.info.name.decode("utf-8", "replace")
            return BundleManifest(name=name, version=1, members=(Member(infohash, ""),))
        data = self._cached_range(meta, span[0], span[1])
        if data is None:
            return None
        return decode_manifest(data, base_infohash=infohash)

    def _cached_range(self, meta: TorrentMeta, start: int, end: int) -> bytes | None:
        if start >= end:
            return b""
        plen = meta.info.piece_length
        resume = self.store.resume(meta.infohash)
        first = start // plen
        chunks = []
        for index in range(first, (end - 1) // plen + 1):
            if not resume.has_piece(index):
                return None
            data = self.store.get_piece(meta.infohash, index)
            if data is None:
                return None
            chunks.append(data)
        blob = b"".join(chunks)
        return blob[start - first * plen : end - first * plen]

    def _try_manifest(self, job: LoadJob, now: float) -> None:
        if job.manifest is not None or not self.store.has_torrent(job.infohash):
            return
        manifest = self._read_manifest(job.infohash)
        if manifest is None:
            return
        job.manifest = manifest
        job.steps.append(("manifest", tuple(m.infohash for m in manifest.members)))
        for member in manifest.members:
            self._member_sites[member.infohash] = job.infohash
            if not self._complete(member.infohash):
                job.members_pending.add(member.infohash)
        for member_ih in sorted(job.members_pending):
            if member_ih != job.infohash:
                self._ensure_member(job, member_ih)
        self._refresh_progress(job)

    def _complete(self, infohash: bytes) -> bool:
        if not self.store.has_torrent(infohash):
            return False
        return self.store.resume(infohash).is_complete

    def _ensure_member(self, job: LoadJob, member_ih: bytes) -> None:
        if member_ih in self.engine.downloads:
            if job.peers:
                self.swarm_driver.add_peers(member_ih, list(job.peers))
        elif job.peers or self.store.has_torrent(member_ih):
            self.swarm_driver.begin_download(member_ih, list(job.peers))
        self.dht_driver.lookup_peers(member_ih)

    def _refresh_progress(self, job: LoadJob | None) -> None:
        if job is None:
            return
        members = (
            tuple(m.infohash for m in job.manifest.members)
            if job.manifest is not None
            else (job.infohash,)
        )
        done = total = 0
        for infohash in members:
            try:
                resume = self.store.resume(infohash)
            except KeyError:
                continue  # metadata still on its way
            done += resume.complete_count
            total += resume.piece_count
        job.pieces_done, job.pieces_total = done, total

    def _finish(self, job: LoadJob, now: float) -> None:
        job.advance("assembling", now)
        self._refresh_progress(job)
        job.steps.append(("pieces_cached", job.pieces_done))
        trees = {}
        try:
            for member in job.manifest.members:
                meta = self.store.torrent_meta(member.infohash)
                content = self.store.read_content(member.infohash)
                trees[member.infohash] = member_tree(meta, content)
            tree = assemble(job.manifest, trees)
        except Exception as err:
            self._fail(job, now, f"{type(err).__name__}: {err}")
            return
        job.steps.append(("scripts_skipped",))  # files are served as published
        self.site_trees[job.infohash] = tree
        members = tuple(m.infohash for m in job.manifest.members)
        self.served_sites[job.infohash] = members
        for infohash in members:
            self._announce(infohash, now)
        job.steps.append(("sharing", members))
        job.advance("ready", now)

    def _fail(self, job: LoadJob, now: float, cause: str) -> None:
        job.error = f"{job.phase}: {cause}"
        self.engine.cancel(job.infohash)
        for member_ih in sorted(job.members_pending):
            self.engine.cancel(member_ih)
        job.advance("failed", now)

    # -- event routing -----------------------------------------------------

    def _job_for(self, infohash: bytes) -> LoadJob | None:
        job = self.jobs.get(infohash)
        if job is not None:
            return job
        site = self._member_sites.get(infohash)
        return self.jobs.get(site) if site is not None else None

    def _on_dht_event(self, event: tuple) -> None:
        self.log.append(("dht",) + event)
        if event[0] != "peers_found":
            return
        _, target, peers = event
        peers = [p for p in peers if p != self.wire.local]
        now = self.wire.now()
        job = self.jobs.get(target)
        if job is not None and not job.terminal:
            self._site_peers(job, peers, now)
            return
        site = self._member_sites.get(target)
        job = self.jobs.get(site) if site is not None else None
        if job is None or job.terminal or not peers:
            return
        for peer in peers:
            if peer not in job.peers:
                job.peers.append(peer)
        if target in job.members_pending:
            if target in self.engine.downloads:
                self.swarm_driver.add_peers(target, peers)
            elif not self._complete(target):
                self.swarm_driver.begin_download(target, peers)

    def _on_swarm_event(self, event: tuple) -> None:
        self.log.append(("swarm",) + event)
        kind = event[0]
        now = self.wire.now()
        if kind == "metadata":
            infohash = event[1]
            job = self.jobs.get(infohash)
            if job is not None and job.phase == "fetching_metadata":
                job.steps.append(("metadata", infohash, "fetched"))
                job.advance("transferring", now)
            self._refresh_progress(self._job_for(infohash))
        elif kind == "piece":
            infohash = event[1]
            job = self._job_for(infohash)
            if job is None or job.terminal:
                return
            self._refresh_progress(job)
            if infohash == job.infohash and job.manifest is None:
                self._try_manifest(job, now)
        elif kind == "complete":
            infohash = event[1]
            job = self._job_for(infohash)
            if job is None or job.terminal:
                return
            if infohash == job.infohash and job.manifest is None:
                self._try_manifest(job, now)
            if job.manifest is None:
                return
            job.members_pending.discard(infohash)
            self._refresh_progress(job)
            if not job.members_pending and job.phase == "transferring":
                self._finish(job, now)
        elif kind == "failed":
            job = self._job_for(event[1])
            if job is not None and not job.terminal:
                self._fail(job, now, str(event[2]))
        elif kind == "no_sources":
            job = self._job_for(event[1])
            if job is not None and not job.terminal:
                job.lookup_at = 0.0  # the tick will ask the DHT again

    # -- sharing -------------------------------------------------------

    def _announce(self, infohash: bytes, now: float) -> None:
        self.dht_driver.lookup_peers(infohash, announce_port=self.settings.port)
        self._announce_due[infohash] = now + ANNOUNCE_INTERVAL

    def sharing_status(self, infohash: bytes) -> SharingStatus:
        stats = self.engine.stats_for(infohash)
        peers = len(self.engine.serve_peers.get(infohash, {}))
        return SharingStatus(
            infohash=infohash,
            served=self.running and self._complete(infohash),
            peer_count=peers,
            uploaded=stats.uploaded,
            downloaded=stats.downloaded,
        )

    def _restore_sites(self) -> None:
        """Rebuild served-site tables for sites fully cached by earlier runs."""
        for hex_name in sorted(self.store.list_torrents()):
            infohash = bytes.fromhex(hex_name)
            if infohash in self.served_sites or not self._complete(infohash):
                continue
            meta = self.store.torrent_meta(infohash)
            if _file_span(meta.info, MANIFEST_PATH) is None:
                continue  # not a site base
            manifest = self._read_manifest(infohash)
            if manifest is None or not all(
                self._complete(m.infohash) for m in manifest.members
            ):
                continue
            trees = {
                m.infohash: member_tree(
                    self.store.torrent_meta(m.infohash),
                    self.store.read_content(m.infohash),
                )
                for m in manifest.members
            }
            try:
                self.site_trees[infohash] = assemble(manifest, trees)
            except Exception:
                continue  # a malformed manifest is not a served site
            self.served_sites[infohash] = tuple(m.infohash for m in manifest.members)
            for member in manifest.members:
                self._member_sites[member.infohash] = infohash
