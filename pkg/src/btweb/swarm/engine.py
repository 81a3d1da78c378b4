"""Swarm coordinator: downloads, metadata fetch, and piece serving.

One engine owns all peer traffic for a node.  Like the DHT state machine
it is time-as-a-parameter and wire-free: handlers return (destination,
message) batches for a driver to send, and observable progress surfaces
as drained events.  All piece bytes flow through the profile store, so
everything served is hash-verified and everything fetched is persisted
the moment it verifies.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from .. import bencode
from ..dht.routing import CompactPeer
from ..store.profile import HashMismatch, ProfileStore
from ..store.resume import ResumeFile
from ..store.settings import Settings
from ..torrent import TorrentMeta, parse_torrent
from .messages import (
    METADATA_CHUNK,
    REFUSE_MISSING,
    REFUSE_THROTTLE,
    SwarmMessage,
)
from .policy import MissingPiece, ServeRefusal, serve_piece
from .ratelimit import TokenBucket
from .session import MAX_PEER_FAILS, PeerSession, TransferStats, next_request

REQUEST_TIMEOUT = 2.0  # seconds before a piece request is resent
MAX_REQUEST_RETRIES = 3
DEFAULT_MAX_SESSIONS = 50  # concurrent peer sessions, config default

Outgoing = tuple[CompactPeer, SwarmMessage]


class SwarmError(Exception):
    pass


class NoPeers(SwarmError):
    pass


class MetadataHashMismatch(SwarmError):
    pass


class SwarmTimeout(SwarmError):
    pass


@dataclass
class MetadataFetch:
    """Info-dictionary retrieval: one peer at a time, one chunk in flight."""

    order: list[CompactPeer]
    current: int = 0  # index into order
    total: int | None = None
    chunks: dict[int, bytes] = field(default_factory=dict)
    sent_at: float = 0.0
    retries: int = 0

    @property
    def peer(self) -> CompactPeer | None:
        return self.order[self.current] if self.current < len(self.order) else None

    @property
    def next_chunk(self) -> int:
        return len(self.chunks)


@dataclass
class Download:
    infohash: bytes
    policy: str = "sequential"
    meta: TorrentMeta | None = None
    resume: ResumeFile | None = None
    known_peers: list[CompactPeer] = field(default_factory=list)
    sessions: dict[CompactPeer, PeerSession] = field(default_factory=dict)
    pending: dict[CompactPeer, tuple[float, int]] = field(default_factory=dict)
    assigned: dict[int, tuple[CompactPeer, float, int]] = field(default_factory=dict)
    throttled_until: dict[CompactPeer, float] = field(default_factory=dict)
    metadata: MetadataFetch | None = None
    done: bool = False
    failed: str | None = None
    starved: bool = False  # "no live sources" already reported

    def live_sources(self) -> int:
        if self.metadata is not None and self.metadata.peer is not None:
            return 1
        return len(self.sessions) + len(self.pending)


class SwarmEngine:
    def __init__(
        self,
        store: ProfileStore,
        peer_id: bytes,
        settings: Settings | None = None,
        max_sessions: int = DEFAULT_MAX_SESSIONS,
    ):
        if len(peer_id) != 20:
            raise ValueError("peer id must be 20 bytes")
        self.store = store
        self.peer_id = peer_id
        self.settings = settings if settings is not None else store.load_settings()
        self.max_sessions = max_sessions
        self.stats: dict[bytes, TransferStats] = {}
        self.downloads: dict[bytes, Download] = {}
        self.upload_bucket = TokenBucket(self.settings.upload_rate)
        self.download_bucket = TokenBucket(self.settings.download_rate)
        self.session_uploaded = 0
        self.session_downloaded = 0
        self.serve_peers: dict[bytes, dict[CompactPeer, float]] = {}
        self.events: list[tuple] = []
        self._info_bytes: dict[bytes, bytes | None] = {}
        self._publisher: dict[bytes, bool] = {}

    # -- bookkeeping ---------------------------------------------------

    def drain_events(self) -> list[tuple]:
        out, self.events = self.events, []
        return out

    def stats_for(self, infohash: bytes) -> TransferStats:
        stats = self.stats.get(infohash)
        if stats is None:
            try:
                resume = self.store.resume(infohash)
                stats = TransferStats(resume.uploaded_bytes, resume.downloaded_bytes)
            except KeyError:
                stats = TransferStats()
            self.stats[infohash] = stats
        return stats

    def is_publisher(self, infohash: bytes) -> bool:
        flag = self._publisher.get(infohash)
        if flag is None:
            try:
                flag = self.store.resume(infohash).publisher
            except KeyError:
                flag = False
            self._publisher[infohash] = flag
        return flag

    def _total_uploaded(self) -> int:
        return self.settings.uploaded_total + self.session_uploaded

    def _session_count(self) -> int:
        return sum(d.live_sources() for d in self.downloads.values())

    def _persist_counters(self, infohash: bytes) -> None:
        stats = self.stats_for(infohash)
        try:
            resume = self.store.resume(infohash)
        except KeyError:
            return
        resume.uploaded_bytes = stats.uploaded
        resume.downloaded_bytes = stats.downloaded
        self.store.save_resume(resume)

    def _info_span(self, infohash: bytes) -> bytes | None:
        """Exact stored info-dictionary bytes, from the torrent file on
        disk. Verified against the infohash once; a file that cannot
        reproduce its own hash is never served as metadata."""
        if infohash in self._info_bytes:
            return self._info_bytes[infohash]
        span = None
        raw = self.store._read(self.store.torrent_path(infohash.hex().upper()))
        if raw is not None:
            for key, start, end in bencode.top_level_spans(raw):
                if key == b"info":
                    span = raw[start:end]
            if span is not None and hashlib.sha1(span).digest() != infohash:
                span = None
        self._info_bytes[infohash] = span
        return span

    # -- download control ------------------------------------------------

    def begin_download(
        self,
        infohash: bytes,
        peers: list[CompactPeer],
        now: float,
        policy: str = "sequential",
    ) -> list[Outgoing]:
        """Start (or extend) fetching a torrent. Without local metadata
        this begins with an info-dictionary fetch and needs ≥1 peer."""
        download = self.downloads.get(infohash)
        if download is None:
            download = Download(infohash, policy=policy)
            self.downloads[infohash] = download
            if self.store.has_torrent(infohash):
                download.meta = self.store.torrent_meta(infohash)
                download.resume = self.store.resume(infohash)
                if download.resume.is_complete:
                    download.done = True
                    self.events.append(("complete", infohash))
                    return []
        if download.meta is None and download.metadata is None:
            if not peers:
                del self.downloads[infohash]
                raise NoPeers("metadata fetch needs at least one peer")
            download.metadata = MetadataFetch(order=[])
        return self.add_peers(infohash, peers, now)

    def cancel(self, infohash: bytes) -> None:
        """Abandon a download. Verified pieces stay cached for a retry."""
        self.downloads.pop(infohash, None)

    def add_peers(
        self, infohash: bytes, peers: list[CompactPeer], now: float
    ) -> list[Outgoing]:
        download = self.downloads.get(infohash)
        if download is None or download.done:
            return []
        out: list[Outgoing] = []
        for peer in peers:
            if peer not in download.known_peers:
                download.known_peers.append(peer)
        if download.metadata is not None:
            fetch = download.metadata
            for peer in peers:
                if peer not in fetch.order:
                    fetch.order.append(peer)
            idle = fetch.sent_at == 0.0 or download.failed is not None
            if fetch.peer is not None and idle:
                download.failed = None
                out.append(self._metadata_request(fetch, infohash, now))
        elif download.meta is not None:
            for peer in download.known_peers:
                out.extend(self._dial(download, peer, now))
        if out:
            download.starved = False
        return out

    def _dial(self, download: Download, peer: CompactPeer, now: float) -> list[Outgoing]:
        if peer in download.sessions or peer in download.pending:
            return []
        if self._session_count() >= self.max_sessions:
            return []
        download.pending[peer] = (now, 0)
        msg = SwarmMessage("handshake", download.infohash, peer_id=self.peer_id)
        return [(peer, msg)]

    def _metadata_request(
        self, fetch: MetadataFetch, infohash: bytes, now: float
    ) -> Outgoing:
        fetch.sent_at = now
        msg = SwarmMessage("metadata_request", infohash, chunk=fetch.next_chunk)
        return (fetch.peer, msg)

    def _rotate_metadata_peer(
        self, download: Download, now: float, reason: str
    ) -> list[Outgoing]:
        fetch = download.metadata
        if fetch.peer is not None:
            self.events.append(
                ("metadata_rejected", download.infohash, fetch.peer, reason)
            )
        fetch.current += 1
        fetch.chunks.clear()
        fetch.total = None
        fetch.retries = 0
        if fetch.peer is None:
            download.failed = reason
            self.events.append(("failed", download.infohash, reason))
            return []
        return [self._metadata_request(fetch, download.infohash, now)]

    # -- message handling --------------------------------------------------

    def on_datagram(
        self, payload: bytes, source: CompactPeer, now: float
    ) -> tuple[bool, list[Outgoing]]:
        from ..bencode import MalformedInput
        from .messages import decode_swarm

        try:
            msg = decode_swarm(payload, source)
        except MalformedInput:
            return False, []
        return True, self.handle_message(msg, now)

    def handle_message(self, msg: SwarmMessage, now: float) -> list[Outgoing]:
        handler = getattr(self, f"_on_{msg.kind}", None)
        if handler is None or msg.source is None:
            return []
        return handler(msg, now)

    # serving side

    def _on_handshake(self, msg: SwarmMessage, now: float) -> list[Outgoing]:
        out: list[Outgoing] = []
        download = self.downloads.get(msg.infohash)
        if download is not None and not download.done and download.meta is not None:
            # whoever greets us is also a potential source
            out.extend(self._dial(download, msg.source, now))
        if not self.store.has_torrent(msg.infohash):
            out.append((msg.source, self._refusal(msg.infohash, MissingPiece())))
            return out
        resume = self.store.resume(msg.infohash)
        self.serve_peers.setdefault(msg.infohash, {})[msg.source] = now
        out.append(
            (
                msg.source,
                SwarmMessage(
                    "bitfield",
                    msg.infohash,
                    peer_id=self.peer_id,
                    bitfield=bytes(resume.bitfield),
                    piece_count=resume.piece_count,
                ),
            )
        )
        return out

    def _refusal(
        self,
        infohash: bytes,
        refusal: ServeRefusal,
        index: int | None = None,
        chunk: int | None = None,
    ) -> SwarmMessage:
        self.events.append(("refused", infohash, refusal.code))
        return SwarmMessage(
            "refuse",
            infohash,
            code=refusal.code,
            retry_after=refusal.retry_after,
            index=index,
            chunk=chunk,
        )

    def _on_request(self, msg: SwarmMessage, now: float) -> list[Outgoing]:
        infohash, index = msg.infohash, msg.index
        if not self.store.has_torrent(infohash):
            return [(msg.source, self._refusal(infohash, MissingPiece(), index=index))]
        self.serve_peers.setdefault(infohash, {})[msg.source] = now
        try:
            data = serve_piece(
                self.store,
                infohash,
                index,
                stats=self.stats_for(infohash),
                settings=self.settings,
                publisher=self.is_publisher(infohash),
                bucket=self.upload_bucket,
                total_uploaded=self._total_uploaded(),
                now=now,
            )
        except IndexError:
            return [(msg.source, self._refusal(infohash, MissingPiece(), index=index))]
        except ServeRefusal as refusal:
            return [(msg.source, self._refusal(infohash, refusal, index=index))]
        self.session_uploaded += len(data)
        self._persist_counters(infohash)
        self.events.append(("served", infohash, index, msg.source))
        return [(msg.source, SwarmMessage("piece", infohash, index=index, data=data))]

    def _on_metadata_request(self, msg: SwarmMessage, now: float) -> list[Outgoing]:
        span = self._info_span(msg.infohash)
        offset = msg.chunk * METADATA_CHUNK
        if span is None or offset >= len(span):
            return [
                (msg.source, self._refusal(msg.infohash, MissingPiece(), chunk=msg.chunk))
            ]
        self.serve_peers.setdefault(msg.infohash, {})[msg.source] = now
        return [
            (
                msg.source,
                SwarmMessage(
                    "metadata_data",
                    msg.infohash,
                    chunk=msg.chunk,
                    total_size=len(span),
                    data=span[offset : offset + METADATA_CHUNK],
                ),
            )
        ]

    # download side

    def _on_bitfield(self, msg: SwarmMessage, now: float) -> list[Outgoing]:
        download = self.downloads.get(msg.infohash)
        if download is None or download.done or download.meta is None:
            return []
        download.pending.pop(msg.source, None)
        session = download.sessions.get(msg.source)
        if session is None:
            session = PeerSession(remote=msg.source, infohash=msg.infohash)
            download.sessions[msg.source] = session
            self.events.append(("peer_joined", msg.infohash, msg.source))
        session.peer_id = msg.peer_id
        session.set_their_bitfield(msg.bitfield, msg.piece_count)
        return self._pump(download, now)

    def _on_piece(self, msg: SwarmMessage, now: float) -> list[Outgoing]:
        download = self.downloads.get(msg.infohash)
        if download is None or download.done or download.resume is None:
            return []
        index = msg.index
        session = download.sessions.get(msg.source)
        if session is not None:
            session.in_flight.pop(index, None)
        assigned = download.assigned.pop(index, None)
        if assigned is None and (session is None or download.resume.has_piece(index)):
            return []  # stale duplicate or unsolicited
        if download.resume.has_piece(index):
            return self._pump(download, now)
        try:
            download.resume = self.store.put_piece(msg.infohash, index, msg.data)
        except (HashMismatch, IndexError):
            return self._strike(download, msg.source, now, "bad piece data")
        stats = self.stats_for(msg.infohash)
        stats.add_downloaded(len(msg.data))
        self.session_downloaded += len(msg.data)
        if session is not None:
            session.downloaded += len(msg.data)
        self._persist_counters(msg.infohash)
        self.events.append(("piece", msg.infohash, index, msg.source))
        if download.resume.is_complete:
            download.done = True
            download.sessions.clear()
            download.pending.clear()
            download.assigned.clear()
            self.events.append(("complete", msg.infohash))
            return []
        return self._pump(download, now)

    def _on_metadata_data(self, msg: SwarmMessage, now: float) -> list[Outgoing]:
        download = self.downloads.get(msg.infohash)
        if download is None or download.metadata is None:
            return []
        fetch = download.metadata
        if msg.source != fetch.peer or msg.chunk != fetch.next_chunk:
            return []
        if msg.total_size <= 0 or not msg.data:
            return self._rotate_metadata_peer(download, now, "metadata_hash_mismatch")
        if fetch.total is None:
            fetch.total = msg.total_size
        fetch.chunks[msg.chunk] = msg.data
        fetch.retries = 0
        received = sum(len(c) for c in fetch.chunks.values())
        if received < fetch.total:
            return [self._metadata_request(fetch, msg.infohash, now)]
        blob = b"".join(fetch.chunks[i] for i in range(len(fetch.chunks)))
        if hashlib.sha1(blob).digest() != msg.infohash:
            return self._rotate_metadata_peer(download, now, "metadata_hash_mismatch")
        try:
            meta = parse_torrent(b"d4:info" + blob + b"e")
        except Exception:
            return self._rotate_metadata_peer(download, now, "metadata_hash_mismatch")
        self.store.add_torrent(meta)
        self._info_bytes.pop(msg.infohash, None)
        download.meta = meta
        download.resume = self.store.resume(msg.infohash)
        download.metadata = None
        self.events.append(("metadata", msg.infohash))
        out: list[Outgoing] = []
        for peer in download.known_peers:
            out.extend(self._dial(download, peer, now))
        return out

    def _on_refuse(self, msg: SwarmMessage, now: float) -> list[Outgoing]:
        download = self.downloads.get(msg.infohash)
        if download is None or download.done:
            return []
        if msg.chunk is not None and download.metadata is not None:
            if msg.source == download.metadata.peer:
                return self._rotate_metadata_peer(download, now, "metadata_unavailable")
            return []
        session = download.sessions.get(msg.source)
        if session is None or msg.index is None:
            return []
        session.in_flight.pop(msg.index, None)
        holder = download.assigned.get(msg.index)
        if holder is not None and holder[0] == msg.source:
            del download.assigned[msg.index]
        if msg.code == REFUSE_THROTTLE:
            download.throttled_until[msg.source] = now + (msg.retry_after or 1.0)
        elif msg.code == REFUSE_MISSING:
            session.mark_peer_missing(msg.index)
        else:
            # ratio or cap: the peer is refusing on principle, let it be
            return self._drop_session(download, msg.source, now, msg.code.decode())
        return self._pump(download, now)

    # -- peer health -----------------------------------------------------

    def _strike(
        self, download: Download, peer: CompactPeer, now: float, reason: str
    ) -> list[Outgoing]:
        session = download.sessions.get(peer)
        if session is None:
            return self._pump(download, now)
        session.fails += 1
        if session.fails >= MAX_PEER_FAILS:
            return self._drop_session(download, peer, now, reason)
        return self._pump(download, now)

    def _drop_session(
        self, download: Download, peer: CompactPeer, now: float, reason: str
    ) -> list[Outgoing]:
        session = download.sessions.pop(peer, None)
        download.pending.pop(peer, None)
        download.throttled_until.pop(peer, None)
        if session is not None:
            for index in list(session.in_flight):
                holder = download.assigned.get(index)
                if holder is not None and holder[0] == peer:
                    del download.assigned[index]
            self.events.append(("peer_dropped", download.infohash, peer, reason))
        if peer in download.known_peers:
            download.known_peers.remove(peer)
        return self._pump(download, now)

    # -- request scheduling ------------------------------------------------

    def _availability(self, download: Download) -> dict[int, int]:
        counts: dict[int, int] = {}
        for session in download.sessions.values():
            for index in range(session.piece_count):
                if session.peer_has(index):
                    counts[index] = counts.get(index, 0) + 1
        return counts

    def _pump(self, download: Download, now: float) -> list[Outgoing]:
        """Keep every live session's pipeline full, one claimed piece per
        request across all sessions."""
        if download.done or download.meta is None or download.resume is None:
            return []
        out: list[Outgoing] = []
        claimed = set(download.assigned)
        availability = (
            self._availability(download) if download.policy == "rarest" else None
        )
        info = download.meta.info
        for session in list(download.sessions.values()):
            if download.throttled_until.get(session.remote, 0.0) > now:
                continue
            while session.can_request():
                index = next_request(
                    session,
                    download.resume,
                    claimed,
                    policy=download.policy,
                    availability=availability,
                )
                if index is None:
                    break
                if self.settings.download_rate is not None and not self.download_bucket.try_take(
                    info.piece_len(index), now
                ):
                    return out  # paced; the next tick pumps again
                session.in_flight[index] = now
                download.assigned[index] = (session.remote, now, 0)
                claimed.add(index)
                out.append(
                    (session.remote, SwarmMessage("request", download.infohash, index=index))
                )
        if (
            not download.done
            and download.failed is None
            and download.live_sources() == 0
            and not download.starved
        ):
            download.starved = True
            self.events.append(("no_sources", download.infohash))
        return out

    # -- timers ------------------------------------------------------------

    def tick(self, now: float) -> list[Outgoing]:
        out: list[Outgoing] = []
        for download in list(self.downloads.values()):
            if download.done or download.failed is not None:
                continue
            fetch = download.metadata
            if fetch is not None and fetch.peer is not None:
                if fetch.sent_at and now - fetch.sent_at >= REQUEST_TIMEOUT:
                    fetch.retries += 1
                    if fetch.retries >= MAX_REQUEST_RETRIES:
                        out.extend(
                            self._rotate_metadata_peer(download, now, "metadata_timeout")
                        )
                    else:
                        out.append(self._metadata_request(fetch, download.infohash, now))
                continue
            for peer, (sent_at, attempts) in list(download.pending.items()):
                if now - sent_at < REQUEST_TIMEOUT:
                    continue
                if attempts + 1 >= MAX_REQUEST_RETRIES:
                    del download.pending[peer]
                    if peer in download.known_peers:
                        download.known_peers.remove(peer)
                    continue
                download.pending[peer] = (now, attempts + 1)
                out.append(
                    (
                        peer,
                        SwarmMessage(
                            "handshake", download.infohash, peer_id=self.peer_id
                        ),
                    )
                )
            for index, (peer, sent_at, attempts) in list(download.assigned.items()):
                if now - sent_at < REQUEST_TIMEOUT:
                    continue
                session = download.sessions.get(peer)
                if session is None or attempts + 1 >= MAX_REQUEST_RETRIES:
                    del download.assigned[index]
                    if session is not None:
                        session.in_flight.pop(index, None)
                    out.extend(self._strike(download, peer, now, "request timeout"))
                    continue
                download.assigned[index] = (peer, now, attempts + 1)
                out.append(
                    (peer, SwarmMessage("request", download.infohash, index=index))
                )
            out.extend(self._pump(download, now))
        return out
