"""DHT node state machine: pure transitions, time as a parameter.

All mutation flows through handle_message / tick / the lookup starters on
one logical task.  Nothing here reads a clock or RNG, so two identically
seeded networks replay byte-for-byte; the transport owns real time.
Outgoing traffic is returned as (destination, message) pairs.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from .routing import (
    K,
    CompactPeer,
    RoutingTable,
    check_node_id,
    decode_node_blob,
    encode_node_entry,
    xor_distance,
)
from .wire import (
    ERR_PROTOCOL,
    ERR_UNKNOWN_METHOD,
    QUERY_KINDS,
    DhtMessage,
)

ALPHA = 3  # parallel queries per lookup
RPC_TIMEOUT = 2.0  # seconds before a retransmit
MAX_RETRIES = 3  # unanswered sends before a peer counts as failed
PEER_TTL = 1800.0  # announced peers expire after 30 minutes
TOKEN_ROTATE = 300.0  # announce-token epoch length
TOKEN_LEN = 8
REFRESH_INTERVAL = 900.0  # idle buckets get a maintenance ping this often

Outgoing = tuple[CompactPeer, DhtMessage]


class BootstrapTimeout(RuntimeError):
    """Raised by drivers when bootstrap ends with nothing answering."""


@dataclass
class Transaction:
    tid: bytes
    kind: str
    dest: CompactPeer
    dest_id: bytes | None
    msg: DhtMessage
    sent_at: float
    attempts: int = 1
    lookup_id: int | None = None


@dataclass
class Candidate:
    peer: CompactPeer
    id: bytes | None
    state: str = "new"  # new | inflight | done | failed
    token: bytes | None = None


@dataclass
class Lookup:
    id: int
    target: bytes
    mode: str  # "nodes" | "peers"
    announce_port: int | None = None
    is_bootstrap: bool = False
    candidates: dict[CompactPeer, Candidate] = field(default_factory=dict)
    found: dict[CompactPeer, None] = field(default_factory=dict)  # ordered set
    responses: int = 0
    inflight: int = 0
    done: bool = False


class DhtState:
    """One node's identity, routing table, peer storage, and lookups."""

    def __init__(self, own_id: bytes, secret: bytes | None = None):
        self.own_id = check_node_id(own_id)
        self.table = RoutingTable(own_id)
        # infohash -> peer -> announce time; purged lazily against PEER_TTL
        self.storage: dict[bytes, dict[CompactPeer, float]] = {}
        self.outstanding: dict[bytes, Transaction] = {}
        self.lookups: dict[int, Lookup] = {}
        self.secret = secret if secret is not None else hashlib.sha1(b"token:" + own_id).digest()
        self.tokens_issued = 0
        self.next_tid = 0
        self.next_lookup = 0
        self.events: list[tuple] = []

    # -- tokens ------------------------------------------------------

    def _epoch_token(self, ip: bytes, epoch: int) -> bytes:
        secret = hashlib.sha1(self.secret + epoch.to_bytes(8, "big", signed=True)).digest()
        return hashlib.sha1(secret + ip).digest()[:TOKEN_LEN]

    def token_for(self, ip: bytes, now: float) -> bytes:
        return self._epoch_token(ip, int(now // TOKEN_ROTATE))

    def token_valid(self, ip: bytes, token: bytes, now: float) -> bool:
        epoch = int(now // TOKEN_ROTATE)
        return token in (self._epoch_token(ip, epoch), self._epoch_token(ip, epoch - 1))

    # -- plumbing ----------------------------------------------------

    def _new_tid(self) -> bytes:
        while True:
            tid = (self.next_tid & 0xFFFF).to_bytes(2, "big")
            self.next_tid += 1
            if tid not in self.outstanding:
                return tid

    def _query(
        self,
        kind: str,
        dest: CompactPeer,
        dest_id: bytes | None,
        now: float,
        lookup_id: int | None = None,
        **payload,
    ) -> Outgoing:
        msg = DhtMessage(
            kind=kind, transaction_id=self._new_tid(), sender_id=self.own_id, **payload
        )
        self.outstanding[msg.transaction_id] = Transaction(
            tid=msg.transaction_id,
            kind=kind,
            dest=dest,
            dest_id=dest_id,
            msg=msg,
            sent_at=now,
            lookup_id=lookup_id,
        )
        return (dest, msg)

    def _purge_storage(self, now: float) -> None:
        for infohash in list(self.storage):
            peers = self.storage[infohash]
            for peer in [p for p, t in peers.items() if now - t > PEER_TTL]:
                del peers[peer]
            if not peers:
                del self.storage[infohash]

    def drain_events(self) -> list[tuple]:
        out, self.events = self.events, []
        return out

    # -- lookups -----------------------------------------------------

    def start_lookup(
        self,
        target: bytes,
        now: float,
        *,
        mode: str = "nodes",
        announce_port: int | None = None,
        seeds: tuple[CompactPeer, ...] = (),
        is_bootstrap: bool = False,
    ) -> tuple[int, list[Outgoing]]:
        check_node_id(target)
        lookup = Lookup(
            id=self.next_lookup,
            target=target,
            mode=mode,
            announce_port=announce_port,
            is_bootstrap=is_bootstrap,
        )
        self.next_lookup += 1
        self.lookups[lookup.id] = lookup
        for entry in self.table.closest(target, K):
            lookup.candidates[entry.peer] = Candidate(entry.peer, entry.id)
        for peer in seeds:
            lookup.candidates.setdefault(peer, Candidate(peer, None))
        if mode == "peers":
            # we may be one of the K closest; our own storage counts
            self._purge_storage(now)
            for peer in self.storage.get(target, {}):
                lookup.found.setdefault(peer)
        out: list[Outgoing] = []
        self._advance(lookup, now, out)
        return lookup.id, out

    def _rank(self, lookup: Lookup) -> list[Candidate]:
        t = int.from_bytes(lookup.target, "big")

        def key(c: Candidate):
            if c.id is None:
                return (-1, c.peer.ip, c.peer.port)
            return (int.from_bytes(c.id, "big") ^ t, c.peer.ip, c.peer.port)

        return sorted(
            (c for c in lookup.candidates.values() if c.state != "failed"), key=key
        )

    def _advance(self, lookup: Lookup, now: float, out: list[Outgoing]) -> None:
        if lookup.done:
            return
        window = self._rank(lookup)[:K]
        for candidate in window:
            if lookup.inflight >= ALPHA:
                break
            if candidate.state != "new":
                continue
            kind = "find_nodes" if lookup.mode == "nodes" else "get_peers"
            payload = (
                {"target": lookup.target}
                if lookup.mode == "nodes"
                else {"infohash": lookup.target}
            )
            out.append(
                self._query(kind, candidate.peer, candidate.id, now, lookup.id, **payload)
            )
            candidate.state = "inflight"
            lookup.inflight += 1
        if lookup.inflight == 0 and all(c.state == "done" for c in window):
            self._finish_lookup(lookup, now, out)

    def _finish_lookup(self, lookup: Lookup, now: float, out: list[Outgoing]) -> None:
        lookup.done = True
        del self.lookups[lookup.id]
        if lookup.is_bootstrap and lookup.responses == 0:
            self.events.append(("bootstrap_failed",))
            return
        if lookup.mode == "peers":
            peers = tuple(lookup.found)
            self.events.append(("peers_found", lookup.target, peers))
            if lookup.announce_port is not None:
                for candidate in self._rank(lookup)[:K]:
                    if candidate.state == "done" and candidate.token:
                        out.append(
                            self._query(
                                "announce_peer",
                                candidate.peer,
                                candidate.id,
                                now,
                                infohash=lookup.target,
                                port=lookup.announce_port,
                                token=candidate.token,
                            )
                        )
                self.events.append(("announced", lookup.target, lookup.announce_port))
        else:
            self.events.append(("lookup_done", lookup.target, len(self.table)))
            if lookup.is_bootstrap:
                self.events.append(("bootstrap_done", len(self.table)))

    # -- message handling --------------------------------------------

    def _respond_to_query(self, msg: DhtMessage, now: float) -> list[Outgoing]:
        source = msg.source
        reply = dict(kind="response", transaction_id=msg.transaction_id, sender_id=self.own_id)
        if msg.kind == "ping":
            return [(source, DhtMessage(**reply))]
        if msg.kind == "find_nodes":
            blob = b"".join(
                encode_node_entry(e.id, e.peer) for e in self.table.closest(msg.target, K)
            )
            return [(source, DhtMessage(**reply, nodes=blob))]
        if msg.kind == "get_peers":
            self._purge_storage(now)
            token = self.token_for(source.ip, now)
            self.tokens_issued += 1
            stored = self.storage.get(msg.infohash)
            if stored:
                peers = tuple(sorted(stored))
                return [(source, DhtMessage(**reply, peers=peers, token=token))]
            blob = b"".join(
                encode_node_entry(e.id, e.peer) for e in self.table.closest(msg.infohash, K)
            )
            return [(source, DhtMessage(**reply, nodes=blob, token=token))]
        if msg.kind == "announce_peer":
            if not self.token_valid(source.ip, msg.token or b"", now):
                return [
                    (
                        source,
                        DhtMessage(
                            kind="error",
                            transaction_id=msg.transaction_id,
                            error_code=ERR_PROTOCOL,
                            error_message=b"bad token",
                        ),
                    )
                ]
            announced = CompactPeer(source.ip, msg.port)
            self.storage.setdefault(msg.infohash, {})[announced] = now
            return [(source, DhtMessage(**reply))]
        raise AssertionError(msg.kind)

    def _on_reply(self, tx: Transaction, msg: DhtMessage, now: float, out: list[Outgoing]) -> None:
        lookup = self.lookups.get(tx.lookup_id) if tx.lookup_id is not None else None
        if lookup is None:
            return
        candidate = lookup.candidates.get(tx.dest)
        if candidate is not None and candidate.state == "inflight":
            lookup.inflight -= 1
            candidate.state = "done" if msg.kind == "response" else "failed"
        if msg.kind == "response":
            lookup.responses += 1
            if candidate is not None:
                candidate.id = msg.sender_id
                if msg.token is not None:
                    candidate.token = msg.token
            for node_id, peer in decode_node_blob(msg.nodes):
                if node_id != self.own_id and peer not in lookup.candidates:
                    lookup.candidates[peer] = Candidate(peer, node_id)
            for peer in msg.peers:
                lookup.found.setdefault(peer)
        self._advance(lookup, now, out)


def handle_message(
    state: DhtState, msg: DhtMessage, now: float
) -> tuple[DhtState, list[Outgoing]]:
    """Apply one decoded datagram. Queries get replies; responses and
    errors settle their transaction. Unknown kinds earn a 204 error and
    leave the rest of the state untouched."""
    if msg.source is None:
        raise ValueError("message has no source endpoint")
    out: list[Outgoing] = []

    if msg.kind in QUERY_KINDS:
        out.extend(state._respond_to_query(msg, now))
        state.table.insert(msg.sender_id, msg.source, now)
        return state, out

    if msg.kind == "response":
        tx = state.outstanding.pop(msg.transaction_id, None)
        if tx is None:
            return state, out  # late or forged; nothing to settle
        state.table.insert(msg.sender_id, msg.source, now)
        state._on_reply(tx, msg, now, out)
        return state, out

    if msg.kind == "error":
        tx = state.outstanding.pop(msg.transaction_id, None)
        if tx is None:
            return state, out
        if tx.dest_id is not None:
            state.table.note_fail(tx.dest_id)
        state._on_reply(tx, msg, now, out)
        return state, out

    out.append(
        (
            msg.source,
            DhtMessage(
                kind="error",
                transaction_id=msg.transaction_id,
                error_code=ERR_UNKNOWN_METHOD,
                error_message=b"method unknown",
            ),
        )
    )
    return state, out


def bootstrap(
    state: DhtState, router: CompactPeer, now: float
) -> tuple[DhtState, list[Outgoing]]:
    """Find our own neighborhood through a known router endpoint."""
    _, out = state.start_lookup(
        state.own_id, now, mode="nodes", seeds=(router,), is_bootstrap=True
    )
    return state, out


def announce(
    state: DhtState,
    infohash: bytes,
    port: int,
    now: float,
    self_peer: CompactPeer | None = None,
) -> tuple[DhtState, list[Outgoing]]:
    """Lookup peers for infohash, then announce ourselves on port.

    When the caller knows its own endpoint it is recorded in local
    storage too: the announcer may be among the K closest nodes, and in
    a two-node network it is the only one holding the registration.
    """
    if self_peer is not None:
        state.storage.setdefault(infohash, {})[CompactPeer(self_peer.ip, port)] = now
    _, out = state.start_lookup(infohash, now, mode="peers", announce_port=port)
    return state, out


def find_peers(
    state: DhtState, infohash: bytes, now: float
) -> tuple[DhtState, list[Outgoing]]:
    _, out = state.start_lookup(infohash, now, mode="peers")
    return state, out


def tick(state: DhtState, now: float) -> tuple[DhtState, list[Outgoing]]:
    """Retransmit stale queries, fail peers out of retries, advance
    lookups past the casualties, and expire stored announcements."""
    out: list[Outgoing] = []
    for tid in list(state.outstanding):
        tx = state.outstanding.get(tid)
        if tx is None or now - tx.sent_at < RPC_TIMEOUT:
            continue
        if tx.attempts < MAX_RETRIES:
            tx.attempts += 1
            tx.sent_at = now
            out.append((tx.dest, tx.msg))
            continue
        del state.outstanding[tid]
        if tx.dest_id is not None:
            state.table.note_fail(tx.dest_id)
        lookup = state.lookups.get(tx.lookup_id) if tx.lookup_id is not None else None
        if lookup is not None:
            candidate = lookup.candidates.get(tx.dest)
            if candidate is not None and candidate.state == "inflight":
                lookup.inflight -= 1
                candidate.state = "failed"
            state._advance(lookup, now, out)
    for index in state.table.stale_buckets(now, REFRESH_INTERVAL):
        # idle maintenance: ping the stalest entry so liveness stays known
        stale = min(state.table.buckets[index], key=lambda e: e.last_seen)
        out.append(state._query("ping", stale.peer, stale.id, now))
        state.table.last_refresh[index] = now
    state._purge_storage(now)
    return state, out
