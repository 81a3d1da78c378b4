"""KRPC-style datagram codec for the DHT message set.

Queries carry keys t/y=q/q/a, responses t/y=r/r, errors t/y=e/e.  The
lookup query is spelled "find_nodes" on the wire throughout this network.
"""

from __future__ import annotations

from dataclasses import dataclass

from .. import bencode
from ..bencode import MalformedInput
from .routing import (
    CompactPeer,
    WrongLength,
    check_node_id,
    decode_compact_peer,
    encode_compact_peer,
)

QUERY_KINDS = ("ping", "find_nodes", "get_peers", "announce_peer")

# KRPC error codes
ERR_GENERIC = 201
ERR_PROTOCOL = 203
ERR_UNKNOWN_METHOD = 204


@dataclass(frozen=True)
class DhtMessage:
    kind: str  # ping | find_nodes | get_peers | announce_peer | response | error
    transaction_id: bytes
    sender_id: bytes | None = None
    target: bytes | None = None
    infohash: bytes | None = None
    token: bytes | None = None
    port: int | None = None
    nodes: bytes = b""
    peers: tuple[CompactPeer, ...] = ()
    error_code: int = 0
    error_message: bytes = b""
    source: CompactPeer | None = None  # stamped by the transport on receive


def encode_message(msg: DhtMessage) -> bytes:
    if msg.kind == "response":
        r: dict = {b"id": msg.sender_id}
        if msg.nodes:
            r[b"nodes"] = msg.nodes
        if msg.peers:
            r[b"values"] = [encode_compact_peer(p) for p in msg.peers]
        if msg.token is not None:
            r[b"token"] = msg.token
        return bencode.encode({b"t": msg.transaction_id, b"y": b"r", b"r": r})
    if msg.kind == "error":
        return bencode.encode(
            {b"t": msg.transaction_id, b"y": b"e", b"e": [msg.error_code, msg.error_message]}
        )
    if msg.kind not in QUERY_KINDS:
        raise ValueError(f"cannot encode message kind {msg.kind!r}")
    a: dict = {b"id": msg.sender_id}
    if msg.kind == "find_nodes":
        a[b"target"] = msg.target
    elif msg.kind == "get_peers":
        a[b"info_hash"] = msg.infohash
    elif msg.kind == "announce_peer":
        a[b"info_hash"] = msg.infohash
        a[b"port"] = msg.port
        a[b"token"] = msg.token
    return bencode.encode(
        {b"t": msg.transaction_id, b"y": b"q", b"q": msg.kind.encode(), b"a": a}
    )


def _want_bytes(container: dict, key: bytes, length: int | None = None) -> bytes:
    value = container.get(key)
    if not isinstance(value, bytes):
        raise MalformedInput(f"missing or non-string {key.decode()!r}", 0)
    if length is not None and len(value) != length:
        raise WrongLength(f"{key.decode()!r} must be {length} bytes, got {len(value)}")
    return value


def decode_message(data: bytes, source: CompactPeer | None = None) -> DhtMessage:
    """Decode one datagram. Raises MalformedInput or WrongLength; the
    caller drops undecodable datagrams without touching node state."""
    value = bencode.decode_lenient(data)[0]
    if not isinstance(value, dict):
        raise MalformedInput("datagram is not a dictionary", 0)
    tid = _want_bytes(value, b"t")
    y = value.get(b"y")

    if y == b"q":
        q = value.get(b"q")
        if not isinstance(q, bytes):
            raise MalformedInput("query without q key", 0)
        a = value.get(b"a")
        if not isinstance(a, dict):
            raise MalformedInput("query without arguments", 0)
        kind = q.decode("utf-8", "replace")
        sender = check_node_id(_want_bytes(a, b"id"))
        target = infohash = token = None
        port = None
        if kind == "find_nodes":
            target = check_node_id(_want_bytes(a, b"target"))
        elif kind == "get_peers":
            infohash = check_node_id(_want_bytes(a, b"info_hash"))
        elif kind == "announce_peer":
            infohash = check_node_id(_want_bytes(a, b"info_hash"))
            token = _want_bytes(a, b"token")
            raw_port = a.get(b"port")
            if not isinstance(raw_port, int) or not 1 <= raw_port <= 0xFFFF:
                raise MalformedInput("announce_peer without usable port", 0)
            port = raw_port
        return DhtMessage(
            kind=kind,
            transaction_id=tid,
            sender_id=sender,
            target=target,
            infohash=infohash,
            token=token,
            port=port,
            source=source,
        )

    if y == b"r":
        r = value.get(b"r")
        if not isinstance(r, dict):
            raise MalformedInput("response without r dictionary", 0)
        sender = check_node_id(_want_bytes(r, b"id"))
        nodes = r.get(b"nodes", b"")
        if not isinstance(nodes, bytes) or len(nodes) % 26 != 0:
            raise MalformedInput("nodes blob not a multiple of 26 bytes", 0)
        peers: list[CompactPeer] = []
        values = r.get(b"values", [])
        if not isinstance(values, list):
            raise MalformedInput("values is not a list", 0)
        for item in values:
            if not isinstance(item, bytes):
                raise MalformedInput("peer value is not a byte string", 0)
            peers.append(decode_compact_peer(item))
        token = r.get(b"token")
        if token is not None and not isinstance(token, bytes):
            raise MalformedInput("token is not a byte string", 0)
        return DhtMessage(
            kind="response",
            transaction_id=tid,
            sender_id=sender,
            nodes=nodes,
            peers=tuple(peers),
            token=token,
            source=source,
        )

    if y == b"e":
        e = value.get(b"e")
        code, text = 0, b""
        if isinstance(e, list):
            if len(e) > 0 and isinstance(e[0], int):
                code = e[0]
            if len(e) > 1 and isinstance(e[1], bytes):
                text = e[1]
        return DhtMessage(
            kind="error",
            transaction_id=tid,
            error_code=code,
            error_message=text,
            source=source,
        )

    raise MalformedInput(f"unknown message class {y!r}", 0)
