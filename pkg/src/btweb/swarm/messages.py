"""Peer-exchange datagram codec.

Swarm frames share the node's socket with KRPC traffic and are told
apart by y="s".  Framing is one flat bencoded dictionary: "m" names the
message, "ih" routes it to a torrent, the rest is per-kind payload.
A request is answered by piece, metadata_request by metadata_data, and
either may come back as refuse carrying a reason code.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .. import bencode
from ..bencode import MalformedInput
from ..dht.routing import CompactPeer

SWARM_KINDS = (
    "handshake",
    "bitfield",
    "request",
    "piece",
    "metadata_request",
    "metadata_data",
    "refuse",
)

METADATA_CHUNK = 16384  # info-dictionary transfer unit

REFUSE_RATIO = b"ratio"
REFUSE_CAP = b"cap"
REFUSE_THROTTLE = b"throttle"
REFUSE_MISSING = b"missing"


@dataclass(frozen=True)
class SwarmMessage:
    kind: str
    infohash: bytes
    peer_id: bytes | None = None  # handshake, bitfield
    bitfield: bytes = b""  # bitfield
    piece_count: int = 0  # bitfield
    index: int | None = None  # request, piece, refuse echo
    data: bytes = b""  # piece, metadata_data
    chunk: int | None = None  # metadata_request, metadata_data, refuse echo
    total_size: int = 0  # metadata_data: full info-dictionary byte length
    code: bytes = b""  # refuse
    retry_after: float | None = None  # refuse: seconds (wire: milliseconds)
    source: CompactPeer | None = None  # stamped by the transport on receive


def encode_swarm(msg: SwarmMessage) -> bytes:
    if msg.kind not in SWARM_KINDS:
        raise ValueError(f"cannot encode swarm message kind {msg.kind!r}")
    out: dict = {b"y": b"s", b"m": msg.kind.encode(), b"ih": msg.infohash}
    if msg.kind == "handshake":
        out[b"id"] = msg.peer_id
    elif msg.kind == "bitfield":
        out[b"id"] = msg.peer_id
        out[b"bf"] = msg.bitfield
        out[b"n"] = msg.piece_count
    elif msg.kind == "request":
        out[b"i"] = msg.index
    elif msg.kind == "piece":
        out[b"i"] = msg.index
        out[b"d"] = msg.data
    elif msg.kind == "metadata_request":
        out[b"c"] = msg.chunk
    elif msg.kind == "metadata_data":
        out[b"c"] = msg.chunk
        out[b"sz"] = msg.total_size
        out[b"d"] = msg.data
    else:  # refuse
        out[b"code"] = msg.code
        if msg.retry_after is not None:
            out[b"retry"] = math.ceil(msg.retry_after * 1000)
        if msg.index is not None:
            out[b"i"] = msg.index
        if msg.chunk is not None:
            out[b"c"] = msg.chunk
    return bencode.encode(out)


def _want_bytes(container: dict, key: bytes, length: int | None = None) -> bytes:
    value = container.get(key)
    if not isinstance(value, bytes):
        raise MalformedInput(f"missing or non-string {key.decode()!r}", 0)
    if length is not None and len(value) != length:
        raise MalformedInput(f"{key.decode()!r} must be {length} bytes", 0)
    return value


def _want_int(container: dict, key: bytes, minimum: int = 0) -> int:
    value = container.get(key)
    if not isinstance(value, int) or value < minimum:
        raise MalformedInput(f"missing or bad integer {key.decode()!r}", 0)
    return value


def decode_swarm(data: bytes, source: CompactPeer | None = None) -> SwarmMessage:
    """Decode one swarm frame. Raises MalformedInput both for garbage and
    for well-formed bencode that is not a swarm frame; callers treat the
    two the same way and drop the datagram."""
    value = bencode.decode_lenient(data)[0]
    if not isinstance(value, dict) or value.get(b"y") != b"s":
        raise MalformedInput("not a swarm frame", 0)
    kind = _want_bytes(value, b"m").decode("utf-8", "replace")
    if kind not in SWARM_KINDS:
        raise MalformedInput(f"unknown swarm message {kind!r}", 0)
    infohash = _want_bytes(value, b"ih", 20)

    if kind == "handshake":
        return SwarmMessage(
            kind, infohash, peer_id=_want_bytes(value, b"id", 20), source=source
        )
    if kind == "bitfield":
        return SwarmMessage(
            kind,
            infohash,
            peer_id=_want_bytes(value, b"id", 20),
            bitfield=_want_bytes(value, b"bf"),
            piece_count=_want_int(value, b"n"),
            source=source,
        )
    if kind == "request":
        return SwarmMessage(kind, infohash, index=_want_int(value, b"i"), source=source)
    if kind == "piece":
        return SwarmMessage(
            kind,
            infohash,
            index=_want_int(value, b"i"),
            data=_want_bytes(value, b"d"),
            source=source,
        )
    if kind == "metadata_request":
        return SwarmMessage(kind, infohash, chunk=_want_int(value, b"c"), source=source)
    if kind == "metadata_data":
        return SwarmMessage(
            kind,
            infohash,
            chunk=_want_int(value, b"c"),
            total_size=_want_int(value, b"sz"),
            data=_want_bytes(value, b"d"),
            source=source,
        )
    retry = value.get(b"retry")
    index = value.get(b"i")
    chunk = value.get(b"c")
    return SwarmMessage(
        kind,
        infohash,
        code=_want_bytes(value, b"code"),
        retry_after=retry / 1000 if isinstance(retry, int) else None,
        index=index if isinstance(index, int) else None,
        chunk=chunk if isinstance(chunk, int) else None,
        source=source,
    )
