"""dht.dat: the node table snapshot written next to the profile.

Layout is a bencoded dictionary {id: 20 bytes, nodes: count, peers: blob}.
Canonical key order puts "id" first, so every file starts with the byte
span "d2:id20:".  This writer stores 6-byte IP:port entries; the loader
also accepts 26-byte id++endpoint entries from other writers, using the
declared count to pick the stride.
"""

from __future__ import annotations

from dataclasses import dataclass

from .. import bencode
from ..bencode import MalformedInput
from .routing import CompactPeer, decode_compact_peer, encode_compact_peer
from .state import DhtState


class BadIdLength(ValueError):
    pass


class PeersBlobNotMultipleOf6(ValueError):
    pass


@dataclass(frozen=True)
class DhtDat:
    own_id: bytes
    count: int  # declared entry count
    peers: tuple[CompactPeer, ...]
    node_ids: tuple[bytes, ...]  # parallel to peers when stride is 26, else empty
    stride: int  # 6 or 26

    @property
    def consistent(self) -> bool:
        return self.count == len(self.peers)


def save_dht_dat(state: DhtState) -> bytes:
    entries = state.table.entries()
    blob = b"".join(encode_compact_peer(e.peer) for e in entries)
    return bencode.encode({b"id": state.own_id, b"nodes": len(entries), b"peers": blob})


def load_dht_dat(data: bytes) -> DhtDat:
    value, _ = bencode.decode_lenient(data)
    if not isinstance(value, dict):
        raise MalformedInput("dht.dat is not a dictionary", 0)
    own_id = value.get(b"id", b"")
    if not isinstance(own_id, bytes) or len(own_id) != 20:
        raise BadIdLength(f"id key holds {len(own_id) if isinstance(own_id, bytes) else 'non-bytes'}, want 20 bytes")
    count = value.get(b"nodes", 0)
    if not isinstance(count, int) or count < 0:
        count = 0
    blob = value.get(b"peers", b"")
    if not isinstance(blob, bytes):
        raise MalformedInput("peers key is not a byte string", 0)

    if count > 0 and len(blob) == count * 26:
        stride = 26
    elif len(blob) % 6 == 0:
        stride = 6
    elif len(blob) % 26 == 0:
        stride = 26
    else:
        raise PeersBlobNotMultipleOf6(f"peers blob length {len(blob)} fits neither stride")

    peers: list[CompactPeer] = []
    node_ids: list[bytes] = []
    for i in range(0, len(blob), stride):
        chunk = blob[i : i + stride]
        if stride == 26:
            node_ids.append(chunk[:20])
            chunk = chunk[20:]
        peers.append(decode_compact_peer(chunk))
    return DhtDat(
        own_id=own_id,
        count=count,
        peers=tuple(peers),
        node_ids=tuple(node_ids),
        stride=stride,
    )
