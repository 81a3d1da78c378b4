"""Kademlia-style routing primitives: node ids, XOR metric, k-buckets."""

from __future__ import annotations

import ipaddress
from dataclasses import dataclass, field

K = 8
ID_BITS = 160
GOOD_WINDOW = 900.0  # seconds since last contact before "questionable"
MAX_FAILS = 2


class WrongLength(ValueError):
    pass


def check_node_id(node_id: bytes) -> bytes:
    if len(node_id) != 20:
        raise WrongLength(f"node id must be 20 bytes, got {len(node_id)}")
    return node_id


def xor_distance(a: bytes, b: bytes) -> int:
    """XOR of two node ids as a 160-bit big-endian unsigned integer."""
    check_node_id(a)
    check_node_id(b)
    return int.from_bytes(a, "big") ^ int.from_bytes(b, "big")


@dataclass(frozen=True, order=True)
class CompactPeer:
    """IPv4 endpoint; exactly 6 bytes on the wire."""

    ip: bytes  # 4 raw bytes
    port: int

    def __post_init__(self):
        if len(self.ip) != 4:
            raise WrongLength(f"ipv4 address must be 4 bytes, got {len(self.ip)}")
        if not 1 <= self.port <= 0xFFFF:
            raise ValueError(f"port {self.port} out of range")

    @classmethod
    def make(cls, ip: str, port: int) -> "CompactPeer":
        return cls(ipaddress.IPv4Address(ip).packed, port)

    @property
    def ip_str(self) -> str:
        return str(ipaddress.IPv4Address(self.ip))

    def __str__(self) -> str:
        return f"{self.ip_str}:{self.port}"


def encode_compact_peer(peer: CompactPeer) -> bytes:
    return peer.ip + peer.port.to_bytes(2, "big")


def decode_compact_peer(data: bytes) -> CompactPeer:
    if len(data) != 6:
        raise WrongLength(f"compact peer must be 6 bytes, got {len(data)}")
    return CompactPeer(data[:4], int.from_bytes(data[4:], "big"))


def encode_node_entry(node_id: bytes, peer: CompactPeer) -> bytes:
    return check_node_id(node_id) + encode_compact_peer(peer)


def decode_node_blob(blob: bytes) -> list[tuple[bytes, CompactPeer]]:
    """Split a concatenation of 26-byte id++peer entries."""
    if len(blob) % 26 != 0:
        raise WrongLength(f"node blob length {len(blob)} is not a multiple of 26")
    out = []
    for i in range(0, len(blob), 26):
        out.append((blob[i : i + 20], decode_compact_peer(blob[i + 20 : i + 26])))
    return out


@dataclass
class NodeEntry:
    id: bytes
    peer: CompactPeer
    last_seen: float
    fails: int = 0

    def state(self, now: float) -> str:
        if self.fails >= MAX_FAILS:
            return "bad"
        if now - self.last_seen > GOOD_WINDOW:
            return "questionable"
        return "good"


@dataclass
class RoutingTable:
    """Fixed 160 k-buckets: bucket i holds distances in [2^i, 2^(i+1))."""

    own_id: bytes
    buckets: list[list[NodeEntry]] = field(
        default_factory=lambda: [[] for _ in range(ID_BITS)]
    )
    last_refresh: list[float] = field(default_factory=lambda: [0.0] * ID_BITS)

    def __post_init__(self):
        check_node_id(self.own_id)

    def bucket_index(self, node_id: bytes) -> int:
        distance = xor_distance(self.own_id, node_id)
        if distance == 0:
            raise ValueError("own id has no bucket")
        return distance.bit_length() - 1

    def get(self, node_id: bytes) -> NodeEntry | None:
        for entry in self.buckets[self.bucket_index(node_id)]:
            if entry.id == node_id:
                return entry
        return None

    def insert(self, node_id: bytes, peer: CompactPeer, now: float) -> bool:
        """Insert or refresh; full buckets shed a bad entry first, else the
        stalest questionable one, else the newcomer is dropped."""
        if node_id == self.own_id:
            return False
        index = self.bucket_index(node_id)
        bucket = self.buckets[index]
        self.last_refresh[index] = now
        for entry in bucket:
            if entry.id == node_id:
                entry.peer = peer
                entry.last_seen = now
                entry.fails = 0
                return True
        newcomer = NodeEntry(node_id, peer, now)
        if len(bucket) < K:
            bucket.append(newcomer)
            return True
        for i, entry in enumerate(bucket):
            if entry.state(now) == "bad":
                bucket[i] = newcomer
                return True
        stale = min(
            (e for e in bucket if e.state(now) == "questionable"),
            key=lambda e: e.last_seen,
            default=None,
        )
        if stale is not None:
            bucket[bucket.index(stale)] = newcomer
            return True
        return False

    def note_fail(self, node_id: bytes) -> None:
        entry = self.get(node_id)
        if entry is not None:
            entry.fails += 1

    def remove(self, node_id: bytes) -> None:
        index = self.bucket_index(node_id)
        self.buckets[index] = [e for e in self.buckets[index] if e.id != node_id]

    def entries(self) -> list[NodeEntry]:
        return [entry for bucket in self.buckets for entry in bucket]

    def closest(self, target: bytes, k: int = K) -> list[NodeEntry]:
        """k nearest entries to target, nearest first. Linear scan; the
        table is desk-scale (≤ 1280 entries) so this beats bucket walking."""
        check_node_id(target)
        t = int.from_bytes(target, "big")
        return sorted(
            self.entries(), key=lambda e: int.from_bytes(e.id, "big") ^ t
        )[:k]

    def stale_buckets(self, now: float, interval: float) -> list[int]:
        """Indices of populated buckets with no activity for `interval`."""
        return [
            i
            for i, bucket in enumerate(self.buckets)
            if bucket and now - self.last_refresh[i] >= interval
        ]

    def __len__(self) -> int:
        return sum(len(b) for b in self.buckets)

    def check_invariants(self, now: float | None = None) -> None:
        """Exhaustive scan used by tests: placement, size, uniqueness."""
        seen: set[bytes] = set()
        for index, bucket in enumerate(self.buckets):
            assert len(bucket) <= K, f"bucket {index} over k"
            for entry in bucket:
                assert entry.id not in seen, "duplicate node id"
                seen.add(entry.id)
                distance = xor_distance(self.own_id, entry.id)
                assert distance.bit_length() - 1 == index, "entry in wrong bucket"
