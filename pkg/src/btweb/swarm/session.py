"""Per-peer transfer sessions and piece selection."""

from __future__ import annotations

from dataclasses import dataclass, field

from ..dht.routing import CompactPeer
from ..store.resume import ResumeFile

PIPELINE_DEPTH = 4  # in-flight piece requests per session
MAX_PEER_FAILS = 3  # strikes (bad data, refusals, timeouts) before we drop a peer


@dataclass
class TransferStats:
    """Per-torrent byte counters. The ratio is always recomputed; a node
    that has downloaded nothing yet has no meaningful ratio (None)."""

    uploaded: int = 0
    downloaded: int = 0

    @property
    def ratio(self) -> float | None:
        if self.downloaded == 0:
            return None
        return self.uploaded / self.downloaded

    def add_uploaded(self, n: int) -> None:
        if n < 0:
            raise ValueError("byte counters never decrease")
        self.uploaded += n

    def add_downloaded(self, n: int) -> None:
        if n < 0:
            raise ValueError("byte counters never decrease")
        self.downloaded += n


@dataclass
class PeerSession:
    remote: CompactPeer
    infohash: bytes
    peer_id: bytes | None = None
    bitfield: bytearray = field(default_factory=bytearray)  # their pieces, MSB-first
    piece_count: int = 0
    in_flight: dict[int, float] = field(default_factory=dict)  # index -> sent_at
    uploaded: int = 0
    downloaded: int = 0
    fails: int = 0

    def set_their_bitfield(self, bitfield: bytes, piece_count: int) -> None:
        self.bitfield = bytearray(bitfield)
        self.piece_count = piece_count

    def peer_has(self, index: int) -> bool:
        if not 0 <= index < self.piece_count:
            return False
        byte = index // 8
        if byte >= len(self.bitfield):
            return False
        return bool(self.bitfield[byte] >> (7 - index % 8) & 1)

    def mark_peer_missing(self, index: int) -> None:
        """A refused "missing" response overrides their advertised bit."""
        if 0 <= index < self.piece_count and index // 8 < len(self.bitfield):
            self.bitfield[index // 8] &= ~(1 << (7 - index % 8)) & 0xFF

    def can_request(self) -> bool:
        return len(self.in_flight) < PIPELINE_DEPTH


def next_request(
    session: PeerSession,
    have: ResumeFile,
    claimed: set[int] = frozenset(),
    policy: str = "sequential",
    availability: dict[int, int] | None = None,
) -> int | None:
    """Pick the next piece to ask this peer for, or None.

    Sequential (the default) takes the lowest missing index the peer has,
    so pages assemble front to back.  Rarest-first weighs a supplied
    availability census and is meant for multi-seed simulations.
    """
    candidates = (
        i
        for i in range(have.piece_count)
        if not have.has_piece(i)
        and session.peer_has(i)
        and i not in session.in_flight
        and i not in claimed
    )
    if policy == "sequential":
        return next(candidates, None)
    if policy == "rarest":
        counts = availability or {}
        return min(candidates, key=lambda i: (counts.get(i, 0), i), default=None)
    raise ValueError(f"unknown piece policy {policy!r}")
