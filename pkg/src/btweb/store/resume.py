"""Per-torrent resume files: completed-piece bitfield and transfer totals.

created_at anchors forensic timelines, so it is written at first persist
and never touched again; the profile store enforces that on save.
"""

from __future__ import annotations

from dataclasses import dataclass

from .. import bencode
from ..bencode import BValue
from ..torrent import InfoDict


class BitfieldLengthMismatch(ValueError):
    pass


def bitfield_size(piece_count: int) -> int:
    return (piece_count + 7) // 8


@dataclass
class ResumeFile:
    infohash: bytes
    piece_count: int
    bitfield: bytearray  # MSB-first: piece 0 is bit 7 of byte 0
    created_at: int  # seconds since epoch, write-once
    updated_at: int
    uploaded_bytes: int = 0
    downloaded_bytes: int = 0
    publisher: bool = False
    extra: tuple[tuple[bytes, BValue], ...] = ()

    def __post_init__(self):
        if len(self.bitfield) != bitfield_size(self.piece_count):
            raise BitfieldLengthMismatch(
                f"bitfield is {len(self.bitfield)} bytes for {self.piece_count} pieces"
            )
        if self.created_at > self.updated_at:
            raise ValueError("created_at is after updated_at")

    @classmethod
    def fresh(
        cls, infohash: bytes, piece_count: int, now: int, publisher: bool = False
    ) -> "ResumeFile":
        return cls(
            infohash=infohash,
            piece_count=piece_count,
            bitfield=bytearray(bitfield_size(piece_count)),
            created_at=now,
            updated_at=now,
            publisher=publisher,
        )

    def has_piece(self, index: int) -> bool:
        if not 0 <= index < self.piece_count:
            return False
        return bool(self.bitfield[index // 8] >> (7 - index % 8) & 1)

    def set_piece(self, index: int) -> None:
        if not 0 <= index < self.piece_count:
            raise IndexError(index)
        self.bitfield[index // 8] |= 1 << (7 - index % 8)

    @property
    def complete_count(self) -> int:
        return sum(self.has_piece(i) for i in range(self.piece_count))

    @property
    def is_complete(self) -> bool:
        return self.complete_count == self.piece_count

    @property
    def completeness(self) -> float:
        if self.piece_count == 0:
            return 1.0
        return self.complete_count / self.piece_count

    def bits(self) -> str:
        return "".join("1" if self.has_piece(i) else "0" for i in range(self.piece_count))


def check_bitfield(resume: ResumeFile, info: InfoDict) -> None:
    """Deferred invariant: the bitfield must cover the torrent's pieces."""
    if resume.piece_count != info.num_pieces:
        raise BitfieldLengthMismatch(
            f"resume covers {resume.piece_count} pieces, torrent has {info.num_pieces}"
        )


def persist_resume(resume: ResumeFile) -> bytes:
    out: dict[bytes, BValue] = {
        b"infohash": resume.infohash,
        b"pieces": resume.piece_count,
        b"bitfield": bytes(resume.bitfield),
        b"created_at": resume.created_at,
        b"updated_at": resume.updated_at,
        b"uploaded": resume.uploaded_bytes,
        b"downloaded": resume.downloaded_bytes,
        b"publisher": int(resume.publisher),
    }
    for key, value in resume.extra:
        out.setdefault(key, value)
    return bencode.encode(out)


def load_resume(data: bytes) -> ResumeFile:
    value, _ = bencode.decode_lenient(data)
    if not isinstance(value, dict):
        raise bencode.MalformedInput("resume file is not a dictionary", 0)

    def geti(key: bytes, default: int = 0) -> int:
        v = value.get(key)
        return v if isinstance(v, int) else default

    infohash = value.get(b"infohash")
    if not isinstance(infohash, bytes) or len(infohash) != 20:
        raise bencode.MalformedInput("resume has no 20-byte infohash", 0)
    bitfield = value.get(b"bitfield", b"")
    if not isinstance(bitfield, bytes):
        raise bencode.MalformedInput("bitfield is not a byte string", 0)
    known = {
        b"infohash", b"pieces", b"bitfield", b"created_at", b"updated_at",
        b"uploaded", b"downloaded", b"publisher",
    }
    return ResumeFile(
        infohash=infohash,
        piece_count=geti(b"pieces"),
        bitfield=bytearray(bitfield),
        created_at=geti(b"created_at"),
        updated_at=geti(b"updated_at", geti(b"created_at")),
        uploaded_bytes=geti(b"uploaded"),
        downloaded_bytes=geti(b"downloaded"),
        publisher=bool(geti(b"publisher")),
        extra=tuple((k, v) for k, v in value.items() if k not in known),
    )
