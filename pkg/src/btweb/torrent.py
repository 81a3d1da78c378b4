"""Torrent metadata: parse, build, hash, and the magnet URI scheme.

The infohash of a parsed file is SHA-1 over the info dictionary's byte span
exactly as stored, so files written by other clients keep their true
identity even when their encoding is not canonical.  Files built here are
always canonical, which makes publishing deterministic.
"""

from __future__ import annotations

import base64
import hashlib
import re
import urllib.parse
from dataclasses import dataclass

from . import bencode
from .bencode import BValue, MalformedInput

DEFAULT_PIECE_LENGTH = 16 * 1024
MIN_PIECE_LENGTH = 16 * 1024
MAX_PIECE_LENGTH = 4 * 1024 * 1024


class TorrentError(ValueError):
    pass


class MissingField(TorrentError):
    pass


class BadPieces(TorrentError):
    pass


class EmptyInput(TorrentError):
    pass


class BadPieceLength(TorrentError):
    pass


class NotMagnet(TorrentError):
    pass


class MissingXt(TorrentError):
    pass


class BadInfohash(TorrentError):
    pass


def infohash_hex(digest: bytes) -> str:
    """40-char uppercase hex, the form used in profile filenames."""
    return digest.hex().upper()


def parse_infohash_hex(text: str) -> bytes:
    if not re.fullmatch(r"[0-9a-fA-F]{40}", text):
        raise BadInfohash(f"not a 40-hex infohash: {text!r}")
    return bytes.fromhex(text)


@dataclass(frozen=True)
class FileEntry:
    path: tuple[bytes, ...]  # components, no separators inside
    length: int


@dataclass(frozen=True)
class InfoDict:
    name: bytes
    piece_length: int
    pieces: bytes  # concatenated 20-byte SHA-1 digests
    length: int | None = None  # single-file form
    files: tuple[FileEntry, ...] | None = None  # multi-file form
    extra: tuple[tuple[bytes, BValue], ...] = ()  # unknown keys, as stored

    @property
    def total_length(self) -> int:
        if self.files is not None:
            return sum(f.length for f in self.files)
        return self.length or 0

    @property
    def num_pieces(self) -> int:
        return len(self.pieces) // 20

    def piece_len(self, index: int) -> int:
        if not 0 <= index < self.num_pieces:
            raise IndexError(index)
        if index == self.num_pieces - 1:
            return self.total_length - index * self.piece_length
        return self.piece_length

    def piece_digest(self, index: int) -> bytes:
        if not 0 <= index < self.num_pieces:
            raise IndexError(index)
        return self.pieces[index * 20 : index * 20 + 20]


@dataclass(frozen=True)
class TorrentMeta:
    info: InfoDict
    trackers: tuple[bytes, ...] = ()
    creation_date: int | None = None
    infohash: bytes = b""
    extra: tuple[tuple[bytes, BValue], ...] = ()  # unknown top-level keys

    @property
    def hex(self) -> str:
        return infohash_hex(self.infohash)

    def to_bytes(self) -> bytes:
        return encode_torrent(self)


@dataclass(frozen=True)
class Magnet:
    infohash: bytes
    display_name: str | None = None
    trackers: tuple[str, ...] = ()


def verify_piece(info: InfoDict, index: int, data: bytes) -> bool:
    if not 0 <= index < info.num_pieces:
        return False
    if len(data) != info.piece_len(index):
        return False
    return hashlib.sha1(data).digest() == info.piece_digest(index)


def _info_to_bvalue(info: InfoDict) -> dict:
    out: dict[bytes, BValue] = {
        b"name": info.name,
        b"piece length": info.piece_length,
        b"pieces": info.pieces,
    }
    if info.files is not None:
        out[b"files"] = [
            {b"length": f.length, b"path": list(f.path)} for f in info.files
        ]
    else:
        out[b"length"] = info.length or 0
    for key, value in info.extra:
        out.setdefault(key, value)
    return out


def encode_torrent(meta: TorrentMeta) -> bytes:
    top: dict[bytes, BValue] = {b"info": _info_to_bvalue(meta.info)}
    if meta.trackers:
        top[b"announce"] = meta.trackers[0]
        if len(meta.trackers) > 1:
            top[b"announce-list"] = [[t] for t in meta.trackers]
    if meta.creation_date is not None:
        top[b"creation date"] = meta.creation_date
    for key, value in meta.extra:
        top.setdefault(key, value)
    return bencode.encode(top)


def _as_bytes(value, what: str) -> bytes:
    if not isinstance(value, bytes):
        raise MissingField(f"{what} is not a byte string")
    return value


def _parse_info(value: dict) -> InfoDict:
    if b"pieces" not in value:
        raise MissingField("info dictionary has no pieces")
    pieces = _as_bytes(value[b"pieces"], "pieces")
    if len(pieces) % 20 != 0:
        raise BadPieces(f"pieces length {len(pieces)} is not a multiple of 20")
    if b"name" not in value:
        raise MissingField("info dictionary has no name")
    name = _as_bytes(value[b"name"], "name")
    if b"piece length" not in value or not isinstance(value[b"piece length"], int):
        raise MissingField("info dictionary has no piece length")
    piece_length = value[b"piece length"]
    if piece_length <= 0:
        raise BadPieceLength(f"piece length {piece_length}")

    length: int | None = None
    files: tuple[FileEntry, ...] | None = None
    if b"files" in value:
        raw_files = value[b"files"]
        if not isinstance(raw_files, list):
            raise MissingField("files is not a list")
        entries = []
        for item in raw_files:
            if not isinstance(item, dict) or b"length" not in item or b"path" not in item:
                raise MissingField("file entry lacks length or path")
            path = item[b"path"]
            if not isinstance(path, list) or not path:
                raise MissingField("file entry path is empty")
            entries.append(
                FileEntry(
                    path=tuple(_as_bytes(c, "path component") for c in path),
                    length=int(item[b"length"]),
                )
            )
        files = tuple(entries)
    elif b"length" in value and isinstance(value[b"length"], int):
        length = value[b"length"]
    else:
        raise MissingField("info dictionary has neither length nor files")

    total = sum(f.length for f in files) if files is not None else (length or 0)
    expected = -(-total // piece_length) if total else 0
    if len(pieces) // 20 != expected:
        raise BadPieces(
            f"{len(pieces) // 20} piece hashes for {total} bytes at piece length {piece_length}"
        )

    known = {b"name", b"piece length", b"pieces", b"length", b"files"}
    extra = tuple((k, v) for k, v in value.items() if k not in known)
    return InfoDict(
        name=name,
        piece_length=piece_length,
        pieces=pieces,
        length=length,
        files=files,
        extra=extra,
    )


def parse_torrent(data: bytes) -> TorrentMeta:
    """Parse .torrent bytes, tolerating non-canonical encodings.

    The infohash is SHA-1 over the stored info-dictionary span.  Unknown
    keys at the top level and inside info are preserved verbatim.
    """
    value, _ = bencode.decode_lenient(data)
    if not isinstance(value, dict):
        raise MissingField("top-level value is not a dictionary")
    if b"info" not in value or not isinstance(value[b"info"], dict):
        raise MissingField("no info dictionary")

    info_span = None
    for key, start, end in bencode.top_level_spans(data):
        if key == b"info":
            info_span = (start, end)  # last occurrence matches lenient decode
    assert info_span is not None
    infohash = hashlib.sha1(data[info_span[0] : info_span[1]]).digest()

    info = _parse_info(value[b"info"])

    trackers: list[bytes] = []
    annlist = value.get(b"announce-list")
    if isinstance(annlist, list):
        for tier in annlist:
            for url in tier if isinstance(tier, list) else [tier]:
                if isinstance(url, bytes) and url not in trackers:
                    trackers.append(url)
    if not trackers and isinstance(value.get(b"announce"), bytes):
        trackers.append(value[b"announce"])

    creation_date = value.get(b"creation date")
    if not isinstance(creation_date, int):
        creation_date = None

    known = {b"info", b"announce", b"announce-list", b"creation date"}
    extra = tuple((k, v) for k, v in value.items() if k not in known)
    return TorrentMeta(
        info=info,
        trackers=tuple(trackers),
        creation_date=creation_date,
        infohash=infohash,
        extra=extra,
    )


def _norm_path(path) -> tuple[bytes, ...]:
    if isinstance(path, str):
        path = path.encode("utf-8")
    parts = tuple(p for p in path.split(b"/") if p)
    if not parts:
        raise EmptyInput(f"empty file path {path!r}")
    return parts


def build_torrent(
    files,
    piece_length: int = DEFAULT_PIECE_LENGTH,
    trackers=(),
    *,
    name: bytes | str | None = None,
    creation_date: int | None = None,
) -> TorrentMeta:
    """Build a canonical torrent from a path→bytes mapping.

    Files are ordered lexicographically by path bytes, so identical input
    yields byte-identical output.  A single file at the top level becomes
    the single-file form; anything else is multi-file under ``name``.
    """
    if not files:
        raise EmptyInput("no files to publish")
    if piece_length < MIN_PIECE_LENGTH or piece_length > MAX_PIECE_LENGTH:
        raise BadPieceLength(f"piece length {piece_length} outside [16 KiB, 4 MiB]")
    if piece_length & (piece_length - 1):
        raise BadPieceLength(f"piece length {piece_length} is not a power of two")
    if isinstance(name, str):
        name = name.encode("utf-8")

    ordered = sorted((_norm_path(p), bytes(content)) for p, content in files.items())
    if len(ordered) != len({p for p, _ in ordered}):
        raise EmptyInput("duplicate file paths after normalization")

    content = b"".join(data for _, data in ordered)
    pieces = b"".join(
        hashlib.sha1(content[i : i + piece_length]).digest()
        for i in range(0, len(content), piece_length)
    )

    sole = ordered[0][0] if len(ordered) == 1 else None
    if sole is not None and len(sole) == 1 and name in (None, sole[0]):
        info = InfoDict(
            name=sole[0],
            piece_length=piece_length,
            pieces=pieces,
            length=len(ordered[0][1]),
        )
    else:
        info = InfoDict(
            name=name or b"site",
            piece_length=piece_length,
            pieces=pieces,
            files=tuple(FileEntry(path=p, length=len(d)) for p, d in ordered),
        )

    infohash = hashlib.sha1(bencode.encode(_info_to_bvalue(info))).digest()
    norm_trackers = tuple(
        t.encode("utf-8") if isinstance(t, str) else bytes(t) for t in trackers
    )
    return TorrentMeta(
        info=info,
        trackers=norm_trackers,
        creation_date=creation_date,
        infohash=infohash,
    )


def concat_files(info: InfoDict, files) -> bytes:
    """Concatenate file contents in the torrent's stored order."""
    if info.files is None:
        return bytes(files[info.name])
    out = []
    for entry in info.files:
        key = b"/".join(entry.path)
        data = files[key]
        if len(data) != entry.length:
            raise TorrentError(f"{key!r}: {len(data)} bytes, torrent says {entry.length}")
        out.append(bytes(data))
    return b"".join(out)


def carve_files(info: InfoDict, content: bytes) -> dict[bytes, bytes]:
    """Split a verified byte stream back into the path→bytes mapping."""
    if len(content) != info.total_length:
        raise TorrentError(
            f"content is {len(content)} bytes, torrent says {info.total_length}"
        )
    if info.files is None:
        return {info.name: content}
    out: dict[bytes, bytes] = {}
    pos = 0
    for entry in info.files:
        out[b"/".join(entry.path)] = content[pos : pos + entry.length]
        pos += entry.length
    return out


_BASE32_RE = re.compile(r"[A-Za-z2-7]{32}")
_HEX_RE = re.compile(r"[0-9a-fA-F]{40}")


def _decode_btih(value: str) -> bytes:
    if _HEX_RE.fullmatch(value):
        return bytes.fromhex(value)
    if _BASE32_RE.fullmatch(value):
        return base64.b32decode(value.upper())
    raise BadInfohash(f"xt hash {value!r} is neither 40-hex nor 32-base32")


def parse_magnet(uri: str) -> Magnet:
    """Parse a magnet URI; unknown parameters are ignored."""
    if not uri[:8].lower().startswith("magnet:?"):
        raise NotMagnet(f"not a magnet URI: {uri[:16]!r}")
    params = urllib.parse.parse_qsl(uri[8:], keep_blank_values=True)
    infohash: bytes | None = None
    display_name: str | None = None
    trackers: list[str] = []
    for key, value in params:
        if key == "xt" and infohash is None:
            if not value.lower().startswith("urn:btih:"):
                raise BadInfohash(f"unsupported xt {value!r}")
            infohash = _decode_btih(value[9:])
        elif key == "dn" and display_name is None:
            display_name = value
        elif key == "tr":
            trackers.append(value)
    if infohash is None:
        raise MissingXt("magnet URI has no xt=urn:btih parameter")
    return Magnet(infohash=infohash, display_name=display_name, trackers=tuple(trackers))


def format_magnet(magnet: Magnet) -> str:
    parts = [f"magnet:?xt=urn:btih:{infohash_hex(magnet.infohash)}"]
    if magnet.display_name:
        parts.append("dn=" + urllib.parse.quote(magnet.display_name, safe=""))
    for tracker in magnet.trackers:
        parts.append("tr=" + urllib.parse.quote(tracker, safe=""))
    return "&".join(parts)
