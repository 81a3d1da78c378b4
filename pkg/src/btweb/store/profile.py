"""On-disk profile: torrents, resume files, piece cache, dht.dat, lock.

Layout at the root:
    <HEX>.torrent, <HEX>.resume   (HEX = 40-hex uppercase infohash)
    dht.dat, settings.dat, aliases.dat, .lock
    cache/<name>_<HEX>/content    (piece data at piece-length offsets)
    trusted/bittorrent.crt

One writer at a time, enforced by the lock file.  Forensic readers never
take the lock.  All time flows through the injected clock so simulated
profiles carry simulated timestamps.
"""

from __future__ import annotations

import hashlib
import logging
import os
import random
import re
import time
from dataclasses import dataclass
from pathlib import Path

from ..torrent import TorrentMeta, infohash_hex, parse_torrent
from .resume import ResumeFile, load_resume, persist_resume
from .settings import PORT_MAX, PORT_MIN, Settings, load_settings, save_settings

log = logging.getLogger(__name__)

HEX_RE = re.compile(r"[0-9A-F]{40}")

TRUSTED_CERT_NAME = "bittorrent.crt"
TRUSTED_CERT_PLACEHOLDER = (
    b"-----BEGIN CERTIFICATE-----\n"
    b"placeholder update-channel certificate; recorded, never verified\n"
    b"-----END CERTIFICATE-----\n"
)


class ProfileLocked(RuntimeError):
    pass


class HashMismatch(ValueError):
    pass


class IndexOutOfRange(IndexError):
    pass


class UnknownTorrent(KeyError):
    pass


@dataclass(frozen=True)
class EvictionReport:
    removed: tuple[str, ...]  # hex infohashes whose cache was dropped
    freed_bytes: int
    satisfied: bool


@dataclass(frozen=True)
class CacheEntry:
    torrent_name: str
    infohash: bytes
    total_bytes: int  # bytes of verified pieces present
    last_access: float
    complete: bool

    @property
    def hex(self) -> str:
        return infohash_hex(self.infohash)


def _safe_name(name: bytes) -> str:
    text = name.decode("utf-8", "replace")
    return re.sub(r"[^A-Za-z0-9._-]", "_", text) or "site"


class ProfileStore:
    def __init__(self, root: str | Path, clock=time.time):
        self.root = Path(root)
        if not self.root.is_dir():
            raise NotADirectoryError(str(self.root))
        self.clock = clock
        self._metas: dict[bytes, TorrentMeta] = {}
        self._active: set[bytes] = set()
        self._locked = False

    # -- lifecycle ----------------------------------------------------

    @classmethod
    def create(
        cls,
        root: str | Path,
        clock=time.time,
        rng: random.Random | None = None,
        settings: Settings | None = None,
    ) -> "ProfileStore":
        root = Path(root)
        root.mkdir(parents=True, exist_ok=True)
        (root / "cache").mkdir(exist_ok=True)
        (root / "trusted").mkdir(exist_ok=True)
        cert = root / "trusted" / TRUSTED_CERT_NAME
        if not cert.exists():
            cert.write_bytes(TRUSTED_CERT_PLACEHOLDER)
        store = cls(root, clock=clock)
        if settings is None:
            settings = load_settings(store._read(store.settings_path))
        if settings.port == 0:
            rng = rng or random.Random()
            settings = settings.replace(port=rng.randint(PORT_MIN, PORT_MAX))
        store.save_settings(settings)
        return store

    @property
    def lock_path(self) -> Path:
        return self.root / ".lock"

    def acquire_lock(self) -> None:
        try:
            fd = os.open(self.lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise ProfileLocked(f"{self.lock_path} exists; another writer owns this profile")
        with os.fdopen(fd, "w") as fh:
            fh.write(str(os.getpid()))
        self._locked = True

    def release_lock(self) -> None:
        if self._locked:
            self.lock_path.unlink(missing_ok=True)
            self._locked = False

    def __enter__(self) -> "ProfileStore":
        self.acquire_lock()
        return self

    def __exit__(self, *exc) -> None:
        self.release_lock()

    # -- paths --------------------------------------------------------

    @property
    def settings_path(self) -> Path:
        return self.root / "settings.dat"

    @property
    def dht_dat_path(self) -> Path:
        return self.root / "dht.dat"

    @property
    def aliases_path(self) -> Path:
        return self.root / "aliases.dat"

    def torrent_path(self, hex_hash: str) -> Path:
        return self.root / f"{hex_hash.upper()}.torrent"

    def resume_path(self, hex_hash: str) -> Path:
        return self.root / f"{hex_hash.upper()}.resume"

    def cache_dir(self, meta: TorrentMeta) -> Path:
        return self.root / "cache" / f"{_safe_name(meta.info.name)}_{meta.hex}"

    def _content_path(self, meta: TorrentMeta) -> Path:
        return self.cache_dir(meta) / "content"

    @staticmethod
    def _read(path: Path) -> bytes | None:
        try:
            return path.read_bytes()
        except FileNotFoundError:
            return None

    # -- settings -----------------------------------------------------

    def load_settings(self) -> Settings:
        return load_settings(self._read(self.settings_path))

    def save_settings(self, settings: Settings) -> None:
        self.settings_path.write_bytes(save_settings(settings))
        self._stamp(self.settings_path)

    def _stamp(self, path: Path) -> None:
        # file mtimes carry the injected clock, so simulated profiles
        # hold simulated timestamps end to end
        now = self.clock()
        os.utime(path, (now, now))

    # -- dht ----------------------------------------------------------

    def save_dht(self, data: bytes) -> None:
        self.dht_dat_path.write_bytes(data)
        self._stamp(self.dht_dat_path)

    def load_dht(self) -> bytes | None:
        return self._read(self.dht_dat_path)

    # -- torrents and resume state -------------------------------------

    def add_torrent(self, meta: TorrentMeta, publisher: bool = False) -> ResumeFile:
        """Register a torrent: writes <HEX>.torrent and, if this torrent is
        new here, a fresh resume whose created_at marks first processing."""
        hex_hash = meta.hex
        self.torrent_path(hex_hash).write_bytes(meta.to_bytes())
        self._stamp(self.torrent_path(hex_hash))
        self._metas[meta.infohash] = meta
        existing = self._read(self.resume_path(hex_hash))
        if existing is not None:
            return load_resume(existing)
        resume = ResumeFile.fresh(
            meta.infohash, meta.info.num_pieces, int(self.clock()), publisher=publisher
        )
        self.resume_path(hex_hash).write_bytes(persist_resume(resume))
        self._stamp(self.resume_path(hex_hash))
        return resume

    def list_torrents(self) -> list[str]:
        found = []
        for path in sorted(self.root.glob("*.torrent")):
            stem = path.name[: -len(".torrent")]
            if HEX_RE.fullmatch(stem):
                found.append(stem)
        return found

    def torrent_meta(self, infohash: bytes) -> TorrentMeta:
        meta = self._metas.get(infohash)
        if meta is None:
            raw = self._read(self.torrent_path(infohash_hex(infohash)))
            if raw is None:
                raise UnknownTorrent(infohash_hex(infohash))
            meta = parse_torrent(raw)
            self._metas[infohash] = meta
        return meta

    def has_torrent(self, infohash: bytes) -> bool:
        return (
            infohash in self._metas
            or self.torrent_path(infohash_hex(infohash)).exists()
        )

    def resume(self, infohash: bytes) -> ResumeFile:
        raw = self._read(self.resume_path(infohash_hex(infohash)))
        if raw is None:
            raise UnknownTorrent(infohash_hex(infohash))
        return load_resume(raw)

    def save_resume(self, resume: ResumeFile) -> None:
        """Persist transfer state; created_at of an existing file wins."""
        path = self.resume_path(infohash_hex(resume.infohash))
        existing = self._read(path)
        if existing is not None:
            resume.created_at = load_resume(existing).created_at
        resume.updated_at = max(resume.created_at, int(self.clock()))
        path.write_bytes(persist_resume(resume))
        self._stamp(path)

    # -- piece cache ----------------------------------------------------

    def put_piece(self, infohash: bytes, index: int, data: bytes) -> ResumeFile:
        """Verify and store one piece; the resume bitfield records it."""
        meta = self.torrent_meta(infohash)
        info = meta.info
        if not 0 <= index < info.num_pieces:
            raise IndexOutOfRange(f"piece {index} of {info.num_pieces}")
        if len(data) != info.piece_len(index) or hashlib.sha1(data).digest() != info.piece_digest(index):
            raise HashMismatch(f"piece {index} of {meta.hex}")
        directory = self.cache_dir(meta)
        directory.mkdir(parents=True, exist_ok=True)
        path = self._content_path(meta)
        with open(path, "r+b" if path.exists() else "wb") as fh:
            fh.seek(index * info.piece_length)
            fh.write(data)
        now = self.clock()
        os.utime(path, (now, now))
        resume = self.resume(infohash)
        resume.set_piece(index)
        self.save_resume(resume)
        return resume

    def get_piece(self, infohash: bytes, index: int) -> bytes | None:
        meta = self.torrent_meta(infohash)
        if not 0 <= index < meta.info.num_pieces:
            raise IndexOutOfRange(f"piece {index} of {meta.info.num_pieces}")
        if not self.resume(infohash).has_piece(index):
            return None
        path = self._content_path(meta)
        with open(path, "rb") as fh:
            fh.seek(index * meta.info.piece_length)
            data = fh.read(meta.info.piece_len(index))
        now = self.clock()
        os.utime(path, (now, now))
        return data

    def read_content(self, infohash: bytes) -> bytes:
        """Whole verified byte stream; requires a complete cache entry."""
        meta = self.torrent_meta(infohash)
        resume = self.resume(infohash)
        if not resume.is_complete:
            raise HashMismatch(f"{meta.hex} is incomplete ({resume.bits()})")
        parts = []
        for index in range(meta.info.num_pieces):
            piece = self.get_piece(infohash, index)
            assert piece is not None
            parts.append(piece)
        return b"".join(parts)

    def store_content(self, meta: TorrentMeta, content: bytes, publisher: bool = False) -> ResumeFile:
        """Publish path: register the torrent and cache every piece."""
        self.add_torrent(meta, publisher=publisher)
        resume = None
        for index in range(meta.info.num_pieces):
            start = index * meta.info.piece_length
            resume = self.put_piece(
                meta.infohash, index, content[start : start + meta.info.piece_len(index)]
            )
        return resume if resume is not None else self.resume(meta.infohash)

    # -- cache inventory and eviction ------------------------------------

    def mark_active(self, infohash: bytes) -> None:
        self._active.add(infohash)

    def mark_inactive(self, infohash: bytes) -> None:
        self._active.discard(infohash)

    def cache_entries(self) -> list[CacheEntry]:
        entries = []
        for hex_hash in self.list_torrents():
            infohash = bytes.fromhex(hex_hash)
            meta = self.torrent_meta(infohash)
            path = self._content_path(meta)
            if not path.exists():
                continue
            resume = self.resume(infohash)
            present = sum(
                meta.info.piece_len(i)
                for i in range(meta.info.num_pieces)
                if resume.has_piece(i)
            )
            entries.append(
                CacheEntry(
                    torrent_name=_safe_name(meta.info.name),
                    infohash=infohash,
                    total_bytes=present,
                    last_access=path.stat().st_mtime,
                    complete=resume.is_complete,
                )
            )
        return entries

    def cache_usage(self) -> int:
        return sum(e.total_bytes for e in self.cache_entries())

    def evict(self, settings: Settings | None = None) -> EvictionReport:
        """Drop least-recently-accessed complete, inactive entries until the
        cache fits the budget. Active or incomplete entries are untouchable;
        if they alone bust the budget the cache is allowed to exceed it."""
        settings = settings or self.load_settings()
        entries = self.cache_entries()
        usage = sum(e.total_bytes for e in entries)
        removed: list[str] = []
        freed = 0
        candidates = sorted(
            (e for e in entries if e.complete and e.infohash not in self._active),
            key=lambda e: (e.last_access, e.hex),
        )
        for entry in candidates:
            if usage <= settings.cache_size_bytes:
                break
            meta = self.torrent_meta(entry.infohash)
            content = self._content_path(meta)
            content.unlink(missing_ok=True)
            try:
                content.parent.rmdir()
            except OSError:
                pass
            resume = self.resume(entry.infohash)
            resume.bitfield = bytearray(len(resume.bitfield))
            self.save_resume(resume)
            usage -= entry.total_bytes
            freed += entry.total_bytes
            removed.append(entry.hex)
        satisfied = usage <= settings.cache_size_bytes
        if not satisfied:
            log.warning(
                "cache over budget (%d > %d) with only active or incomplete entries",
                usage,
                settings.cache_size_bytes,
            )
        return EvictionReport(tuple(removed), freed, satisfied)

    def verify_cache(self) -> list[tuple[str, int]]:
        """Full-scan integrity check: every claimed piece must hash true.
        Returns (hex, index) for each piece that does not."""
        bad = []
        for hex_hash in self.list_torrents():
            infohash = bytes.fromhex(hex_hash)
            meta = self.torrent_meta(infohash)
            path = self._content_path(meta)
            if not path.exists():
                continue
            resume = self.resume(infohash)
            with open(path, "rb") as fh:
                for index in range(meta.info.num_pieces):
                    if not resume.has_piece(index):
                        continue
                    fh.seek(index * meta.info.piece_length)
                    data = fh.read(meta.info.piece_len(index))
                    if hashlib.sha1(data).digest() != meta.info.piece_digest(index):
                        bad.append((hex_hash, index))
        return bad
