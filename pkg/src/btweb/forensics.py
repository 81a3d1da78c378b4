"""Offline inspection of profile directories.

Everything here is read-only: the inspector opens artifacts, never
writes inside the examined tree, and produces the same report bytes for
the same input tree every time.  Individual artifact failures become
anomaly entries instead of aborting, so a half-wrecked profile still
yields whatever it can prove.

Pieces are re-verified against the torrent's hashes during
reconstruction; the resume bitfield is treated as a claim, not as
truth.  Byte ranges that no verified piece covers are emitted as zeros
and listed in the gap map, so nothing is ever invented for a gap.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from . import bencode
from .bundle import MANIFEST_PATH, MemberIncomplete, assemble, decode_manifest
from .dht.datfile import load_dht_dat
from .store.resume import ResumeFile, load_resume
from .store.settings import Settings, load_settings
from .torrent import InfoDict, TorrentMeta, infohash_hex, parse_torrent

REPORT_VERSION = 1
RAW_EXPORT_PIECE = 16384  # chunking for cache entries whose torrent is gone

HEX40 = re.compile(r"^[0-9A-Fa-f]{40}$")

TIMELINE_KINDS = (
    "torrent_first_processed",
    "piece_cached",
    "settings_changed",
    "dht_snapshot",
)


class NoMatchingTorrent(KeyError):
    pass


@dataclass(frozen=True)
class TimelineEvent:
    timestamp: float
    kind: str
    subject: str  # infohash hex or file name
    source: str  # artifact path, relative to the profile root

    @property
    def utc(self) -> str:
        return datetime.fromtimestamp(self.timestamp, timezone.utc).isoformat()


@dataclass(frozen=True)
class TorrentRecord:
    infohash: bytes
    name: str | None  # None when only a resume survives
    files: tuple[tuple[str, int], ...]
    piece_length: int | None
    pieces_total: int
    pieces_present: int
    publisher: bool
    uploaded: int
    downloaded: int
    created_at: int | None
    sources: tuple[str, ...]

    @property
    def completeness(self) -> float:
        if self.pieces_total == 0:
            return 0.0
        return self.pieces_present / self.pieces_total


@dataclass(frozen=True)
class CacheRecord:
    directory: str
    infohash: bytes | None
    content_bytes: int
    has_torrent: bool


@dataclass
class ForensicReport:
    root: str
    node_id: bytes | None = None
    peers: tuple[str, ...] = ()  # "ip:port" in file order
    node_ids: tuple[bytes, ...] = ()
    dht_stride: int | None = None
    dht_declared_nodes: int | None = None
    torrents: tuple[TorrentRecord, ...] = ()
    cache: tuple[CacheRecord, ...] = ()
    settings: Settings | None = None
    non_default_settings: dict = field(default_factory=dict)
    unknown_setting_keys: tuple[str, ...] = ()
    timeline: tuple[TimelineEvent, ...] = ()
    anomalies: tuple[tuple[str, str], ...] = ()  # (source, problem)
    notes: tuple[str, ...] = ()


@dataclass(frozen=True)
class SiteReconstruction:
    infohash: bytes
    tree: dict[str, bytes]  # gaps zero-filled
    gaps: dict[str, tuple[tuple[int, int], ...]]  # path -> missing byte ranges
    pieces_present: int
    pieces_total: int

    @property
    def complete(self) -> bool:
        return self.pieces_present == self.pieces_total


@dataclass(frozen=True)
class RawPiece:
    index: int
    data: bytes
    sha1: str


@dataclass
class RemnantReport:
    root: str
    mode: str  # history_kept | history_removed | unknown | no_evidence
    profile_roots: tuple[str, ...] = ()
    user_data_roots: tuple[str, ...] = ()
    profiles: tuple[ForensicReport, ...] = ()
    sites: tuple[tuple[str, bool], ...] = ()  # (base infohash hex, reconstructable)


# -- inspection ------------------------------------------------------------


def inspect_profile(root: str | Path) -> ForensicReport:
    root = Path(root)
    if not root.is_dir():
        raise NotADirectoryError(str(root))
    report = ForensicReport(root=str(root))
    anomalies: list[tuple[str, str]] = []
    notes: list[str] = []
    events: list[TimelineEvent] = []

    _read_dht(root, report, anomalies, notes, events)
    metas, resumes = _read_pairs(root, anomalies, events)
    report.cache = _read_cache(root, metas, anomalies, events)
    report.torrents = _merge_torrents(metas, resumes)
    _read_settings(root, report, anomalies, events)

    # timestamp ties break causally: a torrent is processed before its
    # pieces land in cache, and state snapshots describe what came before
    rank = {kind: i for i, kind in enumerate(TIMELINE_KINDS)}
    events.sort(key=lambda e: (e.timestamp, rank[e.kind], e.subject, e.source))
    report.timeline = tuple(events)
    report.anomalies = tuple(sorted(anomalies))
    report.notes = tuple(notes)
    return report


def _read_dht(root: Path, report, anomalies, notes, events) -> None:
    path = root / "dht.dat"
    if not path.is_file():
        return
    try:
        data = path.read_bytes()
        dat = load_dht_dat(data)
    except Exception as err:
        anomalies.append(("dht.dat", f"{type(err).__name__}: {err}"))
        return
    report.node_id = dat.own_id
    report.peers = tuple(str(p) for p in dat.peers)
    report.node_ids = tuple(dat.node_ids)
    report.dht_stride = dat.stride
    report.dht_declared_nodes = dat.count
    notes.append(
        f"dht.dat stride {dat.stride} "
        f"({'node entries' if dat.stride == 26 else 'compact peers'})"
    )
    events.append(
        TimelineEvent(path.stat().st_mtime, "dht_snapshot", dat.own_id.hex(), "dht.dat")
    )


def _read_pairs(root: Path, anomalies, events):
    """Parse every *.torrent and *.resume in the profile root."""
    metas: dict[bytes, tuple[TorrentMeta, str]] = {}
    resumes: dict[bytes, tuple[ResumeFile, str]] = {}
    for path in sorted(root.glob("*.torrent")):
        try:
            data = path.read_bytes()
            _, violations = bencode.decode_lenient(data)
            meta = parse_torrent(data)
        except Exception as err:
            anomalies.append((path.name, f"{type(err).__name__}: {err}"))
            continue
        for v in violations:
            anomalies.append((path.name, f"non-canonical bencode: {v}"))
        if HEX40.match(path.stem) and path.stem.upper() != meta.hex:
            anomalies.append(
                (path.name, f"filename does not match infohash {meta.hex}")
            )
        metas[meta.infohash] = (meta, path.name)
    for path in sorted(root.glob("*.resume")):
        try:
            resume = load_resume(path.read_bytes())
        except Exception as err:
            anomalies.append((path.name, f"{type(err).__name__}: {err}"))
            continue
        resumes[resume.infohash] = (resume, path.name)
        events.append(
            TimelineEvent(
                float(resume.created_at),
                "torrent_first_processed",
                resume.infohash.hex(),
                path.name,
            )
        )
    return metas, resumes


def _merge_torrents(metas, resumes) -> tuple[TorrentRecord, ...]:
    records = []
    for infohash in sorted(set(metas) | set(resumes)):
        meta, meta_src = metas.get(infohash, (None, None))
        resume, resume_src = resumes.get(infohash, (None, None))
        files: tuple[tuple[str, int], ...] = ()
        name = None
        piece_length = None
        pieces_total = 0
        if meta is not None:
            info = meta.info
            name = info.name.decode("utf-8", "replace")
            piece_length = info.piece_length
            pieces_total = info.num_pieces
            if info.files is None:
                files = ((name, info.length or 0),)
            else:
                files = tuple(
                    (b"/".join(e.path).decode("utf-8", "replace"), e.length)
                    for e in info.files
                )
        if resume is not None and pieces_total == 0:
            pieces_total = resume.piece_count
        records.append(
            TorrentRecord(
                infohash=infohash,
                name=name,
                files=files,
                piece_length=piece_length,
                pieces_total=pieces_total,
                pieces_present=resume.complete_count if resume else 0,
                publisher=resume.publisher if resume else False,
                uploaded=resume.uploaded_bytes if resume else 0,
                downloaded=resume.downloaded_bytes if resume else 0,
                created_at=resume.created_at if resume else None,
                sources=tuple(s for s in (meta_src, resume_src) if s),
            )
        )
    return tuple(records)


def _read_cache(root: Path, metas, anomalies, events) -> tuple[CacheRecord, ...]:
    cache_root = root / "cache"
    if not cache_root.is_dir():
        return ()
    records = []
    for entry in sorted(cache_root.iterdir()):
        if not entry.is_dir():
            anomalies.append((f"cache/{entry.name}", "stray file in cache"))
            continue
        suffix = entry.name.rsplit("_", 1)[-1]
        infohash = bytes.fromhex(suffix) if HEX40.match(suffix) else None
        if infohash is None:
            anomalies.append((f"cache/{entry.name}", "no infohash in directory name"))
        content = entry / "content"
        size = content.stat().st_size if content.is_file() else 0
        if size and infohash is not None:
            events.append(
                TimelineEvent(
                    content.stat().st_mtime,
                    "piece_cached",
                    infohash.hex(),
                    f"cache/{entry.name}/content",
                )
            )
        records.append(
            CacheRecord(
                directory=entry.name,
                infohash=infohash,
                content_bytes=size,
                has_torrent=infohash in metas if infohash else False,
            )
        )
    return tuple(records)


def _read_settings(root: Path, report, anomalies, events) -> None:
    path = root / "settings.dat"
    if not path.is_file():
        return
    try:
        settings = load_settings(path.read_bytes())
    except Exception as err:
        anomalies.append(("settings.dat", f"{type(err).__name__}: {err}"))
        return
    report.settings = settings
    defaults = Settings()
    diff = {}
    for name in (
        "cache_size_bytes",
        "share_ratio_limit",
        "upload_rate",
        "download_rate",
        "transfer_cap",
        "port",
        "proxy",
        "send_stats",
        "background_seed",
        "uploaded_total",
        "downloaded_total",
        "sessions",
    ):
        value = getattr(settings, name)
        if value != getattr(defaults, name):
            diff[name] = value
    report.non_default_settings = diff
    # undocumented keys ride along verbatim rather than being interpreted
    report.unknown_setting_keys = tuple(
        sorted(k.decode("utf-8", "replace") for k, _ in settings.extra)
    )
    events.append(
        TimelineEvent(path.stat().st_mtime, "settings_changed", "settings.dat", "settings.dat")
    )


# -- report serialization ----------------------------------------------------


def report_dict(report: ForensicReport) -> dict:
    return {
        "version": REPORT_VERSION,
        "root": report.root,
        "dht": None
        if report.node_id is None
        else {
            "node_id": report.node_id.hex(),
            "declared_nodes": report.dht_declared_nodes,
            "stride": report.dht_stride,
            "peers": list(report.peers),
            "node_ids": [n.hex() for n in report.node_ids],
        },
        "torrents": [
            {
                "infohash": t.infohash.hex(),
                "name": t.name,
                "files": [{"path": p, "length": n} for p, n in t.files],
                "piece_length": t.piece_length,
                "pieces_total": t.pieces_total,
                "pieces_present": t.pieces_present,
                "completeness": round(t.completeness, 6),
                "publisher": t.publisher,
                "uploaded": t.uploaded,
                "downloaded": t.downloaded,
                "created_at": t.created_at,
                "sources": list(t.sources),
            }
            for t in report.torrents
        ],
        "cache": [
            {
                "directory": c.directory,
                "infohash": c.infohash.hex() if c.infohash else None,
                "content_bytes": c.content_bytes,
                "has_torrent": c.has_torrent,
            }
            for c in report.cache
        ],
        "settings": None
        if report.settings is None
        else {
            "non_default": {
                k: v for k, v in sorted(report.non_default_settings.items())
            },
            "unknown_keys": list(report.unknown_setting_keys),
            "warnings": list(report.settings.warnings),
        },
        "timeline": [
            {
                "timestamp": e.timestamp,
                "utc": e.utc,
                "kind": e.kind,
                "subject": e.subject,
                "source": e.source,
            }
            for e in report.timeline
        ],
        "anomalies": [{"source": s, "problem": p} for s, p in report.anomalies],
        "notes": list(report.notes),
    }


def report_json(report: ForensicReport) -> bytes:
    return (
        json.dumps(report_dict(report), sort_keys=True, indent=2, ensure_ascii=True)
        + "\n"
    ).encode()


def report_text(report: ForensicReport) -> str:
    lines = [f"profile: {report.root}"]
    if report.node_id is not None:
        lines.append(
            f"node id: {report.node_id.hex()}  "
            f"(dht.dat stride {report.dht_stride}, {len(report.peers)} peers)"
        )
    else:
        lines.append("node id: none recovered")
    lines.append(f"torrents: {len(report.torrents)}")
    for t in report.torrents:
        pct = f"{t.completeness * 100:.1f}%"
        role = "publisher" if t.publisher else "visitor"
        lines.append(
            f"  {t.infohash.hex()}  {t.name or '(resume only)'}  "
            f"{t.pieces_present}/{t.pieces_total} pieces ({pct})  {role}"
        )
        for path, length in t.files:
            lines.append(f"    {path}  {length} bytes")
    if report.settings is not None:
        lines.append("settings:")
        if report.non_default_settings:
            for key, value in sorted(report.non_default_settings.items()):
                lines.append(f"  {key} = {value}")
        else:
            lines.append("  all defaults")
        for warning in report.settings.warnings:
            lines.append(f"  warning: {warning}")
    lines.append("timeline:")
    for e in report.timeline:
        lines.append(f"  {e.utc}  {e.kind}  {e.subject}  [{e.source}]")
    if report.anomalies:
        lines.append("anomalies:")
        for source, problem in report.anomalies:
            lines.append(f"  {source}: {problem}")
    for note in report.notes:
        lines.append(f"note: {note}")
    return "\n".join(lines) + "\n"


# -- reconstruction ----------------------------------------------------------


def _cache_content(root: Path, infohash: bytes) -> Path | None:
    cache_root = root / "cache"
    if not cache_root.is_dir():
        return None
    suffix = f"_{infohash_hex(infohash)}"
    for entry in sorted(cache_root.iterdir()):
        if entry.name.endswith(suffix):
            content = entry / "content"
            if content.is_file():
                return content
    return None


def _find_meta(root: Path, infohash: bytes) -> TorrentMeta:
    path = root / f"{infohash_hex(infohash)}.torrent"
    if not path.is_file():
        raise NoMatchingTorrent(f"no torrent for {infohash.hex()}")
    meta = parse_torrent(path.read_bytes())
    if meta.infohash != infohash:
        raise NoMatchingTorrent(f"{path.name} actually contains {meta.hex}")
    return meta


def reconstruct_torrent(root: str | Path, infohash: bytes) -> SiteReconstruction:
    """Reassemble one torrent's files from its cache entry, verifying
    every piece; unverified ranges come back as zeros plus a gap map."""
    root = Path(root)
    meta = _find_meta(root, infohash)
    info = meta.info
    content_path = _cache_content(root, infohash)
    raw = content_path.read_bytes() if content_path is not None else b""
    blob = raw.ljust(info.total_length, b"\0")[: info.total_length]

    present = 0
    missing_spans: list[tuple[int, int]] = []
    for index in range(info.num_pieces):
        start = index * info.piece_length
        piece = blob[start : start + info.piece_len(index)]
        if hashlib.sha1(piece).digest() == info.piece_digest(index):
            present += 1
        else:
            missing_spans.append((start, start + len(piece)))

    tree: dict[str, bytes] = {}
    gaps: dict[str, tuple[tuple[int, int], ...]] = {}
    offset = 0
    if info.files is None:
        spans = [(info.name.decode("utf-8", "replace"), 0, info.length or 0)]
    else:
        spans = []
        for entry in info.files:
            path = b"/".join(entry.path).decode("utf-8", "replace")
            spans.append((path, offset, offset + entry.length))
            offset += entry.length
    for path, start, end in spans:
        tree[path] = blob[start:end]
        overlaps = tuple(
            (max(a, start) - start, min(b, end) - start)
            for a, b in missing_spans
            if a < end and b > start
        )
        if overlaps:
            gaps[path] = overlaps
    return SiteReconstruction(
        infohash=infohash,
        tree=tree,
        gaps=gaps,
        pieces_present=present,
        pieces_total=info.num_pieces,
    )


def export_raw_pieces(
    root: str | Path, infohash: bytes, piece_length: int = RAW_EXPORT_PIECE
) -> tuple[RawPiece, ...]:
    """Fallback when the torrent is gone: chunk the cache entry at the
    protocol's stock piece size and hash each chunk for the record."""
    content_path = _cache_content(Path(root), infohash)
    if content_path is None:
        return ()
    raw = content_path.read_bytes()
    pieces = []
    for index in range(0, max(1, (len(raw) + piece_length - 1) // piece_length)):
        data = raw[index * piece_length : (index + 1) * piece_length]
        pieces.append(RawPiece(index, data, hashlib.sha1(data).hexdigest()))
    return tuple(pieces)


def reconstruct_site(root: str | Path, base_infohash: bytes) -> dict[str, bytes]:
    """Reassemble a whole site (base torrent plus any members) from
    cache, byte-identical to what the node served."""
    root = Path(root)
    base = reconstruct_torrent(root, base_infohash)
    if base.gaps:
        raise MemberIncomplete(f"base {base_infohash.hex()} has gaps")
    manifest_name = MANIFEST_PATH.decode()
    if manifest_name not in base.tree:
        return {p: d for p, d in base.tree.items()}
    manifest = decode_manifest(base.tree[manifest_name], base_infohash=base_infohash)
    trees = {}
    for member in manifest.members:
        rebuilt = reconstruct_torrent(root, member.infohash)
        if rebuilt.gaps:
            raise MemberIncomplete(f"member {member.infohash.hex()} has gaps")
        trees[member.infohash] = {p.encode(): d for p, d in rebuilt.tree.items()}
    return assemble(manifest, trees)


# -- remnant detection -------------------------------------------------------

PROFILE_MARKERS = ("settings.dat", "dht.dat")


def _is_profile_root(path: Path) -> bool:
    if any((path / marker).is_file() for marker in PROFILE_MARKERS):
        return True
    return any(HEX40.match(p.stem) for p in path.glob("*.torrent"))


def detect_remnants(machine_root: str | Path) -> RemnantReport:
    """Survey a machine tree for what an uninstall left behind.

    The store survives under a roaming-style directory; the browser's
    "User Data" directory holds history.  Both present: history_kept.
    Store only: history_removed.  User Data only: unknown.  Neither:
    no_evidence.
    """
    root = Path(machine_root)
    profile_roots: list[str] = []
    user_data_roots: list[str] = []
    if root.is_dir():
        for path in sorted(p for p in root.rglob("*") if p.is_dir()):
            rel = path.relative_to(root).as_posix()
            if _is_profile_root(path):
                profile_roots.append(rel)
            if path.name == "User Data":
                user_data_roots.append(rel)
    if profile_roots and user_data_roots:
        mode = "history_kept"
    elif profile_roots:
        mode = "history_removed"
    elif user_data_roots:
        mode = "unknown"
    else:
        mode = "no_evidence"

    profiles = tuple(inspect_profile(root / rel) for rel in profile_roots)
    sites: list[tuple[str, bool]] = []
    for rel, report in zip(profile_roots, profiles):
        for record in report.torrents:
            if not any(path == MANIFEST_PATH.decode() for path, _ in record.files):
                continue
            try:
                reconstruct_site(root / rel, record.infohash)
                sites.append((record.infohash.hex(), True))
            except Exception:
                sites.append((record.infohash.hex(), False))
    return RemnantReport(
        root=str(root),
        mode=mode,
        profile_roots=tuple(profile_roots),
        user_data_roots=tuple(user_data_roots),
        profiles=profiles,
        sites=tuple(sorted(sites)),
    )


def remnant_dict(report: RemnantReport) -> dict:
    return {
        "version": REPORT_VERSION,
        "root": report.root,
        "mode": report.mode,
        "profile_roots": list(report.profile_roots),
        "user_data_roots": list(report.user_data_roots),
        "profiles": [report_dict(p) for p in report.profiles],
        "sites": [
            {"infohash": h, "reconstructable": ok} for h, ok in report.sites
        ],
    }


def remnant_json(report: RemnantReport) -> bytes:
    return (
        json.dumps(remnant_dict(report), sort_keys=True, indent=2, ensure_ascii=True)
        + "\n"
    ).encode()


def remnant_text(report: RemnantReport) -> str:
    lines = [
        f"machine root: {report.root}",
        f"uninstall mode: {report.mode}",
    ]
    for rel in report.profile_roots:
        lines.append(f"surviving store: {rel}")
    for rel in report.user_data_roots:
        lines.append(f"surviving user data: {rel}")
    for report_ in report.profiles:
        lines.append(
            f"recovered from {report_.root}: {len(report_.torrents)} torrents, "
            f"{len(report_.peers)} peers"
        )
    for infohash, ok in report.sites:
        state = "reconstructable" if ok else "incomplete"
        lines.append(f"site {infohash}: {state}")
    return "\n".join(lines) + "\n"
