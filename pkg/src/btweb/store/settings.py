"""Client settings: defaults, limits, usage counters, persistence.

The on-disk form is bencoded.  Bencode has no rational type, so the share
ratio is stored in permille (1.0 -> 1000); -1 stands for "unlimited" or
"none" wherever a limit can be absent.  Unknown keys round-trip verbatim.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .. import bencode
from ..bencode import BValue

GIB = 1024**3
DEFAULT_CACHE_BYTES = 5 * GIB
CACHE_WARN_BYTES = 100 * GIB
CACHE_WARNING = "cache size exceeds the recommended 100 GiB ceiling"

PORT_MIN = 20000
PORT_MAX = 65000


@dataclass(frozen=True)
class Settings:
    cache_size_bytes: int = DEFAULT_CACHE_BYTES
    share_ratio_limit: float | None = 1.0  # None = unlimited upload
    upload_rate: int | None = None  # bytes/s, None = unlimited
    download_rate: int | None = None
    transfer_cap: int | None = None  # total bytes, None = no cap
    port: int = 0  # 0 until a profile assigns one
    proxy: str | None = None  # recorded, never used for traffic
    send_stats: bool = True
    background_seed: bool = True
    uploaded_total: int = 0
    downloaded_total: int = 0
    sessions: int = 0
    warnings: tuple[str, ...] = ()
    extra: tuple[tuple[bytes, BValue], ...] = ()

    def __post_init__(self):
        if self.cache_size_bytes <= 0:
            raise ValueError("cache size must be positive")
        if self.share_ratio_limit is not None and self.share_ratio_limit < 0:
            raise ValueError("ratio limit must be non-negative")
        if not 0 <= self.port <= 0xFFFF:
            raise ValueError(f"port {self.port} out of range")

    def replace(self, **changes) -> "Settings":
        return dataclasses.replace(self, **changes)


def _opt(value: int | None) -> int:
    return -1 if value is None else value


def _from_opt(value) -> int | None:
    return None if not isinstance(value, int) or value < 0 else value


def save_settings(settings: Settings) -> bytes:
    """Serialize; an oversized cache earns a persisted warning record."""
    warnings = list(settings.warnings)
    if settings.cache_size_bytes > CACHE_WARN_BYTES and CACHE_WARNING not in warnings:
        warnings.append(CACHE_WARNING)
    ratio = settings.share_ratio_limit
    out: dict[bytes, BValue] = {
        b"cache_size": settings.cache_size_bytes,
        b"ratio_permille": -1 if ratio is None else round(ratio * 1000),
        b"upload_rate": _opt(settings.upload_rate),
        b"download_rate": _opt(settings.download_rate),
        b"transfer_cap": _opt(settings.transfer_cap),
        b"port": settings.port,
        b"proxy": (settings.proxy or "").encode(),
        b"send_stats": int(settings.send_stats),
        b"background_seed": int(settings.background_seed),
        b"uploaded_total": settings.uploaded_total,
        b"downloaded_total": settings.downloaded_total,
        b"sessions": settings.sessions,
        b"warnings": [w.encode() for w in warnings],
    }
    for key, value in settings.extra:
        out.setdefault(key, value)
    return bencode.encode(out)


def load_settings(data: bytes | None) -> Settings:
    """Parse settings bytes; None (no file yet) yields the defaults."""
    if data is None:
        return Settings()
    value, _ = bencode.decode_lenient(data)
    if not isinstance(value, dict):
        raise bencode.MalformedInput("settings file is not a dictionary", 0)

    def geti(key: bytes, default: int) -> int:
        v = value.get(key)
        return v if isinstance(v, int) else default

    ratio_pm = geti(b"ratio_permille", 1000)
    proxy_raw = value.get(b"proxy", b"")
    warnings_raw = value.get(b"warnings", [])
    known = {
        b"cache_size", b"ratio_permille", b"upload_rate", b"download_rate",
        b"transfer_cap", b"port", b"proxy", b"send_stats", b"background_seed",
        b"uploaded_total", b"downloaded_total", b"sessions", b"warnings",
    }
    return Settings(
        cache_size_bytes=geti(b"cache_size", DEFAULT_CACHE_BYTES),
        share_ratio_limit=None if ratio_pm < 0 else ratio_pm / 1000,
        upload_rate=_from_opt(value.get(b"upload_rate", -1)),
        download_rate=_from_opt(value.get(b"download_rate", -1)),
        transfer_cap=_from_opt(value.get(b"transfer_cap", -1)),
        port=geti(b"port", 0),
        proxy=proxy_raw.decode("utf-8", "replace") if isinstance(proxy_raw, bytes) and proxy_raw else None,
        send_stats=bool(geti(b"send_stats", 1)),
        background_seed=bool(geti(b"background_seed", 1)),
        uploaded_total=geti(b"uploaded_total", 0),
        downloaded_total=geti(b"downloaded_total", 0),
        sessions=geti(b"sessions", 0),
        warnings=tuple(
            w.decode("utf-8", "replace")
            for w in (warnings_raw if isinstance(warnings_raw, list) else [])
            if isinstance(w, bytes)
        ),
        extra=tuple((k, v) for k, v in value.items() if k not in known),
    )
