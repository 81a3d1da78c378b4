"""Profile store: settings, resume files, piece cache, eviction."""

from .settings import (
    CACHE_WARN_BYTES,
    CACHE_WARNING,
    DEFAULT_CACHE_BYTES,
    GIB,
    PORT_MAX,
    PORT_MIN,
    Settings,
    load_settings,
    save_settings,
)
from .resume import (
    BitfieldLengthMismatch,
    ResumeFile,
    bitfield_size,
    check_bitfield,
    load_resume,
    persist_resume,
)
from .profile import (
    CacheEntry,
    EvictionReport,
    HashMismatch,
    IndexOutOfRange,
    ProfileLocked,
    ProfileStore,
    UnknownTorrent,
)

__all__ = [
    "BitfieldLengthMismatch",
    "CACHE_WARN_BYTES",
    "CACHE_WARNING",
    "CacheEntry",
    "DEFAULT_CACHE_BYTES",
    "EvictionReport",
    "GIB",
    "HashMismatch",
    "IndexOutOfRange",
    "PORT_MAX",
    "PORT_MIN",
    "ProfileLocked",
    "ProfileStore",
    "ResumeFile",
    "Settings",
    "UnknownTorrent",
    "bitfield_size",
    "check_bitfield",
    "load_resume",
    "load_settings",
    "persist_resume",
    "save_settings",
]
