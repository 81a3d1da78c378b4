"""Peer piece exchange: wire messages, sessions, serve policy, engine."""

from .messages import (
    METADATA_CHUNK,
    REFUSE_CAP,
    REFUSE_MISSING,
    REFUSE_RATIO,
    REFUSE_THROTTLE,
    SWARM_KINDS,
    SwarmMessage,
    decode_swarm,
    encode_swarm,
)
from .ratelimit import TokenBucket
from .session import (
    MAX_PEER_FAILS,
    PIPELINE_DEPTH,
    PeerSession,
    TransferStats,
    next_request,
)
from .policy import (
    CapExceeded,
    MissingPiece,
    RatioExceeded,
    ServeRefusal,
    Throttled,
    check_serve,
    serve_piece,
)
from .engine import (
    DEFAULT_MAX_SESSIONS,
    MAX_REQUEST_RETRIES,
    REQUEST_TIMEOUT,
    Download,
    MetadataFetch,
    MetadataHashMismatch,
    NoPeers,
    SwarmEngine,
    SwarmError,
    SwarmTimeout,
)
from .driver import SwarmDriver

__all__ = [
    "CapExceeded",
    "DEFAULT_MAX_SESSIONS",
    "Download",
    "MAX_PEER_FAILS",
    "MAX_REQUEST_RETRIES",
    "METADATA_CHUNK",
    "MetadataFetch",
    "MetadataHashMismatch",
    "MissingPiece",
    "NoPeers",
    "PIPELINE_DEPTH",
    "PeerSession",
    "REFUSE_CAP",
    "REFUSE_MISSING",
    "REFUSE_RATIO",
    "REFUSE_THROTTLE",
    "REQUEST_TIMEOUT",
    "RatioExceeded",
    "SWARM_KINDS",
    "ServeRefusal",
    "SwarmDriver",
    "SwarmEngine",
    "SwarmError",
    "SwarmMessage",
    "SwarmTimeout",
    "Throttled",
    "TokenBucket",
    "TransferStats",
    "check_serve",
    "decode_swarm",
    "encode_swarm",
    "next_request",
    "serve_piece",
]
