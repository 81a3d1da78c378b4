"""Desk-scale website gateway: one node that loads, serves, and reshares
swarm-hosted sites for a local browser."""

from .http import (
    CONTENT_TYPES,
    DEFAULT_HTTP_PORT,
    FALLBACK_TYPE,
    STATUS_VERSION,
    content_type_for,
    handle_request,
    status_snapshot,
)
from .node import (
    ANNOUNCE_INTERVAL,
    LOAD_TIMEOUT,
    LOOKUP_RETRY,
    PHASES,
    LoadJob,
    Node,
    SharingStatus,
)

__all__ = [
    "ANNOUNCE_INTERVAL",
    "CONTENT_TYPES",
    "DEFAULT_HTTP_PORT",
    "FALLBACK_TYPE",
    "LOAD_TIMEOUT",
    "LOOKUP_RETRY",
    "LoadJob",
    "Node",
    "PHASES",
    "STATUS_VERSION",
    "SharingStatus",
    "content_type_for",
    "handle_request",
    "status_snapshot",
]
