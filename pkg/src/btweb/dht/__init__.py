"""Deterministic DHT node: routing, message handling, persistence."""

from .routing import (
    K,
    CompactPeer,
    NodeEntry,
    RoutingTable,
    WrongLength,
    check_node_id,
    decode_compact_peer,
    decode_node_blob,
    encode_compact_peer,
    encode_node_entry,
    xor_distance,
)
from .wire import (
    ERR_GENERIC,
    ERR_PROTOCOL,
    ERR_UNKNOWN_METHOD,
    QUERY_KINDS,
    DhtMessage,
    decode_message,
    encode_message,
)
from .state import (
    ALPHA,
    MAX_RETRIES,
    PEER_TTL,
    REFRESH_INTERVAL,
    RPC_TIMEOUT,
    TOKEN_ROTATE,
    BootstrapTimeout,
    DhtState,
    announce,
    bootstrap,
    find_peers,
    handle_message,
    tick,
)
from .datfile import (
    BadIdLength,
    DhtDat,
    PeersBlobNotMultipleOf6,
    load_dht_dat,
    save_dht_dat,
)
from .driver import DhtDriver

__all__ = [
    "ALPHA",
    "BadIdLength",
    "BootstrapTimeout",
    "CompactPeer",
    "DhtDat",
    "DhtDriver",
    "DhtMessage",
    "DhtState",
    "ERR_GENERIC",
    "ERR_PROTOCOL",
    "ERR_UNKNOWN_METHOD",
    "K",
    "MAX_RETRIES",
    "NodeEntry",
    "PEER_TTL",
    "REFRESH_INTERVAL",
    "PeersBlobNotMultipleOf6",
    "QUERY_KINDS",
    "RPC_TIMEOUT",
    "RoutingTable",
    "TOKEN_ROTATE",
    "WrongLength",
    "announce",
    "bootstrap",
    "check_node_id",
    "decode_compact_peer",
    "decode_message",
    "decode_node_blob",
    "encode_compact_peer",
    "encode_message",
    "encode_node_entry",
    "find_peers",
    "handle_message",
    "load_dht_dat",
    "save_dht_dat",
    "tick",
    "xor_distance",
]
