"""The browser-facing HTTP surface, as a pure request handler.

handle_request maps one GET onto node state and returns (status,
headers, body) without touching sockets, so the whole surface runs
under the deterministic simulator.  A real server binds this to a
listener; the rules live here.

Responses while a page load is in flight are 503 with a JSON progress
body and Retry-After, so a plain browser reload eventually lands on the
finished page.  The only caching header is ETag, set to the site's
infohash: content addressed by hash never goes stale, it only gets
replaced by a different hash.
"""

from __future__ import annotations

import json
from urllib.parse import parse_qs, unquote, urlsplit

from ..bundle import BadAuthority, PathEscape, UnknownAlias
from ..torrent import BadInfohash, parse_infohash_hex, parse_magnet

DEFAULT_HTTP_PORT = 8945
STATUS_VERSION = 1

CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".htm": "text/html; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".mjs": "text/javascript; charset=utf-8",
    ".json": "application/json",
    ".txt": "text/plain; charset=utf-8",
    ".md": "text/plain; charset=utf-8",
    ".xml": "application/xml",
    ".png": "image/png",
    ".jpg": "image/jpeg",
    ".jpeg": "image/jpeg",
    ".gif": "image/gif",
    ".svg": "image/svg+xml",
    ".ico": "image/x-icon",
    ".webp": "image/webp",
    ".woff": "font/woff",
    ".woff2": "font/woff2",
    ".wasm": "application/wasm",
    ".pdf": "application/pdf",
    ".mp3": "audio/mpeg",
    ".mp4": "video/mp4",
    ".webm": "video/webm",
}
FALLBACK_TYPE = "application/octet-stream"


def content_type_for(path: str) -> str:
    name = path.rsplit("/", 1)[-1]
    dot = name.rfind(".")
    if dot <= 0:
        return FALLBACK_TYPE
    return CONTENT_TYPES.get(name[dot:].lower(), FALLBACK_TYPE)


def _json_body(obj) -> tuple[dict, bytes]:
    body = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return {"Content-Type": "application/json"}, body


def _progress(job) -> dict:
    return {
        "phase": job.phase,
        "pieces_done": job.pieces_done,
        "pieces_total": job.pieces_total,
        "url": job.url,
    }


def status_snapshot(node) -> dict:
    """Everything a dashboard needs, with deterministic ordering."""
    jobs = []
    for infohash in sorted(node.jobs):
        job = node.jobs[infohash]
        jobs.append(
            {
                "infohash": infohash.hex(),
                "phase": job.phase,
                "error": job.error,
                "pieces_done": job.pieces_done,
                "pieces_total": job.pieces_total,
                "url": job.url,
            }
        )
    sites = []
    for infohash in sorted(node.served_sites):
        members = node.served_sites[infohash]
        sites.append(
            {
                "infohash": infohash.hex(),
                "members": [m.hex() for m in members],
                "files": len(node.site_trees.get(infohash, {})),
            }
        )
    torrents = []
    for hex_name in sorted(node.store.list_torrents()):
        infohash = bytes.fromhex(hex_name)
        resume = node.store.resume(infohash)
        stats = node.engine.stats_for(infohash)
        torrents.append(
            {
                "infohash": hex_name.lower(),
                "pieces_done": resume.complete_count,
                "pieces_total": resume.piece_count,
                "publisher": resume.publisher,
                "uploaded": stats.uploaded,
                "downloaded": stats.downloaded,
                "peers": len(node.engine.serve_peers.get(infohash, {})),
            }
        )
    settings = node.settings
    return {
        "version": STATUS_VERSION,
        "node_id": node.node_id.hex(),
        "running": node.running,
        "http_enabled": node.http_enabled,
        "dht_nodes": len(node.dht.table),
        "port": settings.port,
        "settings": {
            "background_seed": settings.background_seed,
            "cache_size_bytes": settings.cache_size_bytes,
            "share_ratio_limit": settings.share_ratio_limit,
        },
        "session": {
            "uploaded": node.engine.session_uploaded,
            "downloaded": node.engine.session_downloaded,
        },
        "jobs": jobs,
        "sites": sites,
        "torrents": torrents,
    }


def handle_request(
    node, method: str, target: str, headers: dict[str, str] | None = None
) -> tuple[int, dict[str, str], bytes]:
    """Serve one HTTP request against a node.  Returns (status code,
    response headers, body)."""
    headers = headers or {}
    if method.upper() != "GET":
        return 400, *_json_body({"error": "only GET is supported"})
    if not node.http_enabled:
        return 503, *_json_body({"error": "gateway stopped"})

    split = urlsplit(target)
    path = unquote(split.path)

    if path == "/status":
        return 200, *_json_body(status_snapshot(node))

    if path == "/magnet":
        uri = parse_qs(split.query).get("uri", [None])[0]
        if uri is None:
            return 400, *_json_body({"error": "missing uri parameter"})
        try:
            job = node.load_site(uri)
        except (BadInfohash, ValueError) as err:
            return 400, *_json_body({"error": str(err)})
        location = f"/btih/{job.infohash.hex()}/"
        return 303, {"Location": location}, b""

    if path.startswith("/btih/"):
        rest = path[len("/btih/") :]
        hex_part, _, rel = rest.partition("/")
        try:
            infohash = parse_infohash_hex(hex_part)
        except BadInfohash as err:
            return 400, *_json_body({"error": str(err)})
        return _serve_site(node, infohash, rel, headers)

    return 404, *_json_body({"error": "not found"})


def _serve_site(
    node, infohash: bytes, rel: str, headers: dict[str, str]
) -> tuple[int, dict[str, str], bytes]:
    url = f"bittorrent://{infohash.hex()}/{rel}"
    try:
        job = node.jobs.get(infohash) or node.load_site(url)
    except PathEscape:
        return 403, *_json_body({"error": "path escapes the site root"})
    except (BadAuthority, UnknownAlias, BadInfohash) as err:
        return 400, *_json_body({"error": str(err)})

    tree = node.site_trees.get(infohash)
    if tree is not None:
        try:
            _, path = _resolve_rel(infohash, rel)
        except PathEscape:
            return 403, *_json_body({"error": "path escapes the site root"})
        body = tree.get(path)
        if body is None:
            return 404, *_json_body({"error": f"no such file in site: {path}"})
        etag = f'"{infohash.hex()}"'
        if headers.get("If-None-Match") == etag:
            return 304, {"ETag": etag}, b""
        return 200, {"Content-Type": content_type_for(path), "ETag": etag}, body

    if job.phase == "failed":
        return 404, *_json_body({"error": job.error})
    resp_headers, body = _json_body(_progress(job))
    resp_headers["Retry-After"] = "1"
    return 503, resp_headers, body


def _resolve_rel(infohash: bytes, rel: str) -> tuple[bytes, str]:
    from ..bundle import resolve_url

    return resolve_url(f"bittorrent://{infohash.hex()}/{rel}")
