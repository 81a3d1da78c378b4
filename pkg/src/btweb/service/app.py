"""HTTP service hosting one node.

Two surfaces share the port: the browser-facing gateway (/btih/...,
/magnet, /status) delegating straight to the core request handler, and
a typed management API under /api used by the command line.
"""

from __future__ import annotations

import base64
import binascii
import random
import time
from contextlib import asynccontextmanager
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import FastAPI, HTTPException, Request, Response

from .. import __version__
from ..bundle import BundleError, read_site_tree
from ..dht.routing import CompactPeer
from ..gateway import DEFAULT_HTTP_PORT, Node, handle_request, status_snapshot
from ..store import ProfileStore, Settings
from ..torrent import Magnet, format_magnet
from ..transport.udp import UdpEndpoint
from .schemas import JobView, LoadRequest, PublishReport, PublishRequest, StatusReport

__all__ = ["ServiceConfig", "create_app", "parse_endpoint", "DEFAULT_HTTP_PORT"]


@dataclass
class ServiceConfig:
    profile: Path
    udp_host: str = "127.0.0.1"
    udp_port: int = 0  # 0 picks an ephemeral port
    bootstrap: tuple[str, ...] = ()
    overrides: dict = field(default_factory=dict)


def parse_endpoint(text: str) -> CompactPeer:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"endpoint must be ip:port, got {text!r}")
    return CompactPeer.make(host, int(port))


async def _bring_up(config: ServiceConfig) -> Node:
    endpoint = await UdpEndpoint.create(host=config.udp_host, port=config.udp_port)
    root = Path(config.profile)
    if root.exists():
        store = ProfileStore(root, clock=time.time)
    else:
        store = ProfileStore.create(
            root,
            clock=time.time,
            rng=random.Random(),
            settings=Settings(**config.overrides),
        )
    node = Node(store, endpoint, rng=random.Random())
    endpoint.handler = node.on_datagram
    node.start(bootstrap=tuple(parse_endpoint(b) for b in config.bootstrap))
    return node


def create_app(config: ServiceConfig | None = None, *, node: Node | None = None) -> FastAPI:
    """Build the service.  Pass a ready node to run against it (tests,
    simulations); otherwise the lifespan brings one up from `config` and
    tears it down cleanly on exit, ctrl-c included."""

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        owns = app.state.node is None
        if owns:
            if app.state.config is None:
                raise RuntimeError("create_app needs a config or a node")
            app.state.node = await _bring_up(app.state.config)
        try:
            yield
        finally:
            if owns:
                app.state.node.shutdown()

    app = FastAPI(title="btweb", version=__version__, lifespan=lifespan, docs_url=None, redoc_url=None)
    app.state.config = config
    app.state.node = node
    _mount(app)
    return app


def _job_view(job) -> JobView:
    return JobView(
        infohash=job.infohash.hex(),
        phase=job.phase,
        error=job.error,
        pieces_done=job.pieces_done,
        pieces_total=job.pieces_total,
        url=job.url,
    )


def _mount(app: FastAPI) -> None:
    def node() -> Node:
        running = app.state.node
        if running is None:
            raise HTTPException(503, "node not started")
        return running

    @app.get("/api/status", response_model=StatusReport)
    def api_status():
        return status_snapshot(node())

    @app.post("/api/sites", response_model=PublishReport)
    def api_publish(req: PublishRequest):
        current = node()
        if req.path is not None:
            try:
                tree = read_site_tree(req.path)
            except BundleError as exc:
                raise HTTPException(400, str(exc))
        else:
            try:
                tree = {name: base64.b64decode(data, validate=True) for name, data in req.files.items()}
            except binascii.Error as exc:
                raise HTTPException(400, f"bad base64 content: {exc}")
        try:
            metas, _ = current.publish_site(
                tree, req.split_threshold, name=req.name, alias=req.alias
            )
        except ValueError as exc:
            raise HTTPException(400, str(exc))
        base = metas[0].infohash
        return PublishReport(
            infohash=base.hex(),
            magnet=format_magnet(Magnet(base, display_name=req.name)),
            members=[m.infohash.hex() for m in metas],
            files=len(tree),
            name=req.name,
        )

    @app.post("/api/loads", response_model=JobView, status_code=202)
    def api_load(req: LoadRequest):
        try:
            job = node().load_site(req.url)
        except RuntimeError as exc:
            raise HTTPException(503, str(exc))
        except ValueError as exc:
            raise HTTPException(400, str(exc))
        return _job_view(job)

    @app.get("/api/jobs", response_model=list[JobView])
    def api_jobs():
        current = node()
        return [_job_view(current.jobs[ih]) for ih in sorted(current.jobs)]

    @app.get("/api/jobs/{infohash}", response_model=JobView)
    def api_job(infohash: str):
        try:
            key = bytes.fromhex(infohash)
        except ValueError:
            raise HTTPException(400, "infohash must be 40 hex digits")
        job = node().jobs.get(key)
        if job is None:
            raise HTTPException(404, "no such job")
        return _job_view(job)

    @app.post("/api/stop", response_model=StatusReport)
    def api_stop():
        current = node()
        current.stop_http()
        return status_snapshot(current)

    # everything else is the browser surface; the core handler owns its
    # status codes, including 400 for non-GET methods
    @app.api_route(
        "/{rest:path}",
        methods=["GET", "POST", "PUT", "DELETE", "PATCH"],
        include_in_schema=False,
    )
    def browser(rest: str, request: Request):
        target = "/" + rest
        if request.url.query:
            target += "?" + request.url.query
        headers = {}
        etag = request.headers.get("if-none-match")
        if etag is not None:
            headers["If-None-Match"] = etag
        status, out_headers, body = handle_request(node(), request.method, target, headers)
        return Response(content=body, status_code=status, headers=out_headers)
