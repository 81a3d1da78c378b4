"""Command line for the whole toolbox.

Node operations (serve, fetch) speak HTTP to a running service so there
is exactly one writer per profile; publishing and the forensic,
monitoring, and simulation tools run in-process.  Exit codes: 0 success,
1 operational failure, 2 usage error.  Diagnostics go to standard
error; machine output goes to standard out or a --json file.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import os
import random
import sys
import time
import urllib.parse
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # stdlib TOML arrived in 3.11
    import tomli as tomllib

PROFILE_ENV = "BTWEB_PROFILE"

DEFAULT_SERVER = "http://127.0.0.1:8945"

_OPERATIONAL = (OSError, ValueError, KeyError, RuntimeError)


class CliError(RuntimeError):
    pass


class _Parser(argparse.ArgumentParser):
    # usage mistakes should show the whole subcommand help, not one line
    def error(self, message):
        self.print_help(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code
        return code if isinstance(code, int) else (0 if code is None else 2)
    try:
        return args.run(args)
    except _OPERATIONAL as exc:
        # str(KeyError) quotes its argument; unwrap for a readable line
        message = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {message}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return 130


def _say(text: str) -> None:
    print(text, file=sys.stderr)


def _emit_json(args, payload: bytes) -> None:
    if args.json == "-":
        sys.stdout.buffer.write(payload)
        sys.stdout.buffer.flush()
    else:
        Path(args.json).write_bytes(payload)


def _load_config(args) -> dict:
    if not getattr(args, "config", None):
        return {}
    doc = tomllib.loads(Path(args.config).read_text())
    known = {"profile", "host", "http_port", "udp_port", "bootstrap", "log_level", "settings", "server"}
    stray = sorted(set(doc) - known)
    if stray:
        raise CliError(f"unknown config key {stray[0]!r}")
    return doc


def _pick(flag, env_name, config, key, fallback=None):
    """Priority: explicit flag, then environment, then config file."""
    if flag is not None:
        return flag
    if env_name and os.environ.get(env_name):
        return os.environ[env_name]
    return config.get(key, fallback)


def _profile_path(given, config) -> Path:
    value = _pick(given, PROFILE_ENV, config, "profile")
    if not value:
        raise CliError(f"no profile directory; pass it or set {PROFILE_ENV}")
    return Path(value)


def _open_store(root: Path):
    from .store import ProfileStore

    if root.exists():
        return ProfileStore(root)
    return ProfileStore.create(root, rng=random.Random())


def _endpoint(text: str):
    from .dht.routing import CompactPeer

    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise CliError(f"endpoint must be ip:port, got {text!r}")
    return CompactPeer.make(host, int(port))


def _settings_overrides(pairs) -> dict:
    from .store import Settings

    overrides = {}
    for pair in pairs or ():
        key, sep, raw = pair.partition("=")
        if not sep:
            raise CliError(f"--set expects key=value, got {pair!r}")
        if raw.lower() in ("true", "false"):
            value = raw.lower() == "true"
        elif raw.lower() in ("none", "unlimited"):
            value = None
        else:
            try:
                value = int(raw)
            except ValueError:
                try:
                    value = float(raw)
                except ValueError:
                    value = raw
        overrides[key] = value
    try:
        Settings(**overrides)  # fail fast on unknown keys or bad values
    except TypeError as exc:
        raise CliError(str(exc)) from None
    return overrides


# -- subcommands ----------------------------------------------------------


def cmd_publish(args) -> int:
    from . import bundle
    from .torrent import Magnet, concat_files, format_magnet

    config = _load_config(args)
    tree = bundle.read_site_tree(args.site)
    root = _profile_path(args.out, config)
    store = _open_store(root)
    metas, manifest = bundle.publish(tree, args.split, name=args.name)
    trees = bundle.torrent_trees(tree, manifest)
    for meta in metas:
        store.store_content(meta, concat_files(meta.info, trees[meta.infohash]), publisher=True)
    base = metas[0]
    if args.alias:
        path = store.aliases_path
        table = bundle.load_aliases(path.read_bytes() if path.exists() else None)
        table[args.alias] = base.infohash
        path.write_bytes(bundle.save_aliases(table))
    magnet = format_magnet(Magnet(base.infohash, display_name=args.name))
    _say(f"published {args.name!r}: {len(metas)} torrents, {len(tree)} files -> {root}")
    if args.json:
        document = {
            "infohash": base.infohash.hex(),
            "magnet": magnet,
            "members": [m.infohash.hex() for m in metas],
            "files": len(tree),
            "name": args.name,
        }
        _emit_json(args, (json.dumps(document, indent=2, sort_keys=True) + "\n").encode())
    else:
        print(f"infohash {base.infohash.hex()}")
        print(f"magnet {magnet}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import ServiceConfig, create_app

    config = _load_config(args)
    overrides = dict(config.get("settings", {}))
    overrides.update(_settings_overrides(args.set))
    service = ServiceConfig(
        profile=_profile_path(args.profile, config),
        udp_port=int(_pick(args.udp_port, None, config, "udp_port", 0)),
        bootstrap=tuple(args.bootstrap or config.get("bootstrap", ())),
        overrides=overrides,
    )
    host = _pick(args.host, None, config, "host", "127.0.0.1")
    port = int(_pick(args.http_port, None, config, "http_port", 8945))
    level = _pick(args.log_level, None, config, "log_level", "warning")
    app = create_app(service)
    _say(f"profile {service.profile} -> http://{host}:{port} (ctrl-c saves and exits)")
    uvicorn.run(app, host=host, port=port, log_level=level)
    return 0


def cmd_fetch(args) -> int:
    import httpx

    config = _load_config(args)
    server = str(_pick(args.server, None, config, "server", DEFAULT_SERVER)).rstrip("/")
    url = args.url
    if url.lower().startswith("magnet:"):
        target = f"{server}/magnet?uri={urllib.parse.quote(url, safe='')}"
    elif url.startswith("/btih/"):
        target = server + url
    elif len(url) == 40 and all(c in "0123456789abcdefABCDEF" for c in url):
        target = f"{server}/btih/{url.lower()}/"
    else:
        raise CliError(f"cannot fetch {url!r}; give a magnet, 40-hex infohash, or /btih/ path")

    deadline = time.monotonic() + args.timeout
    try:
        with httpx.Client(follow_redirects=True, timeout=10.0) as client:
            while True:
                response = client.get(target)
                if response.status_code == 200:
                    break
                if response.status_code == 503 and time.monotonic() < deadline:
                    retry = float(response.headers.get("Retry-After", "1"))
                    _say(f"loading... ({response.text.strip()[:120]})")
                    time.sleep(max(0.2, min(retry, deadline - time.monotonic())))
                    continue
                raise CliError(f"fetch failed: HTTP {response.status_code} {response.text[:200]}")
    except httpx.HTTPError as exc:
        raise CliError(f"server unreachable: {exc}") from None
    if args.out:
        Path(args.out).write_bytes(response.content)
        _say(f"wrote {len(response.content)} bytes to {args.out}")
    else:
        sys.stdout.buffer.write(response.content)
        sys.stdout.buffer.flush()
    return 0


def cmd_inspect(args) -> int:
    from . import forensics

    report = forensics.inspect_profile(args.profile)
    if args.json:
        _emit_json(args, forensics.report_json(report))
    else:
        sys.stdout.write(forensics.report_text(report))
    return 0


def cmd_remnants(args) -> int:
    from . import forensics

    report = forensics.detect_remnants(args.root)
    if args.json:
        _emit_json(args, forensics.remnant_json(report))
    else:
        sys.stdout.write(forensics.remnant_text(report))
    return 0


def _write_tree(out: Path, tree: dict) -> dict:
    written = {}
    base = out.resolve()
    for rel in sorted(tree):
        path = (out / rel).resolve()
        if not path.is_relative_to(base):
            raise CliError(f"refusing to write outside {out}: {rel!r}")
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(tree[rel])
        written[rel] = len(tree[rel])
    return written


def cmd_reconstruct(args) -> int:
    from . import forensics
    from .torrent import parse_infohash_hex

    infohash = parse_infohash_hex(args.infohash)
    root = Path(args.profile)
    recon = forensics.reconstruct_torrent(root, infohash)
    if args.torrent:
        tree, gaps = recon.tree, recon.gaps
    else:
        tree, gaps = forensics.reconstruct_site(root, infohash), {}
    written = {rel: len(data) for rel, data in sorted(tree.items())}
    if args.out:
        written = _write_tree(Path(args.out), tree)
        _say(f"wrote {len(written)} files to {args.out}")
    document = {
        "infohash": infohash.hex(),
        "complete": recon.complete if args.torrent else True,
        "pieces_present": recon.pieces_present,
        "pieces_total": recon.pieces_total,
        "files": written,
        "gaps": {path: [list(span) for span in spans] for path, spans in sorted(gaps.items())},
        "output": args.out,
    }
    if args.json:
        _emit_json(args, (json.dumps(document, indent=2, sort_keys=True) + "\n").encode())
    elif not args.out:
        for rel, size in written.items():
            print(f"{size:10d}  {rel}")
    return 0


async def _crawl(args, infohash, peers):
    from .monitor import Monitor
    from .transport.udp import UdpEndpoint

    endpoint = await UdpEndpoint.create(port=args.port)
    monitor = Monitor(endpoint, jsonl_path=args.jsonl)
    endpoint.handler = monitor.on_datagram
    monitor.start(bootstrap=peers)
    await asyncio.sleep(args.warmup)
    monitor.crawl(infohash, args.duration, args.poll)
    while not monitor.done:
        await asyncio.sleep(0.25)
    endpoint.close()
    return monitor.log


def cmd_monitor(args) -> int:
    from . import monitor as monitor_mod
    from .torrent import parse_infohash_hex

    infohash = parse_infohash_hex(args.infohash)
    peers = tuple(_endpoint(b) for b in args.bootstrap)
    _say(f"crawling {args.infohash.lower()} for {args.duration:g}s")
    log = asyncio.run(_crawl(args, infohash, peers))
    if args.json:
        _emit_json(args, monitor_mod.report_json(log))
    else:
        sys.stdout.write(monitor_mod.report_text(log))
    return 0


def cmd_sim(args) -> int:
    from .scenario import load_scenario, run_scenario

    scenario = load_scenario(args.scenario)
    report = run_scenario(
        scenario,
        seed=args.seed,
        workdir=args.workdir,
        emit=None if args.quiet else print,
    )
    if args.json:
        _emit_json(args, (json.dumps(report, indent=2, sort_keys=True) + "\n").encode())
    return 0


# -- wiring -------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="btweb", description=__doc__.split("\n\n")[0])
    parser.add_argument("--config", metavar="FILE", help="TOML file with defaults")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("publish", help="pack a site directory into a profile")
    p.add_argument("site", help="directory with the site's files")
    p.add_argument("--out", metavar="PROFILE", help=f"profile directory (default ${PROFILE_ENV})")
    p.add_argument("--split", type=int, metavar="BYTES", help="own torrent for files above this size")
    p.add_argument("--name", default="site")
    p.add_argument("--alias", help="also register a bittorrent:// alias")
    p.add_argument("--json", metavar="FILE", help="write the result as JSON ('-' for stdout)")
    p.set_defaults(run=cmd_publish)

    p = sub.add_parser("serve", help="run the node and its HTTP gateway")
    p.add_argument("--profile", metavar="DIR", help=f"profile directory (default ${PROFILE_ENV})")
    p.add_argument("--host")
    p.add_argument("--http-port", type=int, dest="http_port")
    p.add_argument("--udp-port", type=int, dest="udp_port")
    p.add_argument("--bootstrap", action="append", metavar="IP:PORT")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="settings override")
    p.add_argument("--log-level", dest="log_level")
    p.set_defaults(run=cmd_serve)

    p = sub.add_parser("fetch", help="fetch a page through a running node")
    p.add_argument("url", help="magnet URI, 40-hex infohash, or /btih/ path")
    p.add_argument("--server", metavar="URL", help=f"node address (default {DEFAULT_SERVER})")
    p.add_argument("--out", metavar="FILE", help="write the body here instead of stdout")
    p.add_argument("--timeout", type=float, default=60.0, metavar="SECONDS")
    p.set_defaults(run=cmd_fetch)

    p = sub.add_parser("inspect", help="read-only forensic report of a profile")
    p.add_argument("profile")
    p.add_argument("--json", metavar="FILE")
    p.set_defaults(run=cmd_inspect)

    p = sub.add_parser("remnants", help="find what an uninstall left behind")
    p.add_argument("root", help="machine or user directory to sweep")
    p.add_argument("--json", metavar="FILE")
    p.set_defaults(run=cmd_remnants)

    p = sub.add_parser("reconstruct", help="rebuild cached sites from a profile")
    p.add_argument("profile")
    p.add_argument("infohash")
    p.add_argument("--out", metavar="DIR", help="write the files here")
    p.add_argument("--torrent", action="store_true", help="single torrent, gaps zero-filled")
    p.add_argument("--json", metavar="FILE")
    p.set_defaults(run=cmd_reconstruct)

    p = sub.add_parser("monitor", help="passively enumerate a swarm's peers")
    p.add_argument("infohash")
    p.add_argument("--bootstrap", action="append", required=True, metavar="IP:PORT")
    p.add_argument("--duration", type=float, default=300.0, metavar="SECONDS")
    p.add_argument("--poll", type=float, default=30.0, metavar="SECONDS")
    p.add_argument("--warmup", type=float, default=2.0, metavar="SECONDS")
    p.add_argument("--port", type=int, default=0, help="local UDP port")
    p.add_argument("--jsonl", metavar="FILE", help="append raw sightings here")
    p.add_argument("--json", metavar="FILE")
    p.set_defaults(run=cmd_monitor)

    p = sub.add_parser("sim", help="run a declarative scenario deterministically")
    p.add_argument("--scenario", required=True, metavar="FILE")
    p.add_argument("--seed", type=int, help="override the file's seed")
    p.add_argument("--workdir", metavar="DIR", help="keep profiles here instead of a temp dir")
    p.add_argument("--quiet", action="store_true", help="suppress the transcript")
    p.add_argument("--json", metavar="FILE")
    p.set_defaults(run=cmd_sim)

    return parser


if __name__ == "__main__":
    sys.exit(main())
