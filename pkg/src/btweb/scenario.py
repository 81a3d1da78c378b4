"""Declarative simulation scenarios.

A scenario file is a TOML document describing a fleet of full nodes,
the network weather, and a timed action script.  Running one yields a
transcript with one line per event.  Everything downstream of the seed
is deterministic, so checking a replay is a byte comparison.
"""

from __future__ import annotations

import dataclasses
import hashlib
import random
import shutil
import tempfile
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # stdlib TOML arrived in 3.11
    import tomli as tomllib

from .bencode import encode
from .fixtures import fixture_site
from .gateway import Node, handle_request
from .store import ProfileStore, Settings
from .torrent import Magnet, format_magnet
from .transport import SimConfig, SimWire, Simulator

__all__ = [
    "ACTION_KINDS",
    "Action",
    "Scenario",
    "ScenarioError",
    "SiteSpec",
    "load_scenario",
    "run_scenario",
    "tree_digest",
]

ACTION_KINDS = ("publish", "load", "fetch", "stop_http", "shutdown", "restart")

# swarm frames carry whole pieces, so the sim links must take full UDP payloads
SIM_DATAGRAM = 65507

_TEARDOWN_DRAIN_S = 3.0


class ScenarioError(ValueError):
    """The scenario file is malformed or contradicts itself."""


@dataclass(frozen=True)
class SiteSpec:
    files: int = 12
    total_bytes: int = 1024 * 1024
    seed: int = 7
    split_threshold: int | None = None


@dataclass(frozen=True)
class Action:
    at: float
    node: int
    kind: str
    site: str | None = None
    source: int | None = None  # publisher node, for load/fetch by origin
    path: str = "index.html"
    alias: str | None = None


@dataclass(frozen=True)
class Scenario:
    name: str = "unnamed"
    duration: float = 60.0
    seed: int = 0
    loss: float = 0.0
    latency_ms: tuple[float, float] = (5.0, 50.0)
    count: int = 2
    join_gap: float = 0.25
    overrides: dict = field(default_factory=dict)
    sites: dict = field(default_factory=dict)
    actions: tuple[Action, ...] = ()


def load_scenario(path) -> Scenario:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario: {exc}") from None
    try:
        doc = tomllib.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ScenarioError(f"bad scenario file: {exc}") from None
    return scenario_from(doc)


def scenario_from(doc: dict) -> Scenario:
    """Validate a parsed scenario document and freeze it."""
    _expect_keys(doc, {"scenario", "net", "nodes", "settings", "sites", "actions"}, "top level")

    head = doc.get("scenario", {})
    _expect_keys(head, {"name", "duration"}, "[scenario]")
    name = _typed(head, "name", str, "unnamed")
    duration = float(_typed(head, "duration", (int, float), 60.0))
    if duration <= 0:
        raise ScenarioError("duration must be positive")

    net = doc.get("net", {})
    _expect_keys(net, {"seed", "loss", "latency_ms"}, "[net]")
    seed = _typed(net, "seed", int, 0)
    loss = float(_typed(net, "loss", (int, float), 0.0))
    if not 0.0 <= loss < 1.0:
        raise ScenarioError("loss must be in [0, 1)")
    latency = net.get("latency_ms", [5.0, 50.0])
    if not (isinstance(latency, list) and len(latency) == 2):
        raise ScenarioError("latency_ms must be [min, max]")
    latency_ms = (float(latency[0]), float(latency[1]))
    if not 0 <= latency_ms[0] <= latency_ms[1]:
        raise ScenarioError("latency_ms must satisfy 0 <= min <= max")

    nodes = doc.get("nodes", {})
    _expect_keys(nodes, {"count", "join_gap"}, "[nodes]")
    count = _typed(nodes, "count", int, 2)
    if not 1 <= count <= 512:
        raise ScenarioError("node count must be in 1..512")
    join_gap = float(_typed(nodes, "join_gap", (int, float), 0.25))
    if join_gap < 0:
        raise ScenarioError("join_gap must be non-negative")

    overrides = dict(doc.get("settings", {}))
    tunable = {
        "cache_size_bytes",
        "share_ratio_limit",
        "upload_rate",
        "download_rate",
        "transfer_cap",
        "background_seed",
        "send_stats",
    }
    for key in overrides:
        if key not in tunable:
            raise ScenarioError(f"unknown setting {key!r}")

    sites = {}
    for label, spec in doc.get("sites", {}).items():
        if not isinstance(spec, dict):
            raise ScenarioError(f"[sites.{label}] must be a table")
        _expect_keys(spec, {"files", "bytes", "seed", "split_threshold"}, f"[sites.{label}]")
        sites[label] = SiteSpec(
            files=_typed(spec, "files", int, 12),
            total_bytes=_typed(spec, "bytes", int, 1024 * 1024),
            seed=_typed(spec, "seed", int, 7),
            split_threshold=spec.get("split_threshold"),
        )

    actions = []
    for i, entry in enumerate(doc.get("actions", ())):
        where = f"actions[{i}]"
        if not isinstance(entry, dict):
            raise ScenarioError(f"{where} must be a table")
        _expect_keys(entry, {"at", "node", "do", "site", "from", "path", "alias"}, where)
        kind = entry.get("do")
        if kind not in ACTION_KINDS:
            raise ScenarioError(f"{where}: unknown action {kind!r}")
        at = float(_typed(entry, "at", (int, float), 0.0))
        if at < 0:
            raise ScenarioError(f"{where}: at must be non-negative")
        node = entry.get("node")
        if not isinstance(node, int) or not 0 <= node < count:
            raise ScenarioError(f"{where}: node must be in 0..{count - 1}")
        site = entry.get("site")
        source = entry.get("from")
        if kind == "publish":
            if site not in sites:
                raise ScenarioError(f"{where}: publish needs a declared site")
        elif kind in ("load", "fetch"):
            if (site is None) == (source is None):
                raise ScenarioError(f"{where}: give exactly one of site= or from=")
            if site is not None and site not in sites:
                raise ScenarioError(f"{where}: undeclared site {site!r}")
            if source is not None and not (isinstance(source, int) and 0 <= source < count):
                raise ScenarioError(f"{where}: from must name a node")
        elif site is not None or source is not None:
            raise ScenarioError(f"{where}: {kind} takes no target")
        actions.append(
            Action(
                at=at,
                node=node,
                kind=kind,
                site=site,
                source=source,
                path=_typed(entry, "path", str, "index.html"),
                alias=entry.get("alias"),
            )
        )

    return Scenario(
        name=name,
        duration=duration,
        seed=seed,
        loss=loss,
        latency_ms=latency_ms,
        count=count,
        join_gap=join_gap,
        overrides=overrides,
        sites=sites,
        actions=tuple(actions),
    )


def _expect_keys(table, allowed, where):
    stray = sorted(set(table) - allowed)
    if stray:
        raise ScenarioError(f"{where}: unknown key {stray[0]!r}")


_MISSING = object()


def _typed(table, key, kinds, default=_MISSING):
    value = table.get(key, default)
    if value is _MISSING:
        raise ScenarioError(f"missing required key {key!r}")
    if value is not default and not isinstance(value, kinds):
        raise ScenarioError(f"{key} has the wrong type")
    # TOML has no NaN-free float guarantee; bools also pass isinstance(int)
    if isinstance(value, bool) and kinds in (int, (int, float)):
        raise ScenarioError(f"{key} has the wrong type")
    return value


def tree_digest(tree: dict) -> str:
    """Order-independent digest of an assembled site tree."""
    return hashlib.sha256(encode({k.encode(): v for k, v in tree.items()})).hexdigest()


def run_scenario(scenario: Scenario, *, seed: int | None = None, workdir=None, emit=None) -> dict:
    """Execute a scenario and return its report.  `seed` overrides the
    file's seed; `emit` receives each transcript line as text."""
    if seed is not None:
        scenario = dataclasses.replace(scenario, seed=seed)
    owned = workdir is None
    root = Path(tempfile.mkdtemp(prefix="btweb-sim-")) if owned else Path(workdir)
    try:
        report = _Fleet(scenario, root).run()
    finally:
        if owned:
            shutil.rmtree(root, ignore_errors=True)
    if emit is not None:
        for line in report["transcript"]:
            emit(line)
    return report


class _Machine:
    """One simulated computer: a profile directory that outlives restarts
    plus whatever node incarnation currently runs against it."""

    def __init__(self, fleet: "_Fleet", index: int):
        self.fleet = fleet
        self.index = index
        self.root = fleet.workdir / f"n{index:03d}"
        self.peer = fleet.peer_for(index)
        self.node: Node | None = None
        self.alive = False
        self.drained: dict[bytes, int] = {}

    def build(self) -> None:
        scn = self.fleet.scenario
        wire = SimWire(self.fleet.sim, self.peer)
        if self.root.exists():
            store = ProfileStore(self.root, clock=wire.wall_now)
        else:
            store = ProfileStore.create(
                self.root,
                clock=wire.wall_now,
                rng=random.Random(scn.seed * 100_003 + self.index),
                settings=Settings(**scn.overrides).replace(port=self.peer.port),
            )
        self.node = Node(store, wire, rng=random.Random(scn.seed * 999_983 + self.index))
        self.drained = {}

    def start(self, bootstrap) -> None:
        self.build()
        self.fleet.sim.add_endpoint(self.peer, self.node.on_datagram)
        self.node.start(bootstrap=bootstrap)
        self.alive = True

    def drain_phases(self) -> None:
        """Turn phase transitions recorded since the last drain into
        transcript lines, stamped with when they actually happened."""
        if self.node is None:
            return
        for infohash, job in self.node.jobs.items():
            log = job.phase_log
            for when, phase in log[self.drained.get(infohash, 0):]:
                text = f"phase {phase} infohash={infohash.hex()}"
                if phase == "ready":
                    tree = self.node.site_trees.get(infohash)
                    if tree is not None:
                        text += f" tree={tree_digest(tree)[:16]}"
                    text += f" pieces={job.pieces_done}/{job.pieces_total}"
                elif phase == "failed" and job.error:
                    text += f' error="{job.error}"'
                self.fleet.note(when, self.index, 2, text)
            self.drained[infohash] = len(log)


class _Fleet:
    def __init__(self, scenario: Scenario, workdir: Path):
        self.scenario = scenario
        self.workdir = workdir
        self.sim = Simulator(
            SimConfig(
                seed=scenario.seed,
                latency_min_ms=scenario.latency_ms[0],
                latency_max_ms=scenario.latency_ms[1],
                loss_probability=scenario.loss,
                max_datagram=SIM_DATAGRAM,
            )
        )
        self.machines = [_Machine(self, i) for i in range(scenario.count)]
        self.lines: list[tuple] = []
        self.seq = 0
        self.site_hash: dict[str, bytes] = {}
        self.last_publish: dict[int, bytes] = {}
        self.publisher: dict[bytes, int] = {}

    @staticmethod
    def peer_for(index: int):
        from .dht.routing import CompactPeer

        return CompactPeer.make(f"10.0.{index >> 8}.{index & 0xFF}", 6881)

    def note(self, when: float, node: int | None, rank: int, text: str) -> None:
        who = -1 if node is None else node
        self.lines.append((when, who, rank, self.seq, text))
        self.seq += 1

    # -- lifecycle ---------------------------------------------------------

    def run(self) -> dict:
        scn = self.scenario
        self.note(
            0.0,
            None,
            0,
            f"scenario {scn.name!r} seed={scn.seed} nodes={scn.count}"
            f" loss={scn.loss:.3f} duration={scn.duration:g}s",
        )
        for machine in self.machines:
            self.sim.call_later(machine.index * scn.join_gap * 1000.0, partial(self._bring_up, machine))
        for action in scn.actions:
            self.sim.call_later(action.at * 1000.0, partial(self._perform, action))
        self.sim.run(scn.duration * 1000.0)

        sites = self._site_report()
        jobs = self._job_report()
        for machine in self.machines:
            machine.drain_phases()
        for machine in self.machines:
            if machine.node is not None and machine.node.running:
                machine.node.shutdown()
        self.sim.run(_TEARDOWN_DRAIN_S * 1000.0)

        delivered = sum(1 for entry in self.sim.trace if entry[1] == "deliver")
        dropped = sum(1 for entry in self.sim.trace if entry[1] == "drop")
        payload = sum(entry[4] for entry in self.sim.trace if entry[1] == "deliver")
        conserved = self.sim.conservation_holds()
        self.note(
            self.sim.now_s,
            None,
            0,
            f"done delivered={delivered} dropped={dropped} payload={payload}B"
            f" conservation={'ok' if conserved else 'VIOLATED'}",
        )
        totals = {"uploaded": 0, "downloaded": 0}
        for machine in self.machines:
            if machine.node is None:
                continue
            settings = machine.node.store.load_settings()
            totals["uploaded"] += settings.uploaded_total
            totals["downloaded"] += settings.downloaded_total

        transcript = [self._format(line) for line in sorted(self.lines)]
        return {
            "scenario": scn.name,
            "seed": scn.seed,
            "nodes": scn.count,
            "duration": scn.duration,
            "transcript": transcript,
            "sites": sites,
            "jobs": jobs,
            "net": {
                "delivered": delivered,
                "dropped": dropped,
                "payload_bytes": payload,
                "conservation": conserved,
            },
            "totals": totals,
        }

    @staticmethod
    def _format(line: tuple) -> str:
        when, node, _rank, _seq, text = line
        who = "net" if node < 0 else f"n{node:02d}"
        return f"{when:9.3f} {who:<4} {text}"

    def _bring_up(self, machine: _Machine) -> None:
        boot_idx = []
        if machine.index > 0:
            boot_idx.append(0)
        if machine.index > 1:
            boot_idx.append(machine.index - 1)
        machine.start(tuple(self.machines[j].peer for j in boot_idx))
        names = ",".join(f"n{j:02d}" for j in boot_idx) or "-"
        self.note(self.sim.now_s, machine.index, 0, f"up bootstrap={names}")

    # -- the action script ---------------------------------------------------

    def _perform(self, action: Action) -> None:
        machine = self.machines[action.node]
        now = self.sim.now_s
        if action.kind == "restart":
            if machine.alive and machine.node.running:
                self.note(now, action.node, 1, "restart skipped already-running")
                return
            machine.drain_phases()
            boot_idx = [m.index for m in self.machines if m.alive and m.node.running and m is not machine][:2]
            machine.start(tuple(self.machines[j].peer for j in boot_idx))
            names = ",".join(f"n{j:02d}" for j in boot_idx) or "-"
            self.note(now, action.node, 1, f"up bootstrap={names}")
            return
        if machine.node is None or not machine.node.running:
            self.note(now, action.node, 1, f"{action.kind} skipped node-down")
            return
        if action.kind == "publish":
            spec = self.scenario.sites[action.site]
            tree = fixture_site(spec.files, spec.total_bytes, spec.seed)
            metas, _ = machine.node.publish_site(
                tree, spec.split_threshold, name=action.site, alias=action.alias
            )
            base = metas[0].infohash
            self.site_hash[action.site] = base
            self.last_publish[action.node] = base
            self.publisher.setdefault(base, action.node)
            self.note(
                now,
                action.node,
                1,
                f"publish site={action.site} infohash={base.hex()}"
                f" members={len(metas)} files={len(tree)}",
            )
        elif action.kind == "load":
            infohash = self._target_of(action)
            if infohash is None:
                self.note(now, action.node, 1, "load error=nothing-published")
                return
            machine.node.load_site(format_magnet(Magnet(infohash)))
            self.note(now, action.node, 1, f"load infohash={infohash.hex()}")
        elif action.kind == "fetch":
            infohash = self._target_of(action)
            if infohash is None:
                self.note(now, action.node, 1, "fetch error=nothing-published")
                return
            status, headers, body = handle_request(
                machine.node, "GET", f"/btih/{infohash.hex()}/{action.path}"
            )
            ctype = headers.get("Content-Type", "-")
            self.note(
                now,
                action.node,
                1,
                f"fetch {action.path} status={status} type={ctype} bytes={len(body)}",
            )
        elif action.kind == "stop_http":
            machine.node.stop_http()
            machine.alive = machine.node.running
            self.note(
                now,
                action.node,
                1,
                f"stop_http background_seed={str(machine.node.settings.background_seed).lower()}",
            )
        elif action.kind == "shutdown":
            machine.drain_phases()
            machine.node.shutdown()
            machine.alive = False
            self.note(now, action.node, 1, "down")

    def _target_of(self, action: Action) -> bytes | None:
        if action.site is not None:
            return self.site_hash.get(action.site)
        return self.last_publish.get(action.source)

    # -- census ----------------------------------------------------------------

    def _site_report(self) -> dict:
        sites = {}
        for label in self.scenario.sites:
            base = self.site_hash.get(label)
            if base is None:
                sites[label] = {"published": False}
                continue
            digest = None
            replicas, divergent = [], []
            origin = self.publisher[base]
            origin_tree = self.machines[origin].node.site_trees.get(base)
            if origin_tree is not None:
                digest = tree_digest(origin_tree)
            for machine in self.machines:
                if machine.node is None:
                    continue
                tree = machine.node.site_trees.get(base)
                if tree is None:
                    continue
                name = f"n{machine.index:02d}"
                if digest is None or tree_digest(tree) == digest:
                    replicas.append(name)
                else:
                    divergent.append(name)
            sites[label] = {
                "published": True,
                "infohash": base.hex(),
                "publisher": f"n{origin:02d}",
                "tree_sha256": digest,
                "replicas": replicas,
                "divergent": divergent,
            }
        return sites

    def _job_report(self) -> list:
        jobs = []
        for machine in self.machines:
            if machine.node is None:
                continue
            for infohash, job in machine.node.jobs.items():
                jobs.append(
                    {
                        "node": f"n{machine.index:02d}",
                        "infohash": infohash.hex(),
                        "phase": job.phase,
                        "pieces_done": job.pieces_done,
                        "pieces_total": job.pieces_total,
                        "error": job.error,
                    }
                )
        return jobs
