"""Typed contracts for every JSON document the tools emit.

The HTTP service validates its responses against these models and the
command line validates its --json output the same way; the schema files
under docs/schemas are generated from them, so "matches the published
schema" and "parses with these models" are the same statement.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, model_validator

HEX40 = r"^[0-9a-f]{40}$"

Scalar = Union[int, float, bool, str, None]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


# -- node status ---------------------------------------------------------


class SettingsView(_Strict):
    background_seed: bool
    cache_size_bytes: int
    share_ratio_limit: Optional[float]


class SessionView(_Strict):
    uploaded: int
    downloaded: int


class JobView(_Strict):
    infohash: str = Field(pattern=HEX40)
    phase: str
    error: Optional[str]
    pieces_done: int
    pieces_total: int
    url: str


class SiteView(_Strict):
    infohash: str = Field(pattern=HEX40)
    members: list[str]
    files: int


class TorrentView(_Strict):
    infohash: str = Field(pattern=HEX40)
    pieces_done: int
    pieces_total: int
    publisher: bool
    uploaded: int
    downloaded: int
    peers: int


class StatusReport(_Strict):
    version: int
    node_id: str
    running: bool
    http_enabled: bool
    dht_nodes: int
    port: int
    settings: SettingsView
    session: SessionView
    jobs: list[JobView]
    sites: list[SiteView]
    torrents: list[TorrentView]


# -- management requests -------------------------------------------------


class PublishRequest(_Strict):
    path: Optional[str] = None  # site directory on the node's machine
    files: Optional[dict[str, str]] = None  # inline tree, base64 contents
    split_threshold: Optional[int] = Field(default=None, ge=1)
    name: str = "site"
    alias: Optional[str] = None

    @model_validator(mode="after")
    def _one_source(self):
        if (self.path is None) == (self.files is None):
            raise ValueError("give exactly one of path or files")
        return self


class PublishReport(_Strict):
    infohash: str = Field(pattern=HEX40)
    magnet: str
    members: list[str]
    files: int
    name: str


class LoadRequest(_Strict):
    url: str


class ErrorReport(_Strict):
    error: str


# -- forensic reports ------------------------------------------------------


class DhtRecoveryView(_Strict):
    node_id: str
    declared_nodes: Optional[int]
    stride: Optional[int]
    peers: list[str]
    node_ids: list[str]


class FileEntryView(_Strict):
    path: str
    length: int


class TorrentRecordView(_Strict):
    infohash: str = Field(pattern=HEX40)
    name: Optional[str]
    files: list[FileEntryView]
    piece_length: Optional[int]
    pieces_total: int
    pieces_present: int
    completeness: float
    publisher: bool
    uploaded: int
    downloaded: int
    created_at: Optional[int]
    sources: list[str]


class CacheEntryView(_Strict):
    directory: str
    infohash: Optional[str]
    content_bytes: int
    has_torrent: bool


class SettingsRecoveryView(_Strict):
    non_default: dict[str, Scalar]
    unknown_keys: list[str]
    warnings: list[str]


class TimelineEventView(_Strict):
    timestamp: float
    utc: str
    kind: str
    subject: str
    source: str


class AnomalyView(_Strict):
    source: str
    problem: str


class ForensicReportModel(_Strict):
    version: int
    root: str
    dht: Optional[DhtRecoveryView]
    torrents: list[TorrentRecordView]
    cache: list[CacheEntryView]
    settings: Optional[SettingsRecoveryView]
    timeline: list[TimelineEventView]
    anomalies: list[AnomalyView]
    notes: list[str]


class SiteRemnantView(_Strict):
    infohash: str
    reconstructable: bool


class RemnantReportModel(_Strict):
    version: int
    root: str
    mode: Literal["history_kept", "history_removed", "unknown", "no_evidence"]
    profile_roots: list[str]
    user_data_roots: list[str]
    profiles: list[ForensicReportModel]
    sites: list[SiteRemnantView]


class ReconstructionReport(_Strict):
    infohash: str = Field(pattern=HEX40)
    complete: bool
    pieces_present: int
    pieces_total: int
    files: dict[str, int]  # path -> byte length written
    gaps: dict[str, list[tuple[int, int]]]
    output: Optional[str]


# -- monitor reports -------------------------------------------------------


class PeerObservationView(_Strict):
    peer: str
    first_seen: float
    last_seen: float
    duration: float
    sightings: int
    sources: list[str]


class MonitorReportModel(_Strict):
    version: int
    target: str = Field(pattern=HEX40)
    started: float
    ended: float
    polls: int
    poll_interval: float
    unique_peers: int
    peers: list[PeerObservationView]
    sightings_histogram: dict[str, int]
    swarm_size_series: list[tuple[float, int]]
    limitations: list[str]


# -- scenario reports --------------------------------------------------------


class ScenarioSiteView(_Strict):
    published: bool
    infohash: Optional[str] = None
    publisher: Optional[str] = None
    tree_sha256: Optional[str] = None
    replicas: list[str] = Field(default_factory=list)
    divergent: list[str] = Field(default_factory=list)


class ScenarioJobView(_Strict):
    node: str
    infohash: str = Field(pattern=HEX40)
    phase: str
    pieces_done: int
    pieces_total: int
    error: Optional[str]


class NetTallyView(_Strict):
    delivered: int
    dropped: int
    payload_bytes: int
    conservation: bool


class TransferTotalsView(_Strict):
    uploaded: int
    downloaded: int


class ScenarioReportModel(_Strict):
    scenario: str
    seed: int
    nodes: int
    duration: float
    transcript: list[str]
    sites: dict[str, ScenarioSiteView]
    jobs: list[ScenarioJobView]
    net: NetTallyView
    totals: TransferTotalsView


SCHEMAS: dict[str, type[BaseModel]] = {
    "status": StatusReport,
    "publish": PublishReport,
    "job": JobView,
    "error": ErrorReport,
    "forensic_report": ForensicReportModel,
    "remnant_report": RemnantReportModel,
    "reconstruction": ReconstructionReport,
    "monitor_report": MonitorReportModel,
    "scenario_report": ScenarioReportModel,
}


def schema_documents() -> dict[str, dict]:
    return {name: model.model_json_schema() for name, model in SCHEMAS.items()}


def write_schemas(directory: str | Path) -> list[Path]:
    """Publish one JSON Schema file per contract; returns what was written."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for name, document in schema_documents().items():
        path = directory / f"{name}.schema.json"
        path.write_text(json.dumps(document, indent=2, sort_keys=True) + "\n")
        written.append(path)
    return written
