"""HTTP service wrapping one node, and the JSON contracts it speaks."""

from .app import DEFAULT_HTTP_PORT, ServiceConfig, create_app, parse_endpoint
from .schemas import (
    SCHEMAS,
    ErrorReport,
    ForensicReportModel,
    JobView,
    LoadRequest,
    MonitorReportModel,
    PublishReport,
    PublishRequest,
    ReconstructionReport,
    RemnantReportModel,
    ScenarioReportModel,
    StatusReport,
    schema_documents,
    write_schemas,
)

__all__ = [
    "DEFAULT_HTTP_PORT",
    "SCHEMAS",
    "ErrorReport",
    "ForensicReportModel",
    "JobView",
    "LoadRequest",
    "MonitorReportModel",
    "PublishReport",
    "PublishRequest",
    "ReconstructionReport",
    "RemnantReportModel",
    "ScenarioReportModel",
    "ServiceConfig",
    "StatusReport",
    "create_app",
    "parse_endpoint",
    "schema_documents",
    "write_schemas",
]
