"""Clinical ingestion layer: observation bundles, dashboards, static reports."""

from rehabpipe.export.bundle import (
    ObservationBundle,
    build_bundle,
    bundle_schema,
    entry_to_observation,
    validate_bundle,
)
from rehabpipe.export.dashboard import CODE_TO_INSTRUMENT, DashboardBuilder
from rehabpipe.export.report import render_static_report
from rehabpipe.export.source import CoreDataView

__all__ = [
    "CODE_TO_INSTRUMENT",
    "CoreDataView",
    "DashboardBuilder",
    "ObservationBundle",
    "build_bundle",
    "bundle_schema",
    "entry_to_observation",
    "render_static_report",
    "validate_bundle",
]
