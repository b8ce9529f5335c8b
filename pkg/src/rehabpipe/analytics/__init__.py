"""Metric services: assessment scoring, walking speed, activity bands, arm use."""

from rehabpipe.analytics.activity import (
    ActivityBands,
    activity_bands,
    arm_use,
    blob_inventory,
)
from rehabpipe.analytics.scoring import score_assessment, walking_speed
from rehabpipe.analytics.services import (
    AnalyticsService,
    StoredBlock,
    builtin_services,
)

__all__ = [
    "ActivityBands",
    "AnalyticsService",
    "StoredBlock",
    "activity_bands",
    "arm_use",
    "blob_inventory",
    "builtin_services",
    "score_assessment",
    "walking_speed",
]
