"""Uniform service interface the orchestrator invokes.

Services are deterministic and side-effect-free over their input blocks, so
the orchestrator may run them concurrently on disjoint inputs and re-run them
after a crash without changing the observation set.
"""

from __future__ import annotations

from dataclasses import dataclass

from rehabpipe.analytics.activity import (
    DEFAULT_ACTIVE_MG,
    DEFAULT_ARM_EPOCH_S,
    DEFAULT_EPOCH_S,
    DEFAULT_MODERATE_MG,
    DEFAULT_VIGOROUS_MG,
    activity_bands,
    activity_observations,
    arm_use,
    blob_inventory,
)
from rehabpipe.analytics.scoring import score_assessment, walking_speed
from rehabpipe.model import (
    AssessmentRecord,
    BodyLocation,
    Observation,
    Record,
    TimeSeriesBlock,
    ValidationError,
)


@dataclass(frozen=True)
class StoredBlock:
    content_hash: str
    record: Record


class AnalyticsService:
    """Base: name + deterministic run(blocks) -> observations."""

    name = "abstract"

    def run(self, inputs: list[StoredBlock], params: dict,
            produced_by: str) -> list[Observation]:
        raise NotImplementedError


class ScoreAssessmentService(AnalyticsService):
    name = "score_assessment"

    def run(self, inputs, params, produced_by):
        out: list[Observation] = []
        for item in inputs:
            if not isinstance(item.record, AssessmentRecord):
                raise ValidationError("inputs", "expected assessment records")
            out.extend(score_assessment(item.record, item.content_hash, produced_by))
        return out


class WalkingSpeedService(AnalyticsService):
    name = "walking_speed"

    def run(self, inputs, params, produced_by):
        return [walking_speed(item.record, item.content_hash, produced_by)
                for item in inputs]


class ActivityBandsService(AnalyticsService):
    name = "activity_bands"

    def run(self, inputs, params, produced_by):
        out: list[Observation] = []
        for item in inputs:
            bands = activity_bands(
                item.record,
                epoch_s=params.get("epoch_s", DEFAULT_EPOCH_S),
                moderate_mg=params.get("moderate_mg", DEFAULT_MODERATE_MG),
                vigorous_mg=params.get("vigorous_mg", DEFAULT_VIGOROUS_MG),
            )
            out.extend(activity_observations(item.record, item.content_hash,
                                             bands, produced_by))
        return out


class ArmUseService(AnalyticsService):
    name = "arm_use"

    def run(self, inputs, params, produced_by):
        if len(inputs) != 2:
            raise ValidationError("inputs", "arm use needs exactly one bilateral pair")
        by_location = {item.record.body_location: item for item in inputs
                       if isinstance(item.record, TimeSeriesBlock)}
        left = by_location.get(BodyLocation.WRIST_LEFT)
        right = by_location.get(BodyLocation.WRIST_RIGHT)
        if left is None or right is None:
            raise ValidationError("inputs", "needs one wrist_left and one wrist_right block")
        return arm_use(
            left.record, right.record,
            epoch_s=params.get("epoch_s", DEFAULT_ARM_EPOCH_S),
            active_mg=params.get("active_mg", DEFAULT_ACTIVE_MG),
            block_hashes=(left.content_hash, right.content_hash),
            produced_by=produced_by,
        )


class BlobInventoryService(AnalyticsService):
    name = "blob_inventory"

    def run(self, inputs, params, produced_by):
        return [blob_inventory(item.record, item.content_hash, produced_by)
                for item in inputs]


def builtin_services() -> dict[str, AnalyticsService]:
    services = [
        ScoreAssessmentService(),
        WalkingSpeedService(),
        ActivityBandsService(),
        ArmUseService(),
        BlobInventoryService(),
    ]
    return {service.name: service for service in services}
