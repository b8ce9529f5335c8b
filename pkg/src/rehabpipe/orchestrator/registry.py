"""Workflow descriptors: what blocks a service accepts and how they group."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from rehabpipe.model import (
    AssessmentRecord,
    BlockKind,
    BodyLocation,
    Instrument,
    PayloadKind,
    Record,
    TimeSeriesBlock,
    payload_kind_of,
)


class DuplicateWorkflow(ValueError):
    """workflow_id already registered."""


class Grouping(str, Enum):
    SINGLE_BLOCK = "single_block"
    PER_SUBJECT_PER_DAY = "per_subject_per_day"
    BILATERAL_PAIR = "bilateral_pair"


@dataclass(frozen=True)
class AcceptSpec:
    """Conjunctive predicate over block metadata; None means any."""

    payload_kind: PayloadKind
    block_kinds: tuple[BlockKind, ...] | None = None
    instruments: tuple[Instrument, ...] | None = None
    body_locations: tuple[BodyLocation, ...] | None = None

    def matches(self, record: Record) -> bool:
        if payload_kind_of(record) is not self.payload_kind:
            return False
        if isinstance(record, TimeSeriesBlock):
            if self.block_kinds is not None and record.block_kind not in self.block_kinds:
                return False
            if (self.body_locations is not None
                    and record.body_location not in self.body_locations):
                return False
        elif self.block_kinds is not None or self.body_locations is not None:
            return False
        if self.instruments is not None:
            if not isinstance(record, AssessmentRecord):
                return False
            if record.instrument not in self.instruments:
                return False
        return True


@dataclass(frozen=True)
class WorkflowDescriptor:
    workflow_id: str
    accepts: AcceptSpec
    grouping: Grouping
    service: str
    params: dict = field(default_factory=dict)


class WorkflowRegistry:
    def __init__(self, descriptors: list[WorkflowDescriptor] | None = None) -> None:
        self._by_id: dict[str, WorkflowDescriptor] = {}
        for descriptor in descriptors or []:
            self.register(descriptor)

    def register(self, descriptor: WorkflowDescriptor) -> None:
        if descriptor.workflow_id in self._by_id:
            raise DuplicateWorkflow(descriptor.workflow_id)
        self._by_id[descriptor.workflow_id] = descriptor

    def descriptors(self) -> list[WorkflowDescriptor]:
        return list(self._by_id.values())

    def __len__(self) -> int:
        return len(self._by_id)


ITEM_SCORED = (Instrument.ARAT, Instrument.FSS, Instrument.HADS,
               Instrument.BDI2, Instrument.ESS, Instrument.FSMC)


def default_descriptors() -> list[WorkflowDescriptor]:
    """The shipped workflow set covering the assessment battery."""
    return [
        WorkflowDescriptor(
            workflow_id="wf_scores",
            accepts=AcceptSpec(PayloadKind.ASSESSMENT, instruments=ITEM_SCORED),
            grouping=Grouping.SINGLE_BLOCK,
            service="score_assessment",
        ),
        WorkflowDescriptor(
            workflow_id="wf_walk",
            accepts=AcceptSpec(PayloadKind.ASSESSMENT, instruments=(Instrument.TMWT,)),
            grouping=Grouping.SINGLE_BLOCK,
            service="walking_speed",
        ),
        # Activity bands read one designated stream (default: left wrist, plus
        # trunk/unlocated sensors). Feeding both wrists would double-count
        # activity and collide observation keys for simultaneous blocks.
        WorkflowDescriptor(
            workflow_id="wf_activity",
            accepts=AcceptSpec(
                PayloadKind.TIMESERIES, block_kinds=(BlockKind.ACCEL,),
                body_locations=(BodyLocation.WRIST_LEFT, BodyLocation.TRUNK,
                                BodyLocation.NONE)),
            grouping=Grouping.SINGLE_BLOCK,
            service="activity_bands",
        ),
        WorkflowDescriptor(
            workflow_id="wf_armuse",
            accepts=AcceptSpec(
                PayloadKind.TIMESERIES, block_kinds=(BlockKind.ACCEL,),
                body_locations=(BodyLocation.WRIST_LEFT, BodyLocation.WRIST_RIGHT)),
            grouping=Grouping.BILATERAL_PAIR,
            service="arm_use",
        ),
        WorkflowDescriptor(
            workflow_id="wf_blobs",
            accepts=AcceptSpec(
                PayloadKind.TIMESERIES,
                block_kinds=(BlockKind.AUDIO_BLOB, BlockKind.TABLET_EVENTS)),
            grouping=Grouping.SINGLE_BLOCK,
            service="blob_inventory",
        ),
    ]


def descriptor_to_json(descriptor: WorkflowDescriptor) -> dict:
    accepts = descriptor.accepts
    obj: dict = {"payload_kind": accepts.payload_kind.value}
    if accepts.block_kinds is not None:
        obj["block_kinds"] = [k.value for k in accepts.block_kinds]
    if accepts.instruments is not None:
        obj["instruments"] = [i.value for i in accepts.instruments]
    if accepts.body_locations is not None:
        obj["body_locations"] = [b.value for b in accepts.body_locations]
    return {
        "workflow_id": descriptor.workflow_id,
        "accepts": obj,
        "grouping": descriptor.grouping.value,
        "service": descriptor.service,
        "params": descriptor.params,
    }


def descriptor_from_json(raw: dict) -> WorkflowDescriptor:
    accepts = raw["accepts"]
    return WorkflowDescriptor(
        workflow_id=raw["workflow_id"],
        accepts=AcceptSpec(
            payload_kind=PayloadKind(accepts["payload_kind"]),
            block_kinds=tuple(BlockKind(k) for k in accepts["block_kinds"])
            if "block_kinds" in accepts else None,
            instruments=tuple(Instrument(i) for i in accepts["instruments"])
            if "instruments" in accepts else None,
            body_locations=tuple(BodyLocation(b) for b in accepts["body_locations"])
            if "body_locations" in accepts else None,
        ),
        grouping=Grouping(raw["grouping"]),
        service=raw["service"],
        params=dict(raw.get("params", {})),
    )


def load_registry(path: str | Path) -> list[WorkflowDescriptor]:
    """Declarative registry config: a JSON list of descriptors."""
    raw = json.loads(Path(path).read_text())
    return [descriptor_from_json(item) for item in raw]


def save_registry(descriptors: list[WorkflowDescriptor], path: str | Path) -> None:
    Path(path).write_text(json.dumps(
        [descriptor_to_json(d) for d in descriptors], indent=2))
