"""Constant-interval workflow trigger with exactly-once completion semantics."""

from rehabpipe.orchestrator.engine import (
    DirectBlockSource,
    FileBlockSource,
    HttpBlockSource,
    Orchestrator,
    TickReport,
)
from rehabpipe.orchestrator.ledger import RunLedger, RunState, WorkflowRun
from rehabpipe.orchestrator.registry import (
    AcceptSpec,
    DuplicateWorkflow,
    Grouping,
    WorkflowDescriptor,
    WorkflowRegistry,
    default_descriptors,
)

__all__ = [
    "AcceptSpec",
    "DirectBlockSource",
    "DuplicateWorkflow",
    "FileBlockSource",
    "Grouping",
    "HttpBlockSource",
    "Orchestrator",
    "RunLedger",
    "RunState",
    "TickReport",
    "WorkflowDescriptor",
    "WorkflowRegistry",
    "WorkflowRun",
    "default_descriptors",
]
