"""Data transfer node: ingest, scrub, queue, schedule prompts, store-and-forward."""

from rehabpipe.dtn.config import NodeConfig, PromptRule
from rehabpipe.dtn.node import DataTransferNode, TransmitReport
from rehabpipe.dtn.prompts import Prompt, PromptScheduler, week_slots
from rehabpipe.dtn.store_forward import OutboxEntry, QueuedBlock, StoreForward

__all__ = [
    "DataTransferNode",
    "NodeConfig",
    "OutboxEntry",
    "Prompt",
    "PromptRule",
    "PromptScheduler",
    "QueuedBlock",
    "StoreForward",
    "TransmitReport",
    "week_slots",
]
