"""Durable run ledger: an append-only journal with an in-memory index.

A run is keyed by (workflow_id, group_key); the ledger guarantees at most
one run per key ever exists, which (with deterministic services) gives the
pipeline its exactly-once observation set. State transitions are journaled;
`running` is deliberately not: a crash mid-execution replays to `pending`
and the run re-executes.
"""

from __future__ import annotations

import os
import threading
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from rehabpipe.model import Observation, observation_from_json, observation_to_json
from rehabpipe.wal import Journal, read_journal


class RunState(str, Enum):
    PENDING = "pending"
    RUNNING = "running"
    DONE = "done"
    FAILED = "failed"


@dataclass
class WorkflowRun:
    run_id: str
    workflow_id: str
    group_key: str
    input_hashes: tuple[str, ...]
    created_at: int
    state: RunState = RunState.PENDING
    attempts: int = 0
    outputs: tuple[Observation, ...] = ()
    last_error: str | None = None
    next_attempt_at: int = 0  # volatile; not journaled

    def to_json(self) -> dict:
        return {
            "run_id": self.run_id,
            "workflow_id": self.workflow_id,
            "group_key": self.group_key,
            "input_hashes": list(self.input_hashes),
            "created_at": self.created_at,
            "state": self.state.value,
            "attempts": self.attempts,
            "outputs": [observation_to_json(o) for o in self.outputs],
            "last_error": self.last_error,
        }


class RunLedger:
    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)
        self._runs: dict[str, WorkflowRun] = {}
        self._by_group: dict[tuple[str, str], str] = {}
        self._checkpoint = 0
        self._lock = threading.Lock()
        for rec in read_journal(self.path):
            self._apply(rec)
        self._journal = Journal(self.path)

    def _apply(self, rec: dict) -> None:
        op = rec["op"]
        if op == "created":
            run = WorkflowRun(
                run_id=rec["run_id"],
                workflow_id=rec["workflow_id"],
                group_key=rec["group_key"],
                input_hashes=tuple(rec["input_hashes"]),
                created_at=rec["created_at"],
            )
            self._runs[run.run_id] = run
            self._by_group[(run.workflow_id, run.group_key)] = run.run_id
        elif op == "done":
            run = self._runs[rec["run_id"]]
            run.state = RunState.DONE
            run.attempts = rec["attempts"]
            run.outputs = tuple(observation_from_json(o) for o in rec["outputs"])
        elif op == "retry":
            run = self._runs[rec["run_id"]]
            run.state = RunState.PENDING
            run.attempts = rec["attempts"]
            run.last_error = rec["error"]
        elif op == "failed":
            run = self._runs[rec["run_id"]]
            run.state = RunState.FAILED
            run.attempts = rec["attempts"]
            run.last_error = rec["error"]
        elif op == "checkpoint":
            self._checkpoint = rec["offset"]

    # -- run lifecycle ---------------------------------------------------

    def has_group(self, workflow_id: str, group_key: str) -> bool:
        with self._lock:
            return (workflow_id, group_key) in self._by_group

    def create(self, workflow_id: str, group_key: str, input_hashes: tuple[str, ...],
               created_at: int) -> WorkflowRun | None:
        """Create a pending run; None when the group already has one (ever)."""
        with self._lock:
            if (workflow_id, group_key) in self._by_group:
                return None
            run = WorkflowRun(
                run_id=os.urandom(8).hex(),
                workflow_id=workflow_id,
                group_key=group_key,
                input_hashes=input_hashes,
                created_at=created_at,
            )
            self._journal.append({
                "op": "created", "run_id": run.run_id, "workflow_id": workflow_id,
                "group_key": group_key, "input_hashes": list(input_hashes),
                "created_at": created_at,
            })
            self._runs[run.run_id] = run
            self._by_group[(workflow_id, group_key)] = run.run_id
            return run

    def mark_done(self, run: WorkflowRun, outputs: list[Observation]) -> None:
        with self._lock:
            run.attempts += 1
            self._journal.append({
                "op": "done", "run_id": run.run_id, "attempts": run.attempts,
                "outputs": [observation_to_json(o) for o in outputs],
            })
            run.state = RunState.DONE
            run.outputs = tuple(outputs)

    def mark_retry(self, run: WorkflowRun, error: str, next_attempt_at: int) -> None:
        with self._lock:
            run.attempts += 1
            self._journal.append({
                "op": "retry", "run_id": run.run_id, "attempts": run.attempts,
                "error": error,
            })
            run.state = RunState.PENDING
            run.last_error = error
            run.next_attempt_at = next_attempt_at

    def mark_failed(self, run: WorkflowRun, error: str) -> None:
        with self._lock:
            run.attempts += 1
            self._journal.append({
                "op": "failed", "run_id": run.run_id, "attempts": run.attempts,
                "error": error,
            })
            run.state = RunState.FAILED
            run.last_error = error

    # -- views -------------------------------------------------------------

    def runs(self, state: RunState | None = None,
             workflow_id: str | None = None) -> list[WorkflowRun]:
        """Consistent snapshot of runs matching the filter, oldest first."""
        with self._lock:
            out = [
                run for run in self._runs.values()
                if (state is None or run.state is state)
                and (workflow_id is None or run.workflow_id == workflow_id)
            ]
        out.sort(key=lambda r: (r.created_at, r.run_id))
        return out

    def observations(self) -> list[Observation]:
        """All observations from done runs, in run order."""
        out: list[Observation] = []
        for run in self.runs(state=RunState.DONE):
            out.extend(run.outputs)
        return out

    # -- checkpointing -------------------------------------------------------

    def checkpoint(self, offset: int) -> None:
        with self._lock:
            if offset == self._checkpoint:
                return
            self._journal.append({"op": "checkpoint", "offset": offset})
            self._checkpoint = offset

    @property
    def checkpoint_offset(self) -> int:
        return self._checkpoint

    def sync(self) -> None:
        self._journal.sync()

    def close(self) -> None:
        self._journal.close()
