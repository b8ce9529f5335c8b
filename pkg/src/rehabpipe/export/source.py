"""Read-only incremental view over the compute core's journals.

The export service never writes: it tails the orchestrator's run journal and
the landing zone's event feed (both append-only), refreshing the appended
suffix per request for a consistent snapshot.
"""

from __future__ import annotations

import threading
from pathlib import Path

from rehabpipe.landingzone.store import IndexEntry
from rehabpipe.model import Observation, observation_from_json
from rehabpipe.orchestrator.ledger import RunState, WorkflowRun
from rehabpipe.wal import iter_journal


class CoreDataView:
    def __init__(self, core_dir: str | Path) -> None:
        core = Path(core_dir)
        self.runs_path = core / "runs.journal"
        self.events_path = core / "store" / "events.ndjson"
        self._runs: dict[str, WorkflowRun] = {}
        self._runs_offset = 0
        self._inventory: list[IndexEntry] = []
        self._events_offset = 0
        self._lock = threading.Lock()  # concurrent requests each refresh
        self.refresh()

    def refresh(self) -> None:
        with self._lock:
            for rec, offset in iter_journal(self.runs_path, self._runs_offset):
                self._apply_run(rec)
                self._runs_offset = offset
            for rec, offset in iter_journal(self.events_path, self._events_offset):
                self._inventory.append(IndexEntry(
                    content_hash=rec["content_hash"],
                    payload_kind=rec["payload_kind"],
                    pseudonym=rec["pseudonym"],
                    stored_at=rec["stored_at"],
                    origin_packet_id=rec.get("origin_packet_id", ""),
                    size=rec.get("size", 0),
                ))
                self._events_offset = offset

    def _apply_run(self, rec: dict) -> None:
        op = rec["op"]
        if op == "created":
            run = WorkflowRun(
                run_id=rec["run_id"], workflow_id=rec["workflow_id"],
                group_key=rec["group_key"],
                input_hashes=tuple(rec["input_hashes"]),
                created_at=rec["created_at"])
            self._runs[run.run_id] = run
        elif op == "done":
            run = self._runs.get(rec["run_id"])
            if run:
                run.state = RunState.DONE
                run.attempts = rec["attempts"]
                run.outputs = tuple(observation_from_json(o) for o in rec["outputs"])
        elif op in ("retry", "failed"):
            run = self._runs.get(rec["run_id"])
            if run:
                run.state = RunState.PENDING if op == "retry" else RunState.FAILED
                run.attempts = rec["attempts"]
                run.last_error = rec["error"]

    # -- queries -----------------------------------------------------------

    def observations(self, pseudonym: str | None = None) -> list[Observation]:
        """Done-run observations, in stable (run, output) order."""
        out: list[Observation] = []
        for run in sorted(self._runs.values(), key=lambda r: (r.created_at, r.run_id)):
            if run.state is not RunState.DONE:
                continue
            for obs in run.outputs:
                if pseudonym is None or obs.subject_pseudonym == pseudonym:
                    out.append(obs)
        return out

    def known_pseudonyms(self) -> set[str]:
        return {e.pseudonym for e in self._inventory}

    def inventory(self, pseudonym: str | None = None) -> list[IndexEntry]:
        return [e for e in self._inventory
                if pseudonym is None or e.pseudonym == pseudonym]

    def run_summary(self) -> dict[str, dict[str, int]]:
        summary: dict[str, dict[str, int]] = {}
        for run in self._runs.values():
            per_wf = summary.setdefault(run.workflow_id, {})
            per_wf[run.state.value] = per_wf.get(run.state.value, 0) + 1
        return summary
