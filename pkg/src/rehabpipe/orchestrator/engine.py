"""Tick engine: consume availability events, group, execute, record.

On construction the engine replays the whole event feed through the grouping
logic with run creation deduplicated by the ledger, so pairing pools and day
groups come back exactly as they were at the crash; the checkpoint is an
optimization for observability, not a correctness device. Runs execute on a
bounded worker pool; results are journaled before the checkpoint advances.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from rehabpipe import chaos
from rehabpipe.analytics import AnalyticsService, StoredBlock
from rehabpipe.httpd import TransportError, http_request
from rehabpipe.landingzone.store import ObjectStore
from rehabpipe.model import (
    MS_PER_DAY,
    Observation,
    Record,
    TimeSeriesBlock,
    ValidationError,
    day_index,
    decode_record,
    validate_observation,
)
from rehabpipe.orchestrator.ledger import RunLedger, RunState, WorkflowRun
from rehabpipe.orchestrator.registry import (
    Grouping,
    WorkflowDescriptor,
    WorkflowRegistry,
)
from rehabpipe.wal import iter_journal

DEFAULT_MAX_ATTEMPTS = 3
DEFAULT_RETRY_BACKOFF_MS = 30_000
DEFAULT_PAIR_MIN_OVERLAP = 0.5
DEFAULT_PAIR_EXPIRY_MS = 48 * 3_600_000
DEFAULT_WORKERS = 4


@dataclass
class TickReport:
    runs_created: int = 0
    runs_completed: int = 0
    runs_failed: int = 0
    events_consumed: int = 0
    late_blocks: int = 0


class DirectBlockSource:
    """Fetch from an in-process ObjectStore."""

    def __init__(self, store: ObjectStore) -> None:
        self.store = store

    def fetch(self, digest: str) -> bytes:
        payload, _ = self.store.get(digest)
        return payload


class FileBlockSource:
    """Read immutable object files from a shared store directory."""

    def __init__(self, store_root: str | Path) -> None:
        self.objects_dir = Path(store_root) / "objects"

    def fetch(self, digest: str) -> bytes:
        return (self.objects_dir / digest[:2] / digest).read_bytes()


class HttpBlockSource:
    """Fetch over the landing-zone block API."""

    def __init__(self, address: str, timeout: float = 10.0) -> None:
        self.base_url = f"http://{address}"
        self.timeout = timeout

    def fetch(self, digest: str) -> bytes:
        status, body = http_request(
            "GET", f"{self.base_url}/v1/blocks/{digest}", timeout=self.timeout)
        if status != 200:
            raise TransportError(f"block fetch {digest} -> {status}")
        return body


@dataclass
class _PendingPairBlock:
    content_hash: str
    start_time: int
    end_time: int
    is_left: bool
    first_seen: int


@dataclass
class _DayGroup:
    day: int
    pseudonym: str
    hashes: list[str] = field(default_factory=list)


class Orchestrator:
    def __init__(self, descriptors: list[WorkflowDescriptor],
                 services: dict[str, AnalyticsService],
                 ledger: RunLedger,
                 events_path: str | Path,
                 block_source,
                 max_attempts: int = DEFAULT_MAX_ATTEMPTS,
                 retry_backoff_ms: int = DEFAULT_RETRY_BACKOFF_MS,
                 pair_min_overlap: float = DEFAULT_PAIR_MIN_OVERLAP,
                 pair_expiry_ms: int = DEFAULT_PAIR_EXPIRY_MS,
                 workers: int = DEFAULT_WORKERS,
                 clock=None) -> None:
        self.descriptors = WorkflowRegistry(descriptors).descriptors()
        self.services = services
        self.ledger = ledger
        self.events_path = Path(events_path)
        self.block_source = block_source
        self.max_attempts = max_attempts
        self.retry_backoff_ms = retry_backoff_ms
        self.pair_min_overlap = pair_min_overlap
        self.pair_expiry_ms = pair_expiry_ms
        self.clock = clock or (lambda: int(time.time() * 1000))
        self._pool = ThreadPoolExecutor(max_workers=workers)
        self._offset = 0
        self._cache: dict[str, Record] = {}
        # (workflow_id, pseudonym) -> unpaired blocks awaiting a partner
        self._pair_pools: dict[tuple[str, str], list[_PendingPairBlock]] = {}
        # (workflow_id, pseudonym, day) -> open day group
        self._day_groups: dict[tuple[str, str, int], _DayGroup] = {}
        self._late_blocks = 0
        self._poisoned_events = 0
        self._rebuild()

    # -- state reconstruction -------------------------------------------

    def _rebuild(self) -> None:
        """Replay the full event feed; ledger dedup suppresses known groups."""
        ready = []
        for event, offset in iter_journal(self.events_path):
            ready.extend(self._ingest_event(event))
            self._offset = offset
        now = self.clock()
        ready.extend(self._close_due_day_groups(now))
        self._expire_pairs(now)
        for workflow_id, group_key, hashes in ready:
            self.ledger.create(workflow_id, group_key, hashes, now)
        # ledger checkpoint may trail the feed after a crash; harmless,
        # since everything above is idempotent under group dedup

    # -- block access ------------------------------------------------------

    def _record(self, digest: str) -> Record:
        record = self._cache.get(digest)
        if record is None:
            record = decode_record(self.block_source.fetch(digest))
            if len(self._cache) > 512:
                self._cache.clear()
            self._cache[digest] = record
        return record

    # -- grouping ------------------------------------------------------------

    def _ingest_event(self, event: dict) -> list[tuple[str, str, tuple[str, ...]]]:
        """Feed one availability event; return groups that became ready.

        An undecodable block (a node shipped garbage) is skipped and counted
        rather than wedging the feed on the same event forever.
        """
        digest = event["content_hash"]
        pseudonym = event["pseudonym"]
        record = None
        ready: list[tuple[str, str, tuple[str, ...]]] = []
        for descriptor in self.descriptors:
            if record is None:
                try:
                    record = self._record(digest)
                except (ValidationError, OSError) as exc:
                    self._poisoned_events += 1
                    logging.getLogger(__name__).warning(
                        "skipping undecodable block %s: %s", digest, exc)
                    return ready
            if not descriptor.accepts.matches(record):
                continue
            if descriptor.grouping is Grouping.SINGLE_BLOCK:
                ready.append((descriptor.workflow_id, f"blk:{digest}", (digest,)))
            elif descriptor.grouping is Grouping.BILATERAL_PAIR:
                pair = self._try_pair(descriptor, record, digest, pseudonym,
                                      event["stored_at"])
                if pair is not None:
                    ready.append(pair)
            else:  # PER_SUBJECT_PER_DAY
                self._add_to_day_group(descriptor, record, digest, pseudonym)
        return ready

    def _effective_start(self, record: Record) -> int:
        if isinstance(record, TimeSeriesBlock):
            return record.start_time
        return getattr(record, "administered_at", None) or record.start_time

    def _try_pair(self, descriptor: WorkflowDescriptor, record: TimeSeriesBlock,
                  digest: str, pseudonym: str, seen_at: int):
        pool_key = (descriptor.workflow_id, pseudonym)
        pool = self._pair_pools.setdefault(pool_key, [])
        is_left = record.body_location.value == "wrist_left"
        candidate = _PendingPairBlock(
            content_hash=digest,
            start_time=record.start_time,
            end_time=record.end_time,
            is_left=is_left,
            first_seen=seen_at,
        )
        best = None
        best_overlap = 0.0
        for other in pool:
            if other.is_left == is_left:
                continue
            overlap = (min(candidate.end_time, other.end_time)
                       - max(candidate.start_time, other.start_time))
            shorter = min(candidate.end_time - candidate.start_time,
                          other.end_time - other.start_time)
            if shorter <= 0 or overlap <= 0:
                continue
            ratio = overlap / shorter
            if ratio >= self.pair_min_overlap and ratio > best_overlap:
                best = other
                best_overlap = ratio
        if best is None:
            pool.append(candidate)
            return None
        pool.remove(best)
        left, right = (candidate, best) if is_left else (best, candidate)
        hashes = (left.content_hash, right.content_hash)
        group_key = "pair:" + "+".join(sorted(hashes))
        return (descriptor.workflow_id, group_key, hashes)

    def _add_to_day_group(self, descriptor: WorkflowDescriptor, record: Record,
                          digest: str, pseudonym: str) -> None:
        day = day_index(self._effective_start(record))
        key = (descriptor.workflow_id, pseudonym, day)
        group_key = f"day:{pseudonym}:{day}"
        if self.ledger.has_group(descriptor.workflow_id, group_key):
            self._late_blocks += 1  # day already ran; logged, not re-run
            return
        group = self._day_groups.setdefault(key, _DayGroup(day=day, pseudonym=pseudonym))
        if digest not in group.hashes:
            group.hashes.append(digest)

    def _close_due_day_groups(self, now: int) -> list[tuple[str, str, tuple[str, ...]]]:
        ready = []
        for (workflow_id, pseudonym, day), group in list(self._day_groups.items()):
            if now >= (day + 1) * MS_PER_DAY:
                ready.append((workflow_id, f"day:{pseudonym}:{day}",
                              tuple(sorted(group.hashes))))
                del self._day_groups[(workflow_id, pseudonym, day)]
        return ready

    def _expire_pairs(self, now: int) -> int:
        expired = 0
        for pool in self._pair_pools.values():
            fresh = [b for b in pool if now - b.first_seen < self.pair_expiry_ms]
            expired += len(pool) - len(fresh)
            pool[:] = fresh
        if expired:
            self._late_blocks += expired
        return expired

    # -- execution --------------------------------------------------------

    def _execute(self, run: WorkflowRun, descriptor: WorkflowDescriptor) -> list[Observation]:
        inputs = [StoredBlock(h, self._record(h)) for h in run.input_hashes]
        service = self.services[descriptor.service]
        outputs = service.run(inputs, descriptor.params, descriptor.workflow_id)
        for obs in outputs:
            err = validate_observation(obs)
            if err is not None:
                raise err
        return outputs

    def tick(self, now: int | None = None) -> TickReport:
        """One orchestration round; safe to call forever at a constant interval."""
        now = self.clock() if now is None else now
        report = TickReport()
        by_id = {d.workflow_id: d for d in self.descriptors}

        ready: list[tuple[str, str, tuple[str, ...]]] = []
        for event, offset in iter_journal(self.events_path, self._offset):
            ready.extend(self._ingest_event(event))
            self._offset = offset
            report.events_consumed += 1
        ready.extend(self._close_due_day_groups(now))
        self._expire_pairs(now)

        for workflow_id, group_key, hashes in ready:
            if self.ledger.create(workflow_id, group_key, hashes, now) is not None:
                report.runs_created += 1
        chaos.crash_point("orch.after_create")

        runnable = [
            run for run in self.ledger.runs(state=RunState.PENDING)
            if run.next_attempt_at <= now and run.workflow_id in by_id
        ]
        futures = []
        for run in runnable:
            run.state = RunState.RUNNING
            futures.append((run, self._pool.submit(
                self._execute, run, by_id[run.workflow_id])))
        for run, future in futures:
            try:
                outputs = future.result()
            except chaos.CrashInjected:
                run.state = RunState.PENDING
                raise
            except Exception as exc:  # noqa: BLE001 - per-run capture, never aborts tick
                if run.attempts + 1 >= self.max_attempts:
                    self.ledger.mark_failed(run, repr(exc))
                    report.runs_failed += 1
                else:
                    backoff = self.retry_backoff_ms * (2 ** run.attempts)
                    self.ledger.mark_retry(run, repr(exc), now + backoff)
            else:
                chaos.crash_point("orch.before_done")
                self.ledger.mark_done(run, outputs)
                report.runs_completed += 1
        report.late_blocks = self._late_blocks
        self.ledger.checkpoint(self._offset)
        return report

    def quiescent(self) -> bool:
        """No pending/running runs and no unconsumed events."""
        if self.ledger.runs(state=RunState.PENDING):
            return False
        if self.ledger.runs(state=RunState.RUNNING):
            return False
        try:
            size = self.events_path.stat().st_size
        except FileNotFoundError:
            size = 0
        return self._offset >= size

    def close(self) -> None:
        self._pool.shutdown(wait=False)
