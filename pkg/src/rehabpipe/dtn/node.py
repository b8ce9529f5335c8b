"""The node core: validate -> scrub -> queue -> package -> transmit.

One instance serves either profile; a home hub differs only by config
(prompt scheduling on, CIS file-drop off). All mutation of the queue and
outbox goes through the single packaging/transmission owner; the ingest
path only appends, guarded by a lock.
"""

from __future__ import annotations

import logging
import os
import random
import threading
import time
from dataclasses import dataclass
from pathlib import Path

from rehabpipe.dtn.config import NodeConfig
from rehabpipe.dtn.prompts import PromptScheduler
from rehabpipe.dtn.store_forward import QueuedBlock, StoreForward
from rehabpipe.httpd import TransportError
from rehabpipe.model import (
    NodeProfile,
    PacketManifest,
    Record,
    ValidationError,
    canonical_bytes,
    content_hash,
    decode_record,
    ensure_valid,
    payload_kind_of,
)
from rehabpipe.privacy import (
    ClinicKeyring,
    PseudonymTable,
    encrypt_packet,
    make_descriptors,
    scrub,
)


def now_ms() -> int:
    return int(time.time() * 1000)


@dataclass
class TransmitReport:
    sent: int = 0
    acked: int = 0
    failed: int = 0


class StorageError(Exception):
    """Node-local durable storage failed."""


class DataTransferNode:
    def __init__(self, config: NodeConfig, data_dir: str | Path,
                 keyring: ClinicKeyring, transport, clock=now_ms) -> None:
        self.config = config
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.keyring = keyring
        self.transport = transport
        self.clock = clock
        self.store = StoreForward(self.data_dir / "queue")
        self.prompts = PromptScheduler(
            config.prompt_schedule, self.data_dir / "prompts.journal")
        self.table: PseudonymTable | None = None
        if config.profile is NodeProfile.CLINIC:
            self.table = PseudonymTable(self.data_dir / "pseudonyms.csv")
        self.last_ack_ms: int | None = None
        self._ingest_lock = threading.Lock()
        self._worker_lock = threading.Lock()
        self._backoff_rng = random.Random(config.chaos_seed ^ 0x5F5E1)

    # -- ingestion -------------------------------------------------------

    def ingest(self, submission: Record | dict | bytes) -> dict:
        """Validate, scrub, canonicalize, and durably queue one submission.

        Returns a receipt {"content_hash": ...}; resubmitting the same logical
        record returns the same receipt without queueing twice.
        """
        record = submission if not isinstance(submission, (dict, bytes)) \
            else decode_record(submission)
        ensure_valid(record)
        local_id = record.subject.local_id
        scrubbed = scrub(record, pseudonym_key=self.keyring.pseudonym_key)
        if local_id is not None and self.table is not None:
            self.table.record(local_id, scrubbed.subject.pseudonym, self.clock())
        payload = canonical_bytes(scrubbed)
        digest = content_hash(payload)
        block = QueuedBlock(
            content_hash=digest,
            payload_kind=payload_kind_of(scrubbed),
            pseudonym=scrubbed.subject.pseudonym,
            created_at=self.clock(),
            payload=payload,
        )
        try:
            with self._ingest_lock:
                self.store.enqueue(block)
        except OSError as exc:
            raise StorageError(str(exc)) from exc
        return {"content_hash": digest}

    # -- packaging -------------------------------------------------------

    def batching_policy_met(self) -> bool:
        if self.store.queue_depth() >= self.config.batch_max_blocks:
            return True
        oldest = self.store.oldest_queued_at()
        if oldest is None:
            return False
        return self.clock() - oldest >= self.config.batch_max_age_s * 1000

    def package_and_seal(self, force: bool = False) -> str | None:
        """Drain one subject's blocks into a sealed packet; returns packet_id."""
        with self._worker_lock, self._ingest_lock:
            if not force and not self.batching_policy_met():
                return None
            blocks = self.store.blocks_for_oldest_subject(self.config.batch_max_blocks)
            if not blocks:
                return None
            manifest = PacketManifest(
                packet_id=os.urandom(16).hex(),
                origin_node=self.config.node_id,
                node_profile=self.config.profile,
                created_at=self.clock(),
                pseudonym=blocks[0].pseudonym,
                blocks=make_descriptors([(b.payload, b.payload_kind) for b in blocks]),
            )
            packet = encrypt_packet(
                manifest, [b.payload for b in blocks], self.keyring.transport_key)
            self.store.commit_package(
                manifest.packet_id, [b.content_hash for b in blocks], packet,
                self.clock())
            self.store.maybe_compact()
            return manifest.packet_id

    def drain_queue(self, force: bool = False) -> list[str]:
        """Package until the policy stops matching (or queue empties, if forced)."""
        packet_ids = []
        while True:
            packet_id = self.package_and_seal(force=force)
            if packet_id is None:
                return packet_ids
            packet_ids.append(packet_id)

    # -- transmission ----------------------------------------------------

    def _backoff_ms(self, attempts: int) -> int:
        base = self.config.retry_backoff_base_s
        delay_s = base ** min(attempts, 10)
        return int(delay_s * 1000 * self._backoff_rng.uniform(0.5, 1.5))

    def transmit_cycle(self) -> TransmitReport:
        """Attempt delivery for due outbox entries; at-least-once semantics."""
        report = TransmitReport()
        with self._worker_lock:
            now = self.clock()
            due = self.store.due_outbox(now)
            # each due entry gets one attempt; the per-cycle cap bounds how
            # long a cycle can block the worker
            for entry in due[: self.config.retry_max_attempts_per_cycle]:
                entry.state = "sent_awaiting_ack"
                report.sent += 1
                try:
                    self.transport.send(entry.packet)
                except TransportError:
                    entry.state = "queued"
                    entry.attempts += 1
                    entry.next_attempt_at = self.clock() + self._backoff_ms(entry.attempts)
                    report.failed += 1
                    continue
                self.store.mark_acked(entry.packet_id)
                self.last_ack_ms = self.clock()
                report.acked += 1
        return report

    # -- CIS file-drop stub ------------------------------------------------

    def scan_cis_drop(self) -> int:
        """Ingest submission files dropped by the clinical information system.

        Malformed files move to rejected/ instead of wedging the scan loop.
        """
        if not self.config.cis_drop_dir:
            return 0
        drop = Path(self.config.cis_drop_dir)
        if not drop.is_dir():
            return 0
        done = drop / "processed"
        done.mkdir(exist_ok=True)
        count = 0
        for path in sorted(drop.glob("*.json")):
            try:
                self.ingest(path.read_bytes())
            except (ValidationError, ValueError) as exc:
                rejected = drop / "rejected"
                rejected.mkdir(exist_ok=True)
                path.rename(rejected / path.name)
                logging.getLogger(__name__).warning(
                    "rejected CIS drop file %s: %s", path.name, exc)
                continue
            path.rename(done / path.name)
            count += 1
        return count

    # -- status ------------------------------------------------------------

    def status(self) -> dict:
        return {
            "node_id": self.config.node_id,
            "profile": self.config.profile.value,
            "queue_depth": self.store.queue_depth(),
            "outbox_depth": self.store.outbox_depth(),
            "last_ack_time": self.last_ack_ms,
        }

    def close(self) -> None:
        self.store.close()
