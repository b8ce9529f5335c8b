"""Durable node queue and outbox over one write-ahead journal.

A single append-only file holds both the plaintext block queue and the
ciphertext outbox, so packaging (remove N queued blocks + add one outbox
entry) is one atomic append. Replay rebuilds all state after a crash;
compaction rewrites the file once most of it is dead weight.

Plaintext never enters the outbox: queue entries hold canonical block bytes,
outbox entries hold sealed packet bytes only.
"""

from __future__ import annotations

import base64
from dataclasses import dataclass
from pathlib import Path

from rehabpipe import chaos
from rehabpipe.model import PayloadKind
from rehabpipe.wal import Journal, read_journal

COMPACT_MIN_BYTES = 4 * 1024 * 1024
COMPACT_DEAD_FRACTION = 0.5


@dataclass
class QueuedBlock:
    content_hash: str
    payload_kind: PayloadKind
    pseudonym: str
    created_at: int
    payload: bytes


@dataclass
class OutboxEntry:
    packet_id: str
    packet: bytes
    created_at: int
    attempts: int = 0
    state: str = "queued"  # queued -> sent_awaiting_ack -> {queued, acked}
    next_attempt_at: int = 0


class StoreForward:
    def __init__(self, directory: str | Path) -> None:
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self._path = self.dir / "node.wal"
        self._seen: set[str] = set()
        self._queue: dict[str, QueuedBlock] = {}
        self._outbox: dict[str, OutboxEntry] = {}
        self._live_bytes = 0
        for rec in read_journal(self._path):
            self._apply(rec)
        self._journal = Journal(self._path)

    def _apply(self, rec: dict) -> None:
        op = rec["op"]
        if op == "enq":
            block = QueuedBlock(
                content_hash=rec["hash"],
                payload_kind=PayloadKind(rec["payload_kind"]),
                pseudonym=rec["pseudonym"],
                created_at=rec["created_at"],
                payload=base64.b64decode(rec["payload_b64"]),
            )
            self._seen.add(block.content_hash)
            self._queue[block.content_hash] = block
        elif op == "pack":
            for h in rec["hashes"]:
                self._queue.pop(h, None)
                self._seen.add(h)
            self._outbox[rec["packet_id"]] = OutboxEntry(
                packet_id=rec["packet_id"],
                packet=base64.b64decode(rec["packet_b64"]),
                created_at=rec["created_at"],
            )
        elif op == "ack":
            self._outbox.pop(rec["packet_id"], None)
        elif op == "seen":
            self._seen.update(rec["hashes"])

    # -- queue ---------------------------------------------------------

    def enqueue(self, block: QueuedBlock) -> bool:
        """Durably queue a scrubbed block; duplicates (same hash) are no-ops."""
        if block.content_hash in self._seen:
            return False
        self._journal.append({
            "op": "enq",
            "hash": block.content_hash,
            "payload_kind": block.payload_kind.value,
            "pseudonym": block.pseudonym,
            "created_at": block.created_at,
            "payload_b64": base64.b64encode(block.payload).decode("ascii"),
        })
        self._seen.add(block.content_hash)
        self._queue[block.content_hash] = block
        return True

    def queue_depth(self) -> int:
        return len(self._queue)

    def oldest_queued_at(self) -> int | None:
        if not self._queue:
            return None
        return min(block.created_at for block in self._queue.values())

    def blocks_for_oldest_subject(self, limit: int) -> list[QueuedBlock]:
        """Up to ``limit`` queued blocks of the subject owning the oldest block."""
        if not self._queue:
            return []
        ordered = sorted(self._queue.values(), key=lambda b: (b.created_at, b.content_hash))
        pseudonym = ordered[0].pseudonym
        return [b for b in ordered if b.pseudonym == pseudonym][:limit]

    # -- packaging -----------------------------------------------------

    def commit_package(self, packet_id: str, hashes: list[str], packet: bytes,
                       created_at: int) -> OutboxEntry:
        """Atomically move blocks out of the queue and the packet into the outbox."""
        chaos.crash_point("dtn.pack.pre_commit")
        self._journal.append({
            "op": "pack",
            "packet_id": packet_id,
            "hashes": hashes,
            "packet_b64": base64.b64encode(packet).decode("ascii"),
            "created_at": created_at,
        })
        self._journal.sync()
        chaos.crash_point("dtn.pack.post_commit")
        for h in hashes:
            self._queue.pop(h, None)
        entry = OutboxEntry(packet_id=packet_id, packet=packet, created_at=created_at)
        self._outbox[packet_id] = entry
        return entry

    # -- outbox --------------------------------------------------------

    def outbox_depth(self) -> int:
        return len(self._outbox)

    def due_outbox(self, now_ms: int) -> list[OutboxEntry]:
        return sorted(
            (e for e in self._outbox.values() if e.next_attempt_at <= now_ms),
            key=lambda e: e.created_at)

    def mark_acked(self, packet_id: str) -> None:
        if packet_id not in self._outbox:
            return
        chaos.crash_point("dtn.ack.pre_commit")
        self._journal.append({"op": "ack", "packet_id": packet_id})
        self._outbox[packet_id].state = "acked"
        del self._outbox[packet_id]

    # -- maintenance ----------------------------------------------------

    def maybe_compact(self) -> bool:
        """Rewrite the journal when most of it is dead (acked/packed history)."""
        size = self._journal.size()
        if size < COMPACT_MIN_BYTES:
            return False
        live = sum(len(b.payload) for b in self._queue.values())
        live += sum(len(e.packet) for e in self._outbox.values())
        if live > size * (1 - COMPACT_DEAD_FRACTION):
            return False
        records: list[dict] = [{
            "op": "seen",
            "hashes": sorted(self._seen - set(self._queue)),
        }]
        for block in sorted(self._queue.values(), key=lambda b: b.created_at):
            records.append({
                "op": "enq",
                "hash": block.content_hash,
                "payload_kind": block.payload_kind.value,
                "pseudonym": block.pseudonym,
                "created_at": block.created_at,
                "payload_b64": base64.b64encode(block.payload).decode("ascii"),
            })
        for entry in sorted(self._outbox.values(), key=lambda e: e.created_at):
            records.append({
                "op": "pack",
                "packet_id": entry.packet_id,
                "hashes": [],
                "packet_b64": base64.b64encode(entry.packet).decode("ascii"),
                "created_at": entry.created_at,
            })
        self._journal.replace_with(records)
        return True

    def close(self) -> None:
        self._journal.close()
