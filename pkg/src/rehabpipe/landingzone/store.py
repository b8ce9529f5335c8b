"""Content-addressed object store with an append-only availability feed.

Objects live under a 2-char hash-prefix fanout and are written
temp-then-rename, so a reader never sees a partial object. The event journal
(`events.ndjson`, one BlockAvailableEvent per newly stored block) doubles as
the store index: a block exists iff its event line exists, which is what
makes replayed packets emit no duplicate events. Consumers checkpoint byte
offsets into that file.
"""

from __future__ import annotations

import os
import threading
from dataclasses import dataclass
from pathlib import Path

from rehabpipe.model import content_hash
from rehabpipe.wal import Journal, iter_journal


class NotFound(KeyError):
    """No stored object under that content hash."""


@dataclass(frozen=True)
class IndexEntry:
    content_hash: str
    payload_kind: str
    pseudonym: str
    stored_at: int
    origin_packet_id: str
    size: int


class ObjectStore:
    def __init__(self, root: str | Path) -> None:
        self.root = Path(root)
        self.objects_dir = self.root / "objects"
        self.objects_dir.mkdir(parents=True, exist_ok=True)
        self.events_path = self.root / "events.ndjson"
        self.packets_path = self.root / "packets.ndjson"
        self._index: dict[str, IndexEntry] = {}
        self._order: list[str] = []
        self._seen_packets: set[str] = set()
        self._lock = threading.Lock()
        for rec, _ in iter_journal(self.events_path):
            entry = IndexEntry(
                content_hash=rec["content_hash"],
                payload_kind=rec["payload_kind"],
                pseudonym=rec["pseudonym"],
                stored_at=rec["stored_at"],
                origin_packet_id=rec.get("origin_packet_id", ""),
                size=rec.get("size", 0),
            )
            if entry.content_hash not in self._index:
                self._order.append(entry.content_hash)
            self._index[entry.content_hash] = entry
        for rec, _ in iter_journal(self.packets_path):
            self._seen_packets.add(rec["packet_id"])
        self._events = Journal(self.events_path)
        self._packets = Journal(self.packets_path)

    def _object_path(self, digest: str) -> Path:
        return self.objects_dir / digest[:2] / digest

    # -- blocks ----------------------------------------------------------

    def has(self, digest: str) -> bool:
        with self._lock:
            return digest in self._index

    def put(self, digest: str, payload: bytes, payload_kind: str, pseudonym: str,
            stored_at: int, origin_packet_id: str) -> bool:
        """Store a block and emit its availability event; False on duplicate."""
        with self._lock:
            if digest in self._index:
                return False
            path = self._object_path(digest)
            path.parent.mkdir(exist_ok=True)
            tmp = path.with_name(path.name + ".tmp")
            tmp.write_bytes(payload)
            os.replace(tmp, path)
            entry = IndexEntry(
                content_hash=digest,
                payload_kind=payload_kind,
                pseudonym=pseudonym,
                stored_at=stored_at,
                origin_packet_id=origin_packet_id,
                size=len(payload),
            )
            self._events.append({
                "content_hash": entry.content_hash,
                "payload_kind": entry.payload_kind,
                "pseudonym": entry.pseudonym,
                "stored_at": entry.stored_at,
                "origin_packet_id": entry.origin_packet_id,
                "size": entry.size,
            })
            self._index[digest] = entry
            self._order.append(digest)
            return True

    def get(self, digest: str) -> tuple[bytes, IndexEntry]:
        with self._lock:
            entry = self._index.get(digest)
        if entry is None:
            raise NotFound(digest)
        return self._object_path(digest).read_bytes(), entry

    def list_blocks(self, payload_kind: str | None = None,
                    pseudonym: str | None = None,
                    since: int | None = None) -> list[IndexEntry]:
        """Entries matching the conjunctive filter, ordered by stored_at."""
        with self._lock:
            entries = [self._index[h] for h in self._order]
        out = [
            e for e in entries
            if (payload_kind is None or e.payload_kind == payload_kind)
            and (pseudonym is None or e.pseudonym == pseudonym)
            and (since is None or e.stored_at > since)
        ]
        out.sort(key=lambda e: e.stored_at)
        return out

    def block_count(self) -> int:
        with self._lock:
            return len(self._index)

    def audit(self) -> list[str]:
        """Hashes whose stored bytes no longer re-hash to their key."""
        with self._lock:
            digests = list(self._order)
        return [d for d in digests
                if content_hash(self._object_path(d).read_bytes()) != d]

    # -- packet dedup ------------------------------------------------------

    def packet_seen(self, packet_id: str) -> bool:
        with self._lock:
            return packet_id in self._seen_packets

    def mark_packet(self, packet_id: str, received_at: int) -> None:
        with self._lock:
            if packet_id in self._seen_packets:
                return
            self._packets.append({"packet_id": packet_id, "received_at": received_at})
            self._packets.sync()
            self._seen_packets.add(packet_id)

    def packet_count(self) -> int:
        with self._lock:
            return len(self._seen_packets)

    def sync(self) -> None:
        self._events.sync()

    def close(self) -> None:
        self._events.close()
        self._packets.close()
