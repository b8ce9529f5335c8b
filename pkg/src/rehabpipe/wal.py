"""Append-only newline-delimited JSON journals with torn-tail recovery.

All durable state in the pipeline (node queue/outbox, store index, event
feed, run ledger) is one of these. Appends flush to the OS on every record;
``sync()`` is called by owners at commit barriers. Readers must tolerate a
torn final line after a hard crash, so writers repair the tail on open.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Any, Iterator


def repair_tail(path: Path) -> None:
    """Truncate a trailing partial line left by a hard crash."""
    if not path.exists():
        return
    size = path.stat().st_size
    if size == 0:
        return
    with open(path, "rb+") as fh:
        fh.seek(-1, os.SEEK_END)
        if fh.read(1) == b"\n":
            return
        # walk back to the last newline; files are small enough to chunk
        data = path.read_bytes()
        cut = data.rfind(b"\n")
        fh.truncate(cut + 1 if cut >= 0 else 0)


def iter_journal(path: Path, offset: int = 0) -> Iterator[tuple[dict, int]]:
    """Yield (record, end_offset) for each complete line from byte ``offset``."""
    if not path.exists():
        return
    with open(path, "rb") as fh:
        fh.seek(offset)
        pos = offset
        for line in fh:
            pos += len(line)
            if not line.endswith(b"\n"):
                break  # torn tail; a later read picks it up once complete
            line = line.strip()
            if not line:
                continue
            yield json.loads(line), pos


def read_journal(path: Path) -> list[dict]:
    return [rec for rec, _ in iter_journal(path)]


class Journal:
    """Single-writer append handle over one journal file."""

    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        repair_tail(self.path)
        self._fh = open(self.path, "ab")

    def append(self, record: dict[str, Any]) -> None:
        line = json.dumps(record, separators=(",", ":"), sort_keys=True)
        self._fh.write(line.encode("utf-8") + b"\n")
        self._fh.flush()

    def sync(self) -> None:
        os.fsync(self._fh.fileno())

    def size(self) -> int:
        return self._fh.tell()

    def close(self) -> None:
        self._fh.close()

    def replace_with(self, records: list[dict[str, Any]]) -> None:
        """Atomically rewrite the journal (compaction)."""
        tmp = self.path.with_suffix(self.path.suffix + ".tmp")
        with open(tmp, "wb") as fh:
            for record in records:
                fh.write(json.dumps(record, separators=(",", ":"), sort_keys=True)
                         .encode("utf-8") + b"\n")
            fh.flush()
            os.fsync(fh.fileno())
        self._fh.close()
        os.replace(tmp, self.path)
        self._fh = open(self.path, "ab")
