"""Assessment prompt scheduling.

Each instrument is prompted ``per_week`` times per ISO week at the
configured hour, spread evenly across days. Assessments are clinical
routine, so up to five prompts per week live on the Mon-Fri working week
(five a week means every working day); six or seven cover all days; beyond
seven, days cycle and same-day extras shift by one hour. A slot fires once:
emitted slots are journaled so restarts do not re-prompt.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from rehabpipe.model import Instrument, MS_PER_DAY, MS_PER_WEEK, iso_week_start_ms
from rehabpipe.dtn.config import PromptRule
from rehabpipe.wal import Journal, read_journal

MS_PER_HOUR = 3_600_000


@dataclass(frozen=True)
class Prompt:
    instrument: Instrument
    due_at: int


def week_slots(per_week: int, preferred_hour: int) -> list[tuple[int, int]]:
    """(day 0=Mon..6=Sun, hour) slots for one week, evenly spread."""
    if not 1 <= per_week <= 21:
        raise ValueError("per_week must be in 1..21")
    if per_week == 1:
        return [(2, preferred_hour)]  # midweek
    if per_week <= 5:
        days = [round(i * 4 / (per_week - 1)) for i in range(per_week)]
        return [(day, preferred_hour) for day in days]
    if per_week <= 7:
        days = sorted({round(i * 6 / (per_week - 1)) for i in range(per_week)})
        return [(day, preferred_hour) for day in days]
    slots = [(s % 7, (preferred_hour + s // 7) % 24) for s in range(per_week)]
    return sorted(slots)


class PromptScheduler:
    """Emits due prompts exactly once; independent of queueing and transport."""

    def __init__(self, schedule: list[PromptRule],
                 journal_path: str | Path | None = None) -> None:
        self.schedule = schedule
        self._emitted: set[tuple[str, int]] = set()
        self._history: list[Prompt] = []
        self._genesis_ms: int | None = None
        self._journal: Journal | None = None
        if journal_path is not None:
            path = Path(journal_path)
            for rec in read_journal(path):
                if rec["op"] == "genesis":
                    self._genesis_ms = rec["ms"]
                elif rec["op"] == "prompt":
                    prompt = Prompt(Instrument(rec["instrument"]), rec["due_at"])
                    self._emitted.add((prompt.instrument.value, prompt.due_at))
                    self._history.append(prompt)
            self._journal = Journal(path)

    def tick(self, now_ms: int) -> list[Prompt]:
        """All slots newly due at ``now_ms``, oldest first."""
        if self._genesis_ms is None:
            self._genesis_ms = now_ms
            if self._journal:
                self._journal.append({"op": "genesis", "ms": now_ms})
        new: list[Prompt] = []
        week_start = iso_week_start_ms(self._genesis_ms)
        while week_start <= now_ms:
            for rule in self.schedule:
                for day, hour in week_slots(rule.per_week, rule.preferred_hour):
                    due = week_start + day * MS_PER_DAY + hour * MS_PER_HOUR
                    if due < self._genesis_ms or due > now_ms:
                        continue
                    key = (rule.instrument.value, due)
                    if key in self._emitted:
                        continue
                    self._emitted.add(key)
                    prompt = Prompt(rule.instrument, due)
                    new.append(prompt)
                    self._history.append(prompt)
                    if self._journal:
                        self._journal.append(
                            {"op": "prompt", "instrument": rule.instrument.value,
                             "due_at": due})
            week_start += MS_PER_WEEK
        new.sort(key=lambda p: (p.due_at, p.instrument.value))
        return new

    def emitted(self) -> list[Prompt]:
        return list(self._history)
