"""Dashboard JSON in three fixed perspectives: clinician, patient, exploration.

Series carry raw observation values (no aggregation drift) except the daily
activity panel, which sums band minutes per UTC day. The patient adherence
panel derives expected prompt counts from the configured instrument
frequencies with the same slot function the node scheduler uses; prompts
themselves never leave the node.
"""

from __future__ import annotations

from collections import defaultdict

from rehabpipe.dtn.prompts import week_slots
from rehabpipe.export.source import CoreDataView
from rehabpipe.model import (
    MS_PER_DAY,
    MS_PER_WEEK,
    Observation,
    day_index,
    iso_week_key,
    iso_week_start_ms,
)

# deployed assessment battery frequencies (administrations per ISO week)
DEFAULT_FREQUENCIES: dict[str, int] = {
    "arat": 2,
    "pam_activity": 3,
    "pam_armuse": 3,
    "fda": 3,
    "bodys": 3,
    "tmwt": 3,
    "fss": 5,
    "hads": 5,
    "bdi2": 5,
    "ess": 5,
    "fsmc": 5,
}

TREND_CODES = (
    ("arat_total", "ARAT total"),
    ("fss_mean", "FSS mean"),
    ("hads_anxiety", "HADS anxiety"),
    ("hads_depression", "HADS depression"),
    ("bdi2_total", "BDI-II total"),
    ("ess_total", "ESS total"),
    ("fsmc_motor", "FSMC motor"),
    ("fsmc_cognitive", "FSMC cognitive"),
    ("walk_speed_mps", "Walking speed (m/s)"),
)

# observation code (or prefix) -> instrument, for adherence joins
CODE_TO_INSTRUMENT = {
    "arat_total": "arat",
    "fss_mean": "fss",
    "hads_anxiety": "hads",
    "hads_depression": "hads",
    "bdi2_total": "bdi2",
    "ess_total": "ess",
    "fsmc_motor": "fsmc",
    "fsmc_cognitive": "fsmc",
    "walk_speed_mps": "tmwt",
}


class BadRequest(ValueError):
    """Unknown dashboard perspective."""


def _points(observations: list[Observation]) -> list[dict]:
    pts = [{"t": o.effective_time, "v": o.value} for o in observations]
    pts.sort(key=lambda p: p["t"])
    return pts


class DashboardBuilder:
    def __init__(self, view: CoreDataView,
                 frequencies: dict[str, int] | None = None) -> None:
        self.view = view
        self.frequencies = dict(frequencies or DEFAULT_FREQUENCIES)

    def build(self, pseudonym: str, perspective: str) -> dict:
        if perspective == "clinician":
            panels = self._clinician_panels(pseudonym)
        elif perspective == "patient":
            panels = self._patient_panels(pseudonym)
        elif perspective == "exploration":
            panels = self._exploration_panels(pseudonym)
        else:
            raise BadRequest(f"unknown perspective {perspective!r}")
        return {
            "perspective": perspective,
            "subject_pseudonym": pseudonym,
            "panels": panels,
        }

    # -- clinician ---------------------------------------------------------

    def _clinician_panels(self, pseudonym: str) -> list[dict]:
        observations = self.view.observations(pseudonym)
        by_code: dict[str, list[Observation]] = defaultdict(list)
        for obs in observations:
            by_code[obs.code].append(obs)

        panels = []
        for code, title in TREND_CODES:
            series = _points(by_code.get(code, []))
            latest = None
            if series:
                last = max(by_code[code], key=lambda o: o.effective_time)
                latest = {"code": code, "value": last.value, "unit": last.unit,
                          "t": last.effective_time}
            panels.append({
                "panel_id": f"trend_{code}", "title": title,
                "latest": latest, "series": {code: series},
            })

        daily: dict[str, dict[int, float]] = {
            "low": defaultdict(float), "moderate": defaultdict(float),
            "vigorous": defaultdict(float)}
        for band in ("low", "moderate", "vigorous"):
            for obs in by_code.get(f"activity_{band}_min", []):
                daily[band][day_index(obs.effective_time)] += obs.value
        panels.append({
            "panel_id": "activity_daily", "title": "Daily activity minutes",
            "series": {
                band: [{"t": day * MS_PER_DAY, "v": daily[band][day]}
                       for day in sorted(daily[band])]
                for band in ("low", "moderate", "vigorous")
            },
        })

        ratio_series = {
            code: _points(items) for code, items in sorted(by_code.items())
            if code.startswith("arm_use_ratio")
        }
        panels.append({
            "panel_id": "arm_use_ratio", "title": "Arm use ratio (left share)",
            "series": ratio_series,
        })
        return panels

    # -- patient -------------------------------------------------------------

    def _patient_panels(self, pseudonym: str) -> list[dict]:
        observations = self.view.observations(pseudonym)
        rows = self._adherence_rows(observations)
        progress_codes = ["walk_speed_mps"] + sorted(
            {o.code for o in observations if o.code.startswith("arm_use_ratio")})
        series = {
            code: _points([o for o in observations if o.code == code])
            for code in progress_codes
        }
        return [
            {"panel_id": "adherence", "title": "Assessments completed vs planned",
             "rows": rows},
            {"panel_id": "progress", "title": "Progress", "series": series},
        ]

    def _adherence_rows(self, observations: list[Observation]) -> list[dict]:
        if not observations:
            return []
        completed: dict[tuple[str, tuple[int, int]], set] = defaultdict(set)
        times = []
        for obs in observations:
            instrument = CODE_TO_INSTRUMENT.get(obs.code)
            times.append(obs.effective_time)
            if instrument is None:
                continue
            completed[(instrument, iso_week_key(obs.effective_time))].add(
                obs.derived_from)
        span_start = iso_week_start_ms(min(times))
        span_end = max(times)
        rows = []
        week_start = span_start
        while week_start <= span_end:
            week = iso_week_key(week_start)
            label = f"{week[0]}-W{week[1]:02d}"
            for instrument, per_week in sorted(self.frequencies.items()):
                if instrument not in CODE_TO_INSTRUMENT.values():
                    continue  # wearable-derived; no discrete administrations
                expected = len(week_slots(per_week, 9))
                done = len(completed.get((instrument, week), ()))
                rows.append({
                    "week": label, "instrument": instrument,
                    "expected": expected, "completed": done,
                    "ratio": done / expected if expected else 0.0,
                })
            week_start += MS_PER_WEEK
        return rows

    # -- exploration ----------------------------------------------------------

    def _exploration_panels(self, pseudonym: str) -> list[dict]:
        inventory = [
            {"hash": e.content_hash, "kind": e.payload_kind,
             "time": e.stored_at, "size": e.size}
            for e in self.view.inventory(pseudonym)
        ]
        runs = [
            {"workflow": workflow, **counts}
            for workflow, counts in sorted(self.view.run_summary().items())
        ]
        return [
            {"panel_id": "block_inventory", "title": "Stored blocks",
             "rows": inventory},
            {"panel_id": "run_ledger", "title": "Workflow runs", "rows": runs},
        ]
