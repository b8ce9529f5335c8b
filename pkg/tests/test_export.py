"""Export API: bundles, dashboards, static report, re-identification CLI."""

from __future__ import annotations

import json
import xml.etree.ElementTree as ET
import jsonschema
import numpy as np
import pytest

from rehabpipe.analytics import builtin_services
from rehabpipe.dtn.prompts import PromptScheduler
from rehabpipe.dtn.config import PromptRule
from rehabpipe.export import (
    CoreDataView,
    DashboardBuilder,
    build_bundle,
    entry_to_observation,
    render_static_report,
    validate_bundle,
)
from rehabpipe.export.dashboard import BadRequest
from rehabpipe.export.reident import reidentify_bundle
from rehabpipe.landingzone import ObjectStore
from rehabpipe.model import (
    BodyLocation,
    Instrument,
    MS_PER_DAY,
    canonical_bytes,
    content_hash,
    iso_week_key,
    payload_kind_of,
)
from rehabpipe.orchestrator import (
    DirectBlockSource,
    Orchestrator,
    RunLedger,
    default_descriptors,
)
from rehabpipe.privacy import PseudonymTableEntry, derive_pseudonym

from conftest import BASE_MS, assessment, walk_test
from test_analytics import burst_block
from test_dtn import FakeClock

P = "ab" * 16


class Core:
    """In-process pipeline over a canonical core directory layout."""

    def __init__(self, tmp_path):
        self.dir = tmp_path / "core"
        self.clock = FakeClock()
        self.store = ObjectStore(self.dir / "store")
        self.ledger = RunLedger(self.dir / "runs.journal")
        self.orch = Orchestrator(
            descriptors=default_descriptors(),
            services=builtin_services(),
            ledger=self.ledger,
            events_path=self.store.events_path,
            block_source=DirectBlockSource(self.store),
            clock=self.clock,
        )

    def put(self, record):
        payload = canonical_bytes(record)
        digest = content_hash(payload)
        self.store.put(digest, payload, payload_kind_of(record).value,
                       record.subject.pseudonym, self.clock(), "pkt")
        return digest

    def view(self) -> CoreDataView:
        self.orch.tick()
        return CoreDataView(self.dir)


@pytest.fixture
def core(tmp_path):
    return Core(tmp_path)


def seed_subject(core, *, weeks=1, pseudonym=P):
    """A small realistic observation set: scores, walks, arm-use pairs."""
    rng = np.random.default_rng(101)
    for week in range(weeks):
        week_ms = BASE_MS + week * 7 * MS_PER_DAY
        for day, hour in ((0, 9), (2, 9), (4, 9)):
            core.put(assessment(
                Instrument.FSS, rng,
                administered_at=week_ms + day * MS_PER_DAY + hour * 3_600_000,
                pseudonym=pseudonym))
        for day in (1, 3):
            core.put(walk_test(
                8.0 + week, administered_at=week_ms + day * MS_PER_DAY + 10 * 3_600_000,
                pseudonym=pseudonym))
        start = week_ms + 5 * MS_PER_DAY + 14 * 3_600_000
        left = burst_block(rng, n=750, start=start, amplitude=0.4,
                           location=BodyLocation.WRIST_LEFT, pseudonym=pseudonym)
        right = burst_block(rng, n=750, start=start, amplitude=0.2,
                            location=BodyLocation.WRIST_RIGHT, pseudonym=pseudonym)
        core.put(left)
        core.put(right)


class TestBuildBundle:
    def test_window_selects_and_sorts(self, core):
        seed_subject(core)
        view = core.view()
        bundle = build_bundle(view.observations(P), P, BASE_MS,
                              BASE_MS + 7 * MS_PER_DAY)
        keys = [(e["effectiveDateTime"], e["code"]["code"]) for e in bundle.entries]
        assert keys == sorted(keys)
        assert not bundle.empty
        codes = {e["code"]["code"] for e in bundle.entries}
        assert "fss_mean" in codes and "walk_speed_mps" in codes

    def test_empty_window(self, core):
        seed_subject(core)
        view = core.view()
        bundle = build_bundle(view.observations(P), P, BASE_MS - 1000, BASE_MS)
        assert bundle.empty and bundle.entries == ()

    def test_unknown_pseudonym_is_empty_flagged(self, core):
        seed_subject(core)
        view = core.view()
        bundle = build_bundle(view.observations("ff" * 16), "ff" * 16,
                              BASE_MS, BASE_MS + MS_PER_DAY)
        assert bundle.empty

    def test_partition_union_equals_full_window(self, core):
        seed_subject(core, weeks=2)
        view = core.view()
        observations = view.observations(P)
        t0, t1 = BASE_MS, BASE_MS + 14 * MS_PER_DAY
        full = build_bundle(observations, P, t0, t1)
        rng = np.random.default_rng(7)
        cuts = sorted(int(c) for c in rng.integers(t0 + 1, t1 - 1, size=5))
        bounds = [t0] + cuts + [t1]
        union_ids = []
        for lo, hi in zip(bounds, bounds[1:]):
            part = build_bundle(observations, P, lo, hi)
            union_ids.extend(e["id"] for e in part.entries)
        assert sorted(union_ids) == sorted(e["id"] for e in full.entries)
        assert len(union_ids) == len(set(union_ids))

    def test_schema_validation(self, core):
        seed_subject(core)
        view = core.view()
        bundle = build_bundle(view.observations(P), P, BASE_MS,
                              BASE_MS + 7 * MS_PER_DAY)
        validate_bundle(bundle.to_json())  # must not raise
        broken = bundle.to_json()
        broken["entry"].append({"resource": {"resourceType": "Observation"}})
        with pytest.raises(jsonschema.ValidationError):
            validate_bundle(broken)

    def test_deterministic_for_fixed_ledger(self, core):
        seed_subject(core)
        view = core.view()
        a = build_bundle(view.observations(P), P, BASE_MS, BASE_MS + 7 * MS_PER_DAY)
        b = build_bundle(view.observations(P), P, BASE_MS, BASE_MS + 7 * MS_PER_DAY)
        assert json.dumps(a.to_json()) == json.dumps(b.to_json())

    def test_entry_round_trip(self, core):
        seed_subject(core)
        view = core.view()
        observations = view.observations(P)
        bundle = build_bundle(observations, P, BASE_MS, BASE_MS + 7 * MS_PER_DAY)
        recovered = sorted(
            (entry_to_observation(e) for e in bundle.entries),
            key=lambda o: (o.effective_time, o.code, o.produced_by))
        expected = sorted(
            (o for o in observations
             if BASE_MS <= o.effective_time < BASE_MS + 7 * MS_PER_DAY),
            key=lambda o: (o.effective_time, o.code, o.produced_by))
        assert recovered == expected


class TestDashboard:
    def test_two_walk_tests_series_length_two(self, core):
        rng = np.random.default_rng(3)
        core.put(walk_test(8.0, administered_at=BASE_MS + 1000))
        core.put(walk_test(9.0, administered_at=BASE_MS + 2000))
        view = core.view()
        dashboard = DashboardBuilder(view).build(P, "clinician")
        panel = next(p for p in dashboard["panels"]
                     if p["panel_id"] == "trend_walk_speed_mps")
        assert len(panel["series"]["walk_speed_mps"]) == 2
        assert panel["latest"]["value"] == 10.0 / 9.0

    def test_empty_subject_has_panels_with_empty_series(self, core):
        view = core.view()
        dashboard = DashboardBuilder(view).build(P, "clinician")
        assert dashboard["panels"]
        for panel in dashboard["panels"]:
            for series in panel.get("series", {}).values():
                assert series == []
            assert panel.get("latest") is None

    def test_series_values_equal_observations(self, core):
        seed_subject(core)
        view = core.view()
        dashboard = DashboardBuilder(view).build(P, "clinician")
        panel = next(p for p in dashboard["panels"]
                     if p["panel_id"] == "trend_fss_mean")
        expected = sorted(
            (o.effective_time, o.value)
            for o in view.observations(P) if o.code == "fss_mean")
        assert [(pt["t"], pt["v"]) for pt in panel["series"]["fss_mean"]] == expected

    def test_series_time_ascending_everywhere(self, core):
        seed_subject(core, weeks=2)
        view = core.view()
        for perspective in ("clinician", "patient"):
            dashboard = DashboardBuilder(view).build(P, perspective)
            for panel in dashboard["panels"]:
                for series in panel.get("series", {}).values():
                    times = [pt["t"] for pt in series]
                    assert times == sorted(times)

    def test_adherence_join_matches_scheduler(self, core):
        # 3 completed FSS in a 5-per-week schedule -> 3/5 for that week
        rng = np.random.default_rng(11)
        for day in (0, 1, 4):
            core.put(assessment(
                Instrument.FSS, rng,
                administered_at=BASE_MS + day * MS_PER_DAY + 9 * 3_600_000))
        view = core.view()
        dashboard = DashboardBuilder(view, {"fss": 5}).build(P, "patient")
        rows = next(p for p in dashboard["panels"]
                    if p["panel_id"] == "adherence")["rows"]
        (row,) = [r for r in rows if r["instrument"] == "fss"]
        assert (row["expected"], row["completed"]) == (5, 3)
        assert row["ratio"] == 3 / 5
        # join oracle: expected equals what a node scheduler actually emits
        scheduler = PromptScheduler([PromptRule(Instrument.FSS, 5, 9)])
        scheduler.tick(BASE_MS)
        emitted = scheduler.tick(BASE_MS + 7 * MS_PER_DAY - 1)
        week = iso_week_key(BASE_MS)
        assert row["expected"] == len(
            [p for p in emitted if iso_week_key(p.due_at) == week])

    def test_exploration_inventory_and_runs(self, core):
        seed_subject(core)
        view = core.view()
        dashboard = DashboardBuilder(view).build(P, "exploration")
        inventory = next(p for p in dashboard["panels"]
                         if p["panel_id"] == "block_inventory")["rows"]
        assert inventory and all(
            set(row) == {"hash", "kind", "time", "size"} for row in inventory)
        runs = next(p for p in dashboard["panels"]
                    if p["panel_id"] == "run_ledger")["rows"]
        assert {r["workflow"] for r in runs} >= {"wf_scores", "wf_walk", "wf_armuse"}

    def test_unknown_perspective_rejected(self, core):
        view = core.view()
        with pytest.raises(BadRequest):
            DashboardBuilder(view).build(P, "nonsense")


class TestStaticReport:
    def test_empty_subject_valid_html_with_empty_state(self, core):
        view = core.view()
        document = render_static_report(DashboardBuilder(view).build(P, "clinician"))
        assert document.startswith("<!DOCTYPE html>")
        ET.fromstring(document.removeprefix("<!DOCTYPE html>"))
        assert "no data" in document

    def test_one_polyline_per_nonempty_trend_series(self, core):
        seed_subject(core, weeks=2)
        view = core.view()
        dashboard = DashboardBuilder(view).build(P, "clinician")
        nonempty = sum(
            1 for panel in dashboard["panels"]
            for series in panel.get("series", {}).values() if series)
        document = render_static_report(dashboard)
        assert document.count("<polyline") == nonempty

    def test_byte_deterministic(self, core):
        seed_subject(core)
        view = core.view()
        dashboard = DashboardBuilder(view).build(P, "clinician")
        assert render_static_report(dashboard) == render_static_report(dashboard)

    def test_randomized_inputs_stay_well_formed(self, tmp_path):
        rng = np.random.default_rng(13)
        for trial in range(5):
            core = Core(tmp_path / f"t{trial}")
            n = int(rng.integers(0, 8))
            for i in range(n):
                instrument = [Instrument.FSS, Instrument.HADS,
                              Instrument.BDI2][int(rng.integers(0, 3))]
                core.put(assessment(
                    instrument, rng,
                    administered_at=BASE_MS + int(rng.integers(1, 10 * MS_PER_DAY))))
            view = core.view()
            document = render_static_report(
                DashboardBuilder(view).build(P, "clinician"))
            ET.fromstring(document.removeprefix("<!DOCTYPE html>"))


class TestReident:
    def test_bundle_annotation_round_trip(self, core):
        seed_subject(core)
        view = core.view()
        bundle = build_bundle(view.observations(P), P, BASE_MS,
                              BASE_MS + 7 * MS_PER_DAY).to_json()
        key = bytes(range(32))
        pseudonym = derive_pseudonym("mrn-0001", key)
        # rewrite bundle to that pseudonym so the table matches
        for entry in bundle["entry"]:
            entry["resource"]["subject"]["reference"] = f"Patient/{pseudonym}"
        table = [PseudonymTableEntry("mrn-0001", pseudonym, BASE_MS)]
        annotated, unknown = reidentify_bundle(bundle, table)
        assert unknown == 0
        assert all(e["resource"]["subject"]["display"] == "mrn-0001"
                   for e in annotated["entry"])
        validate_bundle(annotated)

    def test_reident_cli_end_to_end(self, core, tmp_path):
        import csv

        from rehabpipe.export.reident import main

        seed_subject(core)
        view = core.view()
        key = bytes(range(32))
        pseudonym = derive_pseudonym("mrn-0042", key)
        bundle = build_bundle(view.observations(P), P, BASE_MS,
                              BASE_MS + 7 * MS_PER_DAY).to_json()
        for entry in bundle["entry"]:
            entry["resource"]["subject"]["reference"] = f"Patient/{pseudonym}"
        bundle_path = tmp_path / "bundle.json"
        bundle_path.write_text(json.dumps(bundle))
        table_path = tmp_path / "pseudonyms.csv"
        with open(table_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(("pseudonym", "local_id", "created_at_ms"))
            writer.writerow((pseudonym, "mrn-0042", BASE_MS))
        out_path = tmp_path / "annotated.json"
        assert main(["--bundle", str(bundle_path), "--table", str(table_path),
                     "--out", str(out_path)]) == 0
        annotated = json.loads(out_path.read_text())
        assert annotated["reidentified"] is True
        assert annotated["unknown_pseudonyms"] == 0
        assert all(e["resource"]["subject"]["display"] == "mrn-0042"
                   for e in annotated["entry"])

    def test_unknown_pseudonyms_counted(self, core):
        seed_subject(core)
        view = core.view()
        bundle = build_bundle(view.observations(P), P, BASE_MS,
                              BASE_MS + 7 * MS_PER_DAY).to_json()
        annotated, unknown = reidentify_bundle(bundle, [])
        assert unknown == len(bundle["entry"]) > 0
        assert all("display" not in e["resource"]["subject"]
                   for e in annotated["entry"])
