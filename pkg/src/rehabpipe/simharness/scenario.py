"""Multi-process scenario driver: real services on loopback, then audits.

Boots one process per service (landing zone, orchestrator, export, one DTN
per node profile) so wire formats, shared-directory handoff, and process
crash recovery are genuinely exercised. After quiescence it runs the full
invariant audit: privacy byte-scan, store re-hash, exactly-once ledger
check, bundle completeness/schema, and clinic-side re-identification.
"""

from __future__ import annotations

import json
import signal
import subprocess
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

from rehabpipe.export.bundle import validate_bundle
from rehabpipe.export.reident import reidentify_bundle
from rehabpipe.httpd import TransportError, free_port, get_json, http_request, post_json
from rehabpipe.model import canonical_bytes, content_hash
from rehabpipe.privacy import derive_pseudonym, load_pseudonym_table
from rehabpipe.simharness.pipeline import clinic_pseudonym_key, node_keyring
from rehabpipe.simharness.synth import (
    SIM_EPOCH_MS,
    ScenarioConfig,
    generate_day,
    roster,
)
from rehabpipe.wal import iter_journal

READY_TIMEOUT_S = 30.0
QUIESCE_TIMEOUT_S = 300.0


@dataclass
class ScenarioReport:
    patient_days: int = 0
    packets: int = 0
    blocks: int = 0
    runs_done: int = 0
    invariant_failures: int = 0
    wall_time_s: float = 0.0
    blocks_per_s: float = 0.0
    packets_per_s: float = 0.0
    failures: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "patient_days": self.patient_days,
            "packets": self.packets,
            "blocks": self.blocks,
            "runs_done": self.runs_done,
            "invariant_failures": self.invariant_failures,
            "wall_time_s": round(self.wall_time_s, 3),
            "blocks_per_s": round(self.blocks_per_s, 2),
            "packets_per_s": round(self.packets_per_s, 2),
            "failures": self.failures,
        }


class ServiceProc:
    def __init__(self, name: str, argv: list[str], log_path: Path,
                 status_url: str) -> None:
        self.name = name
        self.argv = argv
        self.log_path = log_path
        self.status_url = status_url
        self.proc: subprocess.Popen | None = None

    def start(self) -> None:
        log = open(self.log_path, "ab")
        self.proc = subprocess.Popen(
            self.argv, stdout=log, stderr=subprocess.STDOUT)

    def wait_ready(self, timeout: float = READY_TIMEOUT_S) -> None:
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            if self.proc and self.proc.poll() is not None:
                raise RuntimeError(
                    f"{self.name} exited early; see {self.log_path}")
            try:
                get_json(self.status_url, timeout=1.0)
                return
            except (TransportError, json.JSONDecodeError):
                time.sleep(0.1)
        raise RuntimeError(f"{self.name} not ready within {timeout}s")

    def kill(self) -> None:
        if self.proc and self.proc.poll() is None:
            self.proc.send_signal(signal.SIGKILL)
            self.proc.wait()

    def stop(self) -> None:
        if self.proc and self.proc.poll() is None:
            self.proc.terminate()
            try:
                self.proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self.proc.kill()
                self.proc.wait()


class ScenarioRunner:
    def __init__(self, config: ScenarioConfig, workdir: str | Path) -> None:
        self.config = config
        self.workdir = Path(workdir)
        self.pseudonym_key = clinic_pseudonym_key(config.seed)
        self.roster = roster(config.seed, config.patients)
        self.services: list[ServiceProc] = []
        self.node_procs: dict[str, ServiceProc] = {}
        self.node_urls: dict[str, str] = {}
        self.receipts: set[str] = set()
        self.report = ScenarioReport()
        self.core_dir = self.workdir / "core"
        self.capture_dir = self.workdir / "capture"
        self.logs = self.workdir / "logs"

    # -- provisioning -----------------------------------------------------

    def _provision(self) -> None:
        for sub in ("core", "capture", "logs", "keys"):
            (self.workdir / sub).mkdir(parents=True, exist_ok=True)
        keys = {}
        for profile in self.config.node_profiles:
            node_id = f"dtn-{profile}"
            node_dir = self.workdir / "nodes" / profile
            node_dir.mkdir(parents=True, exist_ok=True)
            keyring = node_keyring(self.config.seed, node_id)
            keyring.save(self.workdir / "keys" / f"{node_id}.json")
            keys[node_id] = keyring.transport_key.hex()
        (self.workdir / "keys" / "registry.json").write_text(json.dumps(keys))
        (self.workdir / "keys" / "frequencies.json").write_text(
            json.dumps(self.config.assessment_frequencies))

    def _node_config(self, profile: str, lz_port: int, port: int) -> Path:
        home_reported = ("fss", "hads", "bdi2", "ess", "fsmc")
        schedule = [
            {"instrument": inst, "per_week": per_week, "preferred_hour": 18}
            for inst, per_week in sorted(self.config.assessment_frequencies.items())
            if (inst in home_reported) == (profile == "home")
        ]
        config = {
            "node_id": f"dtn-{profile}",
            "profile": profile,
            "landing_zone_address": f"127.0.0.1:{lz_port}",
            "batch_max_blocks": self.config.node_batch_max_blocks,
            "batch_max_age_s": self.config.node_batch_max_age_s,
            "retry_backoff_base_s": 1.2,
            "prompt_schedule": schedule,
            "listen_port": port,
            "keyring_path": str(self.workdir / "keys" / f"dtn-{profile}.json"),
            "chaos": {
                "packet_loss_prob": self.config.packet_loss_prob,
                "ack_loss_prob": self.config.ack_loss_prob,
                "seed": self.config.seed,
            },
        }
        path = self.workdir / "nodes" / profile / "config.json"
        path.write_text(json.dumps(config, indent=2))
        return path

    def _boot(self) -> None:
        lz_port = free_port()
        orch_port = free_port()
        export_port = free_port()
        python = sys.executable

        zone = ServiceProc(
            "landing-zone",
            [python, "-m", "rehabpipe.landingzone.service",
             "--data-dir", str(self.core_dir),
             "--keys", str(self.workdir / "keys" / "registry.json"),
             "--port", str(lz_port),
             "--capture-dir", str(self.capture_dir)],
            self.logs / "landing-zone.log",
            f"http://127.0.0.1:{lz_port}/v1/status")
        orch = ServiceProc(
            "orchestrator",
            [python, "-m", "rehabpipe.orchestrator.service",
             "--core-dir", str(self.core_dir),
             "--tick-interval", "0.1",
             "--retry-backoff-ms", "300",
             "--port", str(orch_port)],
            self.logs / "orchestrator.log",
            f"http://127.0.0.1:{orch_port}/v1/status")
        export = ServiceProc(
            "export",
            [python, "-m", "rehabpipe.export.service",
             "--core-dir", str(self.core_dir),
             "--port", str(export_port),
             "--frequencies", str(self.workdir / "keys" / "frequencies.json")],
            self.logs / "export.log",
            f"http://127.0.0.1:{export_port}/v1/patients/{'0' * 32}/dashboard")
        self.services = [zone, orch, export]
        self.lz_url = f"http://127.0.0.1:{lz_port}"
        self.orch_url = f"http://127.0.0.1:{orch_port}"
        self.export_url = f"http://127.0.0.1:{export_port}"

        zone.start()
        zone.wait_ready()
        orch.start()
        export.start()

        for profile in self.config.node_profiles:
            port = free_port()
            config_path = self._node_config(profile, lz_port, port)
            node = ServiceProc(
                f"dtn-{profile}",
                [python, "-m", "rehabpipe.dtn.service",
                 "--config", str(config_path),
                 "--data-dir", str(self.workdir / "nodes" / profile),
                 "--poll-interval", "0.05"],
                self.logs / f"dtn-{profile}.log",
                f"http://127.0.0.1:{port}/v1/status")
            node.start()
            self.node_procs[profile] = node
            self.node_urls[profile] = f"http://127.0.0.1:{port}"
        orch.wait_ready()
        export.wait_ready()
        for node in self.node_procs.values():
            node.wait_ready()

    # -- feeding -------------------------------------------------------------

    def _ingest(self, profile: str, record) -> str:
        url = f"{self.node_urls[profile]}/v1/ingest"
        for attempt in range(30):
            try:
                status, body = post_json(url, json.loads(canonical_bytes(record)))
            except TransportError:
                time.sleep(0.2)
                continue
            if status == 200:
                return body["content_hash"]
            raise RuntimeError(f"ingest rejected ({status}): {body}")
        raise RuntimeError(f"node {profile} unreachable for ingest")

    def _submit_day(self, patient, day_index: int) -> list[str]:
        receipts: list[str] = []
        for sub in generate_day(patient, day_index, self.config):
            record = sub.record
            if sub.attachment_of is not None:
                record = replace(record, attachments=(receipts[sub.attachment_of],))
            profile = sub.profile.value
            if profile not in self.node_urls:
                profile = self.config.node_profiles[0]
            receipts.append(self._ingest(profile, record))
        return receipts

    def _feed(self) -> None:
        tasks = [(patient, day) for patient in self.roster
                 for day in range(self.config.days)]
        crash_points = sorted(self.config.node_crash_points, reverse=True)
        if crash_points:
            done = 0
            for patient, day in tasks:
                self.receipts.update(self._submit_day(patient, day))
                done += 1
                if crash_points and done >= crash_points[-1]:
                    crash_points.pop()
                    victim = self.config.node_profiles[done % len(self.config.node_profiles)]
                    node = self.node_procs[victim]
                    node.kill()
                    node.start()
                    node.wait_ready()
        else:
            with ThreadPoolExecutor(max_workers=6) as pool:
                for receipts in pool.map(
                        lambda t: self._submit_day(*t), tasks):
                    self.receipts.update(receipts)
        self.report.patient_days = len(tasks)

    # -- quiescence ------------------------------------------------------------

    def _quiesce(self) -> None:
        deadline = time.monotonic() + QUIESCE_TIMEOUT_S
        stable_polls = 0
        last_counts = None
        while time.monotonic() < deadline:
            try:
                nodes_idle = True
                for url in self.node_urls.values():
                    node_status = get_json(f"{url}/v1/status")
                    if node_status["queue_depth"] or node_status["outbox_depth"]:
                        nodes_idle = False
                lz = get_json(f"{self.lz_url}/v1/status")
                orch = get_json(f"{self.orch_url}/v1/status")
            except TransportError:
                time.sleep(0.3)
                continue
            counts = (lz["blocks"], lz["packets"], orch["runs"])
            pending = orch["runs"].get("pending", 0) + orch["runs"].get("running", 0)
            if nodes_idle and orch["quiescent"] and pending == 0 \
                    and counts == last_counts:
                stable_polls += 1
                if stable_polls >= 3:
                    self.report.blocks = lz["blocks"]
                    self.report.packets = lz["packets"]
                    self.report.runs_done = orch["runs"].get("done", 0)
                    return
            else:
                stable_polls = 0
            last_counts = counts
            time.sleep(0.3)
        raise RuntimeError("scenario did not quiesce in time")

    # -- audits -------------------------------------------------------------

    def _fail(self, message: str) -> None:
        self.report.failures.append(message)
        self.report.invariant_failures += 1

    def _pseudonyms(self) -> dict[str, str]:
        return {
            patient.local_id: derive_pseudonym(
                patient.local_id, self.pseudonym_key)
            for patient in self.roster
        }

    def _audit_http(self) -> dict[str, dict]:
        """Bundle + dashboard + report audits; returns artifacts for the scan."""
        artifacts: dict[str, bytes] = {}
        bundles: dict[str, dict] = {}
        t0 = SIM_EPOCH_MS
        t1 = SIM_EPOCH_MS + (self.config.days + 2) * 86_400_000
        for local_id, pseudonym in self._pseudonyms().items():
            status, body = http_request(
                "GET", f"{self.export_url}/v1/export/{pseudonym}?from={t0}&to={t1}")
            full = json.loads(body)
            artifacts[f"bundle:{pseudonym}"] = body
            bundles[pseudonym] = full
            try:
                validate_bundle(full)
            except Exception as exc:  # noqa: BLE001
                self._fail(f"bundle schema: {pseudonym}: {exc}")
            # windows partitioning the timeline: union must equal the full set
            quarter = (t1 - t0) // 4
            union_ids: list[str] = []
            for i in range(4):
                lo = t0 + i * quarter
                hi = t1 if i == 3 else t0 + (i + 1) * quarter
                _, part_body = http_request(
                    "GET",
                    f"{self.export_url}/v1/export/{pseudonym}?from={lo}&to={hi}")
                part = json.loads(part_body)
                union_ids.extend(e["resource"]["id"] for e in part["entry"])
            full_ids = [e["resource"]["id"] for e in full["entry"]]
            if sorted(union_ids) != sorted(full_ids):
                self._fail(f"bundle completeness: {pseudonym}")
            if len(full_ids) != len(set(full_ids)):
                self._fail(f"duplicate observation keys in bundle: {pseudonym}")
            for perspective in ("clinician", "patient", "exploration"):
                _, dash = http_request(
                    "GET", f"{self.export_url}/v1/patients/{pseudonym}/dashboard"
                    f"?perspective={perspective}")
                artifacts[f"dash:{perspective}:{pseudonym}"] = dash
            _, html_doc = http_request(
                "GET", f"{self.export_url}/v1/patients/{pseudonym}/report")
            artifacts[f"report:{pseudonym}"] = html_doc
        self._scan_artifacts(artifacts)
        self._audit_reident(bundles)
        return bundles

    def _scan_artifacts(self, artifacts: dict[str, bytes]) -> None:
        needles: list[tuple[str, bytes]] = [
            (f"local_id:{p.local_id}", p.local_id.encode()) for p in self.roster
        ]
        needles.append(("pseudonym_key", self.pseudonym_key))
        needles.append(("pseudonym_key_hex", self.pseudonym_key.hex().encode()))
        haystacks = dict(artifacts)
        for i, packet_path in enumerate(sorted(self.capture_dir.glob("*.pkt"))):
            haystacks[f"packet:{packet_path.name}"] = packet_path.read_bytes()
        for name, blob in haystacks.items():
            for label, needle in needles:
                if needle in blob:
                    self._fail(f"privacy scan: {label} found in {name}")

    def _audit_reident(self, bundles: dict[str, dict]) -> None:
        table_path = self.workdir / "nodes" / "clinic" / "pseudonyms.csv"
        if not table_path.exists():
            self._fail("reident: clinic pseudonym table missing")
            return
        table = load_pseudonym_table(table_path)
        by_pseudonym = {e.pseudonym: e.local_id for e in table}
        expected = self._pseudonyms()
        for local_id, pseudonym in expected.items():
            if pseudonym in by_pseudonym and by_pseudonym[pseudonym] != local_id:
                self._fail(f"reident: table maps {pseudonym} to wrong local_id")
        for pseudonym, bundle in bundles.items():
            if not bundle["entry"]:
                continue
            annotated, unknown = reidentify_bundle(bundle, table)
            if pseudonym in by_pseudonym:
                if unknown:
                    self._fail(f"reident: {unknown} unknown entries for known {pseudonym}")
                want = by_pseudonym[pseudonym]
                if any(e["resource"]["subject"].get("display") != want
                       for e in annotated["entry"]):
                    self._fail(f"reident: wrong local_id recovered for {pseudonym}")

    def _audit_offline(self) -> None:
        """Direct-disk audits after services have stopped."""
        store_root = self.core_dir / "store"
        index: dict[str, str] = {}
        for event, _ in iter_journal(store_root / "events.ndjson"):
            index[event["content_hash"]] = event["payload_kind"]
        for digest in index:
            payload = (store_root / "objects" / digest[:2] / digest).read_bytes()
            if content_hash(payload) != digest:
                self._fail(f"store audit: {digest} does not re-hash")
        # conservation: every receipt stored, no phantom blocks
        missing = self.receipts - set(index)
        phantom = set(index) - self.receipts
        if missing:
            self._fail(f"conservation: {len(missing)} receipts missing from store")
        if phantom:
            self._fail(f"conservation: {len(phantom)} stored blocks without receipts")
        # exactly-once: one done run per (workflow, group); unique observation keys
        run_groups: dict[str, tuple[str, str]] = {}
        done_counts: dict[tuple[str, str], int] = {}
        observation_keys: set[tuple] = set()
        for rec, _ in iter_journal(self.core_dir / "runs.journal"):
            if rec["op"] == "created":
                key = (rec["workflow_id"], rec["group_key"])
                if key in done_counts:
                    self._fail(f"exactly-once: group created twice: {key}")
                done_counts[key] = 0
                run_groups[rec["run_id"]] = key
            if rec["op"] == "done":
                key = run_groups.get(rec["run_id"], ("?", rec["run_id"]))
                done_counts[key] = done_counts.get(key, 0) + 1
                for obs in rec["outputs"]:
                    obs_key = (obs["subject_pseudonym"], obs["code"],
                               obs["effective_time"], obs["produced_by"])
                    if obs_key in observation_keys:
                        self._fail(f"duplicate observation key: {obs_key}")
                    observation_keys.add(obs_key)
        done_twice = [k for k, n in done_counts.items() if n > 1]
        if done_twice:
            self._fail(f"exactly-once: {len(done_twice)} groups done more than once")

    # -- lifecycle -----------------------------------------------------------

    def run(self) -> ScenarioReport:
        start = time.monotonic()
        self._provision()
        try:
            self._boot()
            self._feed()
            self._quiesce()
            self._audit_http()
        finally:
            for node in self.node_procs.values():
                node.stop()
            for service in self.services:
                service.stop()
        self._audit_offline()
        self.report.wall_time_s = time.monotonic() - start
        if self.report.wall_time_s > 0:
            self.report.blocks_per_s = self.report.blocks / self.report.wall_time_s
            self.report.packets_per_s = self.report.packets / self.report.wall_time_s
        return self.report


def run_scenario(config: ScenarioConfig, workdir: str | Path) -> ScenarioReport:
    return ScenarioRunner(config, workdir).run()


def throughput_bench(patient_days: int = 1000, patients: int = 20,
                     seed: int = 1, workdir: str | Path = "bench-work") -> ScenarioReport:
    days = max(1, (patient_days + patients - 1) // patients)
    config = ScenarioConfig(seed=seed, patients=patients, days=days)
    return run_scenario(config, workdir)
