"""In-process pipeline over real on-disk state, for fault-injection runs.

Every component (nodes, landing zone, orchestrator) is the production code
operating on its real journals; only process boundaries are collapsed, so a
"crash" is: drop the component's objects mid-operation via an armed chaos
point, then rebuild them from disk. Transports inject duplicate deliveries
and ack loss. Randomized schedules built on this must converge to the
fault-free end state; that is the pipeline's exactly-once contract.
"""

from __future__ import annotations

import random
from dataclasses import replace
from pathlib import Path

from rehabpipe import chaos
from rehabpipe.analytics import builtin_services
from rehabpipe.chaos import CrashInjected
from rehabpipe.dtn import DataTransferNode, NodeConfig
from rehabpipe.httpd import TransportError
from rehabpipe.landingzone import LandingZone, ObjectStore
from rehabpipe.model import NodeProfile
from rehabpipe.orchestrator import (
    DirectBlockSource,
    Orchestrator,
    RunLedger,
    RunState,
    default_descriptors,
)
from rehabpipe.privacy import ClinicKeyring
from rehabpipe.simharness.synth import (
    SIM_EPOCH_MS,
    ScenarioConfig,
    generate_day,
    roster,
)

# chaos points a schedule may arm, by owning component
NODE_CRASH_POINTS = ("dtn.pack.pre_commit", "dtn.pack.post_commit",
                     "dtn.ack.pre_commit")
CORE_CRASH_POINTS = ("lz.after_decrypt", "lz.mid_store", "lz.before_packet_mark",
                     "orch.after_create", "orch.before_done")


def clinic_pseudonym_key(seed: int) -> bytes:
    """One pseudonym key per clinic: every node derives matching pseudonyms."""
    return random.Random(f"{seed}:pseudonym").randbytes(32)


def node_keyring(seed: int, node_id: str) -> ClinicKeyring:
    """Per-node keyring: the transport key is unique to (node, landing zone)."""
    return ClinicKeyring(
        pseudonym_key=clinic_pseudonym_key(seed),
        transport_key=random.Random(f"{seed}:{node_id}:transport").randbytes(32))


class SimClock:
    def __init__(self, start: int = SIM_EPOCH_MS) -> None:
        self.now = start

    def __call__(self) -> int:
        return self.now

    def advance(self, ms: int) -> None:
        self.now += ms


class LossyTransport:
    """Direct in-process delivery with seeded loss/duplication injection."""

    def __init__(self, pipeline: "LocalPipeline", node_id: str,
                 rng: random.Random, packet_loss: float = 0.0,
                 ack_loss: float = 0.0, duplicate_prob: float = 0.0) -> None:
        self.pipeline = pipeline
        self.node_id = node_id
        self.rng = rng
        self.packet_loss = packet_loss
        self.ack_loss = ack_loss
        self.duplicate_prob = duplicate_prob

    def send(self, packet: bytes) -> dict:
        if self.rng.random() < self.packet_loss:
            raise TransportError("injected: packet lost")
        ack = self.pipeline.zone.receive(packet, self.node_id)
        if ack.status == "rejected":
            raise TransportError(ack.reason)
        if self.rng.random() < self.duplicate_prob:
            self.pipeline.zone.receive(packet, self.node_id)  # duplicate delivery
        if self.rng.random() < self.ack_loss:
            raise TransportError("injected: ack lost")
        return ack.to_json()


class LocalPipeline:
    def __init__(self, root: str | Path, config: ScenarioConfig,
                 duplicate_prob: float = 0.0, fault_seed: int = 0,
                 orch_retry_backoff_ms: int = 10) -> None:
        self.root = Path(root)
        self.config = config
        self.clock = SimClock()
        self.pseudonym_key = clinic_pseudonym_key(config.seed)
        self.profiles = [NodeProfile(p) for p in config.node_profiles]
        self.orch_retry_backoff_ms = orch_retry_backoff_ms
        self._fault_rng = random.Random(fault_seed)
        self._duplicate_prob = duplicate_prob
        self.crashes = 0
        self._build_core()
        self.nodes: dict[NodeProfile, DataTransferNode] = {}
        for profile in self.profiles:
            self._build_node(profile)

    # -- construction / crash-rebuild -------------------------------------

    def _node_keys(self) -> dict[str, bytes]:
        return {
            f"dtn-{p.value}":
                node_keyring(self.config.seed, f"dtn-{p.value}").transport_key
            for p in self.profiles
        }

    def _build_core(self) -> None:
        self.store = ObjectStore(self.root / "core" / "store")
        self.zone = LandingZone(self.store, self._node_keys(), clock=self.clock)
        self.ledger = RunLedger(self.root / "core" / "runs.journal")
        self.orch = Orchestrator(
            descriptors=default_descriptors(),
            services=builtin_services(),
            ledger=self.ledger,
            events_path=self.store.events_path,
            block_source=DirectBlockSource(self.store),
            retry_backoff_ms=self.orch_retry_backoff_ms,
            clock=self.clock,
        )

    def _build_node(self, profile: NodeProfile) -> None:
        node_id = f"dtn-{profile.value}"
        config = NodeConfig(
            node_id=node_id, profile=profile, landing_zone_address="in-process",
            batch_max_blocks=self.config.node_batch_max_blocks,
            batch_max_age_s=self.config.node_batch_max_age_s,
            retry_backoff_base_s=0.001,
        )
        transport = LossyTransport(
            self, node_id, self._fault_rng,
            packet_loss=self.config.packet_loss_prob,
            ack_loss=self.config.ack_loss_prob,
            duplicate_prob=self._duplicate_prob,
        )
        self.nodes[profile] = DataTransferNode(
            config, self.root / "nodes" / profile.value,
            node_keyring(self.config.seed, node_id), transport,
            clock=self.clock)

    def crash_core(self) -> None:
        self.store.close()
        self.ledger.close()
        self.orch.close()
        self._build_core()
        self.crashes += 1

    def crash_node(self, profile: NodeProfile) -> None:
        self.nodes[profile].close()
        self._build_node(profile)
        self.crashes += 1

    def _recover_core(self) -> None:
        # the fired point disarmed itself; other armed points stay live
        self.crash_core()

    # -- feeding -----------------------------------------------------------

    def node_for(self, profile: NodeProfile) -> DataTransferNode:
        return self.nodes.get(profile) or self.nodes[self.profiles[0]]

    def submissions(self) -> list:
        subs = []
        for patient in roster(self.config.seed, self.config.patients):
            for day in range(self.config.days):
                subs.append((patient, day, generate_day(patient, day, self.config)))
        return subs

    def submit_day(self, day_submissions: list) -> list[str]:
        receipts: list[str] = []
        for sub in day_submissions:
            record = sub.record
            if sub.attachment_of is not None:
                record = replace(record, attachments=(receipts[sub.attachment_of],))
            receipt = self.node_for(sub.profile).ingest(record)
            receipts.append(receipt["content_hash"])
        return receipts

    def feed_all(self) -> list[str]:
        receipts = []
        for _, _, day_subs in self.submissions():
            receipts.extend(self.submit_day(day_subs))
        return receipts

    # -- pumping -------------------------------------------------------------

    def pump_once(self) -> None:
        """One best-effort round: package + transmit per node, then a tick.

        Injected crashes are recovered by rebuilding the crashed component
        from disk, exactly as a process restart would.
        """
        for profile in self.profiles:
            try:
                node = self.nodes[profile]
                node.drain_queue(force=True)
                node.transmit_cycle()
            except CrashInjected as exc:
                if str(exc).startswith("dtn."):
                    self.crash_node(profile)
                else:  # fired inside the landing zone during delivery
                    self._recover_core()
        self.clock.advance(1_000)
        try:
            self.orch.tick()
        except CrashInjected:
            self._recover_core()

    def settle(self, max_rounds: int = 500) -> None:
        """Pump until fully quiescent; chaos must be disarmed by then."""
        for _ in range(max_rounds):
            self.pump_once()
            if (all(n.store.queue_depth() == 0 and n.store.outbox_depth() == 0
                    for n in self.nodes.values())
                    and self.orch.quiescent()
                    and not self.ledger.runs(state=RunState.PENDING)):
                return
        raise RuntimeError("pipeline did not quiesce")

    # -- state comparison -----------------------------------------------------

    def final_state(self) -> dict:
        """Order-insensitive end state for differential (fault vs fault-free) runs."""
        store_state = sorted(
            (e.content_hash, e.payload_kind, e.pseudonym)
            for e in self.store.list_blocks())
        done = sorted(
            (r.workflow_id, r.group_key, tuple(sorted(r.input_hashes)))
            for r in self.ledger.runs(state=RunState.DONE))
        observations = sorted(
            (o.subject_pseudonym, o.code, o.effective_time, o.produced_by,
             o.value, o.unit, tuple(sorted(o.derived_from)))
            for o in self.ledger.observations())
        return {"store": store_state, "done": done, "observations": observations}

    def close(self) -> None:
        for node in self.nodes.values():
            node.close()
        self.store.close()
        self.ledger.close()
        self.orch.close()


def run_fault_schedule(root: Path, config: ScenarioConfig, fault_seed: int,
                       min_crashes: int = 3) -> dict:
    """Feed with duplicates + ack loss + >= min_crashes injected crash points."""
    rng = random.Random(fault_seed)
    pipeline = LocalPipeline(
        root, config, duplicate_prob=0.3, fault_seed=fault_seed)
    crash_points = list(NODE_CRASH_POINTS + CORE_CRASH_POINTS)
    batches = pipeline.submissions()
    if not batches:
        raise ValueError("fault schedules need at least one patient-day")
    armed = 0
    try:
        for i, (_, _, day_subs) in enumerate(batches):
            pipeline.submit_day(day_subs)
            # a freshly fed batch guarantees packaging/receive/tick work, so
            # points armed now are reached during this or a later pump; with
            # few batches, several distinct points arm at once
            want = -(-min_crashes * (i + 1) // len(batches))  # ceil
            if want > armed:
                for name in rng.sample(crash_points, want - armed):
                    chaos.arm(name)
                armed = want
            pipeline.pump_once()
            if rng.random() < 0.5:
                pipeline.pump_once()
        pipeline.settle()
        if pipeline.crashes < min_crashes:
            raise RuntimeError(
                f"only {pipeline.crashes} of {min_crashes} crash points fired")
        state = pipeline.final_state()
        state["crashes"] = pipeline.crashes
        return state
    finally:
        chaos.reset()
        pipeline.close()


def run_fault_free(root: Path, config: ScenarioConfig) -> dict:
    pipeline = LocalPipeline(root, config)
    try:
        pipeline.feed_all()
        pipeline.settle()
        return pipeline.final_state()
    finally:
        pipeline.close()
