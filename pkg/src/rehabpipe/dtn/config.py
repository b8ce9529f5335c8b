"""Node configuration; one binary serves both clinic and home profiles."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from rehabpipe.model import Instrument, NodeProfile, ValidationError


@dataclass(frozen=True)
class PromptRule:
    instrument: Instrument
    per_week: int
    preferred_hour: int


@dataclass
class NodeConfig:
    node_id: str
    profile: NodeProfile
    landing_zone_address: str
    batch_max_blocks: int = 64
    batch_max_age_s: int = 300
    retry_backoff_base_s: float = 2.0
    retry_max_attempts_per_cycle: int = 8
    prompt_schedule: list[PromptRule] = field(default_factory=list)
    listen_port: int = 0
    keyring_path: str | None = None
    cis_drop_dir: str | None = None
    # failure-injection knobs, used only by the simulation harness
    chaos_packet_loss: float = 0.0
    chaos_ack_loss: float = 0.0
    chaos_seed: int = 0

    def __post_init__(self) -> None:
        if not self.node_id:
            raise ValidationError("node_id", "must be non-empty")
        if self.batch_max_blocks < 1:
            raise ValidationError("batch_max_blocks", "must be >= 1")
        if self.batch_max_age_s < 0:
            raise ValidationError("batch_max_age_s", "must be >= 0")
        if self.retry_backoff_base_s <= 0:
            raise ValidationError("retry_backoff_base_s", "must be > 0")
        for rule in self.prompt_schedule:
            if not 1 <= rule.per_week <= 21:
                raise ValidationError("prompt_schedule.per_week", "must be in 1..21")
            if not 0 <= rule.preferred_hour <= 23:
                raise ValidationError("prompt_schedule.preferred_hour", "must be in 0..23")
        for name in ("chaos_packet_loss", "chaos_ack_loss"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValidationError(name, "must be a probability in [0, 1]")

    @classmethod
    def from_json(cls, raw: dict | str | Path) -> "NodeConfig":
        if isinstance(raw, (str, Path)):
            raw = json.loads(Path(raw).read_text())
        chaos = raw.get("chaos", {})
        return cls(
            node_id=raw["node_id"],
            profile=NodeProfile(raw.get("profile", "clinic")),
            landing_zone_address=raw["landing_zone_address"],
            batch_max_blocks=int(raw.get("batch_max_blocks", 64)),
            batch_max_age_s=int(raw.get("batch_max_age_s", 300)),
            retry_backoff_base_s=float(raw.get("retry_backoff_base_s", 2.0)),
            retry_max_attempts_per_cycle=int(raw.get("retry_max_attempts_per_cycle", 8)),
            prompt_schedule=[
                PromptRule(
                    instrument=Instrument(rule["instrument"]),
                    per_week=int(rule["per_week"]),
                    preferred_hour=int(rule["preferred_hour"]),
                )
                for rule in raw.get("prompt_schedule", [])
            ],
            listen_port=int(raw.get("listen_port", 0)),
            keyring_path=raw.get("keyring_path"),
            cis_drop_dir=raw.get("cis_drop_dir"),
            chaos_packet_loss=float(chaos.get("packet_loss_prob", 0.0)),
            chaos_ack_loss=float(chaos.get("ack_loss_prob", 0.0)),
            chaos_seed=int(chaos.get("seed", 0)),
        )
