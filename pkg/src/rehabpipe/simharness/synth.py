"""Synthetic cohort and signal generation.

Everything is a pure function of (seed, patient index, day index): the same
seed always yields a byte-identical submission stream, which is what makes
differential runs under failure injection checkable. The recovery model is a
simple linear drift with bounded noise, just enough to give dashboards
distinguishable trends, with no claim of clinical realism.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from rehabpipe.dtn.prompts import week_slots
from rehabpipe.instruments import instrument_spec
from rehabpipe.model import (
    AdministratorRole,
    AssessmentRecord,
    BlockKind,
    BodyLocation,
    Instrument,
    InterventionLog,
    MS_PER_DAY,
    NodeProfile,
    Record,
    RecordContext,
    SubjectRef,
    TimeSeriesBlock,
    ValidationError,
)

# 2026-01-05T00:00:00Z, a Monday: simulated days align with ISO weeks
SIM_EPOCH_MS = 1_767_571_200_000

# deployed assessment battery: administrations per ISO week
DEFAULT_FREQUENCIES: dict[str, int] = {
    "arat": 2, "tmwt": 3, "fda": 3, "bodys": 3,
    "fss": 5, "hads": 5, "bdi2": 5, "ess": 5, "fsmc": 5,
}

# therapist-led instruments run in clinic; patient-reported ones at home
_CLINIC_INSTRUMENTS = {"arat", "tmwt", "fda", "bodys"}

_PREFERRED_HOURS = {
    "arat": 9, "tmwt": 10, "fda": 11, "bodys": 11,
    "fss": 18, "hads": 18, "bdi2": 19, "ess": 19, "fsmc": 20,
}

# scales where higher scores mean better function (drift up with recovery)
_POSITIVE_SCALES = {"arat"}


@dataclass(frozen=True)
class SyntheticPatient:
    index: int
    local_id: str
    impairment_level: float  # in [0, 1]; drives asymmetry and score drift
    recovery_rate: float     # per day

    @property
    def affected_side(self) -> BodyLocation:
        return (BodyLocation.WRIST_LEFT if self.index % 2 == 0
                else BodyLocation.WRIST_RIGHT)


@dataclass(frozen=True)
class Submission:
    """One record bound for a node profile; attachment_of links an assessment
    to the index of an earlier blob submission in the same day list."""
    profile: NodeProfile
    record: Record
    attachment_of: int | None = None


@dataclass
class ScenarioConfig:
    seed: int = 1
    patients: int = 2
    days: int = 2
    node_profiles: tuple[str, ...] = ("clinic", "home")
    assessment_frequencies: dict[str, int] = field(
        default_factory=lambda: dict(DEFAULT_FREQUENCIES))
    wear_hours_per_day: float = 8.0
    imu_rate_hz: float = 12.5
    segments_per_day: int = 1
    segment_minutes: float = 10.0
    skip_prob: float = 0.1
    packet_loss_prob: float = 0.0
    ack_loss_prob: float = 0.0
    node_crash_points: list[int] = field(default_factory=list)
    node_batch_max_blocks: int = 64
    node_batch_max_age_s: int = 0

    def __post_init__(self) -> None:
        for name in ("packet_loss_prob", "ack_loss_prob", "skip_prob"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValidationError(name, "must be a probability in [0, 1]")
        if self.imu_rate_hz <= 0 or self.segment_minutes <= 0:
            raise ValidationError("imu_rate_hz", "must be positive")

    @classmethod
    def from_json(cls, raw: dict | str | Path) -> "ScenarioConfig":
        if isinstance(raw, (str, Path)):
            raw = json.loads(Path(raw).read_text())
        known = {f for f in cls.__dataclass_fields__}
        kwargs = {k: v for k, v in raw.items() if k in known}
        if "node_profiles" in kwargs:
            kwargs["node_profiles"] = tuple(kwargs["node_profiles"])
        return cls(**kwargs)


def roster(seed: int, patients: int) -> list[SyntheticPatient]:
    out = []
    for i in range(patients):
        rng = np.random.default_rng([seed, 1, i])
        out.append(SyntheticPatient(
            index=i,
            local_id=f"mrn-{seed % 10_000:04d}-{i:04d}",
            impairment_level=float(rng.uniform(0.15, 0.9)),
            recovery_rate=float(rng.uniform(0.002, 0.02)),
        ))
    return out


def _healthy_fraction(patient: SyntheticPatient, day_index: int,
                      rng: np.random.Generator) -> float:
    drift = 1.0 - patient.impairment_level + patient.recovery_rate * day_index
    return float(np.clip(drift + rng.normal(0.0, 0.02), 0.0, 1.0))


def _item_responses(instrument: str, healthy: float,
                    rng: np.random.Generator) -> tuple[tuple[str, int], ...]:
    spec = instrument_spec(instrument)
    lo, hi = int(spec.response_min), int(spec.response_max)
    target = healthy if instrument in _POSITIVE_SCALES else 1.0 - healthy
    items = []
    for i in range(spec.item_count):
        frac = float(np.clip(target + rng.normal(0.0, 0.08), 0.0, 1.0))
        items.append((f"{instrument}_{i + 1:02d}", lo + int(round(frac * (hi - lo)))))
    return tuple(items)


def _segment_pair(patient: SyntheticPatient, start: int, context: RecordContext,
                  subject: SubjectRef, config: ScenarioConfig,
                  rng: np.random.Generator) -> tuple[TimeSeriesBlock, TimeSeriesBlock]:
    rate = config.imu_rate_hz
    n = int(round(config.segment_minutes * 60.0 * rate))
    t = np.arange(n) / rate
    bout_period = float(rng.uniform(40.0, 90.0))
    active = np.sin(2 * np.pi * t / bout_period + rng.uniform(0, 2 * np.pi)) > 0.2

    def make(location: BodyLocation, amplitude: float) -> TimeSeriesBlock:
        samples = rng.normal(0.0, 0.01, size=(n, 3))
        samples[:, 2] += 1.0
        wave = np.sign(np.sin(2 * np.pi * 2.5 * t + rng.uniform(0, 2 * np.pi)))
        samples[:, 0] += active * amplitude * wave
        return TimeSeriesBlock(
            subject=subject,
            block_kind=BlockKind.ACCEL,
            device_id=f"imu-{location.value}",
            body_location=location,
            sample_rate_hz=rate,
            start_time=start,
            channel_names=("x", "y", "z"),
            channel_units=("g", "g", "g"),
            context=context,
            samples=samples,
        )

    healthy_amp = float(rng.uniform(0.25, 0.5))
    affected_amp = healthy_amp * max(0.05, 1.0 - patient.impairment_level)
    left_amp = (affected_amp if patient.affected_side is BodyLocation.WRIST_LEFT
                else healthy_amp)
    right_amp = (affected_amp if patient.affected_side is BodyLocation.WRIST_RIGHT
                 else healthy_amp)
    return make(BodyLocation.WRIST_LEFT, left_amp), make(BodyLocation.WRIST_RIGHT, right_amp)


def generate_day(patient: SyntheticPatient, day_index: int,
                 config: ScenarioConfig) -> list[Submission]:
    """All submissions for one patient-day, deterministic from the seed."""
    rng = np.random.default_rng([config.seed, 2, patient.index, day_index])
    day_start = SIM_EPOCH_MS + day_index * MS_PER_DAY
    weekday = day_index % 7
    healthy = _healthy_fraction(patient, day_index, rng)
    subject = SubjectRef(local_id=patient.local_id)
    has_home = "home" in config.node_profiles
    profiles = [NodeProfile(p) for p in config.node_profiles]
    out: list[Submission] = []

    for instrument, per_week in sorted(config.assessment_frequencies.items()):
        hour = _PREFERRED_HOURS.get(instrument, 9)
        slot_days = {day for day, _ in week_slots(per_week, hour)}
        if weekday not in slot_days:
            continue
        if rng.random() < config.skip_prob:
            continue  # missed administration; dashboards show the gap
        at = day_start + hour * 3_600_000 + int(rng.integers(0, 1800_000))
        in_clinic = instrument in _CLINIC_INSTRUMENTS or not has_home
        profile = NodeProfile.CLINIC if in_clinic else NodeProfile.HOME
        role = (AdministratorRole.THERAPIST if in_clinic
                else AdministratorRole.PATIENT)
        if instrument == "tmwt":
            speed = 0.3 + 1.2 * healthy
            record: Record = AssessmentRecord(
                subject=subject, instrument=Instrument.TMWT,
                administered_at=at, administrator_role=role,
                free_fields={"distance_m": 10.0,
                             "duration_s": round(10.0 / speed, 3)})
            out.append(Submission(profile, record))
        elif instrument in ("fda", "bodys"):
            blob = TimeSeriesBlock(
                subject=subject, block_kind=BlockKind.AUDIO_BLOB,
                device_id="tablet-mic", body_location=BodyLocation.NONE,
                sample_rate_hz=16_000.0, start_time=at,
                channel_names=(), channel_units=(),
                context=RecordContext.CLINIC,
                blob=bytes(rng.integers(0, 256, size=int(rng.integers(2048, 6144)),
                                        dtype=np.uint8)))
            out.append(Submission(profile, blob))
            record = AssessmentRecord(
                subject=subject, instrument=Instrument(instrument),
                administered_at=at + 60_000, administrator_role=role)
            out.append(Submission(profile, record, attachment_of=len(out) - 1))
        else:
            record = AssessmentRecord(
                subject=subject, instrument=Instrument(instrument),
                administered_at=at, administrator_role=role,
                items=_item_responses(instrument, healthy, rng))
            out.append(Submission(profile, record))

    wear_start = day_start + 8 * 3_600_000
    wear_span = config.wear_hours_per_day * 3_600_000
    for s in range(config.segments_per_day):
        start = wear_start + int(s * wear_span / max(config.segments_per_day, 1))
        profile = profiles[(day_index + s) % len(profiles)]
        context = (RecordContext.CLINIC if profile is NodeProfile.CLINIC
                   else RecordContext.HOME)
        left, right = _segment_pair(patient, start, context, subject, config, rng)
        out.append(Submission(profile, left))
        out.append(Submission(profile, right))

    if weekday < 5:  # therapy on working days
        start = day_start + 13 * 3_600_000
        out.append(Submission(NodeProfile.CLINIC, InterventionLog(
            subject=subject, therapy_kind="upper_limb_robot",
            start_time=start, end_time=start + 1_800_000, device="arm-trainer",
            dose={"repetitions": float(int(60 + 80 * healthy)),
                  "duration_min": 30.0})))
    return out
