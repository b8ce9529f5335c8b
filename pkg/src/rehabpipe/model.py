"""Shared domain types, canonical serialization, content hashing, and validation.

Every artifact that crosses a process boundary (queue entries, packet
manifests, stored blocks) is the canonical encoding defined here: UTF-8 JSON
with lexicographically sorted keys, no insignificant whitespace, reals as
shortest round-trip decimals, and sample matrices as base64 of little-endian
64-bit reals. Content hashes are SHA-256 over those bytes, so they agree
between nodes and the compute core.
"""

from __future__ import annotations

import base64
import hashlib
import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from typing import Any

import numpy as np

from rehabpipe.instruments import instrument_spec

SCHEMA_VERSION = 1
HASH_HEX_LEN = 64
PSEUDONYM_HEX_LEN = 32
MS_PER_DAY = 86_400_000
MS_PER_WEEK = 7 * MS_PER_DAY

_HEX_DIGITS = set("0123456789abcdef")


class ValidationError(ValueError):
    """A record violates a type invariant; ``field`` names the first offender."""

    def __init__(self, field_path: str, message: str = "") -> None:
        self.field = field_path
        super().__init__(f"{field_path}: {message}" if message else field_path)


class BlockKind(str, Enum):
    ACCEL = "accel"
    GYRO = "gyro"
    AUDIO_BLOB = "audio_blob"
    TABLET_EVENTS = "tablet_events"


class BodyLocation(str, Enum):
    WRIST_LEFT = "wrist_left"
    WRIST_RIGHT = "wrist_right"
    TRUNK = "trunk"
    NONE = "none"


class RecordContext(str, Enum):
    CLINIC = "clinic"
    HOME = "home"
    THERAPY = "therapy"


class PayloadKind(str, Enum):
    TIMESERIES = "timeseries"
    ASSESSMENT = "assessment"
    INTERVENTION = "intervention"


class Instrument(str, Enum):
    ARAT = "arat"
    PAM_ACTIVITY = "pam_activity"
    PAM_ARMUSE = "pam_armuse"
    FDA = "fda"
    BODYS = "bodys"
    TMWT = "tmwt"
    FSS = "fss"
    HADS = "hads"
    BDI2 = "bdi2"
    ESS = "ess"
    FSMC = "fsmc"


class AdministratorRole(str, Enum):
    THERAPIST = "therapist"
    PATIENT = "patient"
    SYSTEM = "system"


class NodeProfile(str, Enum):
    CLINIC = "clinic"
    HOME = "home"


@dataclass(frozen=True)
class SubjectRef:
    """Subject identity; ``local_id`` must never leave the node it entered."""

    local_id: str | None = None
    pseudonym: str | None = None


@dataclass(eq=False)
class TimeSeriesBlock:
    """One wearable sensor stream segment; atomic, never split or streamed."""

    subject: SubjectRef
    block_kind: BlockKind
    device_id: str
    body_location: BodyLocation
    sample_rate_hz: float
    start_time: int
    channel_names: tuple[str, ...]
    channel_units: tuple[str, ...]
    context: RecordContext
    samples: np.ndarray | None = None
    blob: bytes | None = None

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TimeSeriesBlock):
            return NotImplemented
        if (self.subject, self.block_kind, self.device_id, self.body_location,
                self.sample_rate_hz, self.start_time, self.channel_names,
                self.channel_units, self.context, self.blob) != (
                other.subject, other.block_kind, other.device_id, other.body_location,
                other.sample_rate_hz, other.start_time, other.channel_names,
                other.channel_units, other.context, other.blob):
            return False
        if self.samples is None or other.samples is None:
            return self.samples is None and other.samples is None
        return self.samples.shape == other.samples.shape and bool(
            np.array_equal(self.samples, other.samples))

    @property
    def n_samples(self) -> int:
        return 0 if self.samples is None else int(self.samples.shape[0])

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.sample_rate_hz

    @property
    def end_time(self) -> int:
        return self.start_time + int(round(self.duration_s * 1000.0))

    @property
    def payload_byte_length(self) -> int:
        if self.blob is not None:
            return len(self.blob)
        return 0 if self.samples is None else int(self.samples.nbytes)


@dataclass(frozen=True)
class AssessmentRecord:
    """One administration of a clinical instrument."""

    subject: SubjectRef
    instrument: Instrument
    administered_at: int
    administrator_role: AdministratorRole
    items: tuple[tuple[str, float], ...] = ()
    attachments: tuple[str, ...] = ()
    free_fields: dict[str, float] = field(default_factory=dict)

    def __hash__(self) -> int:  # free_fields is a dict; hash on the rest
        return hash((self.subject, self.instrument, self.administered_at))


@dataclass(frozen=True)
class InterventionLog:
    subject: SubjectRef
    therapy_kind: str
    start_time: int
    end_time: int
    device: str | None = None
    dose: dict[str, float] = field(default_factory=dict)

    def __hash__(self) -> int:
        return hash((self.subject, self.therapy_kind, self.start_time, self.end_time))


@dataclass(frozen=True)
class BlockDescriptor:
    content_hash: str
    payload_kind: PayloadKind
    byte_offset: int
    byte_length_ciphertext: int


@dataclass(frozen=True)
class PacketManifest:
    packet_id: str
    origin_node: str
    node_profile: NodeProfile
    created_at: int
    pseudonym: str
    blocks: tuple[BlockDescriptor, ...]
    schema_version: int = SCHEMA_VERSION


@dataclass(frozen=True)
class Observation:
    """A derived clinical metric keyed by pseudonym, ready for export."""

    code: str
    subject_pseudonym: str
    effective_time: int
    value: float
    unit: str
    derived_from: tuple[str, ...]
    produced_by: str

    def key(self) -> tuple[str, str, int, str]:
        """Uniqueness key within any export set."""
        return (self.subject_pseudonym, self.code, self.effective_time, self.produced_by)


Record = TimeSeriesBlock | AssessmentRecord | InterventionLog | PacketManifest


# --------------------------------------------------------------------------
# Validation
# --------------------------------------------------------------------------

def is_hex(value: Any, length: int) -> bool:
    return (isinstance(value, str) and len(value) == length
            and all(c in _HEX_DIGITS for c in value))


def _finite_real(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool) \
        and math.isfinite(value)


def _check_subject(subject: Any) -> ValidationError | None:
    if not isinstance(subject, SubjectRef):
        return ValidationError("subject", "missing or wrong type")
    if subject.local_id is None and subject.pseudonym is None:
        return ValidationError("subject", "needs local_id or pseudonym")
    if subject.local_id is not None and not subject.local_id:
        return ValidationError("subject.local_id", "must be non-empty when present")
    if subject.pseudonym is not None and not is_hex(subject.pseudonym, PSEUDONYM_HEX_LEN):
        return ValidationError("subject.pseudonym", "must be 32 lowercase hex chars")
    return None


def _validate_timeseries(block: TimeSeriesBlock) -> ValidationError | None:
    err = _check_subject(block.subject)
    if err:
        return err
    if not isinstance(block.block_kind, BlockKind):
        return ValidationError("block_kind", f"unknown kind {block.block_kind!r}")
    if not isinstance(block.body_location, BodyLocation):
        return ValidationError("body_location", f"unknown location {block.body_location!r}")
    if not isinstance(block.context, RecordContext):
        return ValidationError("context", f"unknown context {block.context!r}")
    if not block.device_id:
        return ValidationError("device_id", "must be non-empty")
    if not _finite_real(block.sample_rate_hz) or block.sample_rate_hz <= 0:
        return ValidationError("sample_rate_hz", "must be a positive real")
    if not isinstance(block.start_time, int) or block.start_time <= 0:
        return ValidationError("start_time", "must be positive UTC ms")
    if len(block.channel_names) != len(block.channel_units):
        return ValidationError("channel_units", "length must match channel_names")
    if block.block_kind is BlockKind.AUDIO_BLOB:
        if block.blob is None:
            return ValidationError("blob", "audio_blob carries raw bytes")
        if block.samples is not None:
            return ValidationError("samples", "audio_blob must not carry a sample matrix")
        return None
    if block.blob is not None:
        return ValidationError("blob", f"{block.block_kind.value} must not carry raw bytes")
    s = block.samples
    if s is None or not isinstance(s, np.ndarray) or s.ndim != 2:
        return ValidationError("samples", "must be a 2-D row-major matrix")
    if s.shape[0] < 1:
        return ValidationError("samples", "must contain at least one row")
    if s.shape[1] != len(block.channel_names) or s.shape[1] < 1:
        return ValidationError("channel_names", "column count must match channel_names")
    if not np.isfinite(s).all():
        return ValidationError("samples", "must be finite (no NaN/Inf)")
    return None


def _validate_assessment(rec: AssessmentRecord) -> ValidationError | None:
    err = _check_subject(rec.subject)
    if err:
        return err
    if not isinstance(rec.instrument, Instrument):
        return ValidationError("instrument", f"unknown instrument {rec.instrument!r}")
    if not isinstance(rec.administered_at, int) or rec.administered_at <= 0:
        return ValidationError("administered_at", "must be positive UTC ms")
    if not isinstance(rec.administrator_role, AdministratorRole):
        return ValidationError("administrator_role", f"unknown role {rec.administrator_role!r}")
    for i, item in enumerate(rec.items):
        if len(item) != 2 or not isinstance(item[0], str) or not item[0]:
            return ValidationError(f"items[{i}]", "must be (item_id, response)")
        if not _finite_real(item[1]):
            return ValidationError(f"items[{i}].response", "must be a finite real")
    spec = instrument_spec(rec.instrument.value)
    if spec is not None:
        if len(rec.items) != spec.item_count:
            return ValidationError(
                "items", f"{rec.instrument.value} requires {spec.item_count} items, "
                f"got {len(rec.items)}")
        for i, (_, resp) in enumerate(rec.items):
            if spec.integer_items and resp != int(resp):
                return ValidationError(f"items[{i}].response", "must be an integer")
            if not spec.response_min <= resp <= spec.response_max:
                return ValidationError(
                    f"items[{i}].response",
                    f"out of range [{spec.response_min}, {spec.response_max}]")
    for i, h in enumerate(rec.attachments):
        if not is_hex(h, HASH_HEX_LEN):
            return ValidationError(f"attachments[{i}]", "must be a 64-hex content hash")
    for key, value in rec.free_fields.items():
        if not isinstance(key, str) or not key:
            return ValidationError("free_fields", "keys must be non-empty strings")
        if not _finite_real(value):
            return ValidationError(f"free_fields.{key}", "must be a finite real")
    return None


def _validate_intervention(rec: InterventionLog) -> ValidationError | None:
    err = _check_subject(rec.subject)
    if err:
        return err
    if not rec.therapy_kind:
        return ValidationError("therapy_kind", "must be non-empty")
    if not isinstance(rec.start_time, int) or rec.start_time <= 0:
        return ValidationError("start_time", "must be positive UTC ms")
    if not isinstance(rec.end_time, int) or rec.end_time < rec.start_time:
        return ValidationError("end_time", "must be >= start_time")
    for key, value in rec.dose.items():
        if not _finite_real(value):
            return ValidationError(f"dose.{key}", "must be a finite real")
    return None


def _validate_manifest(m: PacketManifest) -> ValidationError | None:
    if not is_hex(m.packet_id, 32):
        return ValidationError("packet_id", "must be 32 hex chars (128-bit)")
    if not m.origin_node:
        return ValidationError("origin_node", "must be non-empty")
    if not isinstance(m.node_profile, NodeProfile):
        return ValidationError("node_profile", f"unknown profile {m.node_profile!r}")
    if not isinstance(m.created_at, int) or m.created_at <= 0:
        return ValidationError("created_at", "must be positive UTC ms")
    if m.schema_version != SCHEMA_VERSION:
        return ValidationError("schema_version", f"must be {SCHEMA_VERSION}")
    if not is_hex(m.pseudonym, PSEUDONYM_HEX_LEN):
        return ValidationError("pseudonym", "must be 32 lowercase hex chars")
    if not m.blocks:
        return ValidationError("blocks", "must be non-empty")
    seen_hashes: set[str] = set()
    prev_end = -1
    for i, d in enumerate(m.blocks):
        if not is_hex(d.content_hash, HASH_HEX_LEN):
            return ValidationError(f"blocks[{i}].content_hash", "must be 64 hex chars")
        if d.content_hash in seen_hashes:
            return ValidationError(f"blocks[{i}].content_hash", "duplicate within manifest")
        seen_hashes.add(d.content_hash)
        if not isinstance(d.payload_kind, PayloadKind):
            return ValidationError(f"blocks[{i}].payload_kind", "unknown payload kind")
        if d.byte_offset < 0 or d.byte_length_ciphertext < 0:
            return ValidationError(f"blocks[{i}].byte_offset", "must be non-negative")
        if d.byte_offset <= prev_end:
            return ValidationError(f"blocks[{i}].byte_offset", "offsets must ascend without overlap")
        prev_end = d.byte_offset + d.byte_length_ciphertext - 1
    return None


def validate(record: Record) -> ValidationError | None:
    """Return the first violated invariant, or None when all hold."""
    if isinstance(record, TimeSeriesBlock):
        return _validate_timeseries(record)
    if isinstance(record, AssessmentRecord):
        return _validate_assessment(record)
    if isinstance(record, InterventionLog):
        return _validate_intervention(record)
    if isinstance(record, PacketManifest):
        return _validate_manifest(record)
    return ValidationError("record", f"unsupported record type {type(record).__name__}")


def validate_observation(obs: Observation) -> ValidationError | None:
    if not obs.code:
        return ValidationError("code", "must be non-empty")
    if not is_hex(obs.subject_pseudonym, PSEUDONYM_HEX_LEN):
        return ValidationError("subject_pseudonym", "must be 32 lowercase hex chars")
    if not isinstance(obs.effective_time, int) or obs.effective_time <= 0:
        return ValidationError("effective_time", "must be positive UTC ms")
    if not _finite_real(obs.value):
        return ValidationError("value", "must be a finite real")
    if not obs.derived_from:
        return ValidationError("derived_from", "must be non-empty")
    for i, h in enumerate(obs.derived_from):
        if not is_hex(h, HASH_HEX_LEN):
            return ValidationError(f"derived_from[{i}]", "must be a 64-hex content hash")
    if not obs.produced_by:
        return ValidationError("produced_by", "must be non-empty")
    return None


def ensure_valid(record: Record) -> None:
    err = validate(record)
    if err is not None:
        raise err


# --------------------------------------------------------------------------
# Canonical serialization
# --------------------------------------------------------------------------

def _subject_obj(subject: SubjectRef) -> dict[str, str]:
    obj: dict[str, str] = {}
    if subject.local_id is not None:
        obj["local_id"] = subject.local_id
    if subject.pseudonym is not None:
        obj["pseudonym"] = subject.pseudonym
    return obj


def _num(value: float) -> float | int:
    """Coerce numpy scalars so json renders shortest-round-trip decimals."""
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return int(value)
    return float(value)


def _record_obj(record: Record) -> dict[str, Any]:
    if isinstance(record, TimeSeriesBlock):
        obj: dict[str, Any] = {
            "kind": "timeseries",
            "subject": _subject_obj(record.subject),
            "block_kind": record.block_kind.value,
            "device_id": record.device_id,
            "body_location": record.body_location.value,
            "sample_rate_hz": _num(record.sample_rate_hz),
            "start_time": int(record.start_time),
            "channel_names": list(record.channel_names),
            "channel_units": list(record.channel_units),
            "context": record.context.value,
        }
        if record.blob is not None:
            obj["blob_b64"] = base64.b64encode(record.blob).decode("ascii")
        else:
            payload = np.ascontiguousarray(record.samples, dtype="<f8").tobytes()
            obj["samples_b64"] = base64.b64encode(payload).decode("ascii")
        return obj
    if isinstance(record, AssessmentRecord):
        return {
            "kind": "assessment",
            "subject": _subject_obj(record.subject),
            "instrument": record.instrument.value,
            "administered_at": int(record.administered_at),
            "administrator_role": record.administrator_role.value,
            "items": [[item_id, _num(resp)] for item_id, resp in record.items],
            "attachments": list(record.attachments),
            "free_fields": {k: _num(v) for k, v in record.free_fields.items()},
        }
    if isinstance(record, InterventionLog):
        obj = {
            "kind": "intervention",
            "subject": _subject_obj(record.subject),
            "therapy_kind": record.therapy_kind,
            "start_time": int(record.start_time),
            "end_time": int(record.end_time),
            "dose": {k: _num(v) for k, v in record.dose.items()},
        }
        if record.device is not None:
            obj["device"] = record.device
        return obj
    if isinstance(record, PacketManifest):
        return {
            "kind": "manifest",
            "packet_id": record.packet_id,
            "origin_node": record.origin_node,
            "node_profile": record.node_profile.value,
            "created_at": int(record.created_at),
            "schema_version": int(record.schema_version),
            "pseudonym": record.pseudonym,
            "blocks": [
                {
                    "content_hash": d.content_hash,
                    "payload_kind": d.payload_kind.value,
                    "byte_offset": int(d.byte_offset),
                    "byte_length_ciphertext": int(d.byte_length_ciphertext),
                }
                for d in record.blocks
            ],
        }
    raise ValidationError("record", f"unsupported record type {type(record).__name__}")


def canonical_bytes(record: Record) -> bytes:
    """Deterministic byte encoding; identical logical records yield identical bytes."""
    ensure_valid(record)
    return json.dumps(
        _record_obj(record), sort_keys=True, separators=(",", ":"),
        ensure_ascii=False, allow_nan=False,
    ).encode("utf-8")


def _decode_subject(obj: Any) -> SubjectRef:
    if not isinstance(obj, dict):
        raise ValidationError("subject", "must be an object")
    return SubjectRef(local_id=obj.get("local_id"), pseudonym=obj.get("pseudonym"))


def _enum(cls: type, value: Any, field_path: str) -> Any:
    try:
        return cls(value)
    except (ValueError, KeyError):
        raise ValidationError(field_path, f"unknown value {value!r}") from None


def decode_record(data: bytes | str | dict[str, Any]) -> Record:
    """Decode a canonical (or submission) JSON record; inverse of canonical_bytes."""
    if isinstance(data, (bytes, str)):
        try:
            obj = json.loads(data)
        except json.JSONDecodeError as exc:
            raise ValidationError("json", str(exc)) from None
    else:
        obj = data
    if not isinstance(obj, dict):
        raise ValidationError("json", "record must be a JSON object")
    kind = obj.get("kind")
    try:
        record = _decode_by_kind(kind, obj)
    except ValidationError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError("json", f"malformed {kind!r} record: {exc}") from None
    ensure_valid(record)
    return record


def _decode_by_kind(kind: Any, obj: dict[str, Any]) -> Record:
    if kind == "timeseries":
        channel_names = tuple(obj["channel_names"])
        samples = None
        blob = None
        if "blob_b64" in obj:
            blob = base64.b64decode(obj["blob_b64"])
        else:
            raw = base64.b64decode(obj["samples_b64"])
            cols = len(channel_names)
            if cols < 1 or len(raw) % (8 * cols) != 0:
                raise ValidationError("samples_b64", "length must be a multiple of 8*channels")
            samples = np.frombuffer(raw, dtype="<f8").reshape(-1, cols).astype(float)
        return TimeSeriesBlock(
            subject=_decode_subject(obj["subject"]),
            block_kind=_enum(BlockKind, obj["block_kind"], "block_kind"),
            device_id=obj["device_id"],
            body_location=_enum(BodyLocation, obj["body_location"], "body_location"),
            sample_rate_hz=float(obj["sample_rate_hz"]),
            start_time=int(obj["start_time"]),
            channel_names=channel_names,
            channel_units=tuple(obj["channel_units"]),
            context=_enum(RecordContext, obj["context"], "context"),
            samples=samples,
            blob=blob,
        )
    if kind == "assessment":
        return AssessmentRecord(
            subject=_decode_subject(obj["subject"]),
            instrument=_enum(Instrument, obj["instrument"], "instrument"),
            administered_at=int(obj["administered_at"]),
            administrator_role=_enum(AdministratorRole, obj["administrator_role"],
                                     "administrator_role"),
            items=tuple((item[0], item[1]) for item in obj.get("items", [])),
            attachments=tuple(obj.get("attachments", [])),
            free_fields=dict(obj.get("free_fields", {})),
        )
    if kind == "intervention":
        return InterventionLog(
            subject=_decode_subject(obj["subject"]),
            therapy_kind=obj["therapy_kind"],
            start_time=int(obj["start_time"]),
            end_time=int(obj["end_time"]),
            device=obj.get("device"),
            dose=dict(obj.get("dose", {})),
        )
    if kind == "manifest":
        return PacketManifest(
            packet_id=obj["packet_id"],
            origin_node=obj["origin_node"],
            node_profile=_enum(NodeProfile, obj["node_profile"], "node_profile"),
            created_at=int(obj["created_at"]),
            schema_version=int(obj["schema_version"]),
            pseudonym=obj["pseudonym"],
            blocks=tuple(
                BlockDescriptor(
                    content_hash=d["content_hash"],
                    payload_kind=_enum(PayloadKind, d["payload_kind"],
                                       f"blocks[{i}].payload_kind"),
                    byte_offset=int(d["byte_offset"]),
                    byte_length_ciphertext=int(d["byte_length_ciphertext"]),
                )
                for i, d in enumerate(obj["blocks"])
            ),
        )
    raise ValidationError("kind", f"unknown record kind {kind!r}")


def observation_to_json(obs: Observation) -> dict[str, Any]:
    return {
        "code": obs.code,
        "subject_pseudonym": obs.subject_pseudonym,
        "effective_time": obs.effective_time,
        "value": obs.value,
        "unit": obs.unit,
        "derived_from": list(obs.derived_from),
        "produced_by": obs.produced_by,
    }


def observation_from_json(raw: dict[str, Any]) -> Observation:
    return Observation(
        code=raw["code"],
        subject_pseudonym=raw["subject_pseudonym"],
        effective_time=int(raw["effective_time"]),
        value=raw["value"],
        unit=raw["unit"],
        derived_from=tuple(raw["derived_from"]),
        produced_by=raw["produced_by"],
    )


def payload_kind_of(record: Record) -> PayloadKind:
    if isinstance(record, TimeSeriesBlock):
        return PayloadKind.TIMESERIES
    if isinstance(record, AssessmentRecord):
        return PayloadKind.ASSESSMENT
    if isinstance(record, InterventionLog):
        return PayloadKind.INTERVENTION
    raise ValidationError("record", f"{type(record).__name__} is not a packetable payload")


# --------------------------------------------------------------------------
# Content hashing
# --------------------------------------------------------------------------

def content_hash(data: bytes) -> str:
    """SHA-256 digest as 64 lowercase hex chars."""
    return hashlib.sha256(data).hexdigest()


def record_hash(record: Record) -> str:
    return content_hash(canonical_bytes(record))


# --------------------------------------------------------------------------
# Time helpers (all timestamps are integer UTC milliseconds)
# --------------------------------------------------------------------------

def utc_ms(dt: datetime) -> int:
    return int(dt.astimezone(timezone.utc).timestamp() * 1000)


def rfc3339_utc(ms: int) -> str:
    dt = datetime.fromtimestamp(ms // 1000, tz=timezone.utc)
    return dt.strftime("%Y-%m-%dT%H:%M:%S") + f".{ms % 1000:03d}Z"


def day_index(ms: int) -> int:
    return ms // MS_PER_DAY


def iso_week_key(ms: int) -> tuple[int, int]:
    """(ISO year, ISO week) of a timestamp."""
    dt = datetime.fromtimestamp(ms / 1000, tz=timezone.utc)
    iso = dt.isocalendar()
    return (iso[0], iso[1])


def iso_week_start_ms(ms: int) -> int:
    """UTC ms of Monday 00:00 of the ISO week containing ``ms``."""
    day = ms // MS_PER_DAY
    dt = datetime.fromtimestamp(day * 86_400, tz=timezone.utc)
    monday = day - (dt.isoweekday() - 1)
    return monday * MS_PER_DAY
