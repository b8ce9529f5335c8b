"""Pseudonymization, identifier scrubbing, and authenticated packet encryption.

Pseudonyms are keyed MACs (HMAC-SHA256 truncated to 128 bits) so node and
clinic derive the same token without shared state; the clinic-side table is
written purely for re-identification convenience. Packets are containers of
per-block AES-256-GCM ciphertexts bound to the packet manifest as associated
data, so no block can be moved, reordered into another packet, or re-described
without detection.

Container layout (version 1)::

    "HCPK" | u16 LE version | u32 LE manifest ct length | manifest nonce (12)
    | manifest ciphertext (AD = "HCPK" + version bytes)
    | per block, in descriptor order: nonce (12) + ciphertext

Block descriptors give byte offsets of each nonce within the blocks region
and the ciphertext length (GCM tag included).
"""

from __future__ import annotations

import csv
import hmac
import hashlib
import json
import os
import struct
import threading
from dataclasses import dataclass, replace
from pathlib import Path

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from rehabpipe.model import (
    AssessmentRecord,
    BlockDescriptor,
    InterventionLog,
    Observation,
    PacketManifest,
    PayloadKind,
    Record,
    SubjectRef,
    TimeSeriesBlock,
    ValidationError,
    canonical_bytes,
    content_hash,
    decode_record,
    ensure_valid,
)

MAGIC = b"HCPK"
CONTAINER_VERSION = 1
NONCE_LEN = 12
GCM_TAG_LEN = 16
KEY_LEN = 32

_HEADER = struct.Struct("<4sHI")


class AuthenticationError(Exception):
    """Ciphertext or associated data failed authentication."""


class IntegrityError(Exception):
    """Plaintext does not match its declared content hash."""


class FormatError(Exception):
    """Container bytes are not a well-formed packet."""


class KeyLengthError(ValueError):
    """A key is not the required 32 bytes."""


class TableError(Exception):
    """Pseudonym table is inconsistent (conflicting duplicate entries)."""


class UnsupportedType(TypeError):
    """No scrub rule exists for this record type."""


# --------------------------------------------------------------------------
# Keyring
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ClinicKeyring:
    """Node-local secrets. pseudonym_key never leaves clinic infrastructure."""

    pseudonym_key: bytes
    transport_key: bytes

    def __post_init__(self) -> None:
        for name, key in (("pseudonym_key", self.pseudonym_key),
                          ("transport_key", self.transport_key)):
            if not isinstance(key, bytes) or len(key) != KEY_LEN:
                raise KeyLengthError(f"{name} must be {KEY_LEN} bytes")
        if self.pseudonym_key == self.transport_key:
            raise KeyLengthError("pseudonym_key and transport_key must be distinct")

    @classmethod
    def generate(cls) -> "ClinicKeyring":
        return cls(pseudonym_key=os.urandom(KEY_LEN), transport_key=os.urandom(KEY_LEN))

    @classmethod
    def load(cls, path: str | Path) -> "ClinicKeyring":
        raw = json.loads(Path(path).read_text())
        return cls(
            pseudonym_key=bytes.fromhex(raw["pseudonym_key_hex"]),
            transport_key=bytes.fromhex(raw["transport_key_hex"]),
        )

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.write_text(json.dumps({
            "pseudonym_key_hex": self.pseudonym_key.hex(),
            "transport_key_hex": self.transport_key.hex(),
        }))
        os.chmod(path, 0o600)


# --------------------------------------------------------------------------
# Pseudonymization
# --------------------------------------------------------------------------

def derive_pseudonym(local_id: str, pseudonym_key: bytes) -> str:
    """Keyed MAC of local_id truncated to 128 bits, as 32 lowercase hex chars."""
    if not local_id:
        raise ValidationError("local_id", "must be non-empty")
    if len(pseudonym_key) != KEY_LEN:
        raise KeyLengthError(f"pseudonym_key must be {KEY_LEN} bytes")
    mac = hmac.new(pseudonym_key, local_id.encode("utf-8"), hashlib.sha256)
    return mac.hexdigest()[:32]


# Versioned deny-list; clinics extend it via load_scrub_config.
DEFAULT_SCRUB_CONFIG: dict = {
    "version": 1,
    "denied_fields": [
        "local_id", "name", "first_name", "last_name", "address",
        "birthdate", "dob", "phone", "email", "device_serial",
    ],
    "hash_device_id": False,
}


def load_scrub_config(path: str | Path) -> dict:
    cfg = dict(DEFAULT_SCRUB_CONFIG)
    cfg.update(json.loads(Path(path).read_text()))
    return cfg


def _scrub_subject(subject: SubjectRef, pseudonym_key: bytes | None) -> SubjectRef:
    if subject.local_id is None:
        return subject
    pseudonym = subject.pseudonym
    if pseudonym is None:
        if pseudonym_key is None:
            raise ValidationError(
                "subject.pseudonym", "cannot scrub local_id without a pseudonym or key")
        pseudonym = derive_pseudonym(subject.local_id, pseudonym_key)
    return SubjectRef(local_id=None, pseudonym=pseudonym)


def _drop_denied(mapping: dict[str, float], denied: set[str]) -> dict[str, float]:
    return {k: v for k, v in mapping.items() if k not in denied}


def scrub(record: Record, *, pseudonym_key: bytes | None = None,
          config: dict | None = None) -> Record:
    """Remove or replace deny-listed identifiers; idempotent; output re-validates."""
    cfg = config or DEFAULT_SCRUB_CONFIG
    denied = set(cfg["denied_fields"])
    if isinstance(record, AssessmentRecord):
        out: Record = replace(
            record,
            subject=_scrub_subject(record.subject, pseudonym_key),
            free_fields=_drop_denied(record.free_fields, denied),
        )
    elif isinstance(record, TimeSeriesBlock):
        device_id = record.device_id
        if cfg.get("hash_device_id") or "device_id" in denied:
            if not device_id.startswith("dev-"):
                device_id = "dev-" + hashlib.sha256(device_id.encode()).hexdigest()[:12]
        out = replace(
            record,
            subject=_scrub_subject(record.subject, pseudonym_key),
            device_id=device_id,
        )
    elif isinstance(record, InterventionLog):
        out = replace(
            record,
            subject=_scrub_subject(record.subject, pseudonym_key),
            dose=_drop_denied(record.dose, denied),
        )
    else:
        raise UnsupportedType(f"no scrub rule for {type(record).__name__}")
    ensure_valid(out)
    return out


# --------------------------------------------------------------------------
# Packet encryption
# --------------------------------------------------------------------------

def _aead(transport_key: bytes) -> AESGCM:
    if not isinstance(transport_key, bytes) or len(transport_key) != KEY_LEN:
        raise KeyLengthError(f"transport_key must be {KEY_LEN} bytes")
    return AESGCM(transport_key)


def _manifest_ad() -> bytes:
    return MAGIC + struct.pack("<H", CONTAINER_VERSION)


def make_descriptors(blocks: list[tuple[bytes, PayloadKind]]) -> tuple[BlockDescriptor, ...]:
    """Descriptors for plaintext blocks laid out per the container format."""
    descriptors = []
    offset = 0
    for plaintext, kind in blocks:
        ct_len = len(plaintext) + GCM_TAG_LEN
        descriptors.append(BlockDescriptor(
            content_hash=content_hash(plaintext),
            payload_kind=kind,
            byte_offset=offset,
            byte_length_ciphertext=ct_len,
        ))
        offset += NONCE_LEN + ct_len
    return tuple(descriptors)


def encrypt_packet(manifest: PacketManifest, plaintext_blocks: list[bytes],
                   transport_key: bytes) -> bytes:
    """Seal blocks into a container; every ciphertext is bound to the manifest."""
    aead = _aead(transport_key)
    ensure_valid(manifest)
    if len(manifest.blocks) != len(plaintext_blocks):
        raise IntegrityError(
            f"manifest describes {len(manifest.blocks)} blocks, "
            f"got {len(plaintext_blocks)}")
    for d, plaintext in zip(manifest.blocks, plaintext_blocks):
        if content_hash(plaintext) != d.content_hash:
            raise IntegrityError(f"plaintext does not match descriptor {d.content_hash}")
        if len(plaintext) + GCM_TAG_LEN != d.byte_length_ciphertext:
            raise IntegrityError(f"descriptor {d.content_hash} length mismatch")

    manifest_bytes = canonical_bytes(manifest)
    m_nonce = os.urandom(NONCE_LEN)
    m_ct = aead.encrypt(m_nonce, manifest_bytes, _manifest_ad())

    parts = [_HEADER.pack(MAGIC, CONTAINER_VERSION, len(m_ct)), m_nonce, m_ct]
    for d, plaintext in zip(manifest.blocks, plaintext_blocks):
        nonce = os.urandom(NONCE_LEN)
        parts.append(nonce)
        parts.append(aead.encrypt(nonce, plaintext, manifest_bytes))
    return b"".join(parts)


def decrypt_packet(packet: bytes, transport_key: bytes) -> tuple[PacketManifest, list[bytes]]:
    """Open a container, authenticating every block against the manifest.

    Raises FormatError for malformed containers, AuthenticationError on any
    tag failure (tampered ciphertext, manifest, or wrong key), IntegrityError
    when an authenticated plaintext does not re-hash to its descriptor.
    """
    aead = _aead(transport_key)
    if len(packet) < _HEADER.size + NONCE_LEN:
        raise FormatError("packet shorter than fixed header")
    magic, version, m_len = _HEADER.unpack_from(packet, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != CONTAINER_VERSION:
        raise FormatError(f"unsupported container version {version}")
    m_start = _HEADER.size + NONCE_LEN
    if len(packet) < m_start + m_len:
        raise FormatError("truncated manifest region")
    m_nonce = packet[_HEADER.size:m_start]
    m_ct = packet[m_start:m_start + m_len]
    try:
        manifest_bytes = aead.decrypt(m_nonce, m_ct, _manifest_ad())
    except InvalidTag:
        raise AuthenticationError("manifest authentication failed") from None
    try:
        manifest = decode_record(manifest_bytes)
    except ValidationError as exc:
        raise FormatError(f"manifest malformed: {exc}") from None
    if not isinstance(manifest, PacketManifest):
        raise FormatError("manifest region does not hold a manifest record")

    region = packet[m_start + m_len:]
    expected_len = sum(NONCE_LEN + d.byte_length_ciphertext for d in manifest.blocks)
    if len(region) != expected_len:
        raise FormatError(
            f"blocks region is {len(region)} bytes, manifest describes {expected_len}")
    blocks: list[bytes] = []
    for d in manifest.blocks:
        nonce = region[d.byte_offset:d.byte_offset + NONCE_LEN]
        ct = region[d.byte_offset + NONCE_LEN:
                    d.byte_offset + NONCE_LEN + d.byte_length_ciphertext]
        if len(nonce) != NONCE_LEN or len(ct) != d.byte_length_ciphertext:
            raise FormatError(f"block {d.content_hash} out of bounds")
        try:
            plaintext = aead.decrypt(nonce, ct, manifest_bytes)
        except InvalidTag:
            raise AuthenticationError(
                f"block {d.content_hash} authentication failed") from None
        if content_hash(plaintext) != d.content_hash:
            raise IntegrityError(f"block does not re-hash to {d.content_hash}")
        blocks.append(plaintext)
    return manifest, blocks


# --------------------------------------------------------------------------
# Re-identification (clinic-side only)
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PseudonymTableEntry:
    local_id: str
    pseudonym: str
    created_at: int


@dataclass(frozen=True)
class AnnotatedObservation:
    observation: Observation
    local_id: str | None


TABLE_HEADER = ("pseudonym", "local_id", "created_at_ms")


class PseudonymTable:
    """Append-only CSV `pseudonym,local_id,created_at_ms`, clinic-side only.

    Safe for concurrent ingestion threads: one entry per local_id even when
    a subject's first submissions race.
    """

    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)
        self._by_local: dict[str, str] = {}
        self._lock = threading.Lock()
        if self.path.exists():
            for entry in load_pseudonym_table(self.path):
                self._by_local[entry.local_id] = entry.pseudonym
        else:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "w", newline="") as fh:
                csv.writer(fh).writerow(TABLE_HEADER)
            os.chmod(self.path, 0o600)

    def record(self, local_id: str, pseudonym: str, created_at: int) -> bool:
        """Append one entry per local_id; re-recording is a no-op. True if new."""
        with self._lock:
            known = self._by_local.get(local_id)
            if known is not None:
                if known != pseudonym:
                    raise TableError(
                        f"local_id {local_id!r} already mapped to another pseudonym")
                return False
            with open(self.path, "a", newline="") as fh:
                csv.writer(fh).writerow((pseudonym, local_id, created_at))
            self._by_local[local_id] = pseudonym
            return True

    def entries(self) -> list[PseudonymTableEntry]:
        return load_pseudonym_table(self.path)


def load_pseudonym_table(path: str | Path) -> list[PseudonymTableEntry]:
    entries: list[PseudonymTableEntry] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for row in reader:
            if not row or tuple(row) == TABLE_HEADER:
                continue
            entries.append(PseudonymTableEntry(
                pseudonym=row[0], local_id=row[1], created_at=int(row[2])))
    return entries


def reidentify(observations: list[Observation],
               table: list[PseudonymTableEntry]) -> tuple[list[AnnotatedObservation], int]:
    """Annotate observations with local_id via the clinic table.

    Unknown pseudonyms pass through unannotated; the second return value
    counts them. Conflicting duplicate pseudonyms in the table raise TableError.
    """
    by_pseudonym: dict[str, str] = {}
    for entry in table:
        if entry.pseudonym in by_pseudonym:
            raise TableError(f"duplicate pseudonym {entry.pseudonym} in table")
        by_pseudonym[entry.pseudonym] = entry.local_id
    annotated: list[AnnotatedObservation] = []
    unknown = 0
    for obs in observations:
        local_id = by_pseudonym.get(obs.subject_pseudonym)
        if local_id is None:
            unknown += 1
        annotated.append(AnnotatedObservation(observation=obs, local_id=local_id))
    return annotated, unknown
