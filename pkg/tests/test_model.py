"""Canonical serialization, content hashing, and validation."""

from __future__ import annotations

import numpy as np
import pytest

from rehabpipe.model import (
    AssessmentRecord,
    BlockDescriptor,
    Instrument,
    NodeProfile,
    PacketManifest,
    PayloadKind,
    SubjectRef,
    ValidationError,
    canonical_bytes,
    content_hash,
    decode_record,
    iso_week_key,
    iso_week_start_ms,
    record_hash,
    rfc3339_utc,
    validate,
)

from conftest import BASE_MS, accel_block, assessment, audio_block, intervention, random_record

# Published SHA-256 empty-input test vector (FIPS 180-4).
SHA256_EMPTY = "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"


def manifest_for(hashes: list[str]) -> PacketManifest:
    blocks = []
    offset = 0
    for h in hashes:
        blocks.append(BlockDescriptor(h, PayloadKind.ASSESSMENT, offset, 100))
        offset += 112
    return PacketManifest(
        packet_id="0f" * 16,
        origin_node="dtn-1",
        node_profile=NodeProfile.CLINIC,
        created_at=BASE_MS,
        pseudonym="ab" * 16,
        blocks=tuple(blocks),
    )


class TestCanonicalBytes:
    def test_encode_is_deterministic(self):
        record = assessment()
        assert canonical_bytes(record) == canonical_bytes(record)

    def test_key_insertion_order_is_irrelevant(self):
        record = assessment(Instrument.FSS)
        obj = __import__("json").loads(canonical_bytes(record))
        reordered = dict(reversed(list(obj.items())))
        assert canonical_bytes(decode_record(reordered)) == canonical_bytes(record)

    def test_sorted_keys_compact_whitespace(self):
        raw = canonical_bytes(intervention()).decode()
        assert ": " not in raw and ", " not in raw
        keys = [k.split('"')[0] for k in raw.split('"')[1::2]]
        top_level = [k for k in ("dose", "end_time", "kind", "start_time") if k in keys]
        assert top_level == sorted(top_level)

    def test_round_trip_small_block(self):
        block = accel_block(n=3)
        assert decode_record(canonical_bytes(block)) == block

    def test_round_trip_randomized_records(self):
        rng = np.random.default_rng(42)
        for _ in range(100):
            record = random_record(rng)
            decoded = decode_record(canonical_bytes(record))
            assert decoded == record
            assert canonical_bytes(decoded) == canonical_bytes(record)

    def test_invalid_record_raises_with_field(self):
        block = accel_block()
        block.sample_rate_hz = 0.0
        with pytest.raises(ValidationError) as excinfo:
            canonical_bytes(block)
        assert excinfo.value.field == "sample_rate_hz"

    def test_nan_samples_rejected(self):
        block = accel_block()
        block.samples[0, 0] = np.nan
        assert validate(block).field == "samples"

    def test_manifest_round_trip(self):
        m = manifest_for([content_hash(b"a"), content_hash(b"b")])
        assert decode_record(canonical_bytes(m)) == m


class TestContentHash:
    def test_deterministic(self):
        assert content_hash(b"abc") == content_hash(b"abc")

    def test_empty_input_reference_vector(self):
        assert content_hash(b"") == SHA256_EMPTY

    def test_shape(self):
        digest = content_hash(b"xyz")
        assert len(digest) == 64 and digest == digest.lower()

    def test_bit_flip_always_changes_hash(self):
        rng = np.random.default_rng(7)
        payload = bytearray(rng.integers(0, 256, size=512, dtype=np.uint8).tobytes())
        baseline = content_hash(bytes(payload))
        collisions = 0
        for _ in range(1000):
            pos = int(rng.integers(0, len(payload)))
            bit = 1 << int(rng.integers(0, 8))
            payload[pos] ^= bit
            if content_hash(bytes(payload)) == baseline:
                collisions += 1
            payload[pos] ^= bit
        assert collisions == 0


class TestValidate:
    def test_zero_sample_rate(self):
        block = accel_block()
        block.sample_rate_hz = 0.0
        err = validate(block)
        assert err is not None and err.field == "sample_rate_hz"

    def test_arat_19_items_in_range_ok(self):
        record = assessment(Instrument.ARAT)
        assert len(record.items) == 19
        assert all(0 <= r <= 3 for _, r in record.items)
        assert validate(record) is None

    def test_intervention_end_before_start(self):
        log = intervention()
        bad = InterventionLogCopy(log, end_time=log.start_time - 1)
        err = validate(bad)
        assert err is not None and err.field == "end_time"

    def test_wrong_item_count_rejected(self):
        record = assessment(Instrument.ARAT)
        bad = AssessmentRecord(
            subject=record.subject, instrument=record.instrument,
            administered_at=record.administered_at,
            administrator_role=record.administrator_role,
            items=record.items[:-1])
        err = validate(bad)
        assert err is not None and err.field == "items"

    def test_out_of_range_item_rejected(self):
        record = assessment(Instrument.ESS)
        items = (("ess_01", 4),) + record.items[1:]
        bad = AssessmentRecord(
            subject=record.subject, instrument=record.instrument,
            administered_at=record.administered_at,
            administrator_role=record.administrator_role, items=items)
        err = validate(bad)
        assert err is not None and "items[0]" in err.field

    def test_audio_block_requires_blob(self):
        block = audio_block()
        block.blob = None
        assert validate(block).field == "blob"

    def test_manifest_duplicate_hash(self):
        h = content_hash(b"same")
        err = validate(manifest_for([h, h]))
        assert err is not None and "content_hash" in err.field

    def test_manifest_overlapping_offsets(self):
        m = manifest_for([content_hash(b"a"), content_hash(b"b")])
        blocks = (m.blocks[0],
                  BlockDescriptor(m.blocks[1].content_hash, PayloadKind.ASSESSMENT, 50, 100))
        bad = PacketManifest(
            packet_id=m.packet_id, origin_node=m.origin_node,
            node_profile=m.node_profile, created_at=m.created_at,
            pseudonym=m.pseudonym, blocks=blocks)
        err = validate(bad)
        assert err is not None and "byte_offset" in err.field

    def test_planted_single_violation_is_caught(self):
        # generator plants exactly one violation; validate must find one
        rng = np.random.default_rng(11)
        for _ in range(200):
            record = random_record(rng)
            assert validate(record) is None
            mutated, expect_field = plant_violation(record, rng)
            err = validate(mutated)
            assert err is not None, f"missed planted violation in {expect_field}"


def InterventionLogCopy(log, **overrides):
    from dataclasses import replace
    return replace(log, **overrides)


def plant_violation(record, rng: np.random.Generator):
    """Return (mutated record, field) with exactly one planted invariant break."""
    from dataclasses import replace

    from rehabpipe.model import InterventionLog, TimeSeriesBlock

    if isinstance(record, TimeSeriesBlock):
        choice = rng.integers(0, 3)
        if choice == 0:
            out = replace(record)
            out.sample_rate_hz = -1.0
            return out, "sample_rate_hz"
        if choice == 1:
            out = replace(record)
            out.start_time = 0
            return out, "start_time"
        out = replace(record, subject=SubjectRef(pseudonym="not-hex"))
        return out, "subject.pseudonym"
    if isinstance(record, AssessmentRecord):
        if record.items and rng.integers(0, 2) == 0:
            items = ((record.items[0][0], 99.0),) + record.items[1:]
            return replace(record, items=items), "items[0].response"
        return replace(record, administered_at=0), "administered_at"
    if isinstance(record, InterventionLog):
        return replace(record, end_time=record.start_time - 1), "end_time"
    raise AssertionError(f"unexpected type {type(record)}")


class TestCrossProcessStability:
    def test_hashes_agree_with_a_fresh_interpreter(self, tmp_path):
        # node and core are different processes; canonical hashes must agree
        import subprocess
        import sys

        rng = np.random.default_rng(99)
        records = [random_record(rng) for _ in range(20)]
        local = [record_hash(r) for r in records]
        payloads_path = tmp_path / "records.ndjson"
        with open(payloads_path, "wb") as fh:
            for record in records:
                fh.write(canonical_bytes(record) + b"\n")
        script = (
            "import sys\n"
            "from rehabpipe.model import decode_record, record_hash\n"
            "for line in open(sys.argv[1], 'rb'):\n"
            "    print(record_hash(decode_record(line.strip())))\n"
        )
        out = subprocess.run(
            [sys.executable, "-c", script, str(payloads_path)],
            capture_output=True, text=True, check=True)
        assert out.stdout.split() == local


class TestDecodeErrors:
    def test_malformed_json_rejected(self):
        with pytest.raises(ValidationError) as excinfo:
            decode_record(b"{not json")
        assert excinfo.value.field == "json"

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValidationError) as excinfo:
            decode_record({"kind": "telemetry"})
        assert excinfo.value.field == "kind"

    def test_missing_fields_rejected(self):
        with pytest.raises(ValidationError):
            decode_record({"kind": "assessment", "instrument": "arat"})

    def test_bad_sample_payload_length_rejected(self):
        import json as json_module
        obj = json_module.loads(canonical_bytes(accel_block(n=3)))
        obj["samples_b64"] = obj["samples_b64"][:-8]  # no longer 8*channels
        with pytest.raises(ValidationError):
            decode_record(obj)

    def test_wrong_schema_version_rejected(self):
        m = manifest_for([content_hash(b"a")])
        bad = PacketManifest(
            packet_id=m.packet_id, origin_node=m.origin_node,
            node_profile=m.node_profile, created_at=m.created_at,
            pseudonym=m.pseudonym, blocks=m.blocks, schema_version=2)
        assert validate(bad).field == "schema_version"


class TestTimeHelpers:
    def test_rfc3339_formatting(self):
        assert rfc3339_utc(BASE_MS) == "2026-01-05T00:00:00.000Z"
        assert rfc3339_utc(BASE_MS + 3_723_456) == "2026-01-05T01:02:03.456Z"

    def test_iso_week_anchoring(self):
        year, week = iso_week_key(BASE_MS)
        assert (year, week) == (2026, 2)
        assert iso_week_start_ms(BASE_MS) == BASE_MS
        assert iso_week_start_ms(BASE_MS + 6 * 86_400_000 + 5) == BASE_MS
        assert iso_week_start_ms(BASE_MS + 7 * 86_400_000) == BASE_MS + 7 * 86_400_000
