"""Pseudonymization, scrubbing, packet encryption, re-identification."""

from __future__ import annotations

import os
from dataclasses import replace

import numpy as np
import pytest

from rehabpipe.model import (
    NodeProfile,
    Observation,
    PacketManifest,
    SubjectRef,
    ValidationError,
    canonical_bytes,
    payload_kind_of,
)
from rehabpipe.privacy import (
    DEFAULT_SCRUB_CONFIG,
    AuthenticationError,
    ClinicKeyring,
    FormatError,
    IntegrityError,
    KeyLengthError,
    PseudonymTable,
    PseudonymTableEntry,
    TableError,
    UnsupportedType,
    decrypt_packet,
    derive_pseudonym,
    encrypt_packet,
    load_pseudonym_table,
    make_descriptors,
    reidentify,
    scrub,
)

from conftest import BASE_MS, accel_block, assessment, intervention, random_record

KEY = bytes(range(32))
OTHER_KEY = bytes(range(1, 33))


def seal(records, key=KEY, pseudonym="ab" * 16):
    blocks = [(canonical_bytes(r), payload_kind_of(r)) for r in records]
    manifest = PacketManifest(
        packet_id=os.urandom(16).hex(),
        origin_node="dtn-1",
        node_profile=NodeProfile.CLINIC,
        created_at=BASE_MS,
        pseudonym=pseudonym,
        blocks=make_descriptors(blocks),
    )
    return manifest, encrypt_packet(manifest, [b for b, _ in blocks], key)


class TestDerivePseudonym:
    def test_deterministic(self):
        assert derive_pseudonym("mrn-0001", KEY) == derive_pseudonym("mrn-0001", KEY)

    def test_shape(self):
        p = derive_pseudonym("mrn-0001", KEY)
        assert len(p) == 32 and all(c in "0123456789abcdef" for c in p)

    def test_empty_local_id_rejected(self):
        with pytest.raises(ValidationError):
            derive_pseudonym("", KEY)

    def test_collision_scan_10k_ids(self):
        pseudonyms = {derive_pseudonym(f"mrn-{i:05d}", KEY) for i in range(10_000)}
        assert len(pseudonyms) == 10_000

    def test_independent_keys_unlinkable(self):
        rng = np.random.default_rng(3)
        differences = 0
        for _ in range(100):
            k1, k2 = rng.bytes(32), rng.bytes(32)
            if derive_pseudonym("mrn-0042", k1) != derive_pseudonym("mrn-0042", k2):
                differences += 1
        assert differences == 100

    def test_bad_key_length(self):
        with pytest.raises(KeyLengthError):
            derive_pseudonym("mrn-0001", b"short")


class TestScrub:
    def test_local_id_replaced_by_pseudonym(self):
        record = replace(assessment(), subject=SubjectRef(local_id="mrn-0007"))
        out = scrub(record, pseudonym_key=KEY)
        assert out.subject.local_id is None
        assert out.subject.pseudonym == derive_pseudonym("mrn-0007", KEY)

    def test_clean_record_unchanged(self):
        record = assessment()
        assert scrub(record, pseudonym_key=KEY) == record

    def test_denied_free_fields_dropped(self):
        record = replace(assessment(), free_fields={"birthdate": 19800101.0, "duration_s": 8.0})
        out = scrub(record, pseudonym_key=KEY)
        assert "birthdate" not in out.free_fields
        assert out.free_fields["duration_s"] == 8.0

    def test_idempotent(self):
        record = replace(intervention(), subject=SubjectRef(local_id="mrn-0001"))
        once = scrub(record, pseudonym_key=KEY)
        assert scrub(once, pseudonym_key=KEY) == once

    def test_unsupported_type(self):
        obs = Observation("walk_speed_mps", "ab" * 16, BASE_MS, 1.0, "m/s",
                          ("0" * 64,), "wf_walk")
        with pytest.raises(UnsupportedType):
            scrub(obs, pseudonym_key=KEY)

    def test_scrub_config_file_merges_over_defaults(self, tmp_path):
        import json

        from rehabpipe.privacy import load_scrub_config
        path = tmp_path / "scrub.json"
        path.write_text(json.dumps(
            {"version": 2, "denied_fields": ["local_id", "shoe_size"]}))
        cfg = load_scrub_config(path)
        assert cfg["version"] == 2
        record = replace(assessment(), free_fields={"shoe_size": 44.0, "duration_s": 8.0})
        out = scrub(record, pseudonym_key=KEY, config=cfg)
        assert "shoe_size" not in out.free_fields

    def test_randomized_records_never_keep_denied_fields(self):
        rng = np.random.default_rng(5)
        denied = set(DEFAULT_SCRUB_CONFIG["denied_fields"])
        for _ in range(150):
            record = random_record(rng)
            record = replace(record, subject=SubjectRef(local_id=f"mrn-{rng.integers(1e6)}"))
            out = scrub(record, pseudonym_key=KEY)
            assert out.subject.local_id is None
            fields = set(getattr(out, "free_fields", {})) | set(getattr(out, "dose", {}))
            assert fields.isdisjoint(denied)


class TestPacketCrypto:
    def test_round_trip(self):
        records = [assessment(), intervention(), accel_block(n=40)]
        manifest, packet = seal(records)
        out_manifest, blocks = decrypt_packet(packet, KEY)
        assert out_manifest == manifest
        assert blocks == [canonical_bytes(r) for r in records]

    def test_wrong_key_rejected(self):
        _, packet = seal([assessment()])
        rng = np.random.default_rng(9)
        for _ in range(100):
            with pytest.raises(AuthenticationError):
                decrypt_packet(packet, rng.bytes(32))

    def test_single_byte_corruption_rejected(self):
        _, packet = seal([assessment(), intervention()])
        rng = np.random.default_rng(13)
        for _ in range(300):
            corrupted = bytearray(packet)
            pos = int(rng.integers(0, len(corrupted)))
            corrupted[pos] ^= 1 << int(rng.integers(0, 8))
            with pytest.raises((AuthenticationError, FormatError, IntegrityError)):
                decrypt_packet(bytes(corrupted), KEY)

    def test_manifest_splice_defeated_by_ad_binding(self):
        # both packets valid under the same key; grafting one packet's
        # manifest region onto the other's blocks must fail authentication,
        # because each block ciphertext is bound to its own manifest bytes
        import struct

        rng = np.random.default_rng(17)
        record_a = assessment(rng=rng, administered_at=BASE_MS + 1)
        record_b = assessment(rng=rng, administered_at=BASE_MS + 2)
        _, packet_a = seal([record_a])
        _, packet_b = seal([record_b])

        header = struct.Struct("<4sHI")

        def split(packet):
            _, _, m_len = header.unpack_from(packet, 0)
            cut = header.size + 12 + m_len
            return packet[:cut], packet[cut:]

        manifest_a, _ = split(packet_a)
        _, blocks_b = split(packet_b)
        with pytest.raises((AuthenticationError, FormatError)):
            decrypt_packet(manifest_a + blocks_b, KEY)

    def test_manifest_region_tamper_is_authentication_error(self):
        import struct

        _, packet = seal([assessment()])
        header = struct.Struct("<4sHI")
        _, _, m_len = header.unpack_from(packet, 0)
        corrupted = bytearray(packet)
        corrupted[header.size + 12 + m_len // 2] ^= 0x01  # inside manifest ct
        with pytest.raises(AuthenticationError):
            decrypt_packet(bytes(corrupted), KEY)

    def test_truncated_packet_is_format_error(self):
        _, packet = seal([assessment()])
        with pytest.raises(FormatError):
            decrypt_packet(packet[:-3], KEY)
        with pytest.raises(FormatError):
            decrypt_packet(packet[:10], KEY)

    def test_key_length_checked(self):
        with pytest.raises(KeyLengthError):
            decrypt_packet(b"HCPK", b"short")

    def test_hash_mismatch_at_encrypt(self):
        records = [assessment()]
        blocks = [(canonical_bytes(r), payload_kind_of(r)) for r in records]
        manifest = PacketManifest(
            packet_id="11" * 16, origin_node="dtn-1",
            node_profile=NodeProfile.CLINIC, created_at=BASE_MS,
            pseudonym="ab" * 16, blocks=make_descriptors(blocks))
        with pytest.raises(IntegrityError):
            encrypt_packet(manifest, [b"not the described plaintext"], KEY)

    def test_no_secret_bytes_in_packet(self):
        local_id = "mrn-very-identifying-0042"
        record = replace(assessment(), subject=SubjectRef(local_id=local_id))
        scrubbed = scrub(record, pseudonym_key=KEY)
        _, packet = seal([scrubbed], pseudonym=scrubbed.subject.pseudonym)
        assert local_id.encode() not in packet
        assert KEY not in packet  # pseudonym key must never ride along
        assert KEY.hex().encode() not in packet


class TestKeyring:
    def test_generate_save_load(self, tmp_path):
        keyring = ClinicKeyring.generate()
        path = tmp_path / "keyring.json"
        keyring.save(path)
        assert ClinicKeyring.load(path) == keyring
        assert (path.stat().st_mode & 0o777) == 0o600

    def test_keys_must_be_distinct(self):
        with pytest.raises(KeyLengthError):
            ClinicKeyring(pseudonym_key=KEY, transport_key=KEY)


class TestReidentify:
    def table(self, n=3):
        return [
            PseudonymTableEntry(local_id=f"mrn-{i:04d}",
                                pseudonym=derive_pseudonym(f"mrn-{i:04d}", KEY),
                                created_at=BASE_MS)
            for i in range(n)
        ]

    def obs(self, pseudonym):
        return Observation("arat_total", pseudonym, BASE_MS, 42.0, "score",
                           ("0" * 64,), "wf_scores")

    def test_known_pseudonym_annotated(self):
        table = self.table()
        annotated, unknown = reidentify([self.obs(table[1].pseudonym)], table)
        assert annotated[0].local_id == "mrn-0001"
        assert unknown == 0

    def test_unknown_pseudonym_passes_with_warning(self):
        annotated, unknown = reidentify([self.obs("ff" * 16)], self.table())
        assert annotated[0].local_id is None
        assert unknown == 1

    def test_duplicate_pseudonym_in_table(self):
        table = self.table(2) + [self.table(2)[0]]
        with pytest.raises(TableError):
            reidentify([], table)

    def test_round_trip_1000_subjects(self):
        table = [
            PseudonymTableEntry(local_id=f"mrn-{i:04d}",
                                pseudonym=derive_pseudonym(f"mrn-{i:04d}", KEY),
                                created_at=BASE_MS)
            for i in range(1000)
        ]
        observations = [self.obs(e.pseudonym) for e in table]
        annotated, unknown = reidentify(observations, table)
        assert unknown == 0
        assert all(a.local_id == e.local_id for a, e in zip(annotated, table))


class TestPseudonymTableFile:
    def test_append_only_and_reload(self, tmp_path):
        path = tmp_path / "pseudonyms.csv"
        table = PseudonymTable(path)
        assert table.record("mrn-0001", derive_pseudonym("mrn-0001", KEY), BASE_MS)
        assert not table.record("mrn-0001", derive_pseudonym("mrn-0001", KEY), BASE_MS)
        assert table.record("mrn-0002", derive_pseudonym("mrn-0002", KEY), BASE_MS)
        entries = load_pseudonym_table(path)
        assert [e.local_id for e in entries] == ["mrn-0001", "mrn-0002"]
        reopened = PseudonymTable(path)
        assert not reopened.record("mrn-0002", derive_pseudonym("mrn-0002", KEY), BASE_MS)

    def test_header_line(self, tmp_path):
        path = tmp_path / "pseudonyms.csv"
        PseudonymTable(path)
        assert path.read_text().splitlines()[0] == "pseudonym,local_id,created_at_ms"
