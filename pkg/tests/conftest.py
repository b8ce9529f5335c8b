"""Shared builders for randomized domain records."""

from __future__ import annotations

import numpy as np
import pytest

from rehabpipe import chaos
from rehabpipe.instruments import instrument_spec
from rehabpipe.model import (
    AdministratorRole,
    AssessmentRecord,
    BlockKind,
    BodyLocation,
    Instrument,
    InterventionLog,
    RecordContext,
    SubjectRef,
    TimeSeriesBlock,
)

BASE_MS = 1_767_571_200_000  # 2026-01-05T00:00:00Z, a Monday


@pytest.fixture(autouse=True)
def _reset_chaos():
    chaos.reset()
    yield
    chaos.reset()


def subject(pseudonym: str = "ab" * 16) -> SubjectRef:
    return SubjectRef(pseudonym=pseudonym)


def accel_block(rng: np.random.Generator | None = None, *, n: int = 125,
                rate: float = 12.5, start: int = BASE_MS,
                location: BodyLocation = BodyLocation.WRIST_LEFT,
                context: RecordContext = RecordContext.CLINIC,
                pseudonym: str = "ab" * 16) -> TimeSeriesBlock:
    rng = rng or np.random.default_rng(0)
    samples = rng.normal(0.0, 0.05, size=(n, 3))
    samples[:, 2] += 1.0  # gravity on z at rest
    return TimeSeriesBlock(
        subject=subject(pseudonym),
        block_kind=BlockKind.ACCEL,
        device_id="imu-a1",
        body_location=location,
        sample_rate_hz=rate,
        start_time=start,
        channel_names=("x", "y", "z"),
        channel_units=("g", "g", "g"),
        context=context,
        samples=samples,
    )


def audio_block(rng: np.random.Generator | None = None, *, size: int = 256,
                start: int = BASE_MS, pseudonym: str = "ab" * 16) -> TimeSeriesBlock:
    rng = rng or np.random.default_rng(0)
    return TimeSeriesBlock(
        subject=subject(pseudonym),
        block_kind=BlockKind.AUDIO_BLOB,
        device_id="tablet-mic",
        body_location=BodyLocation.NONE,
        sample_rate_hz=16000.0,
        start_time=start,
        channel_names=(),
        channel_units=(),
        context=RecordContext.CLINIC,
        blob=bytes(rng.integers(0, 256, size=size, dtype=np.uint8)),
    )


def assessment(instrument: Instrument = Instrument.ARAT,
               rng: np.random.Generator | None = None, *,
               administered_at: int = BASE_MS + 9 * 3_600_000,
               pseudonym: str = "ab" * 16,
               free_fields: dict | None = None) -> AssessmentRecord:
    rng = rng or np.random.default_rng(0)
    spec = instrument_spec(instrument.value)
    items: tuple = ()
    if spec is not None:
        lo, hi = int(spec.response_min), int(spec.response_max)
        items = tuple(
            (f"{instrument.value}_{i + 1:02d}", int(rng.integers(lo, hi + 1)))
            for i in range(spec.item_count)
        )
    return AssessmentRecord(
        subject=subject(pseudonym),
        instrument=instrument,
        administered_at=administered_at,
        administrator_role=AdministratorRole.THERAPIST,
        items=items,
        free_fields=dict(free_fields or {}),
    )


def walk_test(duration_s: float = 8.0, distance_m: float = 10.0,
              *, administered_at: int = BASE_MS + 10 * 3_600_000,
              pseudonym: str = "ab" * 16) -> AssessmentRecord:
    return AssessmentRecord(
        subject=subject(pseudonym),
        instrument=Instrument.TMWT,
        administered_at=administered_at,
        administrator_role=AdministratorRole.THERAPIST,
        free_fields={"distance_m": distance_m, "duration_s": duration_s},
    )


def intervention(*, start: int = BASE_MS + 13 * 3_600_000,
                 pseudonym: str = "ab" * 16) -> InterventionLog:
    return InterventionLog(
        subject=subject(pseudonym),
        therapy_kind="upper_limb_robot",
        start_time=start,
        end_time=start + 1_800_000,
        device="armeo",
        dose={"repetitions": 120.0, "duration_min": 30.0},
    )


def random_record(rng: np.random.Generator, pseudonym: str = "ab" * 16):
    """One random valid record of a random payload kind."""
    kind = rng.integers(0, 4)
    start = BASE_MS + int(rng.integers(0, 28 * 86_400_000))
    if kind == 0:
        return accel_block(rng, n=int(rng.integers(13, 400)), start=start,
                           pseudonym=pseudonym)
    if kind == 1:
        return audio_block(rng, size=int(rng.integers(0, 512)), start=start,
                           pseudonym=pseudonym)
    if kind == 2:
        instrument = [Instrument.ARAT, Instrument.FSS, Instrument.HADS,
                      Instrument.BDI2, Instrument.ESS, Instrument.FSMC][rng.integers(0, 6)]
        return assessment(instrument, rng, administered_at=start, pseudonym=pseudonym)
    return intervention(start=start, pseudonym=pseudonym)
