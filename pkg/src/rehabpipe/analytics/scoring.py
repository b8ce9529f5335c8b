"""Assessment scoring and walking speed.

Scoring rules follow the instruments' published manuals (totals for ARAT,
BDI-II, ESS; mean for FSS; fixed item-index subscales for HADS and FSMC);
the index sets live in `rehabpipe.instruments` as configuration data.
"""

from __future__ import annotations

from rehabpipe.instruments import instrument_spec
from rehabpipe.model import (
    AssessmentRecord,
    Instrument,
    Observation,
    ValidationError,
    ensure_valid,
)

# instrument -> (code, aggregation) where aggregation is "sum" | "mean",
# or per-subscale sums when the spec defines subscales
_TOTAL_CODES = {
    Instrument.ARAT: ("arat_total", "sum"),
    Instrument.FSS: ("fss_mean", "mean"),
    Instrument.BDI2: ("bdi2_total", "sum"),
    Instrument.ESS: ("ess_total", "sum"),
}
_SUBSCALE_INSTRUMENTS = (Instrument.HADS, Instrument.FSMC)


def score_assessment(record: AssessmentRecord, record_hash: str,
                     produced_by: str) -> list[Observation]:
    """Total (and subscale, where defined) observations for one administration."""
    ensure_valid(record)
    spec = instrument_spec(record.instrument.value)
    if spec is None:
        raise ValidationError(
            "instrument", f"{record.instrument.value} is not item-scored")
    responses = [float(resp) for _, resp in record.items]

    def obs(code: str, value: float) -> Observation:
        return Observation(
            code=code,
            subject_pseudonym=record.subject.pseudonym,
            effective_time=record.administered_at,
            value=value,
            unit="score",
            derived_from=(record_hash,),
            produced_by=produced_by,
        )

    if record.instrument in _SUBSCALE_INSTRUMENTS:
        prefix = record.instrument.value
        return [
            obs(f"{prefix}_{name}", float(sum(responses[pos - 1] for pos in positions)))
            for name, positions in sorted(spec.subscales.items())
        ]
    code, aggregation = _TOTAL_CODES[record.instrument]
    total = float(sum(responses))
    value = total / len(responses) if aggregation == "mean" else total
    return [obs(code, value)]


def walking_speed(record: AssessmentRecord, record_hash: str,
                  produced_by: str) -> Observation:
    """Walking speed in m/s from a timed walk over a fixed distance."""
    if record.instrument is not Instrument.TMWT:
        raise ValidationError("instrument", "walking speed needs a timed walk record")
    ensure_valid(record)
    distance = record.free_fields.get("distance_m")
    duration = record.free_fields.get("duration_s")
    if distance is None or distance <= 0:
        raise ValidationError("free_fields.distance_m", "must be > 0")
    if duration is None or duration <= 0:
        raise ValidationError("free_fields.duration_s", "must be > 0")
    return Observation(
        code="walk_speed_mps",
        subject_pseudonym=record.subject.pseudonym,
        effective_time=record.administered_at,
        value=distance / duration,
        unit="m/s",
        derived_from=(record_hash,),
        produced_by=produced_by,
    )
