"""FHIR-shaped observation bundles.

A pragmatic FHIR-R4-compatible subset (Observation resources inside a
collection Bundle), not a conformance claim; `bundle_schema.json` shipped
with the package is the normative shape and is enforced in tests. Bundles
are byte-deterministic for a fixed ledger: entries sort by
(effectiveDateTime, code, performer), generated_at is the window end, and
the bundle id is a content-hash prefix.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import datetime, timezone
from importlib import resources

import jsonschema

from rehabpipe.model import Observation, content_hash, rfc3339_utc

CODE_SYSTEM = "urn:rehab-pipeline:codes"


@dataclass(frozen=True)
class ObservationBundle:
    bundle_id: str
    generated_at: int
    subject_pseudonym: str
    empty: bool
    entries: tuple[dict, ...]

    def to_json(self) -> dict:
        return {
            "resourceType": "Bundle",
            "type": "collection",
            "id": self.bundle_id,
            "timestamp": rfc3339_utc(self.generated_at),
            "subject_pseudonym": self.subject_pseudonym,
            "empty": self.empty,
            "entry": [{"resource": resource} for resource in self.entries],
        }


def observation_resource(obs: Observation) -> dict:
    key = f"{obs.subject_pseudonym}|{obs.code}|{obs.effective_time}|{obs.produced_by}"
    return {
        "resourceType": "Observation",
        "id": content_hash(key.encode())[:16],
        "status": "final",
        "code": {"system": CODE_SYSTEM, "code": obs.code},
        "subject": {"reference": f"Patient/{obs.subject_pseudonym}"},
        "effectiveDateTime": rfc3339_utc(obs.effective_time),
        "valueQuantity": {"value": obs.value, "unit": obs.unit},
        "derivedFrom": [{"reference": f"Binary/{h}"} for h in obs.derived_from],
        "performer": [{"display": obs.produced_by}],
    }


def build_bundle(observations: list[Observation], pseudonym: str,
                 window_start: int, window_end: int) -> ObservationBundle:
    """Bundle of the done-run observations for one subject in [start, end)."""
    if window_start >= window_end:
        raise ValueError("window start must precede window end")
    selected = [
        obs for obs in observations
        if obs.subject_pseudonym == pseudonym
        and window_start <= obs.effective_time < window_end
    ]
    selected.sort(key=lambda o: (o.effective_time, o.code, o.produced_by))
    entries = tuple(observation_resource(o) for o in selected)
    digest_src = json.dumps(
        [pseudonym, window_start, window_end, [e["id"] for e in entries]],
        separators=(",", ":"))
    return ObservationBundle(
        bundle_id=content_hash(digest_src.encode())[:32],
        generated_at=window_end,
        subject_pseudonym=pseudonym,
        empty=not entries,
        entries=entries,
    )


def entry_to_observation(resource: dict) -> Observation:
    """Inverse of observation_resource (used by re-identification tooling)."""
    stamp = resource["effectiveDateTime"]
    dt = datetime.strptime(stamp, "%Y-%m-%dT%H:%M:%S.%fZ").replace(tzinfo=timezone.utc)
    return Observation(
        code=resource["code"]["code"],
        subject_pseudonym=resource["subject"]["reference"].split("/", 1)[1],
        effective_time=int(dt.timestamp() * 1000),
        value=resource["valueQuantity"]["value"],
        unit=resource["valueQuantity"]["unit"],
        derived_from=tuple(ref["reference"].split("/", 1)[1]
                           for ref in resource["derivedFrom"]),
        produced_by=resource["performer"][0]["display"],
    )


def bundle_schema() -> dict:
    raw = resources.files("rehabpipe.export").joinpath("bundle_schema.json").read_text()
    return json.loads(raw)


def validate_bundle(bundle: dict) -> None:
    """Raise jsonschema.ValidationError when the bundle violates the shipped schema."""
    jsonschema.validate(bundle, bundle_schema())
