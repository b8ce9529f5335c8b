"""Simulation harness: synthetic cohorts, multi-node scenarios, audits."""

from rehabpipe.simharness.synth import (
    SIM_EPOCH_MS,
    ScenarioConfig,
    Submission,
    SyntheticPatient,
    generate_day,
    roster,
)

__all__ = [
    "SIM_EPOCH_MS",
    "ScenarioConfig",
    "Submission",
    "SyntheticPatient",
    "generate_day",
    "roster",
]
