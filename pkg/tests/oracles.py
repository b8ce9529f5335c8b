"""Independent brute-force oracles for the analytics services.

Plain-Python loops only (no numpy vectorization, no imports from the
implementation's computation paths) so these stay an independent check.
Epoch assignment uses the same arithmetic *definition* as the contract
(floor((t - origin)/epoch) on float64) evaluated scalar-by-scalar.
"""

from __future__ import annotations

import math


def oracle_enmo_mg(row) -> float:
    return max(0.0, math.sqrt(row[0] ** 2 + row[1] ** 2 + row[2] ** 2) - 1.0) * 1000.0


def oracle_activity_bands(samples, rate: float, epoch_s: float,
                          moderate_mg: float, vigorous_mg: float):
    """(low_min, moderate_min, vigorous_min) by per-epoch loop."""
    n = len(samples)
    duration_s = n / rate
    n_epochs = int(duration_s / epoch_s)
    samples_per_epoch = rate * epoch_s
    sums = [0.0] * n_epochs
    counts = [0] * n_epochs
    for i in range(n):
        e = math.floor(i / samples_per_epoch)
        if e < n_epochs:
            sums[e] += oracle_enmo_mg(samples[i])
            counts[e] += 1
    low = moderate = vigorous = 0
    for e in range(n_epochs):
        mean = sums[e] / counts[e] if counts[e] else 0.0
        if mean >= vigorous_mg:
            vigorous += 1
        elif mean >= moderate_mg:
            moderate += 1
        else:
            low += 1
    to_min = epoch_s / 60.0
    return low * to_min, moderate * to_min, vigorous * to_min, n_epochs


def oracle_active_epoch_count(samples, rate: float, start_ms: int,
                              overlap_start_ms: int, n_epochs: int,
                              epoch_s: float, active_mg: float) -> int:
    overlap_start_s = overlap_start_ms / 1000.0
    sums = [0.0] * n_epochs
    counts = [0] * n_epochs
    for i in range(len(samples)):
        t_s = start_ms / 1000.0 + i / rate
        e = math.floor((t_s - overlap_start_s) / epoch_s)
        if 0 <= e < n_epochs:
            sums[e] += oracle_enmo_mg(samples[i])
            counts[e] += 1
    active = 0
    for e in range(n_epochs):
        if counts[e] and sums[e] / counts[e] >= active_mg:
            active += 1
    return active


def oracle_scores(instrument: str, responses: list[float]) -> dict[str, float]:
    """Expected observation codes/values by direct summation."""
    if instrument == "arat":
        return {"arat_total": float(sum(responses))}
    if instrument == "fss":
        return {"fss_mean": sum(responses) / len(responses)}
    if instrument == "bdi2":
        return {"bdi2_total": float(sum(responses))}
    if instrument == "ess":
        return {"ess_total": float(sum(responses))}
    if instrument == "hads":
        anxiety = sum(responses[p - 1] for p in (1, 3, 5, 7, 9, 11, 13))
        return {"hads_anxiety": float(anxiety),
                "hads_depression": float(sum(responses) - anxiety)}
    if instrument == "fsmc":
        cognitive = sum(responses[p - 1] for p in range(1, 21, 2))
        return {"fsmc_cognitive": float(cognitive),
                "fsmc_motor": float(sum(responses) - cognitive)}
    raise AssertionError(f"no oracle for {instrument}")
