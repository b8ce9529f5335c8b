"""Accelerometer intensity metrics: activity bands and bilateral arm use.

Intensity is Euclidean-norm-minus-one in milli-g, averaged over fixed
non-overlapping epochs; trailing partial epochs are discarded so band minutes
conserve exactly. Epoch assignment uses one arithmetic form shared with the
test oracles, floor((t - origin) / epoch_s) on float64, so vectorized and
scalar evaluation agree bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from rehabpipe.model import (
    BlockKind,
    BodyLocation,
    Observation,
    TimeSeriesBlock,
    ValidationError,
    ensure_valid,
)

DEFAULT_EPOCH_S = 5.0
DEFAULT_MODERATE_MG = 100.0
DEFAULT_VIGOROUS_MG = 400.0
DEFAULT_ARM_EPOCH_S = 1.0
DEFAULT_ACTIVE_MG = 30.0


@dataclass(frozen=True)
class ActivityBands:
    low_min: float
    moderate_min: float
    vigorous_min: float
    epoch_s: float
    moderate_mg: float
    vigorous_mg: float


def enmo_mg(samples: np.ndarray) -> np.ndarray:
    """Per-sample max(0, ||a||2 - 1) in milli-g; input in g, shape (N, 3)."""
    return np.maximum(np.linalg.norm(samples, axis=1) - 1.0, 0.0) * 1000.0


def _require_accel(block: TimeSeriesBlock, argname: str) -> None:
    ensure_valid(block)
    if block.block_kind is not BlockKind.ACCEL:
        raise ValidationError(argname, "needs an accelerometer block")
    if block.samples.shape[1] != 3:
        raise ValidationError(f"{argname}.channel_names", "needs 3 channels (x, y, z)")


def epoch_mean_intensity(block: TimeSeriesBlock, epoch_s: float,
                         n_epochs: int) -> np.ndarray:
    """Mean intensity (mg) per full epoch, epochs anchored at the block start."""
    samples_per_epoch = block.sample_rate_hz * epoch_s
    idx = np.floor(np.arange(block.n_samples) / samples_per_epoch).astype(np.int64)
    mask = idx < n_epochs
    intensity = enmo_mg(block.samples)
    sums = np.bincount(idx[mask], weights=intensity[mask], minlength=n_epochs)
    counts = np.bincount(idx[mask], minlength=n_epochs)
    counts[counts == 0] = 1
    return sums / counts


def activity_bands(block: TimeSeriesBlock, *,
                   epoch_s: float = DEFAULT_EPOCH_S,
                   moderate_mg: float = DEFAULT_MODERATE_MG,
                   vigorous_mg: float = DEFAULT_VIGOROUS_MG) -> ActivityBands:
    """Classify each full epoch into low / moderate / vigorous minutes."""
    _require_accel(block, "block")
    n_epochs = int(block.duration_s / epoch_s)
    if n_epochs < 1:
        raise ValidationError("samples", "block shorter than one epoch")
    means = epoch_mean_intensity(block, epoch_s, n_epochs)
    vigorous = int(np.count_nonzero(means >= vigorous_mg))
    moderate = int(np.count_nonzero(means >= moderate_mg)) - vigorous
    low = n_epochs - moderate - vigorous
    to_min = epoch_s / 60.0
    return ActivityBands(
        low_min=low * to_min,
        moderate_min=moderate * to_min,
        vigorous_min=vigorous * to_min,
        epoch_s=epoch_s,
        moderate_mg=moderate_mg,
        vigorous_mg=vigorous_mg,
    )


def activity_observations(block: TimeSeriesBlock, block_hash: str,
                          bands: ActivityBands, produced_by: str) -> list[Observation]:
    def obs(code: str, value: float) -> Observation:
        return Observation(
            code=code,
            subject_pseudonym=block.subject.pseudonym,
            effective_time=block.start_time,
            value=value,
            unit="min",
            derived_from=(block_hash,),
            produced_by=produced_by,
        )

    return [
        obs("activity_low_min", bands.low_min),
        obs("activity_moderate_min", bands.moderate_min),
        obs("activity_vigorous_min", bands.vigorous_min),
    ]


def _active_epochs(block: TimeSeriesBlock, overlap_start_s: float,
                   n_epochs: int, epoch_s: float, active_mg: float) -> int:
    """Count epochs (anchored at overlap start) whose mean intensity >= threshold."""
    times_s = block.start_time / 1000.0 + np.arange(block.n_samples) / block.sample_rate_hz
    idx_f = np.floor((times_s - overlap_start_s) / epoch_s)
    mask = (idx_f >= 0) & (idx_f < n_epochs)
    idx = idx_f[mask].astype(np.int64)
    intensity = enmo_mg(block.samples)[mask]
    sums = np.bincount(idx, weights=intensity, minlength=n_epochs)
    counts = np.bincount(idx, minlength=n_epochs)
    counts_safe = np.where(counts == 0, 1, counts)
    means = sums / counts_safe
    return int(np.count_nonzero((means >= active_mg) & (counts > 0)))


_RATIO_GRID = float(2 ** 30)


def _symmetric_ratio(left_count: int, right_count: int) -> float:
    # quantized to the 2^-30 dyadic grid: swapping sides then yields exactly
    # 1 - ratio in float64, and the grid error (<= 2^-31) is far inside the
    # 1e-9 contract tolerance
    quantized = round(left_count / (left_count + right_count) * _RATIO_GRID)
    return quantized / _RATIO_GRID


def arm_use(left: TimeSeriesBlock, right: TimeSeriesBlock, *,
            epoch_s: float = DEFAULT_ARM_EPOCH_S,
            active_mg: float = DEFAULT_ACTIVE_MG,
            block_hashes: tuple[str, str] = ("0" * 64, "1" * 64),
            produced_by: str = "arm_use") -> list[Observation]:
    """Bilateral arm activity over the overlapping range, per 1 s epoch.

    Emits active minutes per arm plus the left-use ratio; the ratio is
    omitted when neither arm was active. Codes carry the context suffix.
    """
    _require_accel(left, "left")
    _require_accel(right, "right")
    if left.body_location is not BodyLocation.WRIST_LEFT:
        raise ValidationError("left.body_location", "must be wrist_left")
    if right.body_location is not BodyLocation.WRIST_RIGHT:
        raise ValidationError("right.body_location", "must be wrist_right")
    if left.subject.pseudonym != right.subject.pseudonym:
        raise ValidationError("right.subject", "blocks must share a subject")
    if left.context is not right.context:
        raise ValidationError("right.context", "blocks must share a context")
    overlap_start = max(left.start_time, right.start_time)
    overlap_end = min(left.end_time, right.end_time)
    if overlap_end <= overlap_start:
        raise ValidationError("right.start_time", "time ranges do not overlap")
    n_epochs = int((overlap_end - overlap_start) / 1000.0 / epoch_s)
    if n_epochs < 1:
        raise ValidationError("right.start_time", "overlap shorter than one epoch")

    overlap_start_s = overlap_start / 1000.0
    left_active = _active_epochs(left, overlap_start_s, n_epochs, epoch_s, active_mg)
    right_active = _active_epochs(right, overlap_start_s, n_epochs, epoch_s, active_mg)

    suffix = left.context.value
    to_min = epoch_s / 60.0

    def obs(code: str, value: float, unit: str) -> Observation:
        return Observation(
            code=f"{code}_{suffix}",
            subject_pseudonym=left.subject.pseudonym,
            effective_time=overlap_start,
            value=value,
            unit=unit,
            derived_from=block_hashes,
            produced_by=produced_by,
        )

    out = [
        obs("arm_use_left_min", left_active * to_min, "min"),
        obs("arm_use_right_min", right_active * to_min, "min"),
    ]
    if left_active + right_active > 0:
        out.append(obs("arm_use_ratio", _symmetric_ratio(left_active, right_active), "1"))
    return out


def blob_inventory(block: TimeSeriesBlock, block_hash: str,
                   produced_by: str) -> Observation:
    """Inventory observation for opaque blobs so dashboards can show adherence."""
    ensure_valid(block)
    return Observation(
        code="blob_recorded",
        subject_pseudonym=block.subject.pseudonym,
        effective_time=block.start_time,
        value=float(block.payload_byte_length),
        unit="B",
        derived_from=(block_hash,),
        produced_by=produced_by,
    )
