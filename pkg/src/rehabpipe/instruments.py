"""Clinical instrument definitions: item counts, response ranges, subscales.

Item-index sets are configuration data, not code, so a clinic can correct
them without a release: ``load_instrument_config`` merges a JSON override
file over the defaults below. Subscale indices are 1-based item positions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path


@dataclass(frozen=True)
class InstrumentSpec:
    item_count: int
    response_min: float
    response_max: float
    integer_items: bool = True
    # subscale name -> 1-based item positions; empty means total-only
    subscales: dict[str, tuple[int, ...]] = field(default_factory=dict)


_DEFAULTS: dict[str, InstrumentSpec] = {
    # Action Research Arm Test: 19 items, 0-3, total 0-57
    "arat": InstrumentSpec(19, 0, 3),
    # Fatigue Severity Scale: 9 items, 1-7, scored as the mean
    "fss": InstrumentSpec(9, 1, 7),
    # Hospital Anxiety & Depression Scale: 14 items 0-3, odd items anxiety
    "hads": InstrumentSpec(
        14, 0, 3,
        subscales={
            "anxiety": (1, 3, 5, 7, 9, 11, 13),
            "depression": (2, 4, 6, 8, 10, 12, 14),
        },
    ),
    # Beck Depression Inventory II: 21 items 0-3, total 0-63
    "bdi2": InstrumentSpec(21, 0, 3),
    # Epworth Sleepiness Scale: 8 items 0-3, total 0-24
    "ess": InstrumentSpec(8, 0, 3),
    # Fatigue Scale for Motor and Cognitive Functions: 20 items 1-5,
    # ten items per subscale (split is config data; clinics may override)
    "fsmc": InstrumentSpec(
        20, 1, 5,
        subscales={
            "cognitive": tuple(range(1, 21, 2)),
            "motor": tuple(range(2, 21, 2)),
        },
    ),
}

_active: dict[str, InstrumentSpec] = dict(_DEFAULTS)


def instrument_spec(instrument: str) -> InstrumentSpec | None:
    """Spec for an item-scored instrument; None for free-form ones (e.g. tmwt)."""
    return _active.get(instrument)


def item_scored_instruments() -> tuple[str, ...]:
    return tuple(sorted(_active))


def load_instrument_config(path: str | Path) -> None:
    """Merge a JSON override: {name: {item_count, response_min, response_max,
    integer_items?, subscales?: {name: [positions]}}}."""
    raw = json.loads(Path(path).read_text())
    for name, cfg in raw.items():
        _active[name] = InstrumentSpec(
            item_count=int(cfg["item_count"]),
            response_min=float(cfg["response_min"]),
            response_max=float(cfg["response_max"]),
            integer_items=bool(cfg.get("integer_items", True)),
            subscales={
                sub: tuple(int(p) for p in positions)
                for sub, positions in cfg.get("subscales", {}).items()
            },
        )


def reset_instrument_config() -> None:
    _active.clear()
    _active.update(_DEFAULTS)
