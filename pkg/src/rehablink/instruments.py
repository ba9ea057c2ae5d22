"""Scoring for the questionnaire instruments and the ARAT.

Item vectors are validated for arity and per-item range before any score is
computed (ingestion calls the same validation, so garbage is rejected at the
door). Scores are returned as (metric_code, value) pairs; the processing
stage wraps them into ObservationResults with record context attached.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ArityError, NonPositiveDuration, RangeError, UnknownInstrument
from .registry import derivation_config, metric_registry


@dataclass(frozen=True)
class ItemVector:
    instrument: str
    items: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(int(i) for i in self.items))
        validate_items(self.instrument, self.items)


@dataclass(frozen=True)
class ScoredValue:
    metric_code: str
    value: float

    @property
    def unit(self) -> str:
        return metric_registry()[self.metric_code].unit


def _spec(instrument: str) -> dict:
    specs = derivation_config()["instruments"]
    if instrument not in specs:
        raise UnknownInstrument(instrument)
    return specs[instrument]


def validate_items(instrument: str, items: tuple[int, ...]) -> None:
    spec = _spec(instrument)
    if len(items) != spec["items"]:
        raise ArityError(
            f"{instrument} expects {spec['items']} items, got {len(items)}")
    lo, hi = spec["item_min"], spec["item_max"]
    for pos, item in enumerate(items, start=1):
        if not (lo <= item <= hi):
            raise RangeError(
                f"{instrument} item {pos} = {item} outside [{lo}, {hi}]")


def _subset_sum(items: tuple[int, ...], positions: list[int]) -> int:
    return sum(items[p - 1] for p in positions)


def score_arat(vector: ItemVector) -> dict[str, int]:
    """ARAT total plus the four subscale sums.

    Subscale index groups come from the derivation config; the subscales
    always partition the 19 items, so they re-add to the total.
    """
    if vector.instrument != "ARAT":
        raise UnknownInstrument(f"expected ARAT vector, got {vector.instrument}")
    ranges = _spec("ARAT")["subscales"]
    out = {"total": sum(vector.items)}
    for name, (lo, hi) in ranges.items():
        out[name] = sum(vector.items[lo - 1:hi])
    return out


def walking_speed(distance_m: float, duration_s: float) -> float:
    """Walking speed in m/s over the fixed test distance."""
    if duration_s <= 0:
        raise NonPositiveDuration(f"duration_s = {duration_s}")
    return distance_m / duration_s


def score_questionnaire(vector: ItemVector) -> list[ScoredValue]:
    """Score one instrument's item vector into its metric values.

    FSS reports the item mean; HADS and FSMC split into two subscale sums
    via the configured item maps; BDI2 and ESS are plain sums; SUS applies
    the usual odd/even rescaling to a 0-100 usability score. ARAT vectors
    are accepted here too and expand to total plus subscales.
    """
    inst, items = vector.instrument, vector.items
    if inst == "FSS":
        return [ScoredValue("FSS", sum(items) / len(items))]
    if inst == "HADS":
        spec = _spec("HADS")
        return [
            ScoredValue("HADS_A", float(_subset_sum(items, spec["anxiety_items"]))),
            ScoredValue("HADS_D", float(_subset_sum(items, spec["depression_items"]))),
        ]
    if inst == "BDI2":
        return [ScoredValue("BDI2", float(sum(items)))]
    if inst == "ESS":
        return [ScoredValue("ESS", float(sum(items)))]
    if inst == "FSMC":
        spec = _spec("FSMC")
        motor = _subset_sum(items, spec["motor_items"])
        cog = _subset_sum(items, spec["cognitive_items"])
        return [
            ScoredValue("FSMC_MOTOR", float(motor)),
            ScoredValue("FSMC_COG", float(cog)),
            ScoredValue("FSMC_TOTAL", float(motor + cog)),
        ]
    if inst == "SUS":
        odd = sum(items[i] - 1 for i in range(0, 10, 2))
        even = sum(5 - items[i] for i in range(1, 10, 2))
        return [ScoredValue("SUS", (odd + even) * 2.5)]
    if inst == "ARAT":
        scores = score_arat(vector)
        return [
            ScoredValue("ARAT_TOTAL", float(scores["total"])),
            ScoredValue("ARAT_GRASP", float(scores["grasp"])),
            ScoredValue("ARAT_GRIP", float(scores["grip"])),
            ScoredValue("ARAT_PINCH", float(scores["pinch"])),
            ScoredValue("ARAT_GROSS", float(scores["gross"])),
        ]
    raise UnknownInstrument(inst)
