"""Battery and metric registries, loaded from the shipped config files.

The registries are read-only after load and safe for concurrent reads.
``battery_registry()`` returns the assessment battery exactly as configured;
``metric_registry()`` returns the emitted-metric vocabulary with fixed units
and closed value ranges.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import yaml

from .errors import RangeError
from .model import Modality, ObservationResult, PayloadKind

# Payload kinds a modality may legally carry. Therapist-entered scores
# (manual_scores) are accepted for every assessment.
MODALITY_KINDS: dict[Modality, frozenset[PayloadKind]] = {
    Modality.IMU: frozenset({PayloadKind.IMU_STREAM}),
    Modality.TABLET: frozenset({PayloadKind.QUESTIONNAIRE_ITEMS, PayloadKind.MANUAL_SCORES}),
    Modality.AUDIO: frozenset({PayloadKind.AUDIO_BLOB}),
    Modality.VIDEO: frozenset({PayloadKind.VIDEO_BLOB}),
}


@dataclass(frozen=True)
class AssessmentDefinition:
    code: str
    display: str
    outcome_domain: str
    measure_text: str
    per_week: int
    modalities: frozenset[Modality]
    capture_alias: str | None = None  # data for this row arrives in another row's capture

    def legal_payload_kinds(self) -> frozenset[PayloadKind]:
        kinds: set[PayloadKind] = {PayloadKind.MANUAL_SCORES}
        for m in self.modalities:
            kinds |= MODALITY_KINDS[m]
        return frozenset(kinds)


@dataclass(frozen=True)
class MetricSpec:
    code: str
    unit: str
    lo: float
    hi: float
    display: str

    def check(self, value: float) -> None:
        if math.isnan(value) or not (self.lo <= value <= self.hi):
            raise RangeError(
                f"{self.code} value {value} outside [{self.lo}, {self.hi}]")


def _load_yaml(name: str) -> dict:
    with resources.files("rehablink.configs").joinpath(name).open("r") as fh:
        return yaml.safe_load(fh)


@lru_cache(maxsize=1)
def battery_registry() -> dict[str, AssessmentDefinition]:
    raw = _load_yaml("battery.yaml")
    defs = {}
    for row in raw["assessments"]:
        d = AssessmentDefinition(
            code=row["code"],
            display=row["display"],
            outcome_domain=row["outcome_domain"],
            measure_text=row["measure"],
            per_week=int(row["per_week"]),
            modalities=frozenset(Modality(m) for m in row["modalities"]),
            capture_alias=row.get("capture_alias"),
        )
        if d.per_week not in (2, 3, 5):
            raise ValueError(f"{d.code}: per_week {d.per_week} not a battery frequency")
        defs[d.code] = d
    for d in defs.values():
        if d.capture_alias is not None and d.capture_alias not in defs:
            raise ValueError(f"{d.code}: capture_alias {d.capture_alias} unknown")
    return defs


@lru_cache(maxsize=1)
def derivation_config() -> dict:
    return _load_yaml("derivation.yaml")


def derivation_version() -> str:
    return str(derivation_config()["version"])


@lru_cache(maxsize=1)
def metric_registry() -> dict[str, MetricSpec]:
    raw = derivation_config()["metrics"]
    return {
        code: MetricSpec(
            code=code,
            unit=entry["unit"],
            lo=float(entry["range"][0]),
            hi=float(entry["range"][1]),
            display=entry["display"],
        )
        for code, entry in raw.items()
    }


def check_result(result: ObservationResult) -> ObservationResult:
    """Validate an observation against the metric registry; returns it unchanged."""
    spec = metric_registry().get(result.metric_code)
    if spec is None:
        raise RangeError(f"unknown metric_code {result.metric_code}")
    if result.unit != spec.unit:
        raise RangeError(
            f"{result.metric_code}: unit {result.unit!r} != registry {spec.unit!r}")
    spec.check(result.value)
    return result
