"""ORU^R01 result return and observation extraction from inbound messages.

The observation vocabulary is local (no LOINC): OBX-3 carries
``<observation_id>^<display>`` with ids equal to our metric codes, which
makes the weekly extract the exact inverse of the daily return.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime
from functools import lru_cache

from .errors import EmptyResults, UnmappedMetric
from .er7 import EncodingChars, Hl7Message, Segment, fld, message, msh_segment
from .model import ObservationResult, PatientRecord
from .registry import _load_yaml, metric_registry

HL7_TS = "%Y%m%d%H%M%S"
HL7_TS_TZ = "%Y%m%d%H%M%S%z"


@dataclass(frozen=True)
class ObservationMapping:
    value_type: str  # NM or ST
    observation_id: str
    display: str
    units: str


@lru_cache(maxsize=1)
def observation_mappings() -> dict[str, ObservationMapping]:
    raw = _load_yaml("hl7_mapping.yaml")
    mappings = {}
    for code, entry in raw["observations"].items():
        m = ObservationMapping(
            value_type=entry["value_type"],
            observation_id=entry["observation_id"],
            display=entry["display"],
            units=entry["units"],
        )
        reg = metric_registry().get(code)
        if reg is None or reg.unit != m.units:
            raise ValueError(
                f"hl7 mapping for {code} disagrees with the metric registry")
        mappings[code] = m
    return mappings


@lru_cache(maxsize=1)
def message_defaults() -> dict:
    return _load_yaml("hl7_mapping.yaml")["message_defaults"]


def format_number(value: float) -> str:
    """Shortest decimal text that parses back to the same float."""
    if value == int(value) and abs(value) < 1e15:
        return str(int(value))
    return repr(float(value))


def fmt_ts(ts: datetime, with_offset: bool = True) -> str:
    return ts.strftime(HL7_TS_TZ if with_offset else HL7_TS)


def parse_ts(text: str) -> datetime | None:
    for fmt in (HL7_TS_TZ, HL7_TS):
        try:
            return datetime.strptime(text, fmt)
        except ValueError:
            continue
    return None


def build_oru(patient: PatientRecord,
              results: list[ObservationResult],
              generated_at: datetime,
              control_id: str | None = None) -> Hl7Message:
    """One ORU^R01 carrying the given results for one patient.

    Results are grouped by their source record: one OBR per assessment,
    OBX set-ids restarting at 1 inside each group.
    """
    if not results:
        raise EmptyResults("no results to return")
    for r in results:
        if r.patient_id != patient.patient_id:
            raise EmptyResults(
                f"result for {r.patient_id} mixed into {patient.patient_id}'s message")
        if r.metric_code not in observation_mappings():
            raise UnmappedMetric(r.metric_code)

    defaults = message_defaults()
    control = control_id or f"ORU-{results[0].source_record_id}"
    segments = [
        msh_segment([
            defaults["sending_application"], defaults["sending_facility"],
            defaults["receiving_application"], defaults["receiving_facility"],
            fmt_ts(generated_at, with_offset=False), "",
            ["ORU", "R01"], control, "P", str(defaults["hl7_version"]),
        ]),
        Segment("PID", (fld("1"), fld(""), fld(patient.patient_id))),
    ]
    groups: dict[str, list[ObservationResult]] = {}
    for r in results:
        groups.setdefault(r.source_record_id, []).append(r)
    for obr_idx, (record_id, group) in enumerate(groups.items(), start=1):
        segments.append(Segment("OBR", (
            fld(str(obr_idx)),
            fld(""),
            fld(record_id),
            fld(""),
            fld(""),
            fld(""),
            fld(fmt_ts(group[0].computed_at)),
        )))
        for obx_idx, r in enumerate(group, start=1):
            m = observation_mappings()[r.metric_code]
            segments.append(Segment("OBX", (
                fld(str(obx_idx)),
                fld(m.value_type),
                fld([m.observation_id, m.display]),
                fld(""),
                fld(format_number(r.value)),
                fld(m.units),
                fld(""), fld(""), fld(""), fld(""),
                fld("F"),
                fld(""),
                fld(""),
                fld(fmt_ts(r.computed_at)),
                fld(""),
                fld(""),
                fld(""),
                fld(""),
                fld(r.derivation_version),
            )))
    return message(segments, EncodingChars())


@dataclass(frozen=True)
class ExtractedObservation:
    metric_code: str
    value: float
    unit: str
    observed_at: datetime | None


@dataclass(frozen=True)
class ExtractCandidate:
    patient_id: str
    source_ref: str  # OBR-3 filler id (our record_id on round-trips)
    control_id: str
    observations: tuple[ExtractedObservation, ...]
    observed_at: datetime | None = None
    notes: tuple[str, ...] = ()


@dataclass
class ExtractBatch:
    records: list[ExtractCandidate] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    group_count: int = 0


def extract_batch(messages: list[Hl7Message]) -> ExtractBatch:
    """Map inbound observation groups back to metric codes.

    Fully tolerant: unknown observation ids or unparsable values produce
    warnings and never abort the batch. A group yields a candidate when at
    least one of its observations is recognized; otherwise it is skipped
    (records + skipped groups always equals the group count).
    """
    out = ExtractBatch()
    known = observation_mappings()
    for mi, msg in enumerate(messages):
        control = msg.value("MSH", 10)
        pid = msg.value("PID", 3)
        if not pid:
            out.warnings.append(f"message {control or mi}: no PID-3, skipped")
            continue
        groups = _obr_groups(msg)
        for obr, obxs in groups:
            out.group_count += 1
            source_ref = obr.value(3) if obr is not None else ""
            observed = parse_ts(obr.value(7)) if obr is not None else None
            observations = []
            notes = []
            for obx in obxs:
                if obx.id == "NTE":
                    notes.append(obx.value(3))
                    continue
                obs_id = obx.value(3)
                if obs_id not in known:
                    out.warnings.append(
                        f"message {control or mi}: unknown observation id {obs_id!r}")
                    continue
                raw_value = obx.value(5)
                try:
                    value = float(raw_value)
                except ValueError:
                    out.warnings.append(
                        f"message {control or mi}: {obs_id} value {raw_value!r} not numeric")
                    continue
                observations.append(ExtractedObservation(
                    metric_code=obs_id,
                    value=value,
                    unit=obx.value(6) or known[obs_id].units,
                    observed_at=parse_ts(obx.value(14)),
                ))
            if observations:
                out.records.append(ExtractCandidate(
                    patient_id=pid,
                    source_ref=source_ref,
                    control_id=control,
                    observations=tuple(observations),
                    observed_at=observed,
                    notes=tuple(notes),
                ))
    return out


def _obr_groups(msg: Hl7Message) -> list[tuple[Segment | None, list[Segment]]]:
    """OBR-led observation groups; leading OBXs form a headless group."""
    groups: list[tuple[Segment | None, list[Segment]]] = []
    current: list[Segment] | None = None
    for seg in msg.segments[1:]:
        if seg.id == "OBR":
            current = []
            groups.append((seg, current))
        elif seg.id in ("OBX", "NTE"):
            if current is None:
                current = []
                groups.append((None, current))
            current.append(seg)
    return groups
