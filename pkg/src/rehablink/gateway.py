"""Ingestion gateway: the door through which capture apps submit assessments.

Validation is strict and happens before anything is persisted, so a failed
submission leaves no trace: device and code must be known, payload kinds
must be legal for the assessment's modalities, and payload content must
parse (IMU streams decode, questionnaire vectors pass arity and range
checks). Duplicates are detected by content hash, not by (patient, code,
time): re-capturing after a device failure is a new record, merely flagged
with ``duplicate_of``.

Questionnaire payloads must declare the instrument matching the assessment
code; the usability questionnaire (SUS) is the one exception and may ride
along any tablet-capable assessment.
"""

from __future__ import annotations

import hashlib
import json
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterator

from .errors import (
    EmptyPayload,
    IllegalPayloadKind,
    MalformedPayload,
    SchemaVersionUnsupported,
    UnknownAssessmentCode,
    UnknownDevice,
    UnknownPatient,
)
from .imu import decode_stream
from .instruments import ItemVector
from .model import (
    AssessmentRecord,
    DeviceDescriptor,
    Modality,
    PatientRecord,
    PayloadKind,
    PayloadRef,
    iso_week,
)
from .registry import battery_registry
from .store import Store

SUPPORTED_SCHEMA_VERSIONS = (1,)

QUESTIONNAIRE_CODES = ("FSS", "HADS", "BDI2", "ESS", "FSMC")


@dataclass(frozen=True)
class SubmissionEnvelope:
    patient_id: str
    code: str
    captured_at: datetime
    device_id: str
    parts: tuple[tuple[PayloadKind, bytes], ...]
    client_schema_version: int = 1


@dataclass(frozen=True)
class Receipt:
    record_id: str
    content_hashes: tuple[str, ...]
    duplicate_of: str | None = None


@dataclass
class ComplianceEntry:
    expected: int
    captured: int

    @property
    def ratio(self) -> float:
        return self.captured / self.expected if self.expected else 0.0


class Gateway:
    def __init__(self, store: Store):
        self.store = store

    # -- registration

    def register_device(self, descriptor: DeviceDescriptor) -> str:
        if descriptor.registered_at is None:
            descriptor = DeviceDescriptor(
                descriptor.device_id, descriptor.device_kind,
                descriptor.firmware_version, datetime.now(timezone.utc))
        self.store.put_device(descriptor)
        return descriptor.device_id

    def register_patient(self, patient: PatientRecord) -> None:
        self.store.put_patient(patient)

    # -- submission

    def submit_assessment(self, envelope: SubmissionEnvelope) -> Receipt:
        self._validate(envelope)
        hashes = tuple(hashlib.sha256(data).hexdigest()
                       for _, data in envelope.parts)
        duplicate_of = self.store.find_duplicate(
            envelope.patient_id, envelope.code, hashes)

        if envelope.patient_id not in self.store.patients:
            # capture apps know only the pseudonym; side is set by clinicians
            self.store.put_patient(PatientRecord(envelope.patient_id))

        record_id = f"rec-{uuid.uuid4().hex}"
        stored: list[str] = []
        refs = []
        try:
            for i, ((kind, data), digest) in enumerate(zip(envelope.parts, hashes)):
                _, uri = self.store.store_payload(data)
                stored.append(digest)
                refs.append(PayloadRef(
                    payload_id=f"{record_id}-p{i}",
                    kind=kind,
                    content_hash=digest,
                    byte_length=len(data),
                    uri=uri,
                ))
            self.store.add_record(AssessmentRecord(
                record_id=record_id,
                patient_id=envelope.patient_id,
                code=envelope.code,
                captured_at=envelope.captured_at,
                payloads=tuple(refs),
                duplicate_of=duplicate_of,
            ))
        except Exception:
            for digest in stored:
                if self.store.find_payload_owner(digest) is None:
                    self.store.discard_payload(digest)
            raise
        return Receipt(record_id, hashes, duplicate_of)

    def _validate(self, envelope: SubmissionEnvelope) -> None:
        if envelope.client_schema_version not in SUPPORTED_SCHEMA_VERSIONS:
            raise SchemaVersionUnsupported(
                f"schema version {envelope.client_schema_version}")
        if not self.store.has_device(envelope.device_id):
            raise UnknownDevice(envelope.device_id)
        definition = battery_registry().get(envelope.code)
        if definition is None:
            raise UnknownAssessmentCode(envelope.code)
        if not envelope.parts:
            raise EmptyPayload("envelope carries no payload parts")
        legal = definition.legal_payload_kinds()
        for kind, data in envelope.parts:
            if kind not in legal:
                raise IllegalPayloadKind(
                    f"{kind.value} not allowed for {envelope.code}")
            if not data:
                raise EmptyPayload(f"empty {kind.value} part")
            self._validate_content(envelope.code, definition, kind, data)

    def _validate_content(self, code: str, definition, kind: PayloadKind,
                          data: bytes) -> None:
        if kind is PayloadKind.IMU_STREAM:
            decode_stream(data)  # raises MalformedPayload on garbage
        elif kind is PayloadKind.QUESTIONNAIRE_ITEMS:
            doc = _parse_json(data, "questionnaire payload")
            instrument = doc.get("instrument")
            items = doc.get("items")
            if not isinstance(items, list) or doc.get("item_count") != len(items):
                raise MalformedPayload(
                    "questionnaire payload needs items plus a matching item_count")
            rider = (instrument == "SUS"
                     and Modality.TABLET in definition.modalities)
            if instrument != code and not rider:
                raise MalformedPayload(
                    f"instrument {instrument!r} does not belong to {code}")
            ItemVector(instrument, tuple(items))  # arity/range checked at the door
        elif kind is PayloadKind.MANUAL_SCORES:
            doc = _parse_json(data, "manual scores payload")
            if code == "ARAT":
                if doc.get("instrument") != "ARAT":
                    raise MalformedPayload("ARAT manual scores must declare the instrument")
                ItemVector("ARAT", tuple(doc.get("items", ())))
            elif code == "WALK10M":
                duration = doc.get("duration_s")
                if not isinstance(duration, (int, float)) or duration <= 0:
                    raise MalformedPayload("walk test needs a positive duration_s")
            elif code in QUESTIONNAIRE_CODES:
                ItemVector(code, tuple(doc.get("items", ())))
        # audio/video blobs are opaque by design

    # -- compliance

    def schedule_compliance(self, patient_id: str,
                            week: str) -> dict[str, ComplianceEntry]:
        """Captured vs expected counts per battery row for one ISO week."""
        self.store.get_patient(patient_id)  # raises UnknownPatient
        _validate_week(week)
        counts: dict[str, int] = {}
        for rec in self.store.list_records(patient_id=patient_id):
            if iso_week(rec.captured_at) == week:
                counts[rec.code] = counts.get(rec.code, 0) + 1
        out = {}
        for code, definition in battery_registry().items():
            effective = definition.capture_alias or code
            out[code] = ComplianceEntry(
                expected=definition.per_week,
                captured=counts.get(effective, 0),
            )
        return out


def _parse_json(data: bytes, what: str) -> dict:
    try:
        doc = json.loads(data.decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as exc:
        raise MalformedPayload(f"{what} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise MalformedPayload(f"{what} must be a JSON object")
    return doc


def _validate_week(week: str) -> None:
    try:
        year, w = week.split("-W")
        if not (1 <= int(w) <= 53 and len(year) == 4):
            raise ValueError
        int(year)
    except ValueError:
        raise UnknownPatient(f"bad ISO week {week!r}") from None


# -- directory-drop ingestion ----------------------------------------------------
#
# Desk-scale envelope layout: one directory per envelope holding
# ``envelope.json`` ({patient_id, code, captured_at, device_id,
# schema_version, parts: [{kind, file}]}) next to its payload files.

def load_envelope_dir(path: Path | str) -> SubmissionEnvelope:
    path = Path(path)
    meta = json.loads((path / "envelope.json").read_text())
    parts = tuple(
        (PayloadKind(p["kind"]), (path / p["file"]).read_bytes())
        for p in meta["parts"])
    return SubmissionEnvelope(
        patient_id=meta["patient_id"],
        code=meta["code"],
        captured_at=datetime.fromisoformat(meta["captured_at"]),
        device_id=meta["device_id"],
        parts=parts,
        client_schema_version=int(meta.get("schema_version", 1)),
    )


def iter_envelope_dirs(root: Path | str) -> Iterator[Path]:
    root = Path(root)
    for candidate in sorted(root.rglob("envelope.json")):
        yield candidate.parent


def write_envelope_dir(envelope: SubmissionEnvelope, path: Path | str) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    parts_meta = []
    for i, (kind, data) in enumerate(envelope.parts):
        name = f"part{i:02d}.{kind.value}"
        (path / name).write_bytes(data)
        parts_meta.append({"kind": kind.value, "file": name})
    (path / "envelope.json").write_text(json.dumps({
        "patient_id": envelope.patient_id,
        "code": envelope.code,
        "captured_at": envelope.captured_at.isoformat(),
        "device_id": envelope.device_id,
        "schema_version": envelope.client_schema_version,
        "parts": parts_meta,
    }, indent=2))
    return path
