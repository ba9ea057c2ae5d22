"""Shared domain types: patients, assessment records, observations, trajectories.

All types are immutable value objects. Mutation happens by deriving new
instances (see :meth:`AssessmentRecord.with_status`); the authoritative copy
lives in the trajectory store.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from datetime import date, datetime


class Side(str, enum.Enum):
    LEFT = "left"
    RIGHT = "right"
    UNKNOWN = "unknown"


class Modality(str, enum.Enum):
    IMU = "imu"
    VIDEO = "video"
    AUDIO = "audio"
    TABLET = "tablet"


class PayloadKind(str, enum.Enum):
    IMU_STREAM = "imu_stream"
    QUESTIONNAIRE_ITEMS = "questionnaire_items"
    AUDIO_BLOB = "audio_blob"
    VIDEO_BLOB = "video_blob"
    MANUAL_SCORES = "manual_scores"


class RecordStatus(str, enum.Enum):
    CAPTURED = "captured"
    ENCRYPTED = "encrypted"
    PROCESSING = "processing"
    PROCESSED = "processed"
    REINTEGRATED = "reintegrated"
    FAILED = "failed"
    DEAD_LETTERED = "dead_lettered"


# Record lifecycle. Failures are only reachable while a record is being
# worked on; a failed record either re-enters processing (retry) or is
# parked on the dead-letter queue.
LIFECYCLE_EDGES: frozenset[tuple[RecordStatus, RecordStatus]] = frozenset({
    (RecordStatus.CAPTURED, RecordStatus.ENCRYPTED),
    (RecordStatus.ENCRYPTED, RecordStatus.PROCESSING),
    (RecordStatus.PROCESSING, RecordStatus.PROCESSED),
    (RecordStatus.PROCESSED, RecordStatus.REINTEGRATED),
    (RecordStatus.PROCESSING, RecordStatus.FAILED),
    (RecordStatus.FAILED, RecordStatus.PROCESSING),
    (RecordStatus.FAILED, RecordStatus.DEAD_LETTERED),
})


def validate_transition(from_status: RecordStatus, to_status: RecordStatus) -> bool:
    """True iff ``from_status -> to_status`` is a legal lifecycle edge."""
    return (RecordStatus(from_status), RecordStatus(to_status)) in LIFECYCLE_EDGES


def _require_aware(ts: datetime, what: str) -> None:
    if ts.tzinfo is None or ts.utcoffset() is None:
        raise ValueError(f"{what} must carry a timezone offset")


@dataclass(frozen=True)
class PatientRecord:
    patient_id: str  # opaque pseudonym; no names or DOB anywhere downstream
    affected_side: Side = Side.UNKNOWN
    admission_date: date | None = None
    discharge_date: date | None = None
    cohort_tags: frozenset[str] = frozenset()

    def __post_init__(self):
        if not self.patient_id:
            raise ValueError("patient_id must be non-empty")
        if (self.discharge_date is not None and self.admission_date is not None
                and self.discharge_date < self.admission_date):
            raise ValueError("discharge_date precedes admission_date")


@dataclass(frozen=True)
class PayloadRef:
    payload_id: str
    kind: PayloadKind
    content_hash: str  # sha-256 hex digest of the stored bytes
    byte_length: int
    uri: str

    def __post_init__(self):
        if len(self.content_hash) != 64:
            raise ValueError("content_hash must be a 32-byte digest in hex")
        if self.byte_length <= 0:
            raise ValueError("byte_length must be positive")


@dataclass(frozen=True)
class AssessmentRecord:
    record_id: str
    patient_id: str
    code: str
    captured_at: datetime
    payloads: tuple[PayloadRef, ...] = ()
    status: RecordStatus = RecordStatus.CAPTURED
    status_history: tuple[tuple[RecordStatus, datetime], ...] = ()
    duplicate_of: str | None = None
    source: str = "device"  # "device" (capture app) or "ehr" (weekly extract)

    def __post_init__(self):
        _require_aware(self.captured_at, "captured_at")
        if not self.status_history:
            object.__setattr__(
                self, "status_history", ((self.status, self.captured_at),))
        times = [t for _, t in self.status_history]
        if any(b < a for a, b in zip(times, times[1:])):
            raise ValueError("status_history timestamps must be non-decreasing")

    def with_status(self, new_status: RecordStatus, at: datetime) -> "AssessmentRecord":
        """Derive a copy advanced along a legal lifecycle edge."""
        if not validate_transition(self.status, new_status):
            raise ValueError(
                f"illegal status transition {self.status.value} -> {new_status.value}")
        _require_aware(at, "transition timestamp")
        return replace(
            self,
            status=new_status,
            status_history=self.status_history + ((new_status, at),),
        )


@dataclass(frozen=True)
class ObservationResult:
    patient_id: str
    source_record_id: str
    metric_code: str
    value: float
    unit: str
    computed_at: datetime
    derivation_version: str

    def __post_init__(self):
        _require_aware(self.computed_at, "computed_at")


@dataclass(frozen=True)
class TrajectorySeries:
    patient_id: str
    metric_code: str
    points: tuple[tuple[datetime, float], ...] = ()

    def __post_init__(self):
        times = [t for t, _ in self.points]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("series points must be strictly increasing in time")


@dataclass(frozen=True)
class DeviceDescriptor:
    device_id: str
    device_kind: str  # wrist_imu_pair | tablet | camera | microphone
    firmware_version: str = ""
    registered_at: datetime | None = None


DEVICE_KINDS = ("wrist_imu_pair", "tablet", "camera", "microphone")


def local_day(ts: datetime) -> date:
    """Clinic-local calendar day of a timestamp.

    Capture devices stamp clinic-local time; the embedded offset is
    authoritative, so the local day is the date in the timestamp's own zone.
    """
    _require_aware(ts, "timestamp")
    return ts.date()


def iso_week(ts: datetime) -> str:
    """Clinic-local ISO week, e.g. '2025-W02'."""
    year, week, _ = local_day(ts).isocalendar()
    return f"{year}-W{week:02d}"
