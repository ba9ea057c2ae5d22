"""Durable longitudinal store: append-only journal plus snapshot compaction.

Every mutation is one JSON line in ``journal.jsonl`` (with a crc32 so a torn
tail from a crash is detected and dropped); state is rebuilt on open from
``snapshot.json`` plus the journal suffix. Compaction folds the journal into
a fresh snapshot and must never change any query result.

Payload bytes live outside the journal in a content-addressed blob area, so
the journal stays small and payload writes are naturally idempotent.

Concurrency: one writer at a time (appends serialize on a lock), readers
see consistent state under the same lock. Trajectory points are keyed by
the source record's capture time, which is the clinically meaningful axis.
"""

from __future__ import annotations

import hashlib
import json
import statistics
import threading
import zlib
from dataclasses import asdict
from datetime import date, datetime
from pathlib import Path
from typing import Iterator

from .errors import (
    AlreadyStored,
    DuplicateDevice,
    IntegrityError,
    UnknownPatient,
    UnknownRecord,
    UnknownScope,
)
from .model import (
    AssessmentRecord,
    DeviceDescriptor,
    ObservationResult,
    PatientRecord,
    PayloadRef,
    PayloadKind,
    RecordStatus,
    Side,
    TrajectorySeries,
    local_day,
)
from .registry import check_result

OBSERVATION_COLUMNS = [
    "patient_id", "source_record_id", "source_code", "metric_code", "value",
    "unit", "observed_at", "computed_at", "derivation_version",
]

PAM_CODES = ("PAM_ACTIVITY", "PAM_ARM_USE")


def _iso(ts: datetime) -> str:
    return ts.isoformat()


def _parse_ts(text: str) -> datetime:
    return datetime.fromisoformat(text)


def _record_to_json(rec: AssessmentRecord) -> dict:
    return {
        "record_id": rec.record_id,
        "patient_id": rec.patient_id,
        "code": rec.code,
        "captured_at": _iso(rec.captured_at),
        "payloads": [asdict(p) | {"kind": p.kind.value} for p in rec.payloads],
        "status": rec.status.value,
        "status_history": [[s.value, _iso(t)] for s, t in rec.status_history],
        "duplicate_of": rec.duplicate_of,
        "source": rec.source,
    }


def _record_from_json(data: dict) -> AssessmentRecord:
    return AssessmentRecord(
        record_id=data["record_id"],
        patient_id=data["patient_id"],
        code=data["code"],
        captured_at=_parse_ts(data["captured_at"]),
        payloads=tuple(PayloadRef(
            payload_id=p["payload_id"], kind=PayloadKind(p["kind"]),
            content_hash=p["content_hash"], byte_length=p["byte_length"],
            uri=p["uri"]) for p in data["payloads"]),
        status=RecordStatus(data["status"]),
        status_history=tuple(
            (RecordStatus(s), _parse_ts(t)) for s, t in data["status_history"]),
        duplicate_of=data.get("duplicate_of"),
        source=data.get("source", "device"),
    )


def _patient_to_json(p: PatientRecord) -> dict:
    return {
        "patient_id": p.patient_id,
        "affected_side": p.affected_side.value,
        "admission_date": p.admission_date.isoformat() if p.admission_date else None,
        "discharge_date": p.discharge_date.isoformat() if p.discharge_date else None,
        "cohort_tags": sorted(p.cohort_tags),
    }


def _patient_from_json(data: dict) -> PatientRecord:
    return PatientRecord(
        patient_id=data["patient_id"],
        affected_side=Side(data["affected_side"]),
        admission_date=date.fromisoformat(data["admission_date"])
        if data.get("admission_date") else None,
        discharge_date=date.fromisoformat(data["discharge_date"])
        if data.get("discharge_date") else None,
        cohort_tags=frozenset(data.get("cohort_tags", ())),
    )


def _observation_to_json(o: ObservationResult, observed_at: datetime,
                         source_code: str = "") -> dict:
    return {
        "patient_id": o.patient_id,
        "source_record_id": o.source_record_id,
        "source_code": source_code,
        "metric_code": o.metric_code,
        "value": o.value,
        "unit": o.unit,
        "observed_at": _iso(observed_at),
        "computed_at": _iso(o.computed_at),
        "derivation_version": o.derivation_version,
    }


class Store:
    def __init__(self, root: Path | str, fsync: bool = False):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        (self.root / "payloads").mkdir(exist_ok=True)
        self._journal_path = self.root / "journal.jsonl"
        self._snapshot_path = self.root / "snapshot.json"
        self._fsync = fsync
        self._lock = threading.RLock()
        self.seq = 0
        self._reset_state()
        self._load()
        self._journal_fh = self._journal_path.open("a", encoding="utf-8")

    def _reset_state(self) -> None:
        self.patients: dict[str, PatientRecord] = {}
        self.devices: dict[str, dict] = {}
        self.records: dict[str, AssessmentRecord] = {}
        self.observations: list[dict] = []
        self._obs_keys: set[tuple[str, str, str]] = set()
        self.jobs: dict[str, dict] = {}
        self.reintegrated: dict[str, str] = {}
        self.returned_days: set[tuple[str, str]] = set()
        self.staged: dict[str, list[dict]] = {}
        self._payload_hashes: dict[str, str] = {}  # content_hash -> first record_id
        # duplicate detection: (patient, code, part hashes) -> first record_id
        self._envelope_index: dict[tuple[str, str, tuple[str, ...]], str] = {}

    # -- journal mechanics

    def _load(self) -> None:
        if self._snapshot_path.exists():
            snap = json.loads(self._snapshot_path.read_text())
            self.seq = snap["seq"]
            for entry in snap["entries"]:
                self._apply(entry["op"], entry["data"])
        if not self._journal_path.exists():
            return
        with self._journal_path.open("r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                try:
                    entry = json.loads(line)
                    body = json.dumps(
                        [entry["seq"], entry["op"], entry["data"]],
                        sort_keys=True, separators=(",", ":"))
                    if zlib.crc32(body.encode("utf-8")) != entry["crc"]:
                        break  # torn tail: ignore the rest
                except (ValueError, KeyError):
                    break
                if entry["seq"] <= self.seq:
                    continue  # already inside the snapshot
                self._apply(entry["op"], entry["data"])
                self.seq = entry["seq"]

    def _append(self, op: str, data: dict) -> int:
        with self._lock:
            self.seq += 1
            body = json.dumps([self.seq, op, data], sort_keys=True,
                              separators=(",", ":"))
            entry = {"seq": self.seq, "op": op, "data": data,
                     "crc": zlib.crc32(body.encode("utf-8"))}
            self._journal_fh.write(json.dumps(entry, sort_keys=True,
                                              separators=(",", ":")) + "\n")
            self._journal_fh.flush()
            if self._fsync:
                import os
                os.fsync(self._journal_fh.fileno())
            self._apply(op, data)
            return self.seq

    def _apply(self, op: str, data: dict) -> None:
        if op == "patient":
            p = _patient_from_json(data)
            self.patients[p.patient_id] = p
        elif op == "device":
            self.devices[data["device_id"]] = data
        elif op == "record":
            rec = _record_from_json(data)
            self.records[rec.record_id] = rec
            for ref in rec.payloads:
                self._payload_hashes.setdefault(ref.content_hash, rec.record_id)
            if rec.payloads:
                key = (rec.patient_id, rec.code,
                       tuple(sorted(r.content_hash for r in rec.payloads)))
                self._envelope_index.setdefault(key, rec.record_id)
        elif op == "record_status":
            rec = self.records[data["record_id"]]
            self.records[rec.record_id] = rec.with_status(
                RecordStatus(data["status"]), _parse_ts(data["at"]))
        elif op == "observation":
            self.observations.append(data)
            self._obs_keys.add((data["source_record_id"], data["metric_code"],
                                data["derivation_version"]))
        elif op == "job":
            self.jobs[data["job_id"]] = data
        elif op == "reintegrated":
            self.reintegrated[data["record_id"]] = data["at"]
        elif op == "returned_day":
            self.returned_days.add((data["patient_id"], data["day"]))
        elif op == "staged_results":
            self.staged[data["record_id"]] = data["results"]
        elif op == "erase_patient":
            pid = data["patient_id"]
            self.patients.pop(pid, None)
            doomed = {r.record_id for r in self.records.values()
                      if r.patient_id == pid}
            for rid in doomed:
                del self.records[rid]
                self.staged.pop(rid, None)
                self.reintegrated.pop(rid, None)
            self.observations = [o for o in self.observations
                                 if o["patient_id"] != pid]
            self._obs_keys = {(r, m, v) for r, m, v in self._obs_keys
                              if r not in doomed}
            self.returned_days = {(p, d) for p, d in self.returned_days if p != pid}
        else:
            raise ValueError(f"unknown journal op {op!r}")

    def close(self) -> None:
        with self._lock:
            self._journal_fh.close()

    # -- snapshot / compaction

    def compact(self) -> None:
        """Fold the journal into a snapshot; queries are unaffected."""
        with self._lock:
            entries = []
            for p in self.patients.values():
                entries.append({"op": "patient", "data": _patient_to_json(p)})
            for d in self.devices.values():
                entries.append({"op": "device", "data": d})
            for r in self.records.values():
                entries.append({"op": "record", "data": _record_to_json(r)})
            for o in self.observations:
                entries.append({"op": "observation", "data": o})
            for j in self.jobs.values():
                entries.append({"op": "job", "data": j})
            for rid, at in self.reintegrated.items():
                entries.append({"op": "reintegrated",
                                "data": {"record_id": rid, "at": at}})
            for pid, day in sorted(self.returned_days):
                entries.append({"op": "returned_day",
                                "data": {"patient_id": pid, "day": day}})
            for rid, results in self.staged.items():
                entries.append({"op": "staged_results",
                                "data": {"record_id": rid, "results": results}})
            tmp = self._snapshot_path.with_suffix(".tmp")
            tmp.write_text(json.dumps({"version": 1, "seq": self.seq,
                                       "entries": entries}))
            tmp.replace(self._snapshot_path)
            self._journal_fh.close()
            self._journal_path.write_text("")
            self._journal_fh = self._journal_path.open("a", encoding="utf-8")

    # -- payload blobs

    def store_payload(self, data: bytes) -> tuple[str, str]:
        digest = hashlib.sha256(data).hexdigest()
        bucket = self.root / "payloads" / digest[:2]
        bucket.mkdir(exist_ok=True)
        path = bucket / digest
        if not path.exists():
            tmp = path.with_suffix(".tmp")
            tmp.write_bytes(data)
            tmp.replace(path)
        return digest, str(path.relative_to(self.root))

    def load_payload(self, content_hash: str) -> bytes:
        path = self.root / "payloads" / content_hash[:2] / content_hash
        if not path.exists():
            raise IntegrityError(f"payload {content_hash} missing from blob area")
        data = path.read_bytes()
        if hashlib.sha256(data).hexdigest() != content_hash:
            raise IntegrityError(f"payload {content_hash} corrupted on disk")
        return data

    def discard_payload(self, content_hash: str) -> None:
        path = self.root / "payloads" / content_hash[:2] / content_hash
        path.unlink(missing_ok=True)

    # -- patients / devices

    def put_patient(self, patient: PatientRecord) -> int:
        return self._append("patient", _patient_to_json(patient))

    def get_patient(self, patient_id: str) -> PatientRecord:
        with self._lock:
            if patient_id not in self.patients:
                raise UnknownPatient(patient_id)
            return self.patients[patient_id]

    def list_patients(self) -> list[PatientRecord]:
        with self._lock:
            return sorted(self.patients.values(), key=lambda p: p.patient_id)

    def put_device(self, descriptor: DeviceDescriptor) -> int:
        with self._lock:
            if descriptor.device_id in self.devices:
                raise DuplicateDevice(descriptor.device_id)
            return self._append("device", {
                "device_id": descriptor.device_id,
                "device_kind": descriptor.device_kind,
                "firmware_version": descriptor.firmware_version,
                "registered_at": _iso(descriptor.registered_at)
                if descriptor.registered_at else None,
            })

    def has_device(self, device_id: str) -> bool:
        with self._lock:
            return device_id in self.devices

    def list_devices(self) -> list[dict]:
        with self._lock:
            return sorted(self.devices.values(), key=lambda d: d["device_id"])

    # -- records

    def add_record(self, record: AssessmentRecord) -> int:
        with self._lock:
            if record.record_id in self.records:
                raise IntegrityError(f"record {record.record_id} already stored")
            if record.patient_id not in self.patients:
                raise UnknownPatient(record.patient_id)
            return self._append("record", _record_to_json(record))

    def get_record(self, record_id: str) -> AssessmentRecord:
        with self._lock:
            if record_id not in self.records:
                raise UnknownRecord(record_id)
            return self.records[record_id]

    def transition_record(self, record_id: str, status: RecordStatus,
                          at: datetime) -> AssessmentRecord:
        with self._lock:
            status = RecordStatus(status)
            rec = self.get_record(record_id)
            advanced = rec.with_status(status, at)  # raises on illegal edge
            self._append("record_status", {
                "record_id": record_id, "status": status.value, "at": _iso(at)})
            return advanced

    def list_records(self, patient_id: str | None = None,
                     code: str | None = None) -> list[AssessmentRecord]:
        with self._lock:
            out = [r for r in self.records.values()
                   if (patient_id is None or r.patient_id == patient_id)
                   and (code is None or r.code == code)]
            return sorted(out, key=lambda r: (r.captured_at, r.record_id))

    def find_payload_owner(self, content_hash: str) -> str | None:
        with self._lock:
            return self._payload_hashes.get(content_hash)

    def find_duplicate(self, patient_id: str, code: str,
                       hashes: tuple[str, ...]) -> str | None:
        """Record id of an earlier byte-identical envelope, if any."""
        with self._lock:
            return self._envelope_index.get((patient_id, code, tuple(sorted(hashes))))

    # -- observations

    def put_observation(self, result: ObservationResult) -> int:
        with self._lock:
            if result.patient_id not in self.patients:
                raise IntegrityError(f"unknown patient {result.patient_id}")
            rec = self.records.get(result.source_record_id)
            if rec is None:
                raise IntegrityError(f"unknown record {result.source_record_id}")
            if rec.patient_id != result.patient_id:
                raise IntegrityError("observation patient != record patient")
            key = (result.source_record_id, result.metric_code,
                   result.derivation_version)
            if key in self._obs_keys:
                raise AlreadyStored(str(key))
            check_result(result)
            return self._append(
                "observation",
                _observation_to_json(result, rec.captured_at, rec.code))

    def get_series(self, patient_id: str, metric_code: str,
                   t_from: datetime | None = None,
                   t_to: datetime | None = None) -> TrajectorySeries:
        with self._lock:
            if patient_id not in self.patients:
                raise UnknownPatient(patient_id)
            picked: dict[datetime, float] = {}
            for o in self.observations:  # journal order: later entries win ties
                if o["patient_id"] != patient_id or o["metric_code"] != metric_code:
                    continue
                ts = _parse_ts(o["observed_at"])
                if t_from is not None and ts < t_from:
                    continue
                if t_to is not None and ts > t_to:
                    continue
                picked[ts] = o["value"]
            points = tuple(sorted(picked.items()))
            return TrajectorySeries(patient_id, metric_code, points)

    def cohort_aggregate(self, metric_code: str, statistic: str,
                         t_from: datetime | None = None,
                         t_to: datetime | None = None) -> float | int | None:
        """Statistic over each patient's latest value in range."""
        if statistic not in ("mean", "median", "count", "stddev"):
            raise UnknownScope(f"statistic {statistic!r}")
        with self._lock:
            latest: dict[str, tuple[datetime, int, float]] = {}
            for i, o in enumerate(self.observations):
                if o["metric_code"] != metric_code:
                    continue
                ts = _parse_ts(o["observed_at"])
                if t_from is not None and ts < t_from:
                    continue
                if t_to is not None and ts > t_to:
                    continue
                prev = latest.get(o["patient_id"])
                if prev is None or (ts, i) > (prev[0], prev[1]):
                    latest[o["patient_id"]] = (ts, i, o["value"])
            values = [v for _, _, v in latest.values()]
        if statistic == "count":
            return len(values)
        if not values:
            return None
        if statistic == "mean":
            return statistics.fmean(values)
        if statistic == "median":
            return float(statistics.median(values))
        return statistics.pstdev(values)

    # -- pipeline bookkeeping

    def upsert_job(self, job: dict) -> int:
        return self._append("job", job)

    def get_job(self, job_id: str) -> dict | None:
        with self._lock:
            return self.jobs.get(job_id)

    def list_jobs(self) -> list[dict]:
        with self._lock:
            return sorted(self.jobs.values(), key=lambda j: j["job_id"])

    def stage_results(self, record_id: str, results: list[ObservationResult]) -> None:
        rec = self.get_record(record_id)
        self._append("staged_results", {
            "record_id": record_id,
            "results": [_observation_to_json(r, rec.captured_at, rec.code)
                        for r in results],
        })

    def staged_results(self, record_id: str) -> list[ObservationResult]:
        with self._lock:
            rows = self.staged.get(record_id, [])
            return [ObservationResult(
                patient_id=r["patient_id"],
                source_record_id=r["source_record_id"],
                metric_code=r["metric_code"],
                value=r["value"],
                unit=r["unit"],
                computed_at=_parse_ts(r["computed_at"]),
                derivation_version=r["derivation_version"],
            ) for r in rows]

    def mark_reintegrated(self, record_id: str, at: datetime) -> bool:
        """Check-and-set; False when the record was already reintegrated."""
        with self._lock:
            if record_id in self.reintegrated:
                return False
            self._append("reintegrated", {"record_id": record_id, "at": _iso(at)})
            return True

    def is_reintegrated(self, record_id: str) -> bool:
        with self._lock:
            return record_id in self.reintegrated

    def mark_day_returned(self, patient_id: str, day: date) -> bool:
        with self._lock:
            key = (patient_id, day.isoformat())
            if key in self.returned_days:
                return False
            self._append("returned_day",
                         {"patient_id": patient_id, "day": day.isoformat()})
            return True

    def erase_patient(self, patient_id: str) -> int:
        """Tombstone: removes the patient and everything referencing them."""
        with self._lock:
            if patient_id not in self.patients:
                raise UnknownPatient(patient_id)
            return self._append("erase_patient", {"patient_id": patient_id})

    # -- patient-days & export

    def patient_days(self) -> set[tuple[str, str]]:
        """Distinct (patient, clinic-local day) pairs with a PAM record."""
        with self._lock:
            return {
                (r.patient_id, local_day(r.captured_at).isoformat())
                for r in self.records.values() if r.code in PAM_CODES
            }

    def export(self, scope: str = "observations",
               fmt: str = "csv") -> Iterator[bytes]:
        if fmt not in ("csv", "jsonl"):
            raise UnknownScope(f"format {fmt!r}")
        if scope == "observations" or scope.startswith(("patient:", "metric:")):
            rows = self._observation_rows(scope)
            columns = OBSERVATION_COLUMNS
        elif scope == "patient-days":
            rows = [{"patient_id": p, "day": d}
                    for p, d in sorted(self.patient_days())]
            columns = ["patient_id", "day"]
        elif scope == "records":
            with self._lock:
                rows = [{
                    "record_id": r.record_id, "patient_id": r.patient_id,
                    "code": r.code, "captured_at": _iso(r.captured_at),
                    "status": r.status.value, "source": r.source,
                    "n_payloads": len(r.payloads),
                } for r in sorted(self.records.values(),
                                  key=lambda r: (r.captured_at, r.record_id))]
            columns = ["record_id", "patient_id", "code", "captured_at",
                       "status", "source", "n_payloads"]
        else:
            raise UnknownScope(scope)
        if fmt == "csv":
            yield (",".join(columns) + "\n").encode("utf-8")
            for row in rows:
                yield (",".join(_csv_cell(row[c]) for c in columns) + "\n").encode("utf-8")
        else:
            for row in rows:
                yield (json.dumps(row, sort_keys=True,
                                  separators=(",", ":")) + "\n").encode("utf-8")

    def _observation_rows(self, scope: str) -> list[dict]:
        with self._lock:
            rows = list(self.observations)
        if scope.startswith("patient:"):
            pid = scope.split(":", 1)[1]
            rows = [r for r in rows if r["patient_id"] == pid]
        elif scope.startswith("metric:"):
            code = scope.split(":", 1)[1]
            rows = [r for r in rows if r["metric_code"] == code]
        return rows

    def import_observations(self, stream: Iterator[bytes] | bytes,
                            fmt: str = "csv") -> int:
        """Re-ingest an observation export; missing patients and records are
        created as import stubs so referential integrity holds."""
        if isinstance(stream, (bytes, bytearray)):
            data = bytes(stream)
        else:
            data = b"".join(stream)
        rows: list[dict] = []
        text = data.decode("utf-8")
        if fmt == "csv":
            lines = [ln for ln in text.splitlines() if ln]
            header = lines[0].split(",")
            for ln in lines[1:]:
                rows.append(dict(zip(header, _split_csv(ln))))
        elif fmt == "jsonl":
            rows = [json.loads(ln) for ln in text.splitlines() if ln]
        else:
            raise UnknownScope(f"format {fmt!r}")
        n = 0
        for row in rows:
            pid = row["patient_id"]
            rid = row["source_record_id"]
            with self._lock:
                if pid not in self.patients:
                    self.put_patient(PatientRecord(pid))
                if rid not in self.records:
                    self.add_record(AssessmentRecord(
                        record_id=rid, patient_id=pid,
                        code=row.get("source_code") or "ARAT",
                        captured_at=_parse_ts(row["observed_at"]),
                        source="import"))
            try:
                self.put_observation(ObservationResult(
                    patient_id=pid,
                    source_record_id=rid,
                    metric_code=row["metric_code"],
                    value=float(row["value"]),
                    unit=row["unit"],
                    computed_at=_parse_ts(row["computed_at"]),
                    derivation_version=row["derivation_version"],
                ))
                n += 1
            except AlreadyStored:
                pass
        return n


def _csv_cell(value) -> str:
    text = str(value)
    if any(c in text for c in ",\"\n"):
        return '"' + text.replace('"', '""') + '"'
    return text


def _split_csv(line: str) -> list[str]:
    import csv
    import io
    return next(csv.reader(io.StringIO(line)))
