"""Wrist-IMU stream metrics: wear time, activity intensity, bilateral arm use.

Streams are processed in fixed 30 s feature epochs. Per epoch we keep the
mean ENMO (Euclidean norm of acceleration minus one gravity, clamped at
zero, in mg) and the population standard deviation of the acceleration
magnitude in mg. Stillness below the stddev threshold marks an epoch as a
non-wear candidate; only sustained stillness (>= 15 min) is treated as the
sensor being off the wrist, so short rests stay inside worn time.

Intensity thresholds use closed lower bounds: an epoch sitting exactly on
100 mg classifies as moderate, exactly on 400 mg as vigorous.

Arm use works on a finer 2 s grid: an arm counts as active in a sub-epoch
iff its magnitude stddev reaches the same threshold used for stillness.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    InconsistentIntervals,
    MalformedPayload,
    NoOverlap,
    StreamTooShort,
)
from .model import Side
from .registry import derivation_config


def _imu_config() -> dict:
    return derivation_config()["imu"]


@dataclass(frozen=True)
class ImuStream:
    side: Side
    sample_rate_hz: float
    t_ms: np.ndarray   # int64, strictly increasing
    accel: np.ndarray  # (N, 3) in g
    gyro: np.ndarray   # (N, 3) in deg/s; carried but unused by v1 metrics

    def __post_init__(self):
        t = np.asarray(self.t_ms, dtype=np.int64)
        a = np.asarray(self.accel, dtype=np.float64)
        g = np.asarray(self.gyro, dtype=np.float64)
        object.__setattr__(self, "t_ms", t)
        object.__setattr__(self, "accel", a)
        object.__setattr__(self, "gyro", g)
        if t.ndim != 1 or len(t) == 0:
            raise MalformedPayload("empty IMU stream")
        if a.shape != (len(t), 3) or g.shape != (len(t), 3):
            raise MalformedPayload("accel/gyro must be (N, 3)")
        if self.sample_rate_hz <= 0:
            raise MalformedPayload("sample rate must be positive")
        dt = np.diff(t)
        if len(dt) and dt.min() <= 0:
            raise MalformedPayload("timestamps must be strictly increasing")
        if len(dt):
            implied = 1000.0 / float(np.median(dt))
            if abs(self.sample_rate_hz - implied) > 0.1 * implied:
                raise MalformedPayload(
                    f"declared rate {self.sample_rate_hz} Hz vs implied {implied:.3f} Hz")

    @property
    def period_ms(self) -> int:
        return max(1, round(1000.0 / self.sample_rate_hz))

    def magnitude(self) -> np.ndarray:
        return np.sqrt(np.sum(self.accel * self.accel, axis=1))

    def duration_ms(self) -> int:
        return int(self.t_ms[-1] - self.t_ms[0]) + self.period_ms


@dataclass(frozen=True)
class EpochFeatures:
    start_ms: np.ndarray       # epoch start times, absolute
    enmo_mean_mg: np.ndarray
    accel_stddev_mg: np.ndarray
    epoch_ms: int

    def __len__(self) -> int:
        return len(self.start_ms)


def _windowed_features(stream: ImuStream, window_ms: int,
                       t0: int | None = None,
                       n_windows: int | None = None) -> EpochFeatures:
    """Mean ENMO and magnitude stddev per complete window of the stream."""
    if t0 is None:
        t0 = int(stream.t_ms[0])
    if n_windows is None:
        n_windows = stream.duration_ms() // window_ms
    if n_windows < 1:
        raise StreamTooShort(
            f"stream shorter than one {window_ms} ms window")
    idx = (stream.t_ms - t0) // window_ms
    valid = (idx >= 0) & (idx < n_windows)
    idx = idx[valid].astype(np.int64)
    mag = stream.magnitude()[valid]
    enmo = np.clip(mag - 1.0, 0.0, None)

    counts = np.bincount(idx, minlength=n_windows).astype(np.float64)
    sum_e = np.bincount(idx, weights=enmo, minlength=n_windows)
    sum_m = np.bincount(idx, weights=mag, minlength=n_windows)
    sum_m2 = np.bincount(idx, weights=mag * mag, minlength=n_windows)

    safe = np.maximum(counts, 1.0)
    mean_e = sum_e / safe
    mean_m = sum_m / safe
    var_m = np.maximum(sum_m2 / safe - mean_m * mean_m, 0.0)
    # windows with no samples behave like stillness
    mean_e[counts == 0] = 0.0
    var_m[counts == 0] = 0.0
    starts = t0 + np.arange(n_windows, dtype=np.int64) * window_ms
    return EpochFeatures(
        start_ms=starts,
        enmo_mean_mg=mean_e * 1000.0,
        accel_stddev_mg=np.sqrt(var_m) * 1000.0,
        epoch_ms=window_ms,
    )


def epoch_features(stream: ImuStream) -> EpochFeatures:
    return _windowed_features(stream, _imu_config()["epoch_s"] * 1000)


@dataclass(frozen=True)
class WearResult:
    worn_intervals: tuple[tuple[int, int], ...]  # [start_ms, end_ms) pairs
    total_hours: float
    typical_band: bool
    epoch_worn: np.ndarray  # bool per epoch, for downstream classification
    features: EpochFeatures


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """Maximal [start, stop) index runs where mask is True."""
    if not mask.any():
        return []
    padded = np.concatenate(([False], mask, [False]))
    edges = np.flatnonzero(np.diff(padded.astype(np.int8)))
    return list(zip(edges[::2], edges[1::2]))


def detect_wear_time(stream: ImuStream) -> WearResult:
    """Worn intervals and total wear hours of one stream.

    A stream day counts as inside the typical wear band when it averages
    between 8 and 14 worn hours per spanned day.
    """
    cfg = _imu_config()
    feats = epoch_features(stream)
    still = feats.accel_stddev_mg < cfg["stddev_threshold_mg"]
    worn = np.ones(len(feats), dtype=bool)
    for start, stop in _runs(still):
        if stop - start >= cfg["nonwear_min_epochs"]:
            worn[start:stop] = False
    intervals = tuple(
        (int(feats.start_ms[a]), int(feats.start_ms[b - 1]) + feats.epoch_ms)
        for a, b in _runs(worn)
    )
    total_hours = float(worn.sum()) * feats.epoch_ms / 3_600_000.0
    span_days = max(1, -(-len(feats) * feats.epoch_ms // 86_400_000))
    lo, hi = cfg["typical_wear_band_h"]
    per_day = total_hours / span_days
    return WearResult(
        worn_intervals=intervals,
        total_hours=total_hours,
        typical_band=bool(lo <= per_day <= hi),
        epoch_worn=worn,
        features=feats,
    )


@dataclass(frozen=True)
class ActivityMinutes:
    low_min: float
    moderate_min: float
    vigorous_min: float

    @property
    def worn_min(self) -> float:
        return self.low_min + self.moderate_min + self.vigorous_min


def intensity_class(enmo_mg: float) -> str:
    """Intensity bucket of one epoch's mean ENMO; bounds are closed below,
    so exactly 100 mg is moderate and exactly 400 mg is vigorous."""
    cfg = _imu_config()
    if enmo_mg >= cfg["enmo_vigorous_mg"]:
        return "vigorous"
    if enmo_mg >= cfg["enmo_moderate_mg"]:
        return "moderate"
    return "low"


def classify_activity(stream: ImuStream,
                      worn_intervals: tuple[tuple[int, int], ...]) -> ActivityMinutes:
    """Partition worn time into low / moderate / vigorous minutes."""
    cfg = _imu_config()
    feats = epoch_features(stream)
    worn = np.zeros(len(feats), dtype=bool)
    epoch_ms = feats.epoch_ms
    t0 = int(feats.start_ms[0])
    for start, end in worn_intervals:
        if (start - t0) % epoch_ms or (end - t0) % epoch_ms:
            raise InconsistentIntervals(
                f"interval ({start}, {end}) not aligned to the epoch grid")
        a, b = (start - t0) // epoch_ms, (end - t0) // epoch_ms
        if a < 0 or b > len(feats) or a >= b:
            raise InconsistentIntervals(
                f"interval ({start}, {end}) outside the stream")
        worn[a:b] = True
    enmo = feats.enmo_mean_mg[worn]
    moderate_lo, vigorous_lo = cfg["enmo_moderate_mg"], cfg["enmo_vigorous_mg"]
    n_vig = int(np.count_nonzero(enmo >= vigorous_lo))
    n_mod = int(np.count_nonzero((enmo >= moderate_lo) & (enmo < vigorous_lo)))
    n_low = int(len(enmo) - n_vig - n_mod)
    per_epoch_min = epoch_ms / 60_000.0
    return ActivityMinutes(
        low_min=n_low * per_epoch_min,
        moderate_min=n_mod * per_epoch_min,
        vigorous_min=n_vig * per_epoch_min,
    )


@dataclass(frozen=True)
class ArmUseResult:
    active_s_left: float
    active_s_right: float
    use_ratio: float | None   # affected / unaffected; None when undefined
    laterality: float | None  # (unaffected - affected) / (unaffected + affected)


def compute_arm_use(left: ImuStream, right: ImuStream,
                    affected_side: Side) -> ArmUseResult:
    """Bilateral active seconds plus use ratio and laterality index.

    With an unknown affected side the per-arm seconds are still computed but
    ratio and laterality stay null: there is no way to orient them.
    """
    cfg = _imu_config()
    sub_ms = cfg["sub_epoch_s"] * 1000
    epoch_ms = cfg["epoch_s"] * 1000
    t0 = int(max(left.t_ms[0], right.t_ms[0]))
    t_end = int(min(left.t_ms[-1] + left.period_ms, right.t_ms[-1] + right.period_ms))
    if t_end - t0 < epoch_ms:
        raise NoOverlap(f"streams share only {max(0, t_end - t0)} ms")
    n_sub = (t_end - t0) // sub_ms
    thresh = cfg["stddev_threshold_mg"]
    active = {}
    for stream in (left, right):
        feats = _windowed_features(stream, sub_ms, t0=t0, n_windows=n_sub)
        active[stream.side] = feats.accel_stddev_mg >= thresh
    act_left = float(np.count_nonzero(active[Side.LEFT])) * sub_ms / 1000.0
    act_right = float(np.count_nonzero(active[Side.RIGHT])) * sub_ms / 1000.0

    if affected_side is Side.UNKNOWN:
        return ArmUseResult(act_left, act_right, None, None)
    affected = act_left if affected_side is Side.LEFT else act_right
    unaffected = act_right if affected_side is Side.LEFT else act_left
    if unaffected == 0.0:
        ratio = None  # infinite or undefined use ratio
    else:
        ratio = affected / unaffected
    total = affected + unaffected
    laterality = 0.0 if total == 0.0 else (unaffected - affected) / total
    return ArmUseResult(act_left, act_right, ratio, laterality)


# --- stream file formats ------------------------------------------------------
#
# Binary (bulk format): little-endian
#   magic "IMUB" | version u8 | side u8 ("L"/"R") | rate f64 | n u64
#   then n frames of (t_ms u64, ax, ay, az, gx, gy, gz as f32).
# Text (small files): "# imu v1 rate_hz=<r> side=<L|R>" header, then
#   "t_ms,side,ax,ay,az,gx,gy,gz" per sample.

_BINARY_MAGIC = b"IMUB"
_HEADER = struct.Struct("<4sBBdQ")
_FRAME_DTYPE = np.dtype([("t", "<u8"), ("v", "<f4", (6,))])


def encode_stream(stream: ImuStream, binary: bool = True) -> bytes:
    if binary:
        frames = np.empty(len(stream.t_ms), dtype=_FRAME_DTYPE)
        frames["t"] = stream.t_ms
        frames["v"][:, :3] = stream.accel
        frames["v"][:, 3:] = stream.gyro
        header = _HEADER.pack(
            _BINARY_MAGIC, 1,
            ord("L") if stream.side is Side.LEFT else ord("R"),
            float(stream.sample_rate_hz), len(stream.t_ms))
        return header + frames.tobytes()
    side = "L" if stream.side is Side.LEFT else "R"
    buf = io.StringIO()
    buf.write(f"# imu v1 rate_hz={stream.sample_rate_hz} side={side}\n")
    for i in range(len(stream.t_ms)):
        ax, ay, az = stream.accel[i]
        gx, gy, gz = stream.gyro[i]
        buf.write(f"{int(stream.t_ms[i])},{side},{ax:.6f},{ay:.6f},{az:.6f},"
                  f"{gx:.6f},{gy:.6f},{gz:.6f}\n")
    return buf.getvalue().encode("utf-8")


def decode_stream(data: bytes) -> ImuStream:
    if not data:
        raise MalformedPayload("empty IMU payload")
    if data[:4] == _BINARY_MAGIC:
        return _decode_binary(data)
    return _decode_text(data)


def _decode_binary(data: bytes) -> ImuStream:
    if len(data) < _HEADER.size:
        raise MalformedPayload("truncated IMU header")
    magic, version, side_byte, rate, n = _HEADER.unpack_from(data)
    if version != 1:
        raise MalformedPayload(f"unsupported IMU format version {version}")
    if side_byte not in (ord("L"), ord("R")):
        raise MalformedPayload("side must be L or R")
    body = data[_HEADER.size:]
    expected = n * _FRAME_DTYPE.itemsize
    if len(body) != expected:
        raise MalformedPayload(
            f"frame block is {len(body)} bytes, expected {expected}")
    frames = np.frombuffer(body, dtype=_FRAME_DTYPE)
    return ImuStream(
        side=Side.LEFT if side_byte == ord("L") else Side.RIGHT,
        sample_rate_hz=rate,
        t_ms=frames["t"].astype(np.int64),
        accel=frames["v"][:, :3].astype(np.float64),
        gyro=frames["v"][:, 3:].astype(np.float64),
    )


def _decode_text(data: bytes) -> ImuStream:
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise MalformedPayload(f"IMU payload is not utf-8: {exc}") from None
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("#"):
        raise MalformedPayload("missing IMU header line")
    header = dict(
        part.split("=", 1) for part in lines[0].lstrip("# ").split()
        if "=" in part)
    if "rate_hz" not in header or "side" not in header:
        raise MalformedPayload("header must declare rate_hz and side")
    if header["side"] not in ("L", "R"):
        raise MalformedPayload("side must be L or R")
    rows = []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != 8:
            raise MalformedPayload(f"bad IMU frame: {ln!r}")
        rows.append((int(parts[0]),) + tuple(float(p) for p in parts[2:]))
    if not rows:
        raise MalformedPayload("IMU payload has no frames")
    arr = np.array([r[1:] for r in rows], dtype=np.float64)
    return ImuStream(
        side=Side.LEFT if header["side"] == "L" else Side.RIGHT,
        sample_rate_hz=float(header["rate_hz"]),
        t_ms=np.array([r[0] for r in rows], dtype=np.int64),
        accel=arr[:, :3],
        gyro=arr[:, 3:],
    )
