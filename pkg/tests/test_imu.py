"""IMU metrics against planted miniature streams.

Each test builds a stream whose epoch features are known by construction
(the planting is the oracle) and checks the detectors against the plan.
Planted levels keep a margin of at least 10 mg from every classification
threshold so float noise cannot flip a class.
"""

import numpy as np
import pytest

from rehablink.errors import InconsistentIntervals, MalformedPayload, NoOverlap, StreamTooShort
from rehablink.imu import (
    ImuStream,
    classify_activity,
    compute_arm_use,
    decode_stream,
    detect_wear_time,
    encode_stream,
    intensity_class,
)
from rehablink.model import Side

RATE = 2.0           # Hz; 2 s sub-epoch = 4 samples, 30 s epoch = 60 samples
DT = 500             # ms
EPOCH_MS = 30_000
SUB_MS = 2_000


def build_stream(side, epoch_offsets_mg, active_amp_mg=None, t0_ms=0):
    """Stream from per-epoch ENMO offsets (None = off-wrist stillness).

    Within a worn epoch the magnitude alternates +/-25 mg across sub-epochs
    (keeps the epoch clearly above the 13 mg stillness bound) around
    1 g + offset. ``active_amp_mg`` optionally oscillates samples inside a
    sub-epoch to make that sub-epoch an "active arm" window; it is a list of
    per-sub-epoch amplitudes aligned with the epoch plan (15 per epoch).
    """
    n_epochs = len(epoch_offsets_mg)
    spe = EPOCH_MS // DT           # samples per epoch
    sps = SUB_MS // DT             # samples per sub-epoch
    subs_per_epoch = EPOCH_MS // SUB_MS
    mag = np.ones(n_epochs * spe)
    for e, off in enumerate(epoch_offsets_mg):
        if off is None:
            continue  # stays at exactly 1 g: stillness
        base = 1.0 + off / 1000.0
        for s in range(subs_per_epoch):
            sub = e * subs_per_epoch + s
            lo = e * spe + s * sps
            wiggle = 0.025 if s % 2 == 0 else -0.025
            level = base + wiggle
            seg = np.full(sps, level)
            amp = active_amp_mg[sub] if active_amp_mg else 0.0
            if amp:
                seg += np.where(np.arange(sps) % 2 == 0, amp / 1000.0, -amp / 1000.0)
            mag[lo:lo + sps] = seg
    t = t0_ms + np.arange(len(mag), dtype=np.int64) * DT
    accel = np.zeros((len(mag), 3))
    accel[:, 2] = mag
    return ImuStream(side=side, sample_rate_hz=RATE, t_ms=t,
                     accel=accel, gyro=np.zeros_like(accel))


def test_constant_gravity_is_non_wear():
    # 10 h of a perfectly still sensor
    stream = build_stream(Side.LEFT, [None] * (10 * 120))
    wear = detect_wear_time(stream)
    assert wear.total_hours == 0.0
    assert wear.worn_intervals == ()
    assert wear.typical_band is False


def test_planted_wear_hours_recovered():
    # 2 h still, 9 h worn, 2 h still
    plan = [None] * 240 + [50.0] * (9 * 120) + [None] * 240
    wear = detect_wear_time(build_stream(Side.LEFT, plan))
    assert abs(wear.total_hours - 9.0) <= EPOCH_MS / 3_600_000.0
    assert len(wear.worn_intervals) == 1
    start, end = wear.worn_intervals[0]
    assert start == 240 * EPOCH_MS
    assert end == (240 + 9 * 120) * EPOCH_MS
    assert wear.typical_band is True  # 9 h sits inside the 8-14 h band


def test_short_stillness_stays_worn():
    # a 10 min rest (20 epochs) must not break the worn block
    plan = [50.0] * 120 + [None] * 20 + [50.0] * 120
    wear = detect_wear_time(build_stream(Side.LEFT, plan))
    assert len(wear.worn_intervals) == 1
    assert wear.total_hours == pytest.approx(260 * 30 / 3600)


def test_typical_band_bounds():
    ten_hours = [50.0] * (10 * 120)
    assert detect_wear_time(build_stream(Side.LEFT, ten_hours)).typical_band is True
    seven_hours = [50.0] * (7 * 120) + [None] * (3 * 120)
    assert detect_wear_time(build_stream(Side.LEFT, seven_hours)).typical_band is False


def test_stream_too_short():
    t = np.arange(10, dtype=np.int64) * DT  # 5 s, below one epoch
    accel = np.zeros((10, 3))
    accel[:, 2] = 1.0
    s = ImuStream(Side.LEFT, RATE, t, accel, np.zeros_like(accel))
    with pytest.raises(StreamTooShort):
        detect_wear_time(s)


def test_single_class_stream():
    # 60 worn minutes at ENMO ~ 50 mg: all low
    plan = [50.0] * 120
    stream = build_stream(Side.LEFT, plan)
    wear = detect_wear_time(stream)
    act = classify_activity(stream, wear.worn_intervals)
    assert (act.low_min, act.moderate_min, act.vigorous_min) == (60.0, 0.0, 0.0)


def test_planted_moderate_block_recovered():
    # a 30 min moderate block (200 mg) inside a low-activity stretch
    plan = [50.0] * 120 + [200.0] * 60 + [50.0] * 120
    stream = build_stream(Side.LEFT, plan)
    wear = detect_wear_time(stream)
    act = classify_activity(stream, wear.worn_intervals)
    assert act.moderate_min == 30.0
    assert act.low_min == 120.0
    assert act.vigorous_min == 0.0
    assert act.worn_min == wear.total_hours * 60.0


def test_activity_partitions_worn_minutes_exactly():
    rng = np.random.default_rng(42)
    levels = {"low": 50.0, "moderate": 250.0, "vigorous": 500.0}
    classes = rng.choice(list(levels), size=240)
    plan = [levels[c] for c in classes]
    stream = build_stream(Side.LEFT, plan)
    wear = detect_wear_time(stream)
    act = classify_activity(stream, wear.worn_intervals)
    assert act.worn_min == pytest.approx(wear.total_hours * 60.0)
    assert act.low_min == 0.5 * np.count_nonzero(classes == "low")
    assert act.moderate_min == 0.5 * np.count_nonzero(classes == "moderate")
    assert act.vigorous_min == 0.5 * np.count_nonzero(classes == "vigorous")


def test_intensity_boundaries_closed_below():
    assert intensity_class(99.999) == "low"
    assert intensity_class(100.0) == "moderate"
    assert intensity_class(399.999) == "moderate"
    assert intensity_class(400.0) == "vigorous"
    assert intensity_class(0.0) == "low"


def test_misaligned_intervals_rejected():
    stream = build_stream(Side.LEFT, [50.0] * 120)
    with pytest.raises(InconsistentIntervals):
        classify_activity(stream, ((7, EPOCH_MS + 7),))
    with pytest.raises(InconsistentIntervals):
        classify_activity(stream, ((0, 121 * EPOCH_MS),))


def arm_day(side, active_subs, total_subs):
    """One-hour stream with the first ``active_subs`` sub-epochs active."""
    n_epochs = total_subs // 15
    amps = [23.0 if i < active_subs else 0.0 for i in range(total_subs)]
    return build_stream(side, [60.0] * n_epochs, active_amp_mg=amps)


def test_identical_streams_are_symmetric():
    left = arm_day(Side.LEFT, 900, 1800)
    right = arm_day(Side.RIGHT, 900, 1800)
    use = compute_arm_use(left, right, Side.LEFT)
    assert use.active_s_left == use.active_s_right
    assert use.use_ratio == 1.0
    assert use.laterality == 0.0


def test_inactive_affected_arm():
    left = arm_day(Side.LEFT, 0, 1800)
    right = arm_day(Side.RIGHT, 900, 1800)
    use = compute_arm_use(left, right, Side.LEFT)
    assert use.use_ratio == 0.0
    assert use.laterality == 1.0


def test_planted_use_ratio():
    # affected left active 30% of sub-epochs, unaffected right 60%
    left = arm_day(Side.LEFT, 540, 1800)
    right = arm_day(Side.RIGHT, 1080, 1800)
    use = compute_arm_use(left, right, Side.LEFT)
    assert use.active_s_left == pytest.approx(540 * 2, abs=2)
    assert use.active_s_right == pytest.approx(1080 * 2, abs=2)
    assert use.use_ratio == pytest.approx(0.5, abs=2 / 2160)
    expected_lat = (1080 - 540) / (1080 + 540)
    assert use.laterality == pytest.approx(expected_lat, abs=0.01)


def test_swap_inverts_ratio_and_negates_laterality():
    left = arm_day(Side.LEFT, 540, 1800)
    right = arm_day(Side.RIGHT, 1080, 1800)
    a = compute_arm_use(left, right, Side.LEFT)
    # swapping which physical arm is affected mirrors the measures
    b = compute_arm_use(left, right, Side.RIGHT)
    assert b.use_ratio == pytest.approx(1.0 / a.use_ratio)
    assert b.laterality == pytest.approx(-a.laterality)


def test_both_arms_idle():
    left = arm_day(Side.LEFT, 0, 1800)
    right = arm_day(Side.RIGHT, 0, 1800)
    use = compute_arm_use(left, right, Side.LEFT)
    assert use.use_ratio is None
    assert use.laterality == 0.0


def test_unknown_affected_side_yields_null_ratio():
    left = arm_day(Side.LEFT, 540, 1800)
    right = arm_day(Side.RIGHT, 1080, 1800)
    use = compute_arm_use(left, right, Side.UNKNOWN)
    assert use.active_s_left > 0
    assert use.use_ratio is None
    assert use.laterality is None


def test_no_overlap_rejected():
    left = build_stream(Side.LEFT, [60.0] * 2, t0_ms=0)
    right = build_stream(Side.RIGHT, [60.0] * 2, t0_ms=10 * EPOCH_MS)
    with pytest.raises(NoOverlap):
        compute_arm_use(left, right, Side.LEFT)


def test_stream_codec_roundtrip_binary_and_text():
    stream = build_stream(Side.RIGHT, [50.0, 200.0, None])
    for binary in (True, False):
        blob = encode_stream(stream, binary=binary)
        back = decode_stream(blob)
        assert back.side is Side.RIGHT
        assert back.sample_rate_hz == pytest.approx(RATE)
        np.testing.assert_array_equal(back.t_ms, stream.t_ms)
        np.testing.assert_allclose(back.accel, stream.accel, atol=1e-6)


def test_codec_rejects_garbage():
    with pytest.raises(MalformedPayload):
        decode_stream(b"")
    with pytest.raises(MalformedPayload):
        decode_stream(b"IMUB\x07garbage")
    with pytest.raises(MalformedPayload):
        decode_stream(b"not,a,header\n1,2,3")


def test_declared_rate_must_match_samples():
    t = np.arange(100, dtype=np.int64) * 500
    accel = np.zeros((100, 3))
    accel[:, 2] = 1.0
    with pytest.raises(MalformedPayload):
        ImuStream(Side.LEFT, 50.0, t, accel, np.zeros_like(accel))
