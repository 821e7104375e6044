import json
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dyntile.scalelaw import (
    SCALED_V1,
    SCALED_V2,
    CameraModel,
    RecognitionSpec,
    ScaleLawError,
    ScalingPolicy,
    bin_for_capture,
    build_ladder,
    load_policy,
    required_resolution,
    required_resolution_exact,
    resolution_table,
    select_bin,
    tiles_per_dim,
)

SPEC = RecognitionSpec(80, 0.48)
LADDER = build_ladder(640, 0.8, 6)

# Reference required resolutions: (altitude m, fov deg) -> px.
REFERENCE = {
    (10, 73): 191, (10, 65): 164, (10, 50): 120,
    (20, 73): 382, (20, 65): 328, (20, 50): 240,
    (30, 73): 573, (30, 65): 493, (30, 50): 361,
    (240, 73): 4585, (240, 65): 3947, (240, 50): 2889,
    (250, 73): 4776, (250, 65): 4112, (250, 50): 3010,
}


@pytest.mark.parametrize("key,expected", sorted(REFERENCE.items()))
def test_reference_resolutions(key, expected):
    h, fov = key
    assert abs(required_resolution(h, fov, SPEC) - expected) <= 1


def test_required_resolution_examples():
    assert required_resolution(10, 73, SPEC) == 191
    assert required_resolution(1, 90, RecognitionSpec(1, 1)) == 2
    assert required_resolution(250, 73, SPEC) == 4776
    assert required_resolution(60, 65, SPEC) in (986, 987)


@pytest.mark.parametrize(
    "h,fov,rec,obj",
    [
        (0, 73, 80, 0.48),
        (-5, 73, 80, 0.48),
        (math.nan, 73, 80, 0.48),
        (math.inf, 73, 80, 0.48),
        (10, 0, 80, 0.48),
        (10, 180, 80, 0.48),
        (10, -3, 80, 0.48),
    ],
)
def test_required_resolution_domain_errors(h, fov, rec, obj):
    with pytest.raises(ScaleLawError):
        required_resolution(h, fov, RecognitionSpec(rec, obj))


@pytest.mark.parametrize("rec,obj", [(0, 1), (1, 0), (-1, 1), (math.nan, 1)])
def test_recognition_spec_rejects_bad_values(rec, obj):
    with pytest.raises(ScaleLawError):
        RecognitionSpec(rec, obj)


pos = st.floats(min_value=0.5, max_value=500, allow_nan=False)
fov = st.floats(min_value=1, max_value=179, allow_nan=False)


@given(h=pos, d=st.floats(min_value=0.01, max_value=50), f=fov)
def test_monotone_in_altitude(h, d, f):
    assert required_resolution_exact(h + d, f, SPEC) > required_resolution_exact(h, f, SPEC)


@given(f=st.floats(min_value=1, max_value=170), d=st.floats(min_value=0.01, max_value=9), h=pos)
def test_monotone_in_fov(f, d, h):
    assert required_resolution_exact(h, f + d, SPEC) > required_resolution_exact(h, f, SPEC)


@given(rec=st.floats(min_value=1, max_value=500), d=st.floats(min_value=0.01, max_value=50))
def test_monotone_in_rec_and_obj(rec, d):
    lo, hi = RecognitionSpec(rec, 0.48), RecognitionSpec(rec + d, 0.48)
    assert required_resolution_exact(50, 65, hi) > required_resolution_exact(50, 65, lo)
    small, big = RecognitionSpec(80, rec / 100), RecognitionSpec(80, (rec + d) / 100)
    assert required_resolution_exact(50, 65, big) < required_resolution_exact(50, 65, small)


def test_build_ladder_examples():
    assert LADDER.bins_px == (640, 1152, 1664, 2176, 2688, 3200)
    assert build_ladder(640, 0.8, 1).bins_px == (640,)
    assert build_ladder(512, 0.5, 3).bins_px == (512, 768, 1024)


@pytest.mark.parametrize("args", [(0, 0.8, 6), (640, 0, 6), (640, 1.2, 6), (640, 0.8, 0), (-1, 0.5, 2)])
def test_build_ladder_errors(args):
    with pytest.raises(ScaleLawError):
        build_ladder(*args)


@given(
    n=st.integers(min_value=1, max_value=4096),
    stride=st.floats(min_value=0.05, max_value=1.0),
    count=st.integers(min_value=1, max_value=20),
)
def test_ladder_constant_step(n, stride, count):
    try:
        ladder = build_ladder(n, stride, count)
    except ScaleLawError:
        return  # step rounds to zero
    assert ladder.bins_px[0] == n
    step = round(n * stride)
    assert all(b - a == step for a, b in zip(ladder.bins_px, ladder.bins_px[1:]))


def test_select_bin_examples():
    assert select_bin(986, LADDER, 3840) == 1152
    assert select_bin(300, LADDER, 512) == 512
    assert select_bin(5000, LADDER, 5456) == 3200
    assert select_bin(640, LADDER, 3840) == 640
    assert select_bin(641, LADDER, 3840) == 1152


def test_select_bin_keeps_native_when_bin_would_upscale():
    # 1230 px multispectral frame needing ~3000 px: keep it as captured
    assert select_bin(3010, LADDER, 1230) == 1230


@given(p=st.integers(min_value=1, max_value=10000), native=st.integers(min_value=1, max_value=8000))
def test_select_bin_properties(p, native):
    b = select_bin(p, LADDER, native)
    assert b <= native
    if native >= LADDER.top and p <= LADDER.top:
        assert b >= p
        assert b in LADDER.bins_px


def test_empty_ladder_is_an_error():
    from dyntile.scalelaw import BinLadder

    with pytest.raises(ScaleLawError):
        select_bin(100, BinLadder(640, 0.8, 0, ()), 1000)


def test_bin_for_capture_unknown_altitude_uses_fallback():
    cam = CameraModel(None, 73, 5456, 3632)
    assert bin_for_capture(cam, SPEC, SCALED_V2, LADDER) == 3200
    custom = ScalingPolicy("x", ((50.0, 1),), fallback_bin=4)
    assert bin_for_capture(cam, SPEC, custom, LADDER) == 2176


def test_bin_for_capture_policies_at_40m():
    cam = CameraModel(40, 65, 3840, 2160)
    assert bin_for_capture(cam, SPEC, SCALED_V1, LADDER) == 640
    assert bin_for_capture(cam, SPEC, SCALED_V2, LADDER) >= 1152


def test_bin_for_capture_beyond_table_uses_resolution_law():
    cam = CameraModel(200, 65, 3840, 2160)
    # 200 m at 65 deg needs ~3290 px -> clamped to the top bin
    assert bin_for_capture(cam, SPEC, SCALED_V2, LADDER) == 3200
    cam = CameraModel(60, 65, 3840, 2160)
    assert bin_for_capture(cam, SPEC, load_policy("equation"), LADDER) == 1152


def test_bin_for_capture_never_upscales():
    assert bin_for_capture(CameraModel(None, 65, 600, 450), SPEC, SCALED_V2, LADDER) == 600
    assert bin_for_capture(CameraModel(250, 50, 1230, 930), SPEC, SCALED_V2, LADDER) == 1230
    assert bin_for_capture(CameraModel(10, 65, 600, 450), SPEC, SCALED_V1, LADDER) == 600


def test_both_policies_send_60m_to_second_bin():
    cam = CameraModel(60, 65, 3840, 2160)
    assert bin_for_capture(cam, SPEC, SCALED_V1, LADDER) == 1152
    assert bin_for_capture(cam, SPEC, SCALED_V2, LADDER) == 1152


def test_v2_never_below_v1():
    for alt in range(5, 300, 5):
        cam = CameraModel(float(alt), 65, 3840, 2160)
        assert bin_for_capture(cam, SPEC, SCALED_V2, LADDER) >= bin_for_capture(cam, SPEC, SCALED_V1, LADDER)


def test_policy_validation():
    with pytest.raises(ScaleLawError):
        ScalingPolicy("bad", ((50.0, 1), (30.0, 2)))
    with pytest.raises(ScaleLawError):
        ScalingPolicy("bad", ((50.0, 0),))
    with pytest.raises(ScaleLawError):
        ScalingPolicy("big", ((50.0, 9),)).validate_for(LADDER)


def test_load_policy_from_file(tmp_path):
    p = tmp_path / "pol.json"
    p.write_text(json.dumps({"name": "mine", "breakpoints": [[40, 1], [90, 3]], "fallback_bin": 5}))
    pol = load_policy(p)
    assert pol.name == "mine"
    assert pol.breakpoints == ((40.0, 1), (90.0, 3))
    assert ScalingPolicy.from_dict(pol.to_dict()) == pol
    assert load_policy("scaledV1") is SCALED_V1
    with pytest.raises(ScaleLawError):
        load_policy(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ScaleLawError):
        load_policy(bad)


def test_camera_model_validation():
    with pytest.raises(ScaleLawError):
        CameraModel(-1, 65, 100, 100)
    with pytest.raises(ScaleLawError):
        CameraModel(10, 65, 0, 100)
    assert CameraModel(None, 65, 300, 500).native_long_side == 500


def test_tiles_per_dim_grows_with_bin():
    assert [tiles_per_dim(b, 640, 0.2) for b in LADDER.bins_px] == [1, 2, 3, 4, 5, 6]


def test_resolution_table_rows():
    rows = resolution_table([60], [65], SPEC, LADDER)
    assert len(rows) == 1
    assert rows[0].p_hat in (986, 987)
    assert rows[0].bin_px == 1152
    assert rows[0].tiles_per_dim == 2
    assert resolution_table([], [65], SPEC, LADDER) == []
