import json
import os
import sys
import textwrap

import numpy as np
import pytest
from pydantic import ValidationError

from sphere_seg.Scripts.exceptions import (
    InputError,
    SegmenterDimensionError,
    SegmenterOutputError,
    SegmenterProcessError,
    SegmenterTimeoutError,
)
from sphere_seg.Scripts.schemas import PassSegmenters, SegmenterSpec
from sphere_seg.Scripts.segmenter import (
    DOMAIN_SPHERICAL,
    ExternalCommandSegmenter,
    SegmenterInput,
    ThresholdOracle,
    segment,
    validate_prediction,
)
from sphere_seg.Scripts.spherical_transform import Origin, SphericalGrid, SphericalVolume
from sphere_seg.Scripts.volume_core import LabelVolume, ScalarVolume, Spacing, normalize_with_stats

UNIT = Spacing.isotropic(1.0)

# A stand-in model: thresholds channel 0 at 0.5 into label 2. Parses SVOL itself so it
# runs without the package on its path.
FAKE_MODEL = textwrap.dedent(
    """
    import os, struct, sys, time
    import numpy as np

    mode, workdir = sys.argv[1], sys.argv[2]
    with open(os.path.join(workdir, "input_ch0.svol"), "rb") as f:
        raw = f.read()
    ndim = raw[9]
    dims = struct.unpack_from(f"<{ndim}I", raw, 10)
    start = 10 + 4 * ndim
    spacing = raw[start:start + 24]
    values = np.frombuffer(raw, "<f4", offset=start + 24).reshape(dims)

    def write(labels):
        header = struct.pack("<4sIBB", b"SVOL", 1, 1, labels.ndim)
        header += struct.pack(f"<{labels.ndim}I", *labels.shape) + spacing
        with open(os.path.join(workdir, "pred.svol"), "wb") as f:
            f.write(header + labels.astype("<u1").tobytes())

    if mode == "ok":
        write(np.where(values > 0.5, 2, 0))
    elif mode == "fail":
        sys.stderr.write("model crashed")
        sys.exit(3)
    elif mode == "sleep":
        time.sleep(30)
    elif mode == "shape":
        write(np.zeros(tuple(d + 1 for d in dims)))
    elif mode == "bad_label":
        write(np.full(dims, 3))
    elif mode == "garbage":
        with open(os.path.join(workdir, "pred.svol"), "wb") as f:
            f.write(b"not an svol")
    """
)


@pytest.fixture
def fake_model(tmp_path):
    script = tmp_path / "fake_model.py"
    script.write_text(FAKE_MODEL)

    def make(mode, **kwargs):
        return SegmenterSpec(kind="external_command", command=[sys.executable, str(script), mode], **kwargs)

    return make


@pytest.fixture
def ramp_input():
    values = np.linspace(0.0, 1.0, 4 * 5 * 6, dtype=np.float32).reshape(4, 5, 6)
    return SegmenterInput([values], UNIT, names=("t1",))


# --- 1. Threshold oracle ---
def test_oracle_thresholds_channel_zero():
    values = np.array([0.0, 0.3, 0.5, 0.75, 0.95], dtype=np.float32).reshape(5, 1, 1)
    labels = ThresholdOracle(SegmenterSpec()).predict(SegmenterInput([values], UNIT))
    np.testing.assert_array_equal(labels.ravel(), [0, 0, 2, 1, 4])


def test_oracle_restores_normalized_intensities():
    data = np.zeros((6, 1, 1), dtype=np.float32)
    data[1:, 0, 0] = [0.3, 0.5, 0.75, 0.95, 0.3]
    normalized, stats = normalize_with_stats(ScalarVolume(data, UNIT))

    raw = ThresholdOracle(SegmenterSpec()).predict(SegmenterInput([data], UNIT))
    restored = ThresholdOracle(SegmenterSpec()).predict(SegmenterInput([normalized.data], UNIT, stats=[stats]))
    np.testing.assert_array_equal(restored, raw)


def test_oracle_thresholds_must_increase():
    with pytest.raises(ValidationError):
        SegmenterSpec(t_wt=0.8, t_tc=0.7, t_et=0.9)
    with pytest.raises(ValidationError):
        SegmenterSpec(kind="external_command")


def test_later_passes_reuse_the_first_segmenter():
    custom = SegmenterSpec(t_wt=0.1, t_tc=0.2, t_et=0.3)
    segmenters = PassSegmenters(pass1=SegmenterSpec(), pass3=custom)
    assert segmenters.for_pass(2) == segmenters.pass1
    assert segmenters.for_pass(3) == custom


# --- 2. Input and output checks ---
def test_input_channels_must_share_dims():
    with pytest.raises(InputError):
        SegmenterInput([np.zeros((2, 2, 2)), np.zeros((2, 2, 3))], UNIT)
    with pytest.raises(InputError):
        SegmenterInput([], UNIT)


def test_validate_prediction():
    with pytest.raises(SegmenterDimensionError):
        validate_prediction(np.zeros((2, 2, 2)), (2, 2, 3))
    with pytest.raises(SegmenterOutputError):
        validate_prediction(np.full((2, 2, 2), 3), (2, 2, 2))
    assert validate_prediction(np.full((2, 2, 2), 4), (2, 2, 2)).dtype == np.uint8


def test_segment_returns_the_input_domain(ramp_input):
    labels = segment(SegmenterSpec(), ramp_input)
    assert isinstance(labels, LabelVolume) and labels.dims == (4, 5, 6)

    grid = SphericalGrid(4, 8, 3, 10.0, Origin(0.0, 0.0, 0.0))
    channel = SphericalVolume(grid, np.full(grid.shape, 0.95))
    item = SegmenterInput.from_spherical([channel])
    assert item.domain == DOMAIN_SPHERICAL

    result = segment(SegmenterSpec(), item, grid)
    assert isinstance(result, SphericalVolume) and result.is_label
    assert (result.data == 4).all()
    with pytest.raises(InputError):
        segment(SegmenterSpec(), item)


# --- 3. External command ---
def test_external_command_round_trip(fake_model, ramp_input):
    labels = segment(fake_model("ok"), ramp_input)
    expected = np.where(ramp_input.channels[0] > 0.5, 2, 0)
    np.testing.assert_array_equal(labels.data, expected)


def test_exchange_directory_holds_inputs_and_meta(fake_model, tmp_path):
    values = np.ones((3, 3, 3), dtype=np.float32)
    item = SegmenterInput(
        [values, values * 2], UNIT, names=("t1", "flair"), meta={"pass": 2, "origin": [1.0, 2.0, 3.0]}
    )
    spec = fake_model("ok", workdir_policy="keep", workdir_root=str(tmp_path / "exchange"))
    ExternalCommandSegmenter(spec).predict(item)

    (workdir,) = os.listdir(tmp_path / "exchange")
    files = set(os.listdir(tmp_path / "exchange" / workdir))
    assert {"input_ch0.svol", "input_ch1.svol", "meta.json", "pred.svol"} <= files
    with open(tmp_path / "exchange" / workdir / "meta.json") as f:
        meta = json.load(f)
    assert meta["pass"] == 2
    assert meta["channel_names"] == ["t1", "flair"]
    assert meta["shape"] == [3, 3, 3]


def test_temporary_exchange_is_removed(fake_model, ramp_input, tmp_path):
    root = tmp_path / "exchange"
    segment(fake_model("ok", workdir_root=str(root)), ramp_input)
    assert os.listdir(root) == []


def test_nonzero_exit_is_reported(fake_model, ramp_input):
    with pytest.raises(SegmenterProcessError) as excinfo:
        segment(fake_model("fail"), ramp_input)
    assert excinfo.value.returncode == 3
    assert "model crashed" in excinfo.value.stderr
    assert excinfo.value.exit_code == 4


def test_timeout(fake_model, ramp_input):
    with pytest.raises(SegmenterTimeoutError):
        segment(fake_model("sleep", timeout_s=1.0), ramp_input)


@pytest.mark.parametrize(
    "mode, error",
    [
        ("silent", SegmenterOutputError),
        ("garbage", SegmenterOutputError),
        ("shape", SegmenterDimensionError),
        ("bad_label", SegmenterOutputError),
    ],
)
def test_bad_predictions(fake_model, ramp_input, mode, error):
    with pytest.raises(error):
        segment(fake_model(mode), ramp_input)


def test_missing_executable(ramp_input, tmp_path):
    spec = SegmenterSpec(kind="external_command", command=[str(tmp_path / "no_such_model")])
    with pytest.raises(SegmenterProcessError):
        segment(spec, ramp_input)
