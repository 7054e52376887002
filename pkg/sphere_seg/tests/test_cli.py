import argparse
import json
import logging
import os
import sys

import cv2
import numpy as np
import pandas as pd
import pytest

from conftest import ball
from sphere_seg.Scripts.cli import load_config, main, resolve_threads
from sphere_seg.Scripts.exceptions import ConfigError
from sphere_seg.Scripts.io_formats import read_nifti, write_nifti
from sphere_seg.Scripts.metrics import dice
from sphere_seg.Scripts.spherical_transform import Origin, compute_r_max
from sphere_seg.Scripts.volume_core import LabelVolume, ScalarVolume, Spacing, region_masks_from_labels

PHANTOM_ARGS = ["--extent", "128,128,112", "--seed", "0"]
RUN_GRID = "64,96,48"


@pytest.fixture(scope="module")
def phantom_case(tmp_path_factory):
    case_dir = tmp_path_factory.mktemp("case")
    assert main(["phantom", str(case_dir), "--case", "p0", "--quiet"] + PHANTOM_ARGS) == 0
    return case_dir


@pytest.fixture(scope="module")
def run_output(phantom_case, tmp_path_factory):
    out_dir = tmp_path_factory.mktemp("run")
    code = main(["run", str(phantom_case), str(out_dir), "--grid", RUN_GRID, "--seed", "0", "--keep-intermediates", "--quiet"])
    assert code == 0
    return out_dir


@pytest.fixture
def ball_labels(tmp_path):
    data = np.zeros((48, 48, 48), np.uint8)
    data[ball(data.shape, (24, 24, 24), 14)] = 2
    data[ball(data.shape, (24, 24, 24), 6)] = 1
    path = str(tmp_path / "ball_seg.nii.gz")
    write_nifti(LabelVolume(data, Spacing.isotropic(1.0)), path)
    return path, data


# --- 1. Phantom and run ---
def test_phantom_writes_brats_named_files(phantom_case):
    names = sorted(os.listdir(phantom_case))
    assert names == ["p0_flair.nii.gz", "p0_seg.nii.gz", "p0_t1.nii.gz", "p0_t1ce.nii.gz", "p0_t2.nii.gz"]
    assert read_nifti(str(phantom_case / "p0_t1.nii.gz")).dims == (128, 128, 112)


def test_run_writes_labels_and_reports(run_output):
    expected = {"labels.nii.gz", "report.json", "report.csv", "timings.json"}
    expected |= {"pass1_labels.nii.gz", "pass2_labels.nii.gz", "pass3_labels.nii.gz"}
    assert expected <= set(os.listdir(run_output))

    with open(run_output / "report.json") as f:
        report = json.load(f)
    assert [p["pass_id"] for p in report["passes"]] == ["first", "second", "third"]
    assert report["cartesian_filter"] is False
    assert len(pd.read_csv(run_output / "report.csv")) == 3


def test_run_then_eval(run_output, phantom_case, capsys, tmp_path):
    csv_path = tmp_path / "metrics.csv"
    code = main([
        "eval", str(run_output / "labels.nii.gz"), str(phantom_case / "p0_seg.nii.gz"),
        "--case-id", "p0", "--csv", str(csv_path), "--quiet",
    ])
    assert code == 0
    assert "p0" in capsys.readouterr().out

    metrics = pd.read_csv(csv_path).set_index("region")
    assert metrics.loc["WT", "dice"] >= 0.90
    assert metrics.loc["TC", "dice"] >= 0.85


def test_run_is_reproducible_across_threads(phantom_case, run_output, tmp_path):
    again = tmp_path / "again"
    code = main(["run", str(phantom_case), str(again), "--grid", RUN_GRID, "--seed", "0", "--threads", "3", "--quiet"])
    assert code == 0
    for name in ("labels.nii.gz", "report.json"):
        assert (again / name).read_bytes() == (run_output / name).read_bytes()


def test_run_with_missing_channel(phantom_case, tmp_path):
    partial = tmp_path / "partial"
    partial.mkdir()
    for name in ("t1", "t1ce", "t2"):
        (partial / f"p0_{name}.nii.gz").write_bytes((phantom_case / f"p0_{name}.nii.gz").read_bytes())
    assert main(["run", str(partial), str(tmp_path / "out"), "--quiet"]) == 3


def test_run_with_failing_segmenter(phantom_case, tmp_path):
    config = {
        "rng_seed": 0,
        "grid": {"n_r": 8, "n_theta": 8, "n_phi": 4},
        "segmenters": {"pass1": {"kind": "external_command", "command": [sys.executable, "-c", "import sys; sys.exit(5)"]}},
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config))
    assert main(["run", str(phantom_case), str(tmp_path / "out"), "--config", str(path), "--quiet"]) == 4


# --- 2. Configuration ---
def test_config_errors_exit_with_usage_code(phantom_case, tmp_path):
    out = str(tmp_path / "out")
    assert main(["run", str(phantom_case), out, "--config", str(tmp_path / "missing.json"), "--quiet"]) == 2

    no_seed = tmp_path / "no_seed.json"
    no_seed.write_text(json.dumps({"grid": {"n_r": 16}}))
    assert main(["run", str(phantom_case), out, "--config", str(no_seed), "--quiet"]) == 2

    typo = tmp_path / "typo.json"
    typo.write_text(json.dumps({"rng_seed": 1, "gird": {}}))
    assert main(["run", str(phantom_case), out, "--config", str(typo), "--quiet"]) == 2

    assert main(["run", str(phantom_case), out, "--grid", "16,16", "--quiet"]) == 2


def test_flags_override_the_config_file(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"rng_seed": 3, "parallelism": 2, "grid": {"n_r": 20}}))
    args = argparse.Namespace(config=str(path), seed=11, grid="10,12,6", threads=None)

    cfg = load_config(args)
    assert cfg.rng_seed == 11 and cfg.selection.rng_seed == 11
    assert (cfg.grid.n_r, cfg.grid.n_theta, cfg.grid.n_phi) == (10, 12, 6)
    assert resolve_threads(args, cfg) == 2
    assert resolve_threads(argparse.Namespace(threads=5), cfg) == 5

    with pytest.raises(ConfigError):
        load_config(argparse.Namespace(config=None, seed=None, grid="1,12,6"))


def test_usage_errors_exit_with_code_two():
    with pytest.raises(SystemExit) as excinfo:
        main(["no-such-command"])
    assert excinfo.value.code == 2


# --- 3. Transform and inverse ---
def test_transform_then_inverse(ball_labels, tmp_path):
    path, data = ball_labels
    spherical = str(tmp_path / "ball_sph.svol")
    restored = str(tmp_path / "ball_back.nii.gz")

    assert main(["transform", path, spherical, "--labels", "--grid", "64,128,64", "--quiet"]) == 0
    with open(spherical + ".json") as f:
        sidecar = json.load(f)
    assert sidecar["is_label"] is True
    assert sidecar["interpolation"] == "nearest"
    assert sidecar["origin"] == [24.0, 24.0, 24.0]
    volume = LabelVolume(data, Spacing.isotropic(1.0))
    assert sidecar["r_max"] == pytest.approx(compute_r_max(volume, Origin(24.0, 24.0, 24.0)))

    assert main(["inverse", spherical, restored, "--quiet"]) == 0
    back = read_nifti(restored, as_labels=True)
    assert back.dims == (48, 48, 48)
    original = region_masks_from_labels(volume)
    assert dice(region_masks_from_labels(back).wt, original.wt) >= 0.95


def test_transform_scalar_to_nifti_with_outside_origin(tmp_path, caplog):
    source = str(tmp_path / "scalar.nii.gz")
    write_nifti(ScalarVolume(np.ones((10, 10, 10)), Spacing.isotropic(2.0)), source)
    output = str(tmp_path / "scalar_sph.nii.gz")

    with caplog.at_level(logging.WARNING):
        assert main(["transform", source, output, "--origin", "-5,10,10", "--grid", "8,16,8"]) == 0
    assert "outside the volume" in caplog.text

    spherical = read_nifti(output)
    assert spherical.dims == (8, 16, 8)
    with open(output + ".json") as f:
        assert json.load(f)["interpolation"] == "trilinear"


def test_transform_input_errors(tmp_path):
    assert main(["transform", str(tmp_path / "missing.nii"), str(tmp_path / "out.svol"), "--quiet"]) == 3
    garbage = tmp_path / "garbage.nii"
    garbage.write_bytes(b"\x00" * 400)
    assert main(["transform", str(garbage), str(tmp_path / "out.svol"), "--quiet"]) == 3


# --- 4. Origins, augment, demo ---
def test_origins_per_pass(phantom_case, tmp_path, capsys):
    assert main(["origins", str(phantom_case / "p0_t1.nii.gz"), "--quiet"]) == 0
    first = json.loads(capsys.readouterr().out)
    assert first["pass"] == "first" and first["origins"] == [[64.0, 64.0, 56.0]]

    output = tmp_path / "second.json"
    assert main(["origins", str(phantom_case / "p0_seg.nii.gz"), "--pass", "2", "--output", str(output), "--quiet"]) == 0
    second = json.loads(output.read_text())
    assert second["pass"] == "second" and len(second["origins"]) >= 1


def test_augment_writes_volume_labels_and_parameters(phantom_case, tmp_path):
    output = str(tmp_path / "aug.nii.gz")
    code = main([
        "augment", str(phantom_case / "p0_t1.nii.gz"), output,
        "--labels", str(phantom_case / "p0_seg.nii.gz"), "--max-angle", "30", "--seed", "4", "--quiet",
    ])
    assert code == 0
    labels = read_nifti(str(tmp_path / "aug_seg.nii.gz"), as_labels=True)
    assert set(np.unique(labels.data)) <= {0, 1, 2, 4}
    with open(output + ".json") as f:
        params = json.load(f)
    assert all(abs(a) <= 30 for a in params["angles_deg"])


def test_demo_polar_panel(tmp_path):
    image = np.zeros((64, 64))
    image[20:30, 36:50] = 1.0
    source = tmp_path / "image.npy"
    np.save(source, image)
    output = str(tmp_path / "panel.png")

    assert main(["demo-polar", str(source), output, "--n-r", "32", "--n-theta", "64", "--quiet"]) == 0
    assert cv2.imread(output, cv2.IMREAD_GRAYSCALE).shape == (512, 768)


def test_demo_polar_edge_cases(tmp_path):
    empty = tmp_path / "empty.npy"
    np.save(empty, np.zeros((16, 16)))
    assert main(["demo-polar", str(empty), str(tmp_path / "empty.png"), "--quiet"]) == 0

    volume = tmp_path / "volume.npy"
    np.save(volume, np.zeros((4, 4, 4)))
    assert main(["demo-polar", str(volume), str(tmp_path / "volume.png"), "--quiet"]) == 3
