import csv
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from monohdr import cli
from monohdr import synthdata as sd
from monohdr import trainer as tr
from monohdr.converters import IdentityConverter
from monohdr.imageio import quantize8, read_pfm, read_ppm

SMALL = ["--image-size", "16", "--n-views", "6", "--n-train", "3", "--n-samples", "8"]
TRAIN = ["--iterations", "4"]


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert cli.main(["synth", "--scene", "gradient-room", *SMALL, "-o", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def tiny_config(tmp_path_factory):
    p = tmp_path_factory.mktemp("cfg") / "tiny.json"
    p.write_text(json.dumps({"batch_rays": 288, "patch_size": 12, "n_samples": 8, "field_resolution": 8}))
    return p


@pytest.fixture(scope="module")
def run(data, tiny_config, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert cli.main(["train", "--data", str(data), "--config", str(tiny_config), *TRAIN, "-o", str(out)]) == 0
    return out


def test_every_subcommand_help_lists_defaults(capsys):
    parser = cli.build_parser()
    sub = next(a for a in parser._actions if a.__class__.__name__ == "_SubParsersAction")
    for name, p in sub.choices.items():
        text = " ".join(p.format_help().split())
        for action in p._actions:
            if action.option_strings and action.dest != "help":
                assert f"(default: {action.default})" in text, (name, action.dest)
        assert cli.main([name, "--help"]) == 0
    capsys.readouterr()


def test_synth_layout_and_manifest(tmp_path):
    out = tmp_path / "run1"
    assert cli.main(["synth", "--scene", "emissive-boxes", "--exposure-index", "2", "--seed", "7",
                     "--noise-sigma", "0.01", *SMALL, "-o", str(out)]) == 0
    assert (out / "manifest.json").exists() and (out / "run_manifest.json").exists()
    assert sorted(p.name for p in (out / "ldr").iterdir()) == [f"view_{i:03d}.ppm" for i in range(6)]
    assert len(list((out / "hdr_gt").glob("*.pfm"))) == 6
    m = json.loads((out / "manifest.json").read_text())
    assert m["camera"]["noise_sigma"] == 0.01 and m["exposure_index"] == 2
    assert cli.verify_run_manifest(out, out) == []


def test_synth_twice_same_hash(tmp_path):
    for d in ("a", "b"):
        assert cli.main(["synth", *SMALL, "--seed", "3", "-o", str(tmp_path / d)]) == 0
    assert sd.dataset_hash(tmp_path / "a") == sd.dataset_hash(tmp_path / "b")


def test_exit_codes(tmp_path, data, capsys):
    assert cli.main(["synth", "--scene", "teapot", "-o", str(tmp_path / "x")]) == 2
    assert cli.main(["synth", "--exposure-index", "9", *SMALL, "-o", str(tmp_path / "x")]) == 2
    assert cli.main(["train", "--data", str(tmp_path / "missing"), "-o", str(tmp_path / "y")]) == 3
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.main(["train", "--data", str(data), "--config", str(bad), "-o", str(tmp_path / "y")]) == 2
    bad.write_text(json.dumps({"bogus": 1}))
    assert cli.main(["train", "--data", str(data), "--config", str(bad), "-o", str(tmp_path / "y")]) == 2
    assert cli.main(["train", "--data", str(data), "--losses", "", "-o", str(tmp_path / "y")]) == 2
    (tmp_path / "c.mh3d").write_bytes(b"nope")
    assert cli.main(["render", "--checkpoint", str(tmp_path / "c.mh3d"), "--data", str(data),
                     "-o", str(tmp_path / "z")]) == 3
    assert cli.main(["frobnicate"]) == 2
    capsys.readouterr()


def test_nan_abort_exit_code(tmp_path, data, tiny_config, capsys):
    cfg = tr.TrainConfig.from_dict({**json.loads(tiny_config.read_text()), "iterations": 4})
    state = tr.init_state(sd.load_dataset(data), cfg)
    state.field.density[:] = np.nan
    tr.save_state(state, tmp_path / "nan.mh3d")
    assert cli.main(["train", "--data", str(data), "--resume", str(tmp_path / "nan.mh3d"),
                     "-o", str(tmp_path / "r")]) == 4
    assert "aborted" in capsys.readouterr().err


def test_train_outputs(run):
    rows = list(csv.DictReader(open(run / "metrics.csv")))
    assert [r["split"] for r in rows] == ["train"] * 4 + ["test"]
    assert all(r["loss_total"] for r in rows[:4])
    m = json.loads((run / "run_manifest.json").read_text())
    assert m["seed"] == 0 and m["artifacts"] == {"checkpoint": "checkpoint.mh3d", "metrics": "metrics.csv"}
    assert cli.verify_run_manifest(run) == []


def test_profile_flag_sets_field_style(data, tmp_path, tiny_config):
    out = tmp_path / "fs"
    assert cli.main(["train", "--data", str(data), "--config", str(tiny_config), "--profile", "field-style",
                     "--iterations", "1", "-o", str(out)]) == 0
    cfg = tr.load_state(out / "checkpoint.mh3d").config
    assert cfg.beta == 0.01 and cfg.loss_mode == "mse" and cfg.profile == "field-style"


def test_resume_matches_straight_run(data, run, tiny_config, tmp_path):
    half = tmp_path / "half"
    assert cli.main(["train", "--data", str(data), "--config", str(tiny_config), *TRAIN, "--until", "2",
                     "-o", str(half)]) == 0
    rest = tmp_path / "rest"
    assert cli.main(["train", "--data", str(data), "--resume", str(half / "checkpoint.mh3d"),
                     "-o", str(rest)]) == 0
    assert (rest / "checkpoint.mh3d").read_bytes() == (run / "checkpoint.mh3d").read_bytes()


def test_render_modes(data, run, tmp_path, capsys):
    out = tmp_path / "r"
    ck = str(run / "checkpoint.mh3d")
    assert cli.main(["render", "--checkpoint", ck, "--data", str(data), "--views", "0", "-o", str(out)]) == 0
    assert "ldr_psnr" in capsys.readouterr().out
    assert cli.main(["render", "--checkpoint", ck, "--data", str(data), "--views", "0,1", "--mode", "hdr",
                     "-o", str(out)]) == 0
    hdr = read_pfm(out / "hdr" / "view_001.pfm")
    assert hdr.shape == (16, 16, 3) and np.isfinite(hdr).all()
    assert cli.main(["render", "--checkpoint", ck, "--data", str(data), "--views", "0",
                     "--mode", "hdr-tonemapped", "-o", str(out)]) == 0
    assert read_ppm(out / "hdr-tonemapped" / "view_000.ppm").shape == (16, 16, 3)
    poses = tmp_path / "poses.json"
    poses.write_text(json.dumps(sd.load_dataset(data).manifest["poses"][:2]))
    assert cli.main(["render", "--checkpoint", ck, "--pose-file", str(poses), "-o", str(tmp_path / "p")]) == 0
    assert len(list((tmp_path / "p" / "ldr").glob("*.ppm"))) == 2
    assert cli.main(["render", "--checkpoint", ck, "--data", str(data), "--views", "99", "-o", str(out)]) == 2


def test_identity_converter_renders_match(data, tiny_config, tmp_path):
    cfg = tr.TrainConfig.from_dict({**json.loads(tiny_config.read_text()), "iterations": 2})
    state, _ = tr.train(sd.load_dataset(data), cfg)
    state.l2h = IdentityConverter()
    state.opt["l2h"] = tr.Adam({})
    tr.save_state(state, tmp_path / "id.mh3d")
    base = ["render", "--checkpoint", str(tmp_path / "id.mh3d"), "--data", str(data), "--views", "all",
            "-o", str(tmp_path / "o")]
    assert cli.main(base) == 0 and cli.main(base + ["--mode", "hdr"]) == 0
    for i in range(6):
        ldr = read_ppm(tmp_path / "o" / "ldr" / f"view_{i:03d}.ppm", as_float=False)
        hdr = read_pfm(tmp_path / "o" / "hdr" / f"view_{i:03d}.pfm")
        np.testing.assert_array_equal(quantize8(hdr), ldr)


def test_eval_ground_truth_as_prediction(data, tmp_path, capsys):
    out = tmp_path / "e"
    assert cli.main(["eval", "--data", str(data), "--pred-dir", str(data), "--views", "all", "-o", str(out)]) == 0
    lines = (out / "eval.csv").read_text().splitlines()
    assert lines[0] == "view,ldr_psnr,ldr_ssim,hdr_psnr,hdr_ssim"
    mean = lines[-1].split(",")
    assert mean[0] == "mean"
    assert math.isinf(float(mean[1])) and float(mean[2]) == 1.0
    assert math.isinf(float(mean[3])) and float(mean[4]) == 1.0
    assert len(lines) == 1 + 6 + 1
    capsys.readouterr()


def test_eval_checkpoint_twice_identical(data, run, tmp_path, capsys):
    outs = [tmp_path / "a", tmp_path / "b"]
    for o in outs:
        assert cli.main(["eval", "--data", str(data), "--checkpoint", str(run / "checkpoint.mh3d"),
                         "-o", str(o)]) == 0
    assert (outs[0] / "eval.csv").read_bytes() == (outs[1] / "eval.csv").read_bytes()
    c = json.loads((outs[0] / "consistency.json").read_text())
    assert c["n_points"] >= 0
    assert cli.main(["eval", "--data", str(data), "-o", str(tmp_path / "c")]) == 2
    capsys.readouterr()


def test_ablate_report(data, tiny_config, tmp_path, capsys):
    out = tmp_path / "ab"
    assert cli.main(["ablate", "--data", str(data), "--config", str(tiny_config), "--iterations", "1",
                     "--seeds", "0", "--cells", "ldr,hdr,mlp-l2h", "-o", str(out)]) == 0
    rows = list(csv.DictReader(open(out / "ablation.csv")))
    assert [r["cell"] for r in rows] == ["ldr", "hdr", "mlp-l2h"]
    assert rows[0]["psnr_hdr_mulaw"] == "" and rows[1]["psnr_hdr_mulaw"] != ""
    assert (out / "cells" / "hdr_seed0" / "checkpoint.mh3d").exists()
    assert cli.main(["ablate", "--data", str(data), "--cells", "nope", "-o", str(out)]) == 2
    capsys.readouterr()


def test_module_entry_point_runs():
    res = subprocess.run([sys.executable, "-m", "monohdr", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and "mh3d" in res.stdout
