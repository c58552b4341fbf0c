"""End-to-end command behavior: data generation, audit, train, rollout, eval."""

import numpy as np
import pytest

from egowm.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main
from egowm.config import ConfigError, RunConfig, load_config, parse_config_text
from egowm.synth import load_clip, read_meta
from egowm.tensor import read_tns


def test_config_parsing_defaults_and_rejection(tmp_path):
    cfg = parse_config_text("")
    assert cfg.steps == 50  # sampling steps default
    assert cfg.lr == 1e-5  # learning rate default

    cfg = parse_config_text("lr=2e-3\nframes=9\n# comment\nseed=4\n")
    assert cfg.lr == 2e-3 and cfg.seed == 4

    with pytest.raises(ConfigError, match="unknown key"):
        parse_config_text("learning_rate=1\n")
    with pytest.raises(ConfigError, match="key=value"):
        parse_config_text("oops\n")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.cfg")


def test_gen_data_writes_layout_and_is_deterministic(tmp_path, capsys):
    out_a = tmp_path / "a"
    rc = main(["gen-data", "--seed", "5", "--clips", "2", "--frames", "9", "--size", "32", "--out", str(out_a)])
    assert rc == EXIT_OK
    dirs = sorted(p.name for p in out_a.iterdir() if p.is_dir())
    assert dirs == ["clip_0000", "clip_0001"]
    for name in ("rgb.tns", "hands.tns", "masks.tns", "trajectory.csv", "intrinsics.csv", "meta"):
        assert (out_a / "clip_0000" / name).exists()
    assert (out_a / "config.resolved").exists()

    out_b = tmp_path / "b"
    main(["gen-data", "--seed", "5", "--clips", "2", "--frames", "9", "--size", "32", "--out", str(out_b)])
    a = (out_a / "clip_0001" / "rgb.tns").read_bytes()
    b = (out_b / "clip_0001" / "rgb.tns").read_bytes()
    assert a == b  # byte-identical tensors for the same seed


def test_gen_data_window_enumeration(tmp_path):
    out = tmp_path / "w"
    rc = main(["gen-data", "--seed", "1", "--clips", "1", "--frames", "17", "--size", "32", "--out", str(out), "--window", "9"])
    assert rc == EXIT_OK
    meta = read_meta(out / "clip_0000")
    assert meta["window"] == "9"
    assert meta["window_stride"] == "5"
    assert meta["window_starts"] == "0;5;8"


def test_gen_data_unwritable_path_fails():
    rc = main(["gen-data", "--clips", "1", "--out", "/proc/nope/out"])
    assert rc == EXIT_DATA


def test_shape_audit_exit_codes(capsys):
    assert main(["shape-audit", "--scale", "paper"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "(5120, 21, 30, 30)" in out
    assert "18900" in out
    assert "(16, 21, 60, 60)" in out
    assert "(60, 60, 20)" in out
    assert main(["shape-audit", "--scale", "desk"]) == EXIT_OK
    capsys.readouterr()

    assert main(["shape-audit", "--scale", "paper"]) == EXIT_OK
    first = capsys.readouterr().out
    assert main(["shape-audit", "--scale", "paper"]) == EXIT_OK
    second = capsys.readouterr().out
    assert first == second  # deterministic output


def test_train_requires_data(tmp_path):
    rc = main(["train", "--out", str(tmp_path / "run")])
    assert rc == EXIT_USAGE
    rc = main(["train", "--data", str(tmp_path / "missing"), "--out", str(tmp_path / "run")])
    assert rc == EXIT_DATA


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    """One small train run shared by the train/rollout/eval CLI tests."""
    root = tmp_path_factory.mktemp("cli_run")
    data = root / "data"
    assert main(["gen-data", "--seed", "3", "--clips", "2", "--out", str(data)]) == EXIT_OK
    cfg = root / "train.cfg"
    cfg.write_text(
        "codec_steps=25\ntrain_steps=10\nlr=1e-3\ncodec_lr=2e-3\n"
        "timesteps_per_step=2\nschedule_steps=60\nseed=3\n"
    )
    run = root / "run"
    assert main(["train", "--data", str(data), "--config", str(cfg), "--out", str(run)]) == EXIT_OK
    return {"root": root, "data": data, "run": run, "cfg": cfg}


def test_train_outputs(tiny_run):
    run = tiny_run["run"]
    assert (run / "checkpoint" / "manifest.json").exists()
    assert (run / "checkpoint" / "config.resolved").exists()
    assert (run / "config.resolved").exists()
    codec_rows = (run / "codec_loss.csv").read_text().splitlines()
    assert codec_rows[0] == "step,loss"
    assert len(codec_rows) == 26
    losses = [float(r.split(",")[1]) for r in codec_rows[1:]]
    assert np.mean(losses[-5:]) < np.mean(losses[:5])  # smoothed decreasing
    assert len((run / "denoise_loss.csv").read_text().splitlines()) == 11

    cfg = load_config(run / "config.resolved")
    assert cfg.lr == 1e-3 and cfg.train_steps == 10


def test_train_resume_continues(tiny_run, tmp_path):
    run2 = tmp_path / "resumed"
    cfg2 = tmp_path / "more.cfg"
    cfg2.write_text(tiny_run["cfg"].read_text().replace("train_steps=10", "train_steps=12"))
    rc = main([
        "train", "--data", str(tiny_run["data"]), "--config", str(cfg2),
        "--out", str(run2), "--resume", str(tiny_run["run"] / "checkpoint"),
    ])
    assert rc == EXIT_OK
    rows = (run2 / "denoise_loss.csv").read_text().splitlines()
    assert len(rows) == 3  # header + steps 10 and 11


def test_rollout_outputs_and_determinism(tiny_run, tmp_path):
    ckpt = str(tiny_run["run"] / "checkpoint")
    clip_dir = str(tiny_run["data"] / "clip_0000")
    out_a, out_b = tmp_path / "ra", tmp_path / "rb"
    rc = main(["rollout", "--checkpoint", ckpt, "--clip", clip_dir, "--steps", "4", "--seed", "9", "--out", str(out_a), "--png"])
    assert rc == EXIT_OK
    frames = read_tns(out_a / "rgb.tns")
    clip = load_clip(clip_dir)
    assert frames.shape == clip.rgb.shape  # output frame count equals the horizon
    assert (out_a / "config.resolved").exists()
    assert len(list((out_a / "png").glob("*.png"))) == clip.frames

    rc = main(["rollout", "--checkpoint", ckpt, "--clip", clip_dir, "--steps", "4", "--seed", "9", "--out", str(out_b)])
    assert rc == EXIT_OK
    assert (out_a / "rgb.tns").read_bytes() == (out_b / "rgb.tns").read_bytes()

    # steps defaults to the config value (50) when not given; horizon mismatch fails
    bad_clip = tmp_path / "bad_clip"
    assert main(["rollout", "--checkpoint", ckpt, "--clip", str(bad_clip), "--steps", "1", "--seed", "0", "--out", str(tmp_path / "rc")]) == EXIT_DATA


def test_rollout_horizon_mismatch(tiny_run, tmp_path):
    long_data = tmp_path / "long"
    assert main(["gen-data", "--seed", "8", "--clips", "1", "--frames", "17", "--out", str(long_data)]) == EXIT_OK
    rc = main([
        "rollout", "--checkpoint", str(tiny_run["run"] / "checkpoint"),
        "--clip", str(long_data / "clip_0000"), "--steps", "1", "--seed", "0",
        "--out", str(tmp_path / "r"),
    ])
    assert rc == EXIT_DATA


def test_eval_of_ground_truth_against_itself(tiny_run, tmp_path):
    """eval(gt, gt) must produce the identity metric vector."""
    data = tiny_run["data"]
    pred = tmp_path / "pred"
    for clip_dir in sorted(p for p in data.iterdir() if p.is_dir()):
        target = pred / clip_dir.name
        target.mkdir(parents=True)
        (target / "rgb.tns").write_bytes((clip_dir / "rgb.tns").read_bytes())
    out = tmp_path / "report"
    rc = main(["eval", "--gt", str(data), "--pred", str(pred), "--out", str(out)])
    assert rc == EXIT_OK

    rows = (out / "report.csv").read_text().splitlines()
    header = rows[0].split(",")
    assert header[:11] == [
        "clip", "psnr", "ssim", "ope", "ooe", "ooe_valid_ratio", "mr", "seg_rmse",
        "ate", "rre", "rpe",
    ]
    assert header[11:] == ["lpips", "object_clip", "vbench"]
    body = [r.split(",") for r in rows[1:]]
    clips, macro = body[:-1], body[-1]
    assert macro[0] == "macro"
    for row in clips:
        record = dict(zip(header, row))
        assert float(record["psnr"]) == 99.0
        assert float(record["ssim"]) == pytest.approx(1.0, abs=1e-9)
        assert float(record["ope"]) == 0.0
        assert float(record["mr"]) == 0.0
        assert float(record["seg_rmse"]) == 0.0
        assert float(record["ate"]) == pytest.approx(0.0, abs=1e-9)
        assert float(record["rre"]) == pytest.approx(0.0, abs=1e-5)
        assert float(record["rpe"]) == pytest.approx(0.0, abs=1e-9)
        assert record["lpips"] == "na" and record["object_clip"] == "na"

    # macro row equals the mean of the clip rows
    for col in ("psnr", "ssim", "ope", "seg_rmse"):
        idx = header.index(col)
        want = np.mean([float(r[idx]) for r in clips])
        assert float(macro[idx]) == pytest.approx(want, abs=1e-9)

    summary = (out / "summary.txt").read_text()
    assert "psnr=99" in summary


def test_eval_layout_mismatch(tiny_run, tmp_path):
    empty = tmp_path / "empty_pred"
    empty.mkdir()
    rc = main(["eval", "--gt", str(tiny_run["data"]), "--pred", str(empty), "--out", str(tmp_path / "o")])
    assert rc == EXIT_DATA
