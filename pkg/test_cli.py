"""End-to-end tests of the command line"""

import numpy as np
import pytest

import main
from network.checkpoint import save_checkpoint
from network.tvsrn import TVSRNv2
from services.metrics import IDENTICAL, parse_reports
from volumes.volume import Volume, read_volume, write_volume


@pytest.fixture(autouse=True)
def isolated_cwd(tmp_path, monkeypatch):
    """Keep a settings.json in the working directory from leaking into runs"""
    monkeypatch.chdir(tmp_path)
    monkeypatch.setenv("COLUMNS", "200")


def _gen(out_dir, seed=5, dims="16,32,32"):
    return main.main([
        "--quiet", "--log-level", "WARNING",
        "gen-phantom", "--seed", str(seed), "--dims", dims, "--thick-factor", "4", "-o", str(out_dir),
    ])


def test_gen_phantom_is_reproducible(tmp_path):
    assert _gen(tmp_path / "a") == 0
    assert _gen(tmp_path / "b") == 0
    for suffix in (".thin.vsrv", ".thick.vsrv"):
        first = (tmp_path / "a" / f"phantom-5{suffix}").read_bytes()
        second = (tmp_path / "b" / f"phantom-5{suffix}").read_bytes()
        assert first == second
    thick = read_volume(str(tmp_path / "a" / "phantom-5.thick.vsrv"))
    assert thick.dims == (4, 32, 32)
    assert thick.spacing_mm[0] == 4.0


def test_gen_phantom_rejects_small_dims(tmp_path, capsys):
    assert _gen(tmp_path, dims="8,32,32") == 2
    assert "phantom dims" in capsys.readouterr().err
    assert not list(tmp_path.glob("*.vsrv"))


def test_unknown_setting_in_config_file(tmp_path, capsys):
    config = tmp_path / "custom.json"
    config.write_text('{"model.colour": "blue"}')
    assert main.main(["--config", str(config), "gen-phantom", "-o", str(tmp_path)]) == 2
    assert "model.colour" in capsys.readouterr().err


def test_config_file_feeds_the_command(tmp_path):
    config = tmp_path / "custom.json"
    config.write_text('{"phantom.dims": [16, 16, 16], "seed": 9}')
    assert main.main(["--quiet", "--config", str(config), "gen-phantom", "-o", str(tmp_path)]) == 0
    assert read_volume(str(tmp_path / "phantom-9.thin.vsrv")).dims == (16, 16, 16)


def test_make_pseudo_lr_writes_one_file_per_factor(tmp_path, capsys):
    _gen(tmp_path)
    code = main.main([
        "make-pseudo-lr", "-i", str(tmp_path / "phantom-5.thin.vsrv"), "-o", str(tmp_path / "pseudo"),
        "--max-thickness", "2", "--min-slices", "4",
    ])
    assert code == 0
    written = sorted(p.name for p in (tmp_path / "pseudo").iterdir())
    assert written == ["phantom-5.x2.vsrv"]
    pseudo = read_volume(str(tmp_path / "pseudo" / "phantom-5.x2.vsrv"))
    assert pseudo.dims == (8, 32, 32)
    out = capsys.readouterr().out
    assert "k=2: 8 slices at 2 mm, chosen" in out
    assert "k=3" in out and "rejected" in out


def test_infer_upsamples_depth(tmp_path, tiny_config, rng, capsys):
    checkpoint = str(tmp_path / "tiny.ckpt")
    save_checkpoint(TVSRNv2(tiny_config, seed=0).params, tiny_config, checkpoint)
    thick = Volume(rng.uniform(size=(3, 16, 16)).astype(np.float32), (4.0, 1.0, 1.0), "normalized", "thick")
    write_volume(thick, str(tmp_path / "thick.vsrv"))

    code = main.main([
        "--quiet", "infer", "--checkpoint", checkpoint,
        "-i", str(tmp_path / "thick.vsrv"), "-o", str(tmp_path / "sr.vsrv"),
    ])
    assert code == 0
    sr = read_volume(str(tmp_path / "sr.vsrv"))
    assert sr.dims == (12, 16, 16)
    assert sr.spacing_mm == (1.0, 1.0, 1.0)
    assert "windows 1" in capsys.readouterr().out


def test_infer_rejects_mismatched_upsample(tmp_path, tiny_config, rng):
    checkpoint = str(tmp_path / "tiny.ckpt")
    save_checkpoint(TVSRNv2(tiny_config, seed=0).params, tiny_config, checkpoint)
    thick = Volume(rng.uniform(size=(3, 16, 16)).astype(np.float32), (4.0, 1.0, 1.0), "normalized")
    write_volume(thick, str(tmp_path / "thick.vsrv"))
    code = main.main([
        "infer", "--checkpoint", checkpoint, "--upsample", "2",
        "-i", str(tmp_path / "thick.vsrv"), "-o", str(tmp_path / "sr.vsrv"),
    ])
    assert code == 2
    assert not (tmp_path / "sr.vsrv").exists()


def test_infer_with_missing_checkpoint(tmp_path, rng, capsys):
    thick = Volume(rng.uniform(size=(3, 16, 16)).astype(np.float32), (4.0, 1.0, 1.0), "normalized")
    write_volume(thick, str(tmp_path / "thick.vsrv"))
    code = main.main([
        "infer", "--checkpoint", str(tmp_path / "absent.ckpt"),
        "-i", str(tmp_path / "thick.vsrv"), "-o", str(tmp_path / "sr.vsrv"),
    ])
    assert code != 0
    assert "error:" in capsys.readouterr().err
    assert not (tmp_path / "sr.vsrv").exists()


def test_eval_of_a_perfect_prediction(tmp_path):
    data = tmp_path / "data"
    _gen(data)
    thin = read_volume(str(data / "phantom-5.thin.vsrv"))
    write_volume(thin, str(data / "phantom-5.sr.vsrv"))

    assert main.main(["--quiet", "eval", "--data", str(data), "-o", str(tmp_path / "out")]) == 0
    [report] = parse_reports((tmp_path / "out" / "eval.jsonl").read_text())
    assert report.label == "model"
    assert report.pairs[0].psnr is IDENTICAL
    assert report.ssim.mean == 1.0


def test_eval_with_baseline(tmp_path, capsys):
    data = tmp_path / "data"
    _gen(data)
    thin = read_volume(str(data / "phantom-5.thin.vsrv"))
    write_volume(thin, str(data / "phantom-5.sr.vsrv"))

    code = main.main(["--quiet", "eval", "--data", str(data), "--with-baseline", "-o", str(tmp_path / "out")])
    assert code == 0
    model, baseline = parse_reports((tmp_path / "out" / "eval.jsonl").read_text())
    assert baseline.label == "baseline (cubic)"
    assert np.isfinite(baseline.psnr.mean)
    assert baseline.ssim.mean < 1.0
    assert "baseline (cubic)" in capsys.readouterr().out


def test_eval_without_predictions_fails(tmp_path, capsys):
    data = tmp_path / "data"
    _gen(data)
    assert main.main(["eval", "--data", str(data), "-o", str(tmp_path / "out")]) == 2
    assert "no pair could be evaluated" in capsys.readouterr().err


def test_slice_sim_report(tmp_path):
    data = tmp_path / "data"
    _gen(data)
    assert main.main(["--quiet", "slice-sim", "--data", str(data), "-o", str(tmp_path / "out")]) == 0
    [report] = parse_reports((tmp_path / "out" / "slice_similarity.jsonl").read_text())
    assert report.label == "phantom-5"
    assert set(report.groups) == {"match", "near", "far"}


def test_help_lists_defaults(capsys):
    with pytest.raises(SystemExit) as exc:
        main.main(["infer", "--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    assert "--window-depth" in out
    assert "(default: 4)" in out


def test_bad_flag_value(tmp_path, capsys):
    assert main.main(["gen-phantom", "--dims", "16,16", "-o", str(tmp_path)]) == 2
    assert "phantom.dims" in capsys.readouterr().err


def test_train_then_resume(tmp_path, capsys):
    data = tmp_path / "data"
    _gen(data, dims="16,16,16")
    checkpoint = tmp_path / "runs" / "model.ckpt"
    model_flags = ["--embed-dim", "8", "--heads", "2", "--encoder-depth", "2", "--n-fim", "1", "--window", "4"]
    train_flags = ["--data", str(data), "--patch-depth", "4", "--patch-height", "8", "--patch-width", "8", "--lr", "0.001"]

    code = main.main(["--quiet", "train", *model_flags, *train_flags, "--steps", "2", "--checkpoint", str(checkpoint)])
    assert code == 0
    assert checkpoint.exists()
    trace = (tmp_path / "runs" / "model.ckpt.loss.csv").read_text()
    assert len(trace.strip().splitlines()) == 3
    assert "2 steps" in capsys.readouterr().out

    resumed = tmp_path / "runs" / "resumed.ckpt"
    code = main.main([
        "--quiet", "train", *train_flags, "--steps", "3",
        "--resume", str(checkpoint), "--checkpoint", str(resumed),
    ])
    assert code == 0
    assert "3 steps" in capsys.readouterr().out


def test_slice_sim_skips_unreadable_pair(tmp_path):
    data = tmp_path / "data"
    _gen(data, seed=5)
    _gen(data, seed=6)
    (data / "phantom-6.thick.vsrv").write_bytes(b"not a volume")
    assert main.main(["--quiet", "slice-sim", "--data", str(data), "-o", str(tmp_path / "out")]) == 0
    reports = parse_reports((tmp_path / "out" / "slice_similarity.jsonl").read_text())
    assert [r.label for r in reports] == ["phantom-5"]
