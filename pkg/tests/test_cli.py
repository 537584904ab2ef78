"""Command-line interface: exit codes, outputs, config files, pipelines."""

import json

import numpy as np
import pytest

from maskrestore.cli import main

RES = 32
SCALES = "4,8"


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A tiny corpus plus a briefly trained checkpoint."""
    root = tmp_path_factory.mktemp("cliws")
    corpus = root / "corpus"
    ckpt = root / "model.ckpt"
    assert (
        main(
            [
                "synth", "--out", str(corpus), "--resolution", str(RES),
                "--n-train", "6", "--n-val", "2", "--n-test", "4",
                "--defect-size", "8,12", "--seed", "3",
            ]
        )
        == 0
    )
    assert (
        main(
            [
                "train", "--data", str(corpus), "--out", str(ckpt),
                "--resolution", str(RES), "--scales", SCALES,
                "--epochs", "2", "--seed", "3", "--jobs", "1",
            ]
        )
        == 0
    )
    return root


class TestHelp:
    @pytest.mark.parametrize(
        "argv", [["--help"]] + [[c, "--help"] for c in ("synth", "train", "detect", "eval", "inspect")]
    )
    def test_help_exits_zero(self, capsys, argv):
        code, out, _ = run(capsys, *argv)
        assert code == 0
        assert "usage" in out.lower()

    def test_help_documents_flags(self, capsys):
        _, out, _ = run(capsys, "train", "--help")
        for flag in ("--epochs", "--scales", "--lambda1", "--lambda4", "--p-mask", "--jobs", "--config"):
            assert flag in out
        _, out, _ = run(capsys, "detect", "--help")
        for flag in ("--checkpoint", "--image", "--data-dir", "--masked-only", "--fixed-range"):
            assert flag in out
        _, out, _ = run(capsys, "eval", "--help")
        for flag in ("--heatmap-dir", "--quiet", "--max-iters"):
            assert flag in out


class TestExitCodes:
    @pytest.mark.parametrize(
        "argv",
        [
            [],
            ["frobnicate"],
            ["synth"],  # missing --out
            ["train", "--data", "x"],  # missing --out
            ["detect", "--checkpoint", "x", "--out", "y"],  # no input source
            ["synth", "--out", "x", "--defect-size", "banana"],
            ["synth", "--out", "x", "--texture", "paisley"],
            ["train", "--data", "x", "--out", "y", "--scales", "4.5"],
        ],
    )
    def test_usage_errors_exit_one(self, capsys, argv):
        code, _, _ = run(capsys, *argv)
        assert code == 1

    def test_both_sources_rejected(self, capsys, tmp_path):
        code, _, err = run(
            capsys, "detect", "--checkpoint", "x", "--out", str(tmp_path),
            "--image", "a.png", "--data-dir", "b",
        )
        assert code == 1

    def test_runtime_errors_exit_two(self, capsys, tmp_path):
        code, _, err = run(
            capsys, "inspect", "--checkpoint", str(tmp_path / "missing.ckpt")
        )
        assert code == 2
        assert "maskrestore: error:" in err

        code, _, err = run(
            capsys, "train", "--data", str(tmp_path / "nodata"), "--out", str(tmp_path / "m.ckpt"),
        )
        assert code == 2
        assert "maskrestore: error:" in err


class TestSynth:
    def test_writes_corpus_and_echoes_config(self, capsys, tmp_path):
        out = tmp_path / "c"
        code, stdout, _ = run(
            capsys, "synth", "--out", str(out), "--resolution", "32",
            "--n-train", "2", "--n-val", "1", "--n-test", "2",
            "--defect-size", "8,12", "--seed", "5",
        )
        assert code == 0
        payload = json.loads(stdout)
        assert payload["counts"]["train"] == 2
        assert payload["config"]["seed"] == 5
        assert payload["config"]["out"] == str(out)  # path kept as typed
        assert (out / "manifest.json").is_file()
        assert (out / "train" / "good" / "000.png").is_file()

    def test_same_seed_same_bytes(self, capsys, tmp_path):
        argv = [
            "synth", "--resolution", "32", "--n-train", "2", "--n-val", "1",
            "--n-test", "2", "--defect-size", "8,12", "--seed", "7",
        ]
        assert main(argv + ["--out", str(tmp_path / "a")]) == 0
        assert main(argv + ["--out", str(tmp_path / "b")]) == 0
        capsys.readouterr()
        a = (tmp_path / "a" / "train" / "good" / "000.png").read_bytes()
        b = (tmp_path / "b" / "train" / "good" / "000.png").read_bytes()
        assert a == b


class TestTrain:
    def test_checkpoint_and_log_written(self, workspace):
        ckpt = workspace / "model.ckpt"
        assert ckpt.is_file()
        log_lines = [
            json.loads(line)
            for line in (workspace / "model.ckpt.log.jsonl").read_text().splitlines()
        ]
        header, epochs = log_lines[0], log_lines[1:]
        assert header["command"] == "train"
        assert header["config"]["epochs"] == 2
        assert len(epochs) == 2
        assert all(np.isfinite(r["total"]) for r in epochs)

    def test_checkpoint_meta_echoes_config(self, capsys, workspace):
        code, out, _ = run(capsys, "inspect", "--checkpoint", str(workspace / "model.ckpt"))
        assert code == 0
        info = json.loads(out)
        assert info["meta"]["command"] == "train"
        assert info["meta"]["config"]["scales"] == [4, 8]
        assert info["scales"] == [4, 8]
        assert set(info["thresholds"]) == {"4", "8"}

    def test_periodic_checkpoints(self, capsys, tmp_path, workspace):
        ckpt = tmp_path / "periodic.ckpt"
        code, _, _ = run(
            capsys, "train", "--data", str(workspace / "corpus"), "--out", str(ckpt),
            "--resolution", str(RES), "--scales", SCALES, "--epochs", "2",
            "--seed", "3", "--checkpoint-every", "1",
        )
        assert code == 0
        assert ckpt.is_file()
        assert (tmp_path / "periodic_epoch001.ckpt").is_file()
        assert not (tmp_path / "periodic_epoch002.ckpt").exists()  # final save covers it


class TestInspect:
    def test_verify_checks_blob(self, capsys, workspace):
        code, out, _ = run(
            capsys, "inspect", "--checkpoint", str(workspace / "model.ckpt"), "--verify"
        )
        assert code == 0
        assert json.loads(out)["blob_ok"] is True


class TestDetect:
    def test_single_image_outputs(self, capsys, workspace, tmp_path):
        image = workspace / "corpus" / "test" / "good" / "000.png"
        out = tmp_path / "det"
        code, stdout, _ = run(
            capsys, "detect", "--checkpoint", str(workspace / "model.ckpt"),
            "--image", str(image), "--out", str(out),
        )
        assert code == 0
        line = stdout.strip().splitlines()[-1]
        path_part, score_part = line.split("\t")
        assert path_part == str(image)
        float(score_part)
        assert (out / "000_score.png").is_file()
        assert (out / "000_score_color.png").is_file()
        payload = json.loads((out / "000_detect.json").read_text())
        assert payload["id"] == "000.png"
        assert payload["config"]["masked_only"] is False
        assert set(payload["scales"]) == {"4", "8"}

    def test_directory_mode_scores_everything(self, capsys, workspace, tmp_path):
        data_dir = workspace / "corpus" / "test" / "good"
        n_images = len(list(data_dir.glob("*.png")))
        out = tmp_path / "det"
        code, stdout, _ = run(
            capsys, "detect", "--checkpoint", str(workspace / "model.ckpt"),
            "--data-dir", str(data_dir), "--out", str(out),
        )
        assert code == 0
        assert len(stdout.strip().splitlines()) == n_images
        assert len(list(out.glob("*_detect.json"))) == n_images

    def test_empty_directory_is_runtime_error(self, capsys, workspace, tmp_path):
        empty = tmp_path / "empty"
        empty.mkdir()
        code, _, err = run(
            capsys, "detect", "--checkpoint", str(workspace / "model.ckpt"),
            "--data-dir", str(empty), "--out", str(tmp_path / "o"),
        )
        assert code == 2
        assert "maskrestore: error:" in err


class TestEval:
    def test_report_file_and_summary(self, capsys, workspace, tmp_path):
        report_path = tmp_path / "report.json"
        code, stdout, _ = run(
            capsys, "eval", "--checkpoint", str(workspace / "model.ckpt"),
            "--data", str(workspace / "corpus"), "--out", str(report_path), "--quiet",
        )
        assert code == 0
        assert "wrote" in stdout and "image AUC:" in stdout
        report = json.loads(report_path.read_text())
        assert report["config"]["quiet"] is True
        assert report["overall"]["n_images"] == 4
        # the mean row is the arithmetic mean of the per-category rows
        for key in ("image_auc", "pixel_auc"):
            vals = [r[key] for r in report["categories"].values() if r.get(key) is not None]
            if vals:
                assert report["mean"][key] == pytest.approx(sum(vals) / len(vals), abs=1e-15)

    def test_stdout_report_when_no_out(self, capsys, workspace):
        code, stdout, _ = run(
            capsys, "eval", "--checkpoint", str(workspace / "model.ckpt"),
            "--data", str(workspace / "corpus"), "--quiet",
        )
        assert code == 0
        report = json.loads(stdout)
        assert report["format_version"] == 1

    def test_heatmap_dir(self, capsys, workspace, tmp_path):
        maps = tmp_path / "maps"
        code, _, _ = run(
            capsys, "eval", "--checkpoint", str(workspace / "model.ckpt"),
            "--data", str(workspace / "corpus"), "--out", str(tmp_path / "r.json"),
            "--quiet", "--heatmap-dir", str(maps),
        )
        assert code == 0
        assert len(list(maps.glob("*_score.png"))) == 4


class TestConfigFile:
    def test_flags_override_file(self, capsys, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("seed = 11\nn-test = 4\nresolution = 32\n# comment\n\ndefect-size = 8,12\n")
        out = tmp_path / "c"
        code, stdout, _ = run(
            capsys, "synth", "--config", str(cfg), "--out", str(out),
            "--n-train", "2", "--n-val", "1", "--n-test", "2",
        )
        assert code == 0
        echo = json.loads(stdout)["config"]
        assert echo["seed"] == 11  # from file
        assert echo["n_test"] == 2  # flag wins over file's 4

    def test_underscore_keys_accepted(self, capsys, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("n_train = 2\nn_val = 1\nn_test = 2\nresolution = 32\ndefect_size = 8,12\n")
        code, stdout, _ = run(capsys, "synth", "--config", str(cfg), "--out", str(tmp_path / "c"))
        assert code == 0
        assert json.loads(stdout)["config"]["n_train"] == 2

    def test_boolean_flag_in_file(self, capsys, workspace, tmp_path):
        cfg = tmp_path / "eval.cfg"
        cfg.write_text("quiet = true\n")
        code, stdout, _ = run(
            capsys, "eval", "--config", str(cfg),
            "--checkpoint", str(workspace / "model.ckpt"),
            "--data", str(workspace / "corpus"),
        )
        assert code == 0
        assert json.loads(stdout)["config"]["quiet"] is True

    def test_missing_file_exits_one(self, capsys, tmp_path):
        code, _, err = run(
            capsys, "synth", "--config", str(tmp_path / "absent.cfg"), "--out", "x"
        )
        assert code == 1
        assert "config file not found" in err

    def test_malformed_line_exits_one(self, capsys, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("this line has no equals sign\n")
        code, _, err = run(capsys, "synth", "--config", str(cfg), "--out", "x")
        assert code == 1

    def test_config_cannot_nest(self, capsys, tmp_path):
        cfg = tmp_path / "nest.cfg"
        cfg.write_text(f"config = {cfg}\n")
        code, _, err = run(capsys, "synth", "--config", str(cfg), "--out", "x")
        assert code == 1
        assert "cannot set --config" in err

    def test_bad_boolean_value_exits_one(self, capsys, tmp_path):
        cfg = tmp_path / "b.cfg"
        cfg.write_text("quiet = maybe\n")
        code, _, _ = run(capsys, "eval", "--config", str(cfg), "--checkpoint", "x", "--data", "y")
        assert code == 1
