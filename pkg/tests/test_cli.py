import json

import pytest

from pavesam import cli

from conftest import build_mini_dataset


def run_cli(argv):
    return cli.main(argv)


TRAIN_FLAGS = ["--backbone", "surrogate", "--input-size", "128", "--downsample", "16"]


class TestDispatch:
    def test_unknown_flag_exits_2(self, capsys):
        with pytest.raises(SystemExit) as exc:
            run_cli(["profile", "--definitely-not-a-flag"])
        assert exc.value.code == 2
        assert "usage" in capsys.readouterr().err

    def test_unknown_subcommand_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            run_cli(["frobnicate"])
        assert exc.value.code == 2

    def test_failure_reports_structured_error(self, capsys, tmp_path):
        code = run_cli(["ingest", "--manifest", str(tmp_path / "missing.jsonl")])
        assert code == 1
        err = json.loads(capsys.readouterr().err.strip())
        assert err["error"]["code"] == "failed"


class TestIngest:
    def test_counts_printed(self, mini_dataset, capsys):
        manifest_path, _ = mini_dataset
        assert run_cli(["ingest", "--manifest", str(manifest_path)]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["images"] == 4
        assert payload["class_counts"] == {"patch": 4}

    def test_resplit_and_save(self, tmp_path, capsys):
        manifest_path = build_mini_dataset(tmp_path / "src", n_images=8)
        out = tmp_path / "normalized.jsonl"
        code = run_cli([
            "ingest", "--manifest", str(manifest_path),
            "--resplit", "0.75", "--seed", "3", "--out", str(out),
        ])
        assert code == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["splits"] == {"train": 6, "test": 2}
        assert out.exists()


class TestTrainCli:
    def test_two_runs_byte_identical_history(self, tmp_path, capsys):
        manifest_path = build_mini_dataset(tmp_path / "data")
        histories = []
        for run in ("a", "b"):
            out_dir = tmp_path / run
            code = run_cli([
                "train", "--manifest", str(manifest_path),
                "--out-dir", str(out_dir),
                "--epochs", "2", "--learning-rate", "1e-3", "--seed", "7",
                *TRAIN_FLAGS,
            ])
            assert code == 0
            capsys.readouterr()
            histories.append((out_dir / "history.jsonl").read_bytes())
        assert histories[0] == histories[1]

    def test_config_file_with_flag_override(self, tmp_path, capsys):
        manifest_path = build_mini_dataset(tmp_path / "data")
        config_path = tmp_path / "run.json"
        config_path.write_text(json.dumps({
            "epochs": 50, "learning_rate": 1e-3, "loss": "dice_bce", "seed": 1,
        }))
        out_dir = tmp_path / "out"
        code = run_cli([
            "train", "--manifest", str(manifest_path), "--config", str(config_path),
            "--out-dir", str(out_dir), "--epochs", "1", *TRAIN_FLAGS,
        ])
        assert code == 0
        summary = json.loads(capsys.readouterr().out)
        assert summary["epochs"] == 1  # flag overrode the config file
        history = (out_dir / "history.jsonl").read_text().splitlines()
        assert len(history) == 1


class TestEvalCli:
    def test_byte_deterministic_outputs(self, tmp_path, capsys):
        manifest_path = build_mini_dataset(tmp_path / "data", splits=("test",))
        outputs = []
        for run in ("a", "b"):
            out_dir = tmp_path / run
            code = run_cli([
                "eval", "--manifest", str(manifest_path), "--split", "test",
                "--threshold", "0.5", "--out-dir", str(out_dir), *TRAIN_FLAGS,
            ])
            assert code == 0
            capsys.readouterr()
            outputs.append(
                (out_dir / "report.jsonl").read_bytes()
                + (out_dir / "report.txt").read_bytes()
            )
        assert outputs[0] == outputs[1]


class TestProfileCli:
    def test_report_files_written(self, tmp_path, capsys):
        out_dir = tmp_path / "prof"
        code = run_cli([
            "profile", *TRAIN_FLAGS, "--no-fps", "--out-dir", str(out_dir),
        ])
        assert code == 0
        printed = capsys.readouterr().out
        assert "GFLOPs" in printed
        payload = json.loads((out_dir / "complexity.json").read_text())
        assert payload["params_by_component"]["mask_decoder"] > 0
        assert payload["params_total"] == sum(payload["params_by_component"].values())


class TestConvertCli:
    def test_wiring(self, tmp_path, capsys):
        manifest_path = build_mini_dataset(tmp_path / "data")
        out_dir = tmp_path / "converted"
        code = run_cli([
            "convert", "--manifest", str(manifest_path),
            "--out-dir", str(out_dir), *TRAIN_FLAGS,
        ])
        assert code == 0
        summary = json.loads(capsys.readouterr().out)
        assert summary["images"] == 4
        assert (out_dir / "manifest.jsonl").exists()


class TestEvalErrorExit:
    def test_nonzero_exit_when_instances_fail(self, tmp_path, capsys):
        # a box-only instance passes load-time validation but has no ground
        # truth, so evaluation records a per-instance error and exits nonzero
        manifest_path = build_mini_dataset(tmp_path / "data", n_images=2, splits=("test",))
        lines = manifest_path.read_text().splitlines()
        record = json.loads(lines[0])
        record["instances"].append({"class": None, "box": [1, 1, 10, 10]})
        lines[0] = json.dumps(record)
        manifest_path.write_text("\n".join(lines) + "\n")
        code = run_cli([
            "eval", "--manifest", str(manifest_path), "--split", "test",
            "--out-dir", str(tmp_path / "out"), *TRAIN_FLAGS,
        ])
        assert code == 1
        summary = json.loads(capsys.readouterr().out)
        assert summary["errors"] == 1
        assert summary["instances"] == 2
