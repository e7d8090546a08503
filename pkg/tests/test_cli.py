"""Command-line surface: exit codes, archived configs, reproducibility."""

import json
import os

import numpy as np
import pytest

import tsinet.tensor as T
from tsinet.cli import (EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, EXIT_VALIDATION,
                        gradcheck_battery, main)
from tsinet.net import ModelSpec, StageSpec, StemSpec


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_ds")
    code = main(["gen-data", "--out", str(out), "--clips-per-class", "6",
                 "--frames", "2", "--size", "16", "--seed", "5"])
    assert code == EXIT_OK
    return out


@pytest.fixture(scope="module")
def tiny_model_spec(tmp_path_factory):
    spec = ModelSpec(frames=2, num_classes=4, input_size=16,
                     stem=StemSpec(channels=8, kernel=3, stride=2),
                     stages=[StageSpec(1, 16, 1)], sme_reduction_ratio=4, cti_groups=4)
    path = tmp_path_factory.mktemp("spec") / "tiny.json"
    spec.save(path)
    return path


class TestGenData:
    def test_writes_manifest_and_clips(self, dataset_dir):
        manifest = json.loads((dataset_dir / "manifest.json").read_text())
        assert len(manifest["splits"]["train"]) + len(manifest["splits"]["val"]) == 24

    def test_invalid_config_exits_validation(self, tmp_path, capsys):
        code = main(["gen-data", "--out", str(tmp_path), "--classes", "sideways"])
        assert code == EXIT_VALIDATION
        assert "error" in capsys.readouterr().err

    def test_missing_out_is_usage_error(self, monkeypatch):
        monkeypatch.delenv("TSINET_OUT_DIR", raising=False)
        assert main(["gen-data"]) == EXIT_USAGE

    def test_env_var_provides_out_dir(self, tmp_path, monkeypatch):
        monkeypatch.setenv("TSINET_OUT_DIR", str(tmp_path / "env_out"))
        code = main(["gen-data", "--clips-per-class", "2", "--frames", "2",
                     "--size", "16"])
        assert code == EXIT_OK
        assert (tmp_path / "env_out" / "manifest.json").exists()

    def test_idempotent_under_fixed_seed(self, tmp_path):
        digests = []
        for run in range(2):
            out = tmp_path / f"gen{run}"
            assert main(["gen-data", "--out", str(out), "--clips-per-class", "3",
                         "--frames", "2", "--size", "16", "--seed", "11"]) == EXIT_OK
            manifest = json.loads((out / "manifest.json").read_text())
            digests.append([e["digest"] for split in manifest["splits"].values()
                            for e in split])
        assert digests[0] == digests[1]


class TestTrainEval:
    def test_train_archives_config_and_is_reproducible(self, dataset_dir,
                                                       tiny_model_spec, tmp_path):
        outputs = []
        for run in range(2):
            out = tmp_path / f"run{run}"
            code = main(["train", "--data", str(dataset_dir), "--out", str(out),
                         "--model", str(tiny_model_spec), "--epochs", "2",
                         "--batch-size", "4", "--lr", "0.02", "--seed", "3"])
            assert code == EXIT_OK
            assert (out / "run_config.json").exists()
            assert (out / "checkpoint" / "checkpoint.json").exists()
            outputs.append((out / "metrics.jsonl").read_text())
        assert outputs[0] == outputs[1]

        resolved = json.loads((tmp_path / "run0" / "run_config.json").read_text())
        assert resolved["train"]["seed"] == 3
        assert resolved["model"]["frames"] == 2

    def test_eval_runs_on_checkpoint(self, dataset_dir, tiny_model_spec, tmp_path,
                                     capsys):
        out = tmp_path / "train"
        assert main(["train", "--data", str(dataset_dir), "--out", str(out),
                     "--model", str(tiny_model_spec), "--epochs", "1",
                     "--batch-size", "4", "--seed", "0"]) == EXIT_OK
        code = main(["eval", "--checkpoint", str(out / "checkpoint"),
                     "--data", str(dataset_dir), "--split", "val"])
        assert code == EXIT_OK
        payload = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert set(payload) >= {"split", "top1", "top5"}
        repeat = main(["eval", "--checkpoint", str(out / "checkpoint"),
                       "--data", str(dataset_dir), "--split", "val"])
        assert repeat == EXIT_OK

    def test_eval_missing_checkpoint_fails_validation(self, dataset_dir, tmp_path):
        code = main(["eval", "--checkpoint", str(tmp_path / "nope"),
                     "--data", str(dataset_dir)])
        assert code == EXIT_VALIDATION


class TestGradcheckCommand:
    def test_battery_passes(self, capsys):
        assert main(["gradcheck", "--max-elements", "6"]) == EXIT_OK
        out = capsys.readouterr().out
        assert "PASS" in out and "FAIL" not in out

    def test_corrupted_adjoint_fails(self, monkeypatch, capsys):
        original = T.sigmoid

        def corrupted(a):
            out = original(a)
            if T._active_tape is not None and a.requires_grad:
                node = T._active_tape._nodes[-1]
                clean = node.backward
                node.backward = lambda g: tuple(
                    None if gi is None else gi * 1.02 for gi in clean(g))
            return out

        monkeypatch.setattr(T, "sigmoid", corrupted)
        assert main(["gradcheck", "--max-elements", "4"]) == EXIT_VALIDATION
        assert "FAIL" in capsys.readouterr().out


class TestProfileCommand:
    def test_text_output(self, capsys):
        assert main(["profile", "--preset", "resnet50"]) == EXIT_OK
        out = capsys.readouterr().out
        assert "headline" in out and "GFLOPs" in out

    def test_json_output_parses(self, capsys):
        assert main(["profile", "--preset", "desk", "--json"]) == EXIT_OK
        payload = json.loads(capsys.readouterr().out)
        assert payload["totals"]["macs"] > 0

    def test_model_file_with_geometry_override(self, tiny_model_spec, capsys):
        assert main(["profile", "--model", str(tiny_model_spec), "--frames", "4",
                     "--size", "32", "--json"]) == EXIT_OK
        payload = json.loads(capsys.readouterr().out)
        assert payload["frames"] == 4 and payload["input_size"] == 32


class TestAblateCommand:
    def test_empty_variant_list_gives_empty_table(self, dataset_dir, tmp_path, capsys):
        config = tmp_path / "ablate.json"
        config.write_text(json.dumps({"variants": [], "seeds": [0]}))
        assert main(["ablate", "--config", str(config), "--data", str(dataset_dir),
                     "--out", str(tmp_path / "runs")]) == EXIT_OK
        rows = json.loads((tmp_path / "runs" / "ablation.json").read_text())
        assert rows == []

    def test_identical_variants_give_identical_rows(self, dataset_dir, tmp_path):
        model_overrides = {
            "frames": 2, "input_size": 16,
            "stem": {"channels": 8, "kernel": 3, "stride": 2},
            "stages": [{"blocks": 1, "channels": 16, "stride": 1}],
            "sme_reduction_ratio": 4, "cti_groups": 4,
        }
        config = tmp_path / "ablate.json"
        config.write_text(json.dumps({
            "base_model": model_overrides,
            "base_train": {"epochs": 1, "batch_size": 4, "lr": 0.02},
            "seeds": [1],
            "variants": [
                {"name": "a", "model_overrides": {}},
                {"name": "b", "model_overrides": {}},
            ],
        }))
        assert main(["ablate", "--config", str(config), "--data", str(dataset_dir),
                     "--out", str(tmp_path / "runs")]) == EXIT_OK
        rows = json.loads((tmp_path / "runs" / "ablation.json").read_text())
        by_variant = {r["variant"]: r["top1"] for r in rows if r["seed"] == 1}
        assert by_variant["a"] == by_variant["b"]


class TestNumericExit:
    def test_nan_in_training_exits_3(self, dataset_dir, tmp_path, monkeypatch):
        import tsinet.cli as cli

        def blowup(spec, train_config, data_dir, out_dir):
            raise T.NumericError("training loss is nan")

        monkeypatch.setattr(cli, "_train_once", blowup)
        code = main(["train", "--data", str(dataset_dir), "--out", str(tmp_path)])
        assert code == EXIT_NUMERIC
