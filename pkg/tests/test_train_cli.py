"""End-to-end training runs, reproducibility contracts, and the CLI surface."""

import json
import subprocess
import sys

import numpy as np
import pytest

from towertune.checkpoint import load
from towertune.cli import main
from towertune.errors import ConfigError
from towertune.loss import LossConfig
from towertune.model import desk_config
from towertune.train import (
    DataConfig,
    RunConfig,
    TrainConfig,
    build_pipeline,
    evaluate,
    gradient_check,
    run_ablation,
    run_sweep,
    train_run,
)


def tiny_config(epochs=1, **model_overrides):
    """Smallest everything: 2-layer 16-wide towers on a 4-identity dataset."""
    model = dict(d_text=16, d_vision=16, layers=2, heads_text=2,
                 heads_vision=2, prompt_length=2, prompt_depth=2,
                 adapter_r=4, d_joint=8, seed=3)
    model.update(model_overrides)
    return RunConfig(
        model=desk_config(**model),
        loss=LossConfig(),
        data=DataConfig(n_identities=4, images_per_id=3, captions_per_image=2,
                        seed=3),
        train=TrainConfig(epochs=epochs, lr=3e-3, batch_size=8, seed=3,
                          instances_per_id=2),
    )


class TestRunConfig:
    def test_unknown_section_rejected(self):
        with pytest.raises(ConfigError):
            RunConfig.from_dict({"model": {}, "optimizer": {}})

    def test_unknown_train_key_rejected(self):
        with pytest.raises(ConfigError):
            RunConfig.from_dict({"train": {"epochs": 1, "momentum": 0.9}})

    def test_invalid_json_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError):
            RunConfig.load(path)

    def test_non_object_root_rejected(self, tmp_path):
        path = tmp_path / "list.json"
        path.write_text("[1, 2]")
        with pytest.raises(ConfigError):
            RunConfig.load(path)

    def test_round_trip(self, tmp_path):
        cfg = tiny_config()
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(cfg.to_dict()))
        back = RunConfig.load(path)
        assert back.to_dict() == cfg.to_dict()


class TestTrainRun:
    def test_zero_epochs_checkpoint_equals_initialization(self, tmp_path):
        cfg = tiny_config(epochs=0)
        train_run(cfg, tmp_path / "run", quiet=True)
        entries = {e.name: e for e in load(tmp_path / "run" / "model.ckpt")}
        fresh = build_pipeline(cfg).model
        for name, tensor, _ in fresh.store.items():
            np.testing.assert_array_equal(entries[name].array, tensor.data)

    def test_zero_epochs_still_evaluates(self, tmp_path):
        cfg = tiny_config(epochs=0)
        summary = train_run(cfg, tmp_path / "run", quiet=True)
        assert summary["first_epoch_loss"] is None
        lines = (tmp_path / "run" / "metrics.csv").read_text().splitlines()
        assert lines[0] == "epoch,train_loss,rank1,rank5,rank10,map"
        assert len(lines) == 2
        assert lines[1].startswith("0,,")  # epoch 0 carries no train loss

    def test_run_directory_contents(self, tmp_path):
        cfg = tiny_config(epochs=2)
        summary = train_run(cfg, tmp_path / "run", quiet=True)
        for name in ("config.json", "metrics.csv", "timing.csv", "model.ckpt",
                     "topk.jsonl", "training_curves.png", "summary.json"):
            assert (tmp_path / "run" / name).exists(), name
        assert summary["epochs"] == 2
        assert summary["trainable_params"] > 0
        lines = (tmp_path / "run" / "metrics.csv").read_text().splitlines()
        assert len(lines) == 4  # header, epoch 0, epoch 1, epoch 2

    def test_training_changes_trainable_but_not_frozen(self, tmp_path):
        cfg = tiny_config(epochs=1)
        init = build_pipeline(cfg).model
        snapshot = {n: t.data.copy() for n, t, _ in init.store.items()}
        train_run(cfg, tmp_path / "run", quiet=True)
        entries = {e.name: e for e in load(tmp_path / "run" / "model.ckpt")}
        for name, _, frozen in init.store.items():
            same = np.array_equal(entries[name].array, snapshot[name])
            if frozen:
                assert same, f"frozen tensor {name} moved"
        moved = [n for n, _, f in init.store.items()
                 if not f and not np.array_equal(entries[n].array, snapshot[n])]
        assert moved  # at least the loss-bearing trainables moved

    def test_repeat_runs_write_identical_metrics(self, tmp_path):
        cfg = tiny_config(epochs=2)
        train_run(cfg, tmp_path / "a", quiet=True)
        train_run(cfg, tmp_path / "b", quiet=True)
        assert (tmp_path / "a" / "metrics.csv").read_bytes() == \
            (tmp_path / "b" / "metrics.csv").read_bytes()

    def test_evaluate_is_repeatable(self):
        pipe = build_pipeline(tiny_config())
        r1, _ = evaluate(pipe.model, pipe.dataset, pipe.tokenizer)
        r2, _ = evaluate(pipe.model, pipe.dataset, pipe.tokenizer)
        assert r1 == r2

    def test_evaluate_unknown_split_rejected(self):
        pipe = build_pipeline(tiny_config())
        with pytest.raises(ConfigError):
            evaluate(pipe.model, pipe.dataset, pipe.tokenizer, split="val")


class TestGradientCheckHarness:
    def test_tiny_model_passes(self):
        result = gradient_check(tiny_config(), n_coords=40, batch_size=4)
        assert result["passed"], result["failures"][:3]
        assert result["n_checked"] >= 40
        assert result["frozen_with_grad"] == []
        assert result["max_rel_err"] < result["tolerance"]


class TestAblationAndSweep:
    def test_five_rows_and_additive_param_counts(self, tmp_path):
        rows = run_ablation(tiny_config(epochs=1), out_dir=tmp_path, quiet=True)
        assert [r["variant"] for r in rows] == \
            ["zero-shot", "+UPT", "+BPT", "+DAT", "+BPT+DAT"]
        by_name = {r["variant"]: r for r in rows}
        assert by_name["zero-shot"]["trainable_params"] == 0
        assert by_name["+BPT+DAT"]["trainable_params"] == \
            by_name["+BPT"]["trainable_params"] + \
            by_name["+DAT"]["trainable_params"]
        assert (tmp_path / "ablation.csv").exists()
        assert (tmp_path / "ablation.json").exists()
        assert (tmp_path / "ablation.png").exists()
        csv_lines = (tmp_path / "ablation.csv").read_text().splitlines()
        assert len(csv_lines) == 6

    def test_sweep_rows_and_outputs(self, tmp_path):
        rows = run_sweep(tiny_config(epochs=1), "prompt_length", [1, 2, 4],
                         out_dir=tmp_path, quiet=True)
        assert [r["value"] for r in rows] == [1, 2, 4]
        for r in rows:
            assert r["trainable_params"] == r["closed_form"]
        lines = (tmp_path / "sweep.csv").read_text().splitlines()
        assert lines[0] == "value,rank1,map"
        assert len(lines) == 4
        assert (tmp_path / "sweep.png").exists()

    def test_sweep_axis_validated(self, tmp_path):
        with pytest.raises(ConfigError):
            run_sweep(tiny_config(), "learning_rate", [1], out_dir=tmp_path)

    def test_sweep_depth_beyond_layers_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            run_sweep(tiny_config(), "prompt_depth", [3], out_dir=tmp_path)


class TestCli:
    def write_config(self, tmp_path, epochs=1):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(tiny_config(epochs=epochs).to_dict()))
        return path

    def test_train_then_eval(self, tmp_path, capsys):
        cfg_path = self.write_config(tmp_path)
        out = tmp_path / "run"
        assert main(["train", "--config", str(cfg_path), "--out", str(out),
                     "--quiet"]) == 0
        summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert set(summary) >= {"rank1", "rank5", "rank10", "mAP"}

        assert main(["eval", "--checkpoint", str(out / "model.ckpt"),
                     "--split", "test"]) == 0
        report = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert report["queries"] > 0
        assert (out / "topk-test.jsonl").exists()

    def test_eval_without_config_reports_category(self, tmp_path, capsys):
        code = main(["eval", "--checkpoint", str(tmp_path / "none.ckpt")])
        err = capsys.readouterr().err
        assert code == 2
        assert err.startswith("error:config-error:")

    def test_invalid_config_reports_category(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{oops")
        code = main(["train", "--config", str(bad),
                     "--out", str(tmp_path / "x")])
        err = capsys.readouterr().err
        assert code == 2
        assert err.startswith("error:config-error:")

    def test_missing_config_file_reports_io_error(self, tmp_path, capsys):
        code = main(["train", "--config", str(tmp_path / "absent.json"),
                     "--out", str(tmp_path / "x")])
        err = capsys.readouterr().err
        assert code == 2
        assert err.startswith("error:io-error:")

    def test_count_params_reports_match(self, tmp_path, capsys):
        cfg_path = self.write_config(tmp_path)
        assert main(["count-params", "--config", str(cfg_path)]) == 0
        audit = json.loads(capsys.readouterr().out)
        assert audit["match"] is True
        assert audit["trainable"] == audit["closed_form_trainable"]

    def test_count_params_full_scale(self, capsys):
        assert main(["count-params", "--full-scale"]) == 0
        audit = json.loads(capsys.readouterr().out)
        assert audit["trainable"] == 11_527_680

    def test_sweep_command(self, tmp_path, capsys):
        cfg_path = self.write_config(tmp_path)
        out = tmp_path / "sweep"
        assert main(["sweep", "--config", str(cfg_path), "--axis",
                     "prompt_length", "--values", "1,2", "--out", str(out),
                     "--quiet"]) == 0
        rows = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert len(rows) == 2

    def test_module_entry_point(self):
        # the installed console script and `-m` path share main()
        proc = subprocess.run(
            [sys.executable, "-m", "towertune.cli", "count-params",
             "--full-scale"],
            capture_output=True, text=True)
        assert proc.returncode == 0
        assert json.loads(proc.stdout)["match"] is True
