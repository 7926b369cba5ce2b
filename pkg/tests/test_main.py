import json

import pandas as pd
import pytest

from weighted_svd.experiment import predict_raw
from weighted_svd.main import ExitCode, build_parser, config_overrides, main
from weighted_svd.serialization import load_model, save_model


@pytest.fixture
def run_args(tmp_path, ratings_file):
    return ["--dataset", str(ratings_file), "--output-dir", str(tmp_path / "run"), "--k", "3", "--epochs", "2"]


@pytest.fixture
def model_file(tmp_path, run_args):
    assert main(["run", *run_args]) == ExitCode.OK
    return tmp_path / "run" / "model.wsvd"


class TestParser:
    def test_overrides_only_include_given_flags(self):
        args = build_parser().parse_args(["run", "--k", "7", "--no-shuffle"])
        assert config_overrides(args) == {"k": 7, "shuffle": False}

    def test_rate_shorthands_expand_to_every_block(self):
        args = build_parser().parse_args(["run", "--learning-rate", "0.01", "--lr-w", "0"])
        overrides = config_overrides(args)
        assert overrides["lr_w"] == 0.0
        assert overrides["lr_item_bias"] == 0.01

    def test_clip_at_inference_flag(self):
        args = build_parser().parse_args(["run", "--clip-at-inference"])
        assert config_overrides(args) == {"clip_at_inference": True}

    def test_unknown_command(self):
        with pytest.raises(SystemExit):
            main(["train"])


class TestRun:
    def test_run(self, tmp_path, run_args, capsys):
        assert main(["run", *run_args]) == ExitCode.OK
        assert "WSVD: train RMSE" in capsys.readouterr().out
        summary = json.loads((tmp_path / "run" / "summary.json").read_text())
        assert summary["k"] == 3
        assert summary["epochs"] == 2

    def test_saved_config_drives_prediction_clipping(self, tmp_path, run_args, capsys):
        assert main(["run", *run_args, "--clip-at-inference"]) == ExitCode.OK
        saved = tmp_path / "run" / "config.json"
        settings = json.loads(saved.read_text())
        assert settings["clip_at_inference"] is True
        assert settings["k"] == 3

        model = tmp_path / "run" / "model.wsvd"
        params = load_model(model)
        u, j = int(params.user_seen.argmax()), int(params.item_seen.argmax())
        params.user_factors[u] *= 1e3
        save_model(params, model)
        low, high = params.rating_scale
        capsys.readouterr()
        assert main(["predict", str(model), params.user_ids[u], params.item_ids[j], "--config", str(saved)]) == 0
        assert low <= float(capsys.readouterr().out) <= high

    def test_old_config_file(self, tmp_path, ratings_file):
        config = tmp_path / "old.json"
        config.write_text(json.dumps({"learning_rate": 0.01, "regularization": 0.05, "factors": 2, "epochs": 1}))
        out = tmp_path / "old"
        assert main(["run", "--config", str(config), "--dataset", str(ratings_file), "--output-dir", str(out)]) == 0
        assert json.loads((out / "summary.json").read_text())["k"] == 2

    def test_missing_dataset(self, tmp_path):
        code = main(["run", "--dataset", str(tmp_path / "missing.data"), "--output-dir", str(tmp_path / "run")])
        assert code == ExitCode.INGEST

    def test_malformed_dataset(self, tmp_path):
        path = tmp_path / "bad.data"
        path.write_text("1\t2\tfive\t0\n")
        assert main(["run", "--dataset", str(path), "--output-dir", str(tmp_path / "run")]) == ExitCode.INGEST

    @pytest.mark.parametrize(
        "flags",
        [
            ["--format", "Netflix"],
            ["--train-fraction", "1.5"],
            ["--model", "ALS"],
            ["--k", "0"],
        ],
    )
    def test_invalid_configuration(self, run_args, flags):
        assert main(["run", *run_args, *flags]) == ExitCode.USAGE

    def test_unreadable_config_file(self, tmp_path, run_args):
        assert main(["run", "--config", str(tmp_path / "missing.json"), *run_args]) == ExitCode.USAGE

    def test_divergence(self, run_args):
        assert main(["run", *run_args, "--learning-rate", "50", "--epochs", "5"]) == ExitCode.DIVERGED

    def test_unwritable_output(self, tmp_path, ratings_file):
        blocker = tmp_path / "file"
        blocker.write_text("")
        code = main(["run", "--dataset", str(ratings_file), "--output-dir", str(blocker / "run"), "--epochs", "1"])
        assert code == ExitCode.UNWRITABLE


class TestPredict:
    def test_prediction_matches_library(self, model_file, capsys):
        params = load_model(model_file)
        user, item = params.user_ids[0], params.item_ids[0]
        capsys.readouterr()
        assert main(["predict", str(model_file), user, item]) == ExitCode.OK
        assert float(capsys.readouterr().out) == pytest.approx(predict_raw(params, user, item), abs=1e-6)

    def test_unknown_ids_use_global_mean(self, model_file, capsys):
        params = load_model(model_file)
        capsys.readouterr()
        assert main(["predict", str(model_file), "nobody", "nothing"]) == ExitCode.OK
        assert float(capsys.readouterr().out) == pytest.approx(params.mean, abs=1e-6)

    def test_clip_from_config(self, tmp_path, model_file, capsys):
        config = tmp_path / "clip.json"
        config.write_text(json.dumps({"schema_version": 1, "clip_at_inference": True}))
        params = load_model(model_file)
        low, high = params.rating_scale
        capsys.readouterr()
        argv = ["predict", str(model_file), params.user_ids[0], params.item_ids[0], "--config", str(config)]
        assert main(argv) == ExitCode.OK
        assert low <= float(capsys.readouterr().out) <= high

    def test_missing_model(self, tmp_path):
        assert main(["predict", str(tmp_path / "missing.wsvd"), "1", "2"]) == ExitCode.MODEL_FILE

    def test_garbage_model(self, tmp_path):
        path = tmp_path / "garbage.wsvd"
        path.write_bytes(b"\x00\x01 not a model")
        assert main(["predict", str(path), "1", "2"]) == ExitCode.MODEL_FILE


class TestInspect:
    def test_lists_counts_and_importance(self, model_file, capsys):
        capsys.readouterr()
        assert main(["inspect", str(model_file)]) == ExitCode.OK
        out = capsys.readouterr().out
        assert "Model: WSVD" in out
        assert "SVDpp" in out
        assert "Relative importance of factor weights:" in out
        assert out.count("  w_") == 3

    def test_garbage_model(self, tmp_path):
        path = tmp_path / "garbage.wsvd"
        path.write_text("weighted-svd-model v1\n")
        assert main(["inspect", str(path)]) == ExitCode.MODEL_FILE


class TestStats:
    def test_movielens_sample(self, data_dir, capsys):
        assert main(["stats", "--dataset", str(data_dir / "ml100k_sample.data")]) == ExitCode.OK
        assert capsys.readouterr().out.splitlines() == [
            "dataset,users,items,ratings,density,scale",
            "ml100k_sample.data,10,10,12,12.0000%,1-5",
        ]

    def test_filmtrust_sample(self, data_dir, capsys):
        code = main(["stats", "--dataset", str(data_dir / "filmtrust_sample.txt"), "--format", "FilmTrust"])
        assert code == ExitCode.OK
        assert capsys.readouterr().out.splitlines()[1].startswith("filmtrust_sample.txt,3,4,6,")


class TestSweepAndCompare:
    def test_sweep(self, tmp_path, ratings_file, capsys):
        out = tmp_path / "sweep"
        argv = [
            "sweep",
            *("--dataset", str(ratings_file), "--output-dir", str(out), "--epochs", "1", "--workers", "2"),
            *("--sweep-k", "2", "3", "--sweep-reg", "0.1", "--sweep-models", "WSVD", "PMF", "--no-progress"),
        ]
        assert main(argv) == ExitCode.OK
        frame = pd.read_csv(out / "sweep.csv")
        assert len(frame) == 4
        assert list(frame["model"]) == ["PMF", "WSVD", "PMF", "WSVD"]
        assert set(frame["status"]) == {"ok"}

    def test_sweep_rejects_empty_grid(self, tmp_path, ratings_file):
        config = tmp_path / "grid.json"
        config.write_text(json.dumps({"schema_version": 1, "sweep_reg": []}))
        assert main(["sweep", "--config", str(config), "--dataset", str(ratings_file)]) == ExitCode.USAGE

    def test_compare(self, tmp_path, run_args, capsys):
        assert main(["compare", *run_args, "--models", "Average", "Bias", "WSVD"]) == ExitCode.OK
        frame = pd.read_csv(tmp_path / "run" / "comparison.csv")
        assert list(frame["model"]) == ["Average", "Bias", "WSVD"]

    def test_compare_unknown_model(self, run_args):
        assert main(["compare", *run_args, "--models", "ALS"]) == ExitCode.USAGE


class TestScaling:
    def test_scaling(self, tmp_path, capsys):
        argv = ["scaling", "--models", "PMF", "--degrees", "2", "3", "--users", "20", "--items", "10"]
        assert main([*argv, "--k", "2", "--epochs", "1", "--output-dir", str(tmp_path)]) == ExitCode.OK
        assert len(pd.read_csv(tmp_path / "scaling.csv")) == 2

    def test_closed_form_kind_rejected(self, tmp_path):
        assert main(["scaling", "--models", "Bias", "--output-dir", str(tmp_path)]) == ExitCode.USAGE
