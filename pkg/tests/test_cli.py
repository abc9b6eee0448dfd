"""Tests for the config-driven command-line runner."""

import json
import statistics

import numpy as np
import pytest

from crossfeat import cli
from crossfeat.attribution import load_matrix
from crossfeat.cli import (ConfigError, cmd_attribution, cmd_eval,
                           cmd_gen_data, cmd_report, cmd_sweep,
                           cmd_synth_verify, cmd_train, config_hash,
                           load_config)
from crossfeat.data import PlantedSpec, generate_planted, load_tabular
from crossfeat.model import Classifier, save_checkpoint
from crossfeat.numerics import RngStream


def base_config(**overrides):
    config = {
        "data": {"planted": {"classes": 3, "replication": 1, "noise_dims": 2,
                             "mu": 1.0, "sigma": 0.3, "rotate": False,
                             "n_train": 30, "n_test": 15, "seed": 0}},
        "model": {"hidden": [8]},
        "train": {"epochs": 2},
        "attack": {"norm": "linf", "epsilon": 0.2},
    }
    config.update(overrides)
    return config


def write_config(tmp_path, config, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(config))
    return str(path)


class TestConfigValidation:
    def test_unknown_top_level_key_rejected(self, tmp_path):
        path = write_config(tmp_path, {"trian": {}})
        with pytest.raises(ConfigError, match="'trian'"):
            load_config(path)

    def test_unknown_nested_key_reports_dotted_location(self, tmp_path):
        path = write_config(tmp_path, {"train": {"epochs": 1, "lr_decay": 0.1}})
        with pytest.raises(ConfigError, match="'train.lr_decay'"):
            load_config(path)

    def test_scalar_where_object_expected(self, tmp_path):
        path = write_config(tmp_path, {"train": 5})
        with pytest.raises(ConfigError, match="expected an object"):
            load_config(path)

    def test_invalid_json_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError, match="invalid JSON"):
            load_config(str(path))

    def test_missing_file_rejected(self):
        with pytest.raises(ConfigError, match="not found"):
            load_config("/nonexistent/config.json")

    def test_no_config_means_empty(self):
        assert load_config(None) == {}

    def test_config_hash_is_order_insensitive(self):
        a = config_hash({"x": 1, "y": 2})
        b = config_hash({"y": 2, "x": 1})
        assert a == b and len(a) == 16
        assert config_hash({"x": 1}) != a

    def test_bad_section_value_points_at_section(self, tmp_path):
        config = base_config()
        config["attack"]["epsilon"] = -1.0
        with pytest.raises(ConfigError, match="attack"):
            cmd_train(config)


class TestSynthVerify:
    def test_passes_with_reduced_budget(self, tmp_path):
        out = str(tmp_path / "verify")
        report = cmd_synth_verify(
            {"synthetic": {"mc_samples": 50_000, "oracle_steps": 4_000}},
            out_dir=out)
        assert report.passed is True
        assert report.summary["fail"] == 0
        assert report.summary["checks"] == len(report.records)
        payload = json.loads((tmp_path / "verify" / "summary.json").read_text())
        assert payload["passed"] is True

    def test_main_exit_zero(self, tmp_path, capsys):
        path = write_config(tmp_path, {"synthetic": {"mc_samples": 50_000,
                                                     "oracle_steps": 4_000}})
        code = cli.main(["synth-verify", "--config", path])
        assert code == 0
        assert "passed=True" in capsys.readouterr().out


class TestGenData:
    def test_writes_loadable_splits(self, tmp_path):
        out = str(tmp_path / "data")
        report = cmd_gen_data(base_config(), out_dir=out)
        assert report.passed is True
        train = load_tabular(f"{out}/train.csv")
        test = load_tabular(f"{out}/test.csv")
        assert len(train) == 90 and len(test) == 45
        assert train.class_count == 3
        assert report.summary["train_rows"] == 90

    def test_matches_direct_generation(self, tmp_path):
        out = str(tmp_path / "data")
        config = base_config()
        cmd_gen_data(config, out_dir=out)
        direct_train, _ = generate_planted(PlantedSpec(**config["data"]["planted"]))
        loaded = load_tabular(f"{out}/train.csv")
        assert np.array_equal(loaded.inputs, direct_train.inputs)
        assert np.array_equal(loaded.labels, direct_train.labels)

    def test_requires_planted_section_and_out_dir(self, tmp_path):
        with pytest.raises(ConfigError, match="planted"):
            cmd_gen_data({}, out_dir=str(tmp_path))
        with pytest.raises(ConfigError, match="output"):
            cmd_gen_data(base_config(), out_dir=None)


class TestTrainCmd:
    def test_summary_and_artifacts(self, tmp_path):
        out = str(tmp_path / "run")
        report = cmd_train(base_config(), out_dir=out)
        assert report.summary["mode"] == "at"
        assert report.summary["epochs"] == 2
        assert report.summary["epsilon"] == 0.2
        assert len(report.records) == 2
        assert report.summary["ra_last"] is not None
        assert report.summary["catastrophic_overfitting"]["occurred"] in (True, False)
        for name in ("records.jsonl", "summary.json", "metadata.json",
                     "best.ckpt", "last.ckpt"):
            assert (tmp_path / "run" / name).exists()

    def test_deterministic_summary_bytes(self, tmp_path):
        a_dir, b_dir = str(tmp_path / "a"), str(tmp_path / "b")
        cmd_train(base_config(), out_dir=a_dir)
        cmd_train(base_config(), out_dir=b_dir)
        assert (tmp_path / "a" / "summary.json").read_bytes() == \
            (tmp_path / "b" / "summary.json").read_bytes()

    def test_seed_override_changes_run(self, tmp_path):
        base = cmd_train(base_config(), seed=1)
        other = cmd_train(base_config(), seed=2)
        assert base.records != other.records

    def test_requires_epochs(self):
        config = base_config()
        del config["train"]["epochs"]
        with pytest.raises(ConfigError, match="epochs"):
            cmd_train(config)

    def test_trains_from_tabular_files(self, tmp_path):
        data_dir = str(tmp_path / "data")
        cmd_gen_data(base_config(), out_dir=data_dir)
        config = {
            "data": {"train_path": f"{data_dir}/train.csv",
                     "test_path": f"{data_dir}/test.csv"},
            "model": {"hidden": [8]},
            "train": {"epochs": 1},
            "attack": {"epsilon": 0.2},
        }
        report = cmd_train(config)
        assert len(report.records) == 1

    def test_needs_some_data_source(self):
        config = base_config()
        config["data"] = {}
        with pytest.raises(ConfigError, match="data"):
            cmd_train(config)


class TestEvalCmd:
    def test_evaluates_checkpoint(self, tmp_path):
        out = str(tmp_path / "run")
        cmd_train(base_config(), out_dir=out)
        config = base_config(eval={"checkpoint": f"{out}/last.ckpt"})
        report = cmd_eval(config)
        assert set(report.summary) == {"clean_acc", "robust_acc", "mean_loss"}
        assert report.summary["robust_acc"] <= report.summary["clean_acc"]

    def test_requires_checkpoint(self):
        with pytest.raises(ConfigError, match="checkpoint"):
            cmd_eval(base_config())

    def test_missing_checkpoint_file_exits_one(self, tmp_path, capsys):
        config = base_config(eval={"checkpoint": str(tmp_path / "none.ckpt")})
        path = write_config(tmp_path, config)
        assert cli.main(["eval", "--config", path]) == 1


class TestAttributionCmd:
    @pytest.fixture()
    def run_dir(self, tmp_path):
        out = str(tmp_path / "run")
        cmd_train(base_config(), out_dir=out)
        return out

    def test_same_checkpoint_gives_zero_delta(self, run_dir, tmp_path):
        out = str(tmp_path / "attr")
        config = base_config(
            attribution={"checkpoint": f"{run_dir}/best.ckpt",
                         "checkpoint_last": f"{run_dir}/best.ckpt"})
        report = cmd_attribution(config, out_dir=out)
        assert report.summary["delta_cas"] == 0.0
        matrix, labels = load_matrix(f"{out}/attribution_matrix.txt")
        assert labels == [0, 1, 2]
        diff, _ = load_matrix(f"{out}/attribution_diff.txt")
        assert np.allclose(diff, 0.0)
        assert (tmp_path / "attr" / "instance_matrix.txt").exists()

    def test_best_vs_last_reports_gap(self, run_dir):
        config = base_config(
            attribution={"checkpoint": f"{run_dir}/best.ckpt",
                         "checkpoint_last": f"{run_dir}/last.ckpt"})
        report = cmd_attribution(config)
        assert "delta_cas" in report.summary
        assert len(report.records) == 2
        assert report.summary["clean_attribution"] is False

    def test_zero_epsilon_switches_to_clean_attribution(self, run_dir):
        config = base_config(
            attribution={"checkpoint": f"{run_dir}/best.ckpt"})
        config["attack"]["epsilon"] = 0.0
        report = cmd_attribution(config)
        assert report.summary["clean_attribution"] is True

    def test_requires_checkpoint(self):
        with pytest.raises(ConfigError, match="checkpoint"):
            cmd_attribution(base_config())

    def test_class_count_mismatch_rejected(self, run_dir, tmp_path):
        other = Classifier.create(8, (8,), 4, RngStream(0))
        path = str(tmp_path / "other.ckpt")
        save_checkpoint(other, path)
        config = base_config(
            attribution={"checkpoint": f"{run_dir}/best.ckpt",
                         "checkpoint_last": path})
        with pytest.raises(ConfigError, match="class counts"):
            cmd_attribution(config)


class TestSweep:
    def test_single_cell_matches_direct_train(self, tmp_path):
        config = base_config(sweep={"epsilons": [0.2], "modes": ["at"],
                                    "seeds": [1]})
        report = cmd_sweep(config, out_dir=str(tmp_path / "sweep"))
        assert report.passed is True
        cell = report.records[0]
        direct = cmd_train(base_config(), seed=1)
        assert cell["ra_best"] == direct.summary["ra_best"]
        assert cell["ra_last"] == direct.summary["ra_last"]
        assert cell["cas_best"] == direct.summary["cas_best"]
        assert cell["cas_last"] == direct.summary["cas_last"]
        assert cell["delta_cas"] == pytest.approx(
            direct.summary["cas_best"] - direct.summary["cas_last"], abs=1e-15)

    def test_medians_aggregate_over_seeds(self, tmp_path):
        out = str(tmp_path / "sweep")
        config = base_config(sweep={"epsilons": [0.2], "modes": ["at"],
                                    "seeds": [1, 2, 3]})
        report = cmd_sweep(config, out_dir=out)
        assert report.summary["cells"] == 3
        med = report.summary["medians"][0]
        values = [r["ra_last"] for r in report.records]
        assert med["ra_last"] == statistics.median(values)
        assert med["seeds"] == 3
        lines = (tmp_path / "sweep" / "medians.jsonl").read_text().splitlines()
        assert json.loads(lines[0])["epsilon"] == 0.2
        cell_dir = tmp_path / "sweep" / "cells" / "eps0.2_at_s1"
        assert (cell_dir / "records.jsonl").exists()

    def test_requires_grid(self):
        with pytest.raises(ConfigError, match="sweep requires"):
            cmd_sweep(base_config(sweep={"epsilons": [], "modes": ["at"]}))

    def test_failing_cell_is_recorded_not_fatal(self, tmp_path):
        config = base_config(sweep={"epsilons": [0.2],
                                    "modes": ["at", "at_kd"],  # no teacher
                                    "seeds": [1]})
        report = cmd_sweep(config)
        assert report.passed is False
        errors = [r for r in report.records if "error" in r]
        assert len(errors) == 1
        assert "teacher" in errors[0]["error"]
        assert report.summary["failed_cells"] == 1


class TestReportCmd:
    def test_renders_previous_run(self, tmp_path, capsys):
        out = str(tmp_path / "run")
        cmd_train(base_config(), out_dir=out)
        report = cmd_report({}, out_dir=out)
        rendered = report.summary["rendered"]
        assert "run: train" in rendered
        assert "ra_last" in rendered
        assert cli.main(["report", "--out", out]) == 0
        assert "run: train" in capsys.readouterr().out

    def test_requires_out_dir_with_summary(self, tmp_path):
        with pytest.raises(ConfigError, match="--out"):
            cmd_report({})
        with pytest.raises(ConfigError, match="summary.json"):
            cmd_report({}, out_dir=str(tmp_path))


class TestMain:
    def test_config_error_exits_two(self, tmp_path, capsys):
        path = write_config(tmp_path, {"bogus": 1})
        assert cli.main(["train", "--config", path]) == 2
        assert "config error" in capsys.readouterr().err

    def test_records_format_prints_json_lines(self, tmp_path, capsys):
        path = write_config(tmp_path, base_config())
        code = cli.main(["train", "--config", path, "--format", "records"])
        assert code == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 2
        assert json.loads(lines[0])["epoch"] == 0

    def test_unknown_command_rejected(self):
        with pytest.raises(SystemExit):
            cli.main(["frobnicate"])

    def test_out_dir_from_config(self, tmp_path, capsys):
        out = str(tmp_path / "from-config")
        path = write_config(tmp_path, base_config(out_dir=out))
        assert cli.main(["train", "--config", path]) == 0
        assert (tmp_path / "from-config" / "summary.json").exists()
