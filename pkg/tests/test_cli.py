"""
命令列測試
"""

import json
import os
import sys

import numpy as np
import pytest

# 添加src目錄到Python路徑
sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from src.app import build_run_config, create_app, main
from src.core.exceptions import ConfigurationError
from src.models.reports import ScoreReport
from src.services.data_io import load_bundle

TINY_OVERRIDES = [
    "--override",
    "generator.l=16",
    "--override",
    "generator.f=9",
    "--override",
    "generator.d_h=8",
    "--override",
    "generator.n_a=8",
    "--override",
    "generator.n_m=16",
    "--override",
    "generator.n_layers=2",
    "--override",
    "generator.n_h=2",
    "--override",
    "discriminator.l=16",
    "--override",
    "discriminator.d_h=8",
    "--override",
    "discriminator.n_a=8",
    "--override",
    "discriminator.n_m=16",
    "--override",
    "discriminator.n_layers=1",
    "--override",
    "train.window=16",
    "--override",
    "train.batch_size=4",
    "--override",
    "train.d_steps=1",
]


@pytest.fixture
def trained_run(tmp_path, price_csv):
    """以極小設定訓練兩次迭代的輸出目錄"""
    out = tmp_path / "run"
    code = main(
        [
            "train",
            "--data",
            str(price_csv),
            "--preset",
            "desk",
            "--iterations",
            "2",
            "--seed",
            "3",
            "--out",
            str(out),
            *TINY_OVERRIDES,
        ]
    )
    assert code == 0
    return out


class TestArguments:
    """測試參數解析"""

    def test_flags_override_config_file(self, tmp_path, price_csv):
        config = tmp_path / "config.json"
        config.write_text(
            json.dumps(
                {
                    "seed": 5,
                    "family": "tagan",
                    "overrides": {"train": {"iterations": 3}},
                }
            )
        )
        args = create_app().parse_args(
            [
                "train",
                "--config",
                str(config),
                "--data",
                str(price_csv),
                "--seed",
                "9",
                "--override",
                "train.batch_size=8",
            ]
        )
        cfg = build_run_config(args)
        assert cfg.seed == 9
        assert cfg.family == "tagan"
        assert cfg.overrides == {"train": {"iterations": 3, "batch_size": 8}}

    def test_override_values_are_json(self, price_csv):
        args = create_app().parse_args(
            [
                "train",
                "--data",
                str(price_csv),
                "--override",
                "generator.per_layer_rfs=[3, 7]",
                "--override",
                "generator.activation=relu",
            ]
        )
        overrides = build_run_config(args).overrides["generator"]
        assert overrides == {"per_layer_rfs": [3, 7], "activation": "relu"}

    def test_malformed_override(self, price_csv):
        args = create_app().parse_args(
            ["train", "--data", str(price_csv), "--override", "d_h=8"]
        )
        with pytest.raises(ConfigurationError):
            build_run_config(args)

    def test_unknown_command(self):
        with pytest.raises(SystemExit):
            create_app().parse_args(["serve"])


class TestExitCodes:
    """測試結束碼"""

    def test_missing_data_file(self, tmp_path):
        code = main(["train", "--data", str(tmp_path / "missing.csv")])
        assert code == 2

    def test_malformed_override(self, price_csv, tmp_path):
        code = main(
            [
                "train",
                "--data",
                str(price_csv),
                "--out",
                str(tmp_path),
                "--override",
                "generator.d_h",
            ]
        )
        assert code == 2

    def test_invalid_hyperparameters(self, price_csv, tmp_path):
        code = main(
            [
                "train",
                "--data",
                str(price_csv),
                "--out",
                str(tmp_path),
                "--override",
                "generator.n_a=30",
            ]
        )
        assert code == 2

    def test_malformed_csv(self, tmp_path):
        path = tmp_path / "prices.csv"
        path.write_text("date,close\n2020-01-01,1.0\n2020-01-02,abc\n")
        code = main(["train", "--data", str(path), "--out", str(tmp_path / "o")])
        assert code == 2

    def test_repair_needs_surface(self, price_csv, tmp_path):
        code = main(
            [
                "repair-arbitrage",
                "--data",
                str(price_csv),
                "--bundle",
                str(price_csv),
                "--out",
                str(tmp_path),
            ]
        )
        assert code == 2


class TestCommands:
    """測試各子命令的輸出檔案"""

    def test_train_outputs(self, trained_run):
        for name in (
            "generator.ckpt",
            "discriminator.ckpt",
            "history.jsonl",
            "run.json",
        ):
            assert (trained_run / name).exists(), name
        manifest = json.loads((trained_run / "run.json").read_text())
        assert manifest["family"] == "ttgan"
        assert manifest["augment"] == "cumsum"
        assert manifest["generator"]["l"] == 16
        assert manifest["train"]["seed"] == 3
        lines = (trained_run / "history.jsonl").read_text().splitlines()
        assert len(lines) == 2
        assert "Running train" in (trained_run / "run.log").read_text()

    def test_failure_is_logged_to_run_log(self, tmp_path):
        code = main(
            ["generate", "--checkpoint-dir", str(tmp_path), "--out", str(tmp_path)]
        )
        assert code == 2
        assert "ConfigurationError" in (tmp_path / "run.log").read_text()

    def test_generate_evaluate_report(self, trained_run, price_csv, tmp_path):
        out = tmp_path / "eval"
        assert (
            main(
                [
                    "generate",
                    "--checkpoint-dir",
                    str(trained_run),
                    "--n-paths",
                    "3",
                    "--length",
                    "40",
                    "--seed",
                    "1",
                    "--out",
                    str(out),
                ]
            )
            == 0
        )
        bundle = load_bundle(out / "bundle.bin")
        assert bundle.paths.shape == (3, 40, 1)
        assert bundle.model_id == "ttgan-seed3"

        assert (
            main(
                [
                    "evaluate",
                    "--data",
                    str(price_csv),
                    "--bundle",
                    str(out / "bundle.bin"),
                    "--delta",
                    "5",
                    "--out",
                    str(out),
                ]
            )
            == 0
        )
        report = ScoreReport.model_validate_json((out / "scores.json").read_text())
        assert report.mode == "index"
        assert list(report.scores)[:2] == ["W_1^(1)", "W_1^(5)"]
        assert "W_1^(100)" not in report.scores
        assert report.real_stats.t_x == 600
        assert (out / "density.png").exists()
        assert (out / "acf.png").exists()

        assert (
            main(
                [
                    "report",
                    "--checkpoint-dir",
                    str(trained_run),
                    "--scores",
                    str(out / "scores.json"),
                    "--out",
                    str(out),
                ]
            )
            == 0
        )
        text = (out / "report.txt").read_text()
        assert "iterations: 2" in text
        assert "W_1^(1)" in text
        assert (out / "losses.png").exists()

    def test_evaluate_short_bundle_default_delta(
        self, trained_run, price_csv, tmp_path
    ):
        """路徑短於預設延遲 250 時自動截短為 T - 2"""
        out = tmp_path / "short"
        common = ["--out", str(out)]
        assert (
            main(
                [
                    "generate",
                    "--checkpoint-dir",
                    str(trained_run),
                    "--n-paths",
                    "2",
                    "--length",
                    "128",
                    *common,
                ]
            )
            == 0
        )
        code = main(
            [
                "evaluate",
                "--data",
                str(price_csv),
                "--bundle",
                str(out / "bundle.bin"),
                *common,
            ]
        )
        assert code == 0
        report = ScoreReport.model_validate_json((out / "scores.json").read_text())
        assert report.delta == 126
        assert (out / "acf.png").exists()
        assert "exceeds path length 128" in (out / "run.log").read_text()

    def test_generate_is_reproducible(self, trained_run, tmp_path):
        paths = []
        for name in ("a", "b"):
            out = tmp_path / name
            main(
                [
                    "generate",
                    "--checkpoint-dir",
                    str(trained_run),
                    "--n-paths",
                    "2",
                    "--length",
                    "20",
                    "--seed",
                    "4",
                    "--out",
                    str(out),
                ]
            )
            paths.append(load_bundle(out / "bundle.bin").paths)
        np.testing.assert_array_equal(paths[0], paths[1])
