"""
整合測試
"""

import json
import os
import sys

import numpy as np
import pytest

# 添加src目錄到Python路徑
sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from src.app import main
from src.models.reports import ScoreReport
from src.services.data_io import load_bundle, load_surface_csv
from src.services.surfaces import arbitrage_flags

SURFACE_TTGAN = [
    "generator.l=16",
    "generator.f=9",
    "generator.d_h=8",
    "generator.n_a=8",
    "generator.n_m=16",
    "generator.n_layers=2",
    "generator.n_h=2",
    "discriminator.l=16",
    "discriminator.d_h=8",
    "discriminator.n_a=8",
    "discriminator.n_m=16",
    "discriminator.n_layers=1",
    "train.window=16",
    "train.batch_size=4",
    "train.d_steps=1",
]

SURFACE_TAGAN = [
    "generator.l=16",
    "generator.f=9",
    "generator.n_k=2",
    "generator.blocks_before=1",
    "generator.blocks_after=1",
    "generator.d_h=8",
    "generator.n_a=8",
    "generator.n_h=2",
    "discriminator.l=16",
    "discriminator.d_s=4",
    "discriminator.d_m=8",
    "discriminator.blocks_before=1",
    "discriminator.blocks_after=1",
    "discriminator.n_a=8",
    "discriminator.n_h=2",
    "train.window=16",
    "train.batch_size=4",
    "train.d_steps=1",
]


def _flags(overrides):
    out = []
    for item in overrides:
        out.extend(["--override", item])
    return out


def _run(*argv) -> None:
    assert main([str(a) for a in argv]) == 0, argv


@pytest.mark.integration
class TestIndexWorkflow:
    """指數資料的訓練、生成、評估流程"""

    def test_tagan_with_evaluation(self, price_csv, tmp_path):
        """訓練中定期評估的分數寫入歷史"""
        run = tmp_path / "run"
        _run(
            "train",
            "--data",
            price_csv,
            "--family",
            "tagan",
            "--preset",
            "desk",
            "--iterations",
            "2",
            "--delta",
            "3",
            "--out",
            run,
            *_flags(
                [
                    "generator.l=16",
                    "generator.f=9",
                    "generator.n_k=2",
                    "generator.blocks_before=1",
                    "generator.blocks_after=1",
                    "generator.d_h=8",
                    "generator.n_a=8",
                    "generator.n_h=2",
                    "discriminator.l=16",
                    "discriminator.d_s=4",
                    "discriminator.d_m=8",
                    "discriminator.blocks_before=1",
                    "discriminator.blocks_after=1",
                    "discriminator.n_a=8",
                    "discriminator.n_h=2",
                    "train.window=16",
                    "train.batch_size=4",
                    "train.eval_every=2",
                    "train.eval_paths=2",
                    "train.eval_length=32",
                ]
            ),
        )
        lines = (run / "history.jsonl").read_text().splitlines()
        last = json.loads(lines[-1])
        assert "ACF^(abs)" in last["scores"]
        assert "scores" not in json.loads(lines[0])

        _run(
            "generate",
            "--checkpoint-dir",
            run,
            "--n-paths",
            "2",
            "--length",
            "48",
            "--out",
            tmp_path / "gen",
        )
        bundle = load_bundle(tmp_path / "gen" / "bundle.bin")
        assert bundle.model_id.startswith("tagan-seed")
        _run(
            "evaluate",
            "--data",
            price_csv,
            "--bundle",
            tmp_path / "gen" / "bundle.bin",
            "--delta",
            "4",
            "--out",
            tmp_path / "gen",
        )
        report = ScoreReport.model_validate_json(
            (tmp_path / "gen" / "scores.json").read_text()
        )
        assert all(np.isfinite(v) for v in report.scores.values())


@pytest.mark.integration
@pytest.mark.slow
class TestSurfaceWorkflow:
    """曲面資料的訓練、生成、無套利修正與評估流程"""

    @pytest.mark.parametrize(
        "family, overrides, pca",
        [("ttgan", SURFACE_TTGAN, False), ("tagan", SURFACE_TAGAN, True)],
    )
    def test_surface_pipeline(self, surface_csv, tmp_path, family, overrides, pca):
        run = tmp_path / "run"
        _run(
            "train",
            "--data",
            surface_csv,
            "--kind",
            "surface",
            "--family",
            family,
            "--preset",
            "desk",
            "--iterations",
            "1",
            "--out",
            run,
            *_flags(overrides),
        )
        manifest = json.loads((run / "run.json").read_text())
        assert (manifest["pca_file"] is not None) == pca
        assert manifest["generator"]["d"] == (10 if pca else 28)
        assert len(manifest["strikes"]) == 7

        gen = tmp_path / "gen"
        _run(
            "generate",
            "--checkpoint-dir",
            run,
            "--n-paths",
            "2",
            "--length",
            "20",
            "--out",
            gen,
        )
        bundle = load_bundle(gen / "bundle.bin")
        assert bundle.paths.shape == (2, 20, 28)

        _run(
            "repair-arbitrage",
            "--kind",
            "surface",
            "--data",
            surface_csv,
            "--bundle",
            gen / "bundle.bin",
            "--workers",
            "2",
            "--out",
            gen,
        )
        repaired = load_bundle(gen / "bundle_repaired.bin")
        grid = load_surface_csv(surface_csv)
        assert not arbitrage_flags(repaired.paths.astype(np.float64), grid).any()
        summary = json.loads((gen / "repair.json").read_text())
        assert 0.0 <= summary["arbitrage_rate"] <= 1.0

        _run(
            "evaluate",
            "--kind",
            "surface",
            "--data",
            surface_csv,
            "--bundle",
            gen / "bundle.bin",
            "--delta",
            "3",
            "--out",
            gen,
        )
        report = ScoreReport.model_validate_json((gen / "scores.json").read_text())
        assert report.mode == "surface"
        assert report.scores["arbitrage rate"] == pytest.approx(
            summary["arbitrage_rate"]
        )
        assert (gen / "cross_corr.png").exists()
