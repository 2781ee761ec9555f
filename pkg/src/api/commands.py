"""
命令實作

每個命令接收驗證過的 RunConfig，把結果檔案寫入 cfg.out，
並回傳一個可 JSON 序列化的摘要。
"""

import json
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Tuple

import numpy as np

from src.core.exceptions import ConfigurationError
from src.core.logging import logger
from src.models.presets import (
    DELTA_BY_KIND,
    build_presets,
    default_pca_components,
)
from src.models.reports import ScoreReport
from src.models.series import PathBundle, SurfaceGrid
from src.models.specs import RunConfig, RunManifest
from src.services import plots
from src.services.data_io import (
    dataset_stats,
    load_bundle,
    load_pca,
    load_price_csv,
    load_surface_csv,
    save_bundle,
    save_pca,
    to_log_returns,
)
from src.services.metrics import INDEX_CORRELATION_LABELS, index_scores, surface_scores
from src.services.networks import (
    build_discriminator,
    build_generator,
    load_checkpoint,
    save_checkpoint,
)
from src.services.surfaces import pca_fit, pca_invert, repair_pipeline
from src.services.training import (
    make_windows,
    read_history,
    sample_paths,
    train,
    write_history,
)

GENERATOR_FILE = "generator.ckpt"
DISCRIMINATOR_FILE = "discriminator.ckpt"
HISTORY_FILE = "history.jsonl"
MANIFEST_FILE = "run.json"
PCA_FILE = "pca.bin"
BUNDLE_FILE = "bundle.bin"
REPAIRED_FILE = "bundle_repaired.bin"
SCORES_FILE = "scores.json"


def _require(cfg: RunConfig, name: str) -> Path:
    value = getattr(cfg, name)
    if value is None:
        raise ConfigurationError(f"command {cfg.command} needs --{name}")
    return Path(value)


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_real(cfg: RunConfig) -> Tuple[np.ndarray, Optional[SurfaceGrid]]:
    """指數回傳 (報酬, None)；曲面回傳 (對數波動率, 網格)"""
    data = _require(cfg, "data")
    if cfg.kind == "index":
        return to_log_returns(load_price_csv(data)), None
    grid = load_surface_csv(data)
    return grid.data, grid


def _read_manifest(run_dir: Path) -> RunManifest:
    path = run_dir / MANIFEST_FILE
    if not path.exists():
        raise ConfigurationError("run directory has no manifest", {"path": str(path)})
    return RunManifest.model_validate_json(path.read_text(encoding="utf-8"))


def _cap_delta(delta: int, length: int) -> int:
    """ACF 的最大延遲須小於路徑長度"""
    lag = min(delta, length - 2)
    if lag < delta:
        logger.warning(f"delta={delta} exceeds path length {length}, using {lag}")
    return lag


def _make_evaluator(
    kind: str, real: np.ndarray, grid: Optional[SurfaceGrid], pca, delta: int
) -> Callable[[PathBundle], Dict[str, float]]:
    def evaluate(bundle: PathBundle) -> Dict[str, float]:
        lag = _cap_delta(delta, bundle.length)
        if kind == "index":
            return index_scores(real, bundle, delta=lag).scores
        if pca is not None:
            bundle = PathBundle(pca_invert(pca, bundle.paths), bundle.seed)
        return surface_scores(grid, bundle, delta=lag).scores

    return evaluate


def cmd_train(cfg: RunConfig) -> Dict[str, Any]:
    """訓練生成器與判別器，寫出 checkpoint、歷史與 run.json"""
    out = _out_dir(cfg)
    real, grid = _load_real(cfg)
    series = real[:, None] if real.ndim == 1 else real

    pca = None
    n_components = cfg.pca_components
    if n_components is None:
        n_components = default_pca_components(cfg.kind, cfg.family)
    if cfg.kind == "surface" and n_components:
        pca, series = pca_fit(real, n_components)
        save_pca(pca, out / PCA_FILE)

    g_spec, d_spec, train_cfg = build_presets(
        cfg.kind,
        cfg.family,
        cfg.preset,
        d=series.shape[1],
        augment=cfg.augment,
        pca_components=n_components if cfg.kind == "surface" else 0,
        overrides=cfg.overrides,
    )
    updates: Dict[str, Any] = {"seed": cfg.seed, "snapshot_dir": str(out / "diverged")}
    if cfg.iterations is not None:
        updates["iterations"] = cfg.iterations
    train_cfg = train_cfg.model_copy(update=updates)

    g = build_generator(g_spec, seed=cfg.seed)
    d = build_discriminator(d_spec, seed=cfg.seed + 1)
    evaluator = None
    if train_cfg.eval_every:
        delta = cfg.delta or train_cfg.delta or DELTA_BY_KIND[cfg.kind]
        evaluator = _make_evaluator(cfg.kind, real, grid, pca, delta)
    result = train(g, d, make_windows(series, train_cfg.window), train_cfg, evaluator)

    save_checkpoint(result.generator, out / GENERATOR_FILE)
    save_checkpoint(result.discriminator, out / DISCRIMINATOR_FILE)
    write_history(result.history, out / HISTORY_FILE)
    manifest = RunManifest(
        kind=cfg.kind,
        family=cfg.family,
        augment=train_cfg.augment,
        seed=cfg.seed,
        generator=g_spec,
        discriminator=d_spec,
        train=train_cfg,
        pca_file=PCA_FILE if pca is not None else None,
        strikes=grid.strikes.tolist() if grid is not None else None,
        maturities=grid.maturities.tolist() if grid is not None else None,
    )
    (out / MANIFEST_FILE).write_text(manifest.model_dump_json(indent=2))

    last = result.history[-1] if result.history else None
    return {
        "command": "train",
        "out": str(out),
        "iterations": train_cfg.iterations,
        "loss_G": last.loss_G if last else None,
        "loss_D": last.loss_D if last else None,
    }


def cmd_generate(cfg: RunConfig) -> Dict[str, Any]:
    """由訓練好的生成器抽樣 N 條長度 T 的路徑；PCA 模型會被還原成對數波動率"""
    run_dir = _require(cfg, "checkpoint_dir")
    manifest = _read_manifest(run_dir)
    g = load_checkpoint(run_dir / GENERATOR_FILE)
    bundle = sample_paths(g, n_paths=cfg.n_paths, length=cfg.length, seed=cfg.seed)
    if manifest.pca_file:
        pca = load_pca(run_dir / manifest.pca_file)
        bundle = PathBundle(
            pca_invert(pca, bundle.paths), seed=bundle.seed, model_id=bundle.model_id
        )
    path = save_bundle(bundle, _out_dir(cfg) / BUNDLE_FILE)
    return {
        "command": "generate",
        "bundle": str(path),
        "shape": [bundle.n_paths, bundle.length, bundle.channels],
        "model_id": bundle.model_id,
    }


def cmd_evaluate(cfg: RunConfig) -> Dict[str, Any]:
    """對照歷史資料為路徑組評分，寫出 scores.json 與圖表"""
    out = _out_dir(cfg)
    real, grid = _load_real(cfg)
    bundle = load_bundle(_require(cfg, "bundle"))
    delta = _cap_delta(cfg.delta or DELTA_BY_KIND[cfg.kind], bundle.length)
    metadata = {"bundle": str(cfg.bundle), "model_id": bundle.model_id}

    if cfg.kind == "index":
        report = index_scores(
            real, bundle, delta=delta, real_stats=dataset_stats(real), metadata=metadata
        )
        plots.plot_density(real, bundle.paths, out / "density.png")
        plots.plot_acf(
            real, bundle.channel(0), INDEX_CORRELATION_LABELS, delta, out / "acf.png"
        )
    else:
        repaired, _ = repair_pipeline(bundle, grid, workers=cfg.workers)
        report = surface_scores(
            grid, repaired, delta=delta, raw_bundle=bundle, metadata=metadata
        )
        plots.plot_density(
            real, repaired.paths, out / "density.png", title="Log-volatility density"
        )
        plots.plot_acf(
            real[:, 0], repaired.channel(0), {"acf": "ACF"}, delta, out / "acf.png"
        )
        plots.plot_cross_corr(
            real, repaired.paths, out / "cross_corr.png", labels=grid.labels()
        )

    (out / SCORES_FILE).write_text(report.to_json())
    logger.info(f"Scores written to {out / SCORES_FILE}")
    return {"command": "evaluate", "scores": report.scores}


def cmd_repair(cfg: RunConfig) -> Dict[str, Any]:
    """移除生成曲面中的套利並回報套利比率"""
    if cfg.kind != "surface":
        raise ConfigurationError("repair-arbitrage needs --kind surface")
    _, grid = _load_real(cfg)
    bundle = load_bundle(_require(cfg, "bundle"))
    repaired, flags = repair_pipeline(bundle, grid, workers=cfg.workers)
    path = save_bundle(repaired, _out_dir(cfg) / REPAIRED_FILE)
    summary = {
        "command": "repair-arbitrage",
        "bundle": str(path),
        "arbitrage_rate": float(flags.mean()),
        "repaired": int(flags.sum()),
    }
    (Path(cfg.out) / "repair.json").write_text(json.dumps(summary, indent=2))
    return summary


def cmd_report(cfg: RunConfig) -> Dict[str, Any]:
    """整理訓練歷史與評分檔成文字摘要與損失曲線"""
    out = _out_dir(cfg)
    history_path = cfg.history
    if history_path is None and cfg.checkpoint_dir is not None:
        history_path = Path(cfg.checkpoint_dir) / HISTORY_FILE
    if history_path is None and cfg.scores is None:
        raise ConfigurationError("report needs --history, --checkpoint-dir or --scores")

    lines = []
    summary: Dict[str, Any] = {"command": "report"}
    if history_path is not None:
        history = read_history(history_path)
        if history:
            plots.plot_losses(history, out / "losses.png")
            last = history[-1]
            lines.append(f"iterations: {last.iter}")
            lines.append(f"final loss_D: {last.loss_D:.6g}")
            lines.append(f"final loss_G: {last.loss_G:.6g}")
            summary["iterations"] = last.iter
    if cfg.scores is not None:
        report = ScoreReport.model_validate_json(Path(cfg.scores).read_text())
        lines.append(f"{report.mode} scores (delta={report.delta}):")
        width = max(len(name) for name in report.scores)
        for name, value in report.scores.items():
            lines.append(f"  {name:<{width}}  {value:.4e}")
        summary["scores"] = report.scores
    text = "\n".join(lines) + "\n"
    (out / "report.txt").write_text(text)
    summary["report"] = str(out / "report.txt")
    return summary


COMMANDS: Dict[str, Callable[[RunConfig], Dict[str, Any]]] = {
    "train": cmd_train,
    "generate": cmd_generate,
    "evaluate": cmd_evaluate,
    "repair-arbitrage": cmd_repair,
    "report": cmd_report,
}
