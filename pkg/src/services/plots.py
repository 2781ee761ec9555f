"""
評估圖表

真實與生成資料的密度疊圖、相關曲線疊圖、相關矩陣差異熱圖與損失曲線。
所有圖表以 Agg 後端輸出成 PNG。
"""

from pathlib import Path
from typing import Dict, List, Optional, Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.figure import Figure  # noqa: E402

from src.core.logging import logger  # noqa: E402
from src.models.reports import TrainingRecord  # noqa: E402
from src.services.metrics import acf_curve  # noqa: E402

plt.rcParams["font.size"] = 8
plt.rcParams["axes.linewidth"] = 0.5
plt.rcParams["lines.linewidth"] = 1.0
plt.rcParams["savefig.bbox"] = "tight"

PathLike = Union[str, Path]


def save_and_close_fig(fig: Figure, output_path: PathLike, dpi: int = 150) -> Path:
    """存檔後關閉圖表"""
    output_path = Path(output_path)
    output_path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(str(output_path), dpi=dpi)
    plt.close(fig)
    logger.info(f"Saved plot to {output_path}")
    return output_path


def plot_density(
    real: np.ndarray,
    generated: np.ndarray,
    output_path: PathLike,
    title: str = "Return density",
    bins: int = 100,
) -> Path:
    """真實值與生成值 (全部路徑合併) 的直方圖密度疊圖"""
    real = np.asarray(real, dtype=np.float64).ravel()
    generated = np.asarray(generated, dtype=np.float64).ravel()
    low = min(real.min(), generated.min())
    high = max(real.max(), generated.max())
    edges = np.linspace(low, high, bins + 1) if high > low else bins
    fig, ax = plt.subplots(figsize=(4.5, 3.0))
    ax.hist(real, bins=edges, density=True, alpha=0.5, label="historical")
    ax.hist(generated, bins=edges, density=True, alpha=0.5, label="generated")
    ax.set_title(title)
    ax.legend()
    return save_and_close_fig(fig, output_path)


def plot_acf(
    real: np.ndarray,
    paths: np.ndarray,
    kinds: Dict[str, str],
    delta: int,
    output_path: PathLike,
) -> Path:
    """
    各種相關曲線：歷史資料 vs 生成路徑的平均

    Args:
        real: 歷史序列 (T_x,)
        paths: 生成路徑 (N, T)
        kinds: {相關種類: 圖例標籤}
        delta: 最大時差
    """
    lags = np.arange(1, delta + 1)
    fig, axes = plt.subplots(
        nrows=1, ncols=len(kinds), figsize=(3.2 * len(kinds), 2.6), squeeze=False
    )
    for ax, (kind, label) in zip(axes[0], kinds.items()):
        ax.plot(lags, acf_curve(real, kind, delta), label="historical")
        ax.plot(lags, acf_curve(paths, kind, delta).mean(axis=0), label="generated")
        ax.axhline(0.0, color="gray", linestyle="--", linewidth=0.5)
        ax.set_title(label)
        ax.set_xlabel("lag")
        ax.legend()
    return save_and_close_fig(fig, output_path)


def plot_cross_corr(
    real: np.ndarray,
    generated: np.ndarray,
    output_path: PathLike,
    labels: Optional[List[str]] = None,
) -> Path:
    """|Σ_x - Σ_y| 熱圖，Σ_y 合併所有路徑與時間點"""
    x = np.asarray(real, dtype=np.float64)
    y = np.asarray(generated, dtype=np.float64).reshape(-1, x.shape[-1])
    diff = np.abs(np.corrcoef(x, rowvar=False) - np.corrcoef(y, rowvar=False))
    fig, ax = plt.subplots(figsize=(5.0, 4.2))
    image = ax.imshow(np.atleast_2d(diff), cmap="viridis", vmin=0.0)
    fig.colorbar(image, ax=ax)
    if labels:
        ticks = np.arange(len(labels))
        ax.set_xticks(ticks, labels, rotation=90, fontsize=5)
        ax.set_yticks(ticks, labels, fontsize=5)
    ax.set_title("|corr(real) - corr(generated)|")
    return save_and_close_fig(fig, output_path)


def plot_losses(history: List[TrainingRecord], output_path: PathLike) -> Path:
    """生成器與判別器損失曲線"""
    iters = [record.iter for record in history]
    fig, ax = plt.subplots(figsize=(4.5, 3.0))
    ax.plot(iters, [record.loss_D for record in history], label="loss_D")
    ax.plot(iters, [record.loss_G for record in history], label="loss_G")
    ax.set_xlabel("iteration")
    ax.legend()
    return save_and_close_fig(fig, output_path)
