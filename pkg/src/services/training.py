"""
對抗訓練服務

滾動視窗資料集、交替更新的訓練迴圈、分段生成長路徑，
以及訓練歷史的讀寫與合成 GARCH(1,1) 資料。
"""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Union

import numpy as np
import torch
from pydantic import ValidationError
from torch.utils.data import Dataset

from src.core.config import settings
from src.core.exceptions import (
    ConfigurationError,
    DataFormatError,
    NetworkModeError,
    ShapeError,
    TrainingDivergedError,
)
from src.core.logging import logger
from src.models.reports import TrainingRecord
from src.models.series import PathBundle, TimeSeriesMatrix
from src.models.specs import TrainConfig
from src.services.losses import (
    discriminator_loss,
    generator_loss,
    gp_interpolate,
    gradient_norm,
)
from src.services.networks import (
    NetworkInstance,
    augment,
    generate,
    save_checkpoint,
)

Evaluator = Callable[[PathBundle], Dict[str, float]]


class WindowDataset(Dataset):
    """長度 l 的所有滾動視窗；第 i 個視窗為第 i..i+l-1 列"""

    def __init__(self, source: torch.Tensor, l: int):
        self.source = source
        self.l = l
        # (T_x - l + 1, d, l) -> (T_x - l + 1, l, d)，共用底層記憶體
        self.windows = source.unfold(0, l, 1).transpose(-1, -2)

    def __len__(self) -> int:
        return int(self.windows.shape[0])

    def __getitem__(self, index: int) -> torch.Tensor:
        return self.windows[index]

    @property
    def n_c(self) -> int:
        return int(self.source.shape[-1])

    def sample(self, batch_size: int, generator: torch.Generator) -> torch.Tensor:
        """均勻抽取視窗索引 (可重複)，回傳 (batch_size, l, d)"""
        index = torch.randint(len(self), (batch_size,), generator=generator)
        return self.windows[index]


def make_windows(series: Union[TimeSeriesMatrix, np.ndarray], l: int) -> WindowDataset:
    """
    以長度 l 的滾動視窗建立訓練資料集

    Raises:
        ShapeError: 序列短於 l 或帶有批次維度
    """
    if isinstance(series, TimeSeriesMatrix):
        values = series.values
    else:
        values = torch.as_tensor(np.asarray(series, dtype=np.float64))
        if values.dim() == 1:
            values = values[:, None]
    if values.dim() != 2:
        raise ShapeError(
            "window source must be a T_x x d matrix", {"shape": tuple(values.shape)}
        )
    if l < 1 or values.shape[0] < l:
        raise ShapeError(
            "series shorter than the window length",
            {"t_x": int(values.shape[0]), "l": l},
        )
    return WindowDataset(values, l)


@dataclass
class TrainResult:
    """訓練後的網路、每次迭代的紀錄與評估分數"""

    generator: NetworkInstance
    discriminator: NetworkInstance
    history: List[TrainingRecord] = field(default_factory=list)
    evaluations: List[Dict[str, float]] = field(default_factory=list)


def _check_compatible(
    g: NetworkInstance, d: NetworkInstance, data: WindowDataset, cfg: TrainConfig
) -> None:
    lengths = {"window": cfg.window, "data": data.l, "g": g.spec.l, "d": d.spec.l}
    if len(set(lengths.values())) != 1:
        raise ConfigurationError("window lengths disagree", lengths)
    channels = {"data": data.n_c, "g": g.spec.d, "d": d.spec.d}
    if len(set(channels.values())) != 1:
        raise ConfigurationError("channel counts disagree", channels)
    if cfg.augment != d.spec.augment:
        raise ConfigurationError(
            "augment mode differs from the discriminator",
            {"train": cfg.augment, "discriminator": d.spec.augment},
        )


def _noise(g: NetworkInstance, batch: int, generator: torch.Generator) -> torch.Tensor:
    spec = g.spec
    return torch.randn(
        (batch, spec.noise_length(), spec.d_n), generator=generator, dtype=g.dtype
    )


def _discriminator_step(g, d, data, cfg, optimizer, generator):
    real = data.sample(cfg.batch_size, generator).to(d.dtype)
    with torch.no_grad():
        fake = g(_noise(g, cfg.batch_size, generator))
    real_aug = augment(real, cfg.augment)
    fake_aug = augment(fake, cfg.augment)
    d_r, d_f = d(real_aug), d(fake_aug)
    norms = None
    if cfg.loss.kind == "wgan_gp":
        u = torch.rand(cfg.batch_size, generator=generator, dtype=d.dtype)
        norms = gradient_norm(d, gp_interpolate(real_aug, fake_aug, u))
    loss = discriminator_loss(d_r, d_f, norms, cfg.loss)
    optimizer.zero_grad()
    loss.backward()
    optimizer.step()
    penalty = None if norms is None else float(((norms.detach() - 1.0) ** 2).mean())
    return float(loss.detach()), penalty


def _generator_step(g, d, cfg, optimizer, generator):
    fake = g(_noise(g, cfg.batch_size, generator))
    loss = generator_loss(d(augment(fake, cfg.augment)), cfg.loss)
    optimizer.zero_grad()
    loss.backward()
    optimizer.step()
    return float(loss.detach())


def _snapshot(g, d, cfg: TrainConfig, iteration: int) -> Path:
    directory = Path(cfg.snapshot_dir or Path(settings.OUTPUT_DIR) / "diverged")
    directory.mkdir(parents=True, exist_ok=True)
    save_checkpoint(g, directory / "generator.ckpt")
    save_checkpoint(d, directory / "discriminator.ckpt")
    (directory / "iteration.json").write_text(json.dumps({"iteration": iteration}))
    return directory


def train(
    g: NetworkInstance,
    d: NetworkInstance,
    data: WindowDataset,
    cfg: TrainConfig,
    evaluator: Optional[Evaluator] = None,
) -> TrainResult:
    """
    交替更新判別器 (d_steps 次) 與生成器 (g_steps 次)

    Args:
        g: 生成器
        d: 判別器
        data: 滾動視窗資料集
        cfg: 訓練設定
        evaluator: 每 eval_every 次迭代對抽樣路徑評分的函數

    Returns:
        TrainResult，網路回到 eval 模式

    Raises:
        ConfigurationError: 規格彼此不相容
        TrainingDivergedError: 損失出現非有限值；網路已寫入快照目錄
    """
    _check_compatible(g, d, data, cfg)
    generator = torch.Generator().manual_seed(cfg.seed)
    opt_g = torch.optim.Adam(g.parameters(), lr=cfg.lr_g, betas=cfg.betas)
    opt_d = torch.optim.Adam(d.parameters(), lr=cfg.lr_d, betas=cfg.betas)
    result = TrainResult(generator=g, discriminator=d)
    logger.info(
        f"Training {g.spec.family} on {len(data)} windows: "
        f"{cfg.iterations} iterations, batch {cfg.batch_size}, loss {cfg.loss.kind}"
    )

    g.train()
    d.train()
    try:
        for iteration in range(1, cfg.iterations + 1):
            penalties = []
            for _ in range(cfg.d_steps):
                loss_d, penalty = _discriminator_step(g, d, data, cfg, opt_d, generator)
                if penalty is not None:
                    penalties.append(penalty)
            for _ in range(cfg.g_steps):
                loss_g = _generator_step(g, d, cfg, opt_g, generator)

            if not (math.isfinite(loss_d) and math.isfinite(loss_g)):
                directory = _snapshot(g, d, cfg, iteration)
                logger.error(f"Training diverged at iteration {iteration}")
                raise TrainingDivergedError(
                    "non-finite loss",
                    {"iteration": iteration, "snapshot_dir": str(directory)},
                )

            record = TrainingRecord(
                iter=iteration,
                loss_G=loss_g,
                loss_D=loss_d,
                grad_penalty_mean=float(np.mean(penalties)) if penalties else None,
            )
            if evaluator and cfg.eval_every and iteration % cfg.eval_every == 0:
                record.scores = _evaluate(g, cfg, evaluator, iteration)
                result.evaluations.append(record.scores)
            result.history.append(record)

            if iteration % cfg.log_every == 0:
                logger.info(
                    f"iter {iteration}: loss_D={loss_d:.5f}, loss_G={loss_g:.5f}"
                )
    finally:
        g.eval()
        d.eval()
    return result


def _evaluate(g, cfg: TrainConfig, evaluator: Evaluator, iteration: int):
    g.eval()
    try:
        bundle = sample_paths(
            g,
            n_paths=cfg.eval_paths,
            length=cfg.eval_length or g.spec.l,
            seed=cfg.seed + iteration,
        )
        scores = evaluator(bundle)
    finally:
        g.train()
    logger.info(f"iter {iteration}: scores {scores}")
    return scores


def sample_paths(
    g: NetworkInstance,
    n_paths: int = settings.DEFAULT_N_PATHS,
    length: int = settings.DEFAULT_PATH_LENGTH,
    seed: int = settings.DEFAULT_SEED,
    batch_pieces: int = 256,
) -> PathBundle:
    """
    分段生成 N 條長度 T 的路徑

    雜訊串 (N, ⌈T/l⌉·l + f - 1, d_n) 一次抽出，第 k 段使用第 k·l 起
    長度 l + f - 1 的雜訊，相鄰段共用 f - 1 列，拼接後不會出現接縫。

    Raises:
        NetworkModeError: 生成器不在 eval 模式
    """
    if g.training:
        raise NetworkModeError("sampling requires the generator in eval mode")
    if n_paths < 1 or length < 1:
        raise ShapeError("n_paths and length must be positive")
    spec = g.spec
    n_pieces = math.ceil(length / spec.l)
    generator = torch.Generator().manual_seed(seed)
    noise = torch.randn(
        (n_paths, n_pieces * spec.l + spec.f - 1, spec.d_n),
        generator=generator,
        dtype=g.dtype,
    )
    pieces = noise.unfold(1, spec.noise_length(), spec.l).transpose(-1, -2)
    pieces = pieces.reshape(n_paths * n_pieces, spec.noise_length(), spec.d_n)

    outputs = []
    for start in range(0, pieces.shape[0], batch_pieces):
        chunk = TimeSeriesMatrix(pieces[start : start + batch_pieces])
        outputs.append(generate(g, chunk).values)
    paths = torch.cat(outputs).reshape(n_paths, n_pieces * spec.l, spec.d)
    bundle = PathBundle(
        paths[:, :length].numpy(),
        seed=seed,
        model_id=f"{spec.family}-seed{g.seed}",
    )
    logger.info(f"Sampled {n_paths} paths of length {length} ({n_pieces} pieces)")
    return bundle


def simulate_garch(
    n: int,
    omega: float = 1e-6,
    alpha: float = 0.1,
    beta: float = 0.88,
    seed: int = 0,
    burn_in: int = 500,
) -> np.ndarray:
    """
    GARCH(1,1) 對數報酬：x_t = σ_t ε_t，σ_t² = ω + α x_{t-1}² + β σ_{t-1}²

    預設參數的理論峰度約為 6。
    """
    if alpha + beta >= 1:
        raise ConfigurationError(
            "GARCH parameters must satisfy alpha + beta < 1",
            {"alpha": alpha, "beta": beta},
        )
    rng = np.random.default_rng(seed)
    shocks = rng.standard_normal(n + burn_in)
    out = np.empty(n + burn_in)
    variance = omega / (1.0 - alpha - beta)
    previous = 0.0
    for t, eps in enumerate(shocks):
        variance = omega + alpha * previous**2 + beta * variance
        previous = math.sqrt(variance) * eps
        out[t] = previous
    return out[burn_in:]


def write_history(records: List[TrainingRecord], path: Union[str, Path]) -> Path:
    """每筆紀錄一行 JSON"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        for record in records:
            handle.write(record.model_dump_json(exclude_none=True) + "\n")
    return path


def read_history(path: Union[str, Path]) -> List[TrainingRecord]:
    path = Path(path)
    records = []
    with path.open(encoding="utf-8") as handle:
        for number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                records.append(TrainingRecord.model_validate_json(line))
            except ValidationError as exc:
                raise DataFormatError(
                    "malformed history record", {"path": str(path), "line": number}
                ) from exc
    return records
