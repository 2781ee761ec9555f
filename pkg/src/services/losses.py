"""
GAN 損失服務

原始 GAN 損失 (生成器採用非飽和形式) 與 WGAN-GP 損失，
以及梯度懲罰所需的插值與梯度範數。
"""

from typing import Callable, Optional, Union

import torch
import torch.nn.functional as F

from src.core.exceptions import ConfigurationError, ShapeError
from src.models.series import TimeSeriesMatrix
from src.models.specs import LossConfig

Scores = Union[torch.Tensor, float]


def _as_tensor(value: Scores) -> torch.Tensor:
    if isinstance(value, torch.Tensor):
        return value
    return torch.as_tensor(value, dtype=torch.float64)


def generator_loss(d_f: Scores, cfg: LossConfig) -> torch.Tensor:
    """
    生成器損失

    Args:
        d_f: 判別器對生成樣本的輸出 (純量或批次)
        cfg: 損失設定

    Returns:
        original: mean(-ln σ(d_f))；wgan_gp: mean(-d_f)
    """
    d_f = _as_tensor(d_f)
    if cfg.kind == "original":
        # -ln σ(x) = ln(1 + e^{-x})
        return F.softplus(-d_f).mean()
    return (-d_f).mean()


def discriminator_loss(
    d_r: Scores,
    d_f: Scores,
    grad_norms: Optional[Scores] = None,
    cfg: Optional[LossConfig] = None,
) -> torch.Tensor:
    """
    判別器損失

    Args:
        d_r: 判別器對真實樣本的輸出
        d_f: 判別器對生成樣本的輸出
        grad_norms: 插值樣本的梯度範數 (僅 wgan_gp)
        cfg: 損失設定

    Returns:
        original: mean(-ln σ(d_r) - ln(1 - σ(d_f)))；
        wgan_gp: mean(-d_r + d_f + λ(‖g‖ - 1)²)

    Raises:
        ConfigurationError: wgan_gp 未提供梯度範數
    """
    cfg = cfg or LossConfig()
    d_r, d_f = _as_tensor(d_r), _as_tensor(d_f)
    if cfg.kind == "original":
        return (F.softplus(-d_r) + F.softplus(d_f)).mean()
    if grad_norms is None:
        raise ConfigurationError("wgan_gp discriminator loss needs gradient norms")
    penalty = gradient_penalty(_as_tensor(grad_norms))
    return (-d_r + d_f).mean() + cfg.gp_lambda * penalty


def gradient_penalty(grad_norms: torch.Tensor) -> torch.Tensor:
    """mean((‖g‖ - 1)²)"""
    return ((grad_norms - 1.0) ** 2).mean()


def gp_interpolate(x_real, y_fake, u: Scores):
    """
    (1 - u)·x + u·y，每個批次樣本各用一個 u

    x_real / y_fake 可為張量 (..., l, c) 或 TimeSeriesMatrix，回傳相同型別。
    """
    wrapped = isinstance(x_real, TimeSeriesMatrix)
    x = x_real.values if wrapped else x_real
    y = y_fake.values if isinstance(y_fake, TimeSeriesMatrix) else y_fake
    if x.shape != y.shape:
        raise ShapeError(
            "real and fake samples differ in shape",
            {"real": tuple(x.shape), "fake": tuple(y.shape)},
        )
    u = torch.as_tensor(u, dtype=x.dtype, device=x.device)
    # 批次維度上的 u 擴成 (..., 1, 1)
    u = u.reshape(u.shape + (1,) * (x.dim() - u.dim()))
    mixed = (1.0 - u) * x + u * y
    return TimeSeriesMatrix(mixed, x_real.time_offset) if wrapped else mixed


def gradient_norm(
    d: Callable[[torch.Tensor], torch.Tensor],
    x_tilde: Union[torch.Tensor, TimeSeriesMatrix],
    create_graph: bool = True,
) -> torch.Tensor:
    """
    判別器輸出對輸入的 Frobenius 梯度範數

    Args:
        d: 判別器 (任何把 (..., l, c) 映到 (...) 的可微分函數)
        x_tilde: 插值樣本；有批次維度時每個樣本各自計算
        create_graph: 保留計算圖，讓懲罰項能對判別器參數反向傳播

    Returns:
        每個樣本的梯度範數 (無批次維度時為純量)
    """
    x = x_tilde.values if isinstance(x_tilde, TimeSeriesMatrix) else x_tilde
    x = x.detach().requires_grad_(True)
    out = d(x)
    if not out.requires_grad:
        return torch.zeros(x.shape[:-2], dtype=x.dtype, device=x.device)
    (grad,) = torch.autograd.grad(
        outputs=out,
        inputs=x,
        grad_outputs=torch.ones_like(out),
        create_graph=create_graph,
        allow_unused=True,
    )
    if grad is None:
        grad = torch.zeros_like(x)
    flat = grad.reshape(grad.shape[:-2] + (-1,))
    return flat.norm(2, dim=-1)
