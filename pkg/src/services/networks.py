"""
網路組裝服務

把 layers 中的層組成 TAGAN / TTGAN 的生成器與判別器，並提供
生成、判別、輸入特徵擴充與 checkpoint 存取。
"""

from pathlib import Path
from typing import Dict, List, Union

import numpy as np
import torch
from torch import nn

from src.core.exceptions import DataFormatError, NetworkModeError, ShapeError
from src.core.logging import logger
from src.models.series import TimeSeriesMatrix
from src.models.specs import AugmentMode, DiscriminatorSpec, GeneratorSpec
from src.services.data_io import read_container, write_container
from src.services.layers import (
    Attention,
    CausalConv,
    Mlp,
    Norm,
    RegularConv,
    get_activation,
)

CHECKPOINT_MAGIC = b"TSGANCKP"
CHECKPOINT_VERSION = 1

Spec = Union[GeneratorSpec, DiscriminatorSpec]


def _crop(x: torch.Tensor, length: int) -> torch.Tensor:
    """保留最後 length 列，使不同長度的張量在時間上對齊"""
    return x[..., x.shape[-2] - length :, :]


class NetworkInstance(nn.Module):
    """生成器與判別器的共同基底：帶有規格與初始化種子"""

    role = "network"

    def __init__(self, spec: Spec):
        super().__init__()
        self.spec = spec
        self.seed = 0

    @property
    def dtype(self) -> torch.dtype:
        return next(self.parameters()).dtype


# ============================================================
# 生成器
# ============================================================


class CausalConvBlock(nn.Module):
    """norm → h → conv_c → norm → h → conv_c，加上裁切後的殘差"""

    def __init__(self, n_c: int, n_k: int, norm: str, activation: str, spectral: bool):
        super().__init__()
        self.norm1 = Norm(norm, n_c)
        self.conv1 = CausalConv(n_c, n_c, n_k, spectral)
        self.norm2 = Norm(norm, n_c)
        self.conv2 = CausalConv(n_c, n_c, n_k, spectral)
        self.act = get_activation(activation)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = self.conv1(self.act(self.norm1(x)))
        y = self.conv2(self.act(self.norm2(y)))
        return _crop(x, y.shape[-2]) + y


class TaganGenerator(NetworkInstance):
    """卷積區塊包夾一層因果注意力的生成器"""

    role = "generator"

    def __init__(self, spec: GeneratorSpec):
        super().__init__(spec)
        d_h, spectral = spec.d_h, spec.spectral_norm
        self.input = CausalConv(spec.d_n, d_h, 1, spectral)
        self.blocks_before = nn.ModuleList(
            CausalConvBlock(d_h, spec.n_k, spec.norm, spec.activation, spectral)
            for _ in range(spec.blocks_before)
        )
        self.attention_norm = Norm(spec.norm, d_h)
        self.attention = Attention(
            d_h,
            spec.n_a,
            spec.n_h,
            "causal",
            rfs=spec.attention_rfs,
            neg_large=spec.neg_large,
            spectral=spectral,
        )
        self.blocks_after = nn.ModuleList(
            CausalConvBlock(d_h, spec.n_k, spec.norm, spec.activation, spectral)
            for _ in range(spec.blocks_after)
        )
        n_skips = spec.blocks_before + 1 + spec.blocks_after
        self.skips = nn.ModuleList(
            CausalConv(d_h, d_h, 1, spectral) for _ in range(n_skips)
        )
        self.act = get_activation(spec.activation)
        self.output = CausalConv(d_h, spec.d, 1, spectral)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        h = self.input(z)
        skip_outputs: List[torch.Tensor] = []
        for block in self.blocks_before:
            h = block(h)
            skip_outputs.append(self.skips[len(skip_outputs)](h))
        a = self.attention(self.attention_norm(h))
        h = _crop(h, a.shape[-2]) + a
        skip_outputs.append(self.skips[len(skip_outputs)](h))
        for block in self.blocks_after:
            h = block(h)
            skip_outputs.append(self.skips[len(skip_outputs)](h))
        length = h.shape[-2]
        total = sum(_crop(s, length) for s in skip_outputs)
        return self.output(self.act(total))


class TtganGenerator(NetworkInstance):
    """因果注意力 + MLP 堆疊的生成器"""

    role = "generator"

    def __init__(self, spec: GeneratorSpec):
        super().__init__(spec)
        d_h, spectral = spec.d_h, spec.spectral_norm
        self.input = CausalConv(spec.d_n, d_h, 1, spectral)
        self.attention_norms = nn.ModuleList()
        self.attentions = nn.ModuleList()
        self.mlp_norms = nn.ModuleList()
        self.mlps = nn.ModuleList()
        self.skips = nn.ModuleList()
        for f_j in spec.per_layer_rfs:
            self.attention_norms.append(Norm(spec.norm, d_h))
            self.attentions.append(
                Attention(
                    d_h,
                    spec.n_a,
                    spec.n_h,
                    "causal",
                    rfs=f_j,
                    neg_large=spec.neg_large,
                    spectral=spectral,
                )
            )
            self.mlp_norms.append(Norm(spec.norm, d_h))
            self.mlps.append(Mlp(d_h, spec.n_m, spec.activation, spectral))
            self.skips.append(CausalConv(d_h, d_h, 1, spectral))
        self.output = CausalConv(d_h, spec.d, 1, spectral)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        h = self.input(z)
        skip_outputs: List[torch.Tensor] = []
        for j, attention in enumerate(self.attentions):
            a = attention(self.attention_norms[j](h))
            h = _crop(h, a.shape[-2]) + a
            h = h + self.mlps[j](self.mlp_norms[j](h))
            skip_outputs.append(self.skips[j](h))
        length = h.shape[-2]
        return self.output(sum(_crop(s, length) for s in skip_outputs))


# ============================================================
# 判別器
# ============================================================


class StridedConvBlock(nn.Module):
    """h → ζ1 (步長 1) → norm → h → ζ2 (步長 2) → norm，長度減半、通道增加"""

    def __init__(
        self,
        n_in: int,
        n_out: int,
        n_k: int,
        norm: str,
        activation: str,
        spectral: bool,
    ):
        super().__init__()
        self.conv1 = RegularConv(n_in, n_out, n_k, 1, spectral)
        self.norm1 = Norm(norm, n_out)
        self.conv2 = RegularConv(n_out, n_out, n_k, 2, spectral)
        self.norm2 = Norm(norm, n_out)
        self.act = get_activation(activation)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.norm1(self.conv1(self.act(x)))
        return self.norm2(self.conv2(self.act(x)))


class TaganDiscriminator(NetworkInstance):
    """卷積區塊包夾一層一般注意力，最後以加權總和輸出純量"""

    role = "discriminator"

    def __init__(self, spec: DiscriminatorSpec):
        super().__init__(spec)
        spectral = spec.spectral_norm
        channels = [spec.input_channels] + [
            spec.channel_at(j)
            for j in range(1, spec.blocks_before + spec.blocks_after + 1)
        ]
        blocks = [
            StridedConvBlock(
                channels[j - 1],
                channels[j],
                spec.n_k,
                spec.norm,
                spec.activation,
                spectral,
            )
            for j in range(1, len(channels))
        ]
        self.blocks_before = nn.ModuleList(blocks[: spec.blocks_before])
        self.blocks_after = nn.ModuleList(blocks[spec.blocks_before :])
        n_mid = channels[spec.blocks_before]
        self.attention_norm = Norm(spec.norm, n_mid)
        self.attention = Attention(
            n_mid,
            spec.n_a,
            spec.n_h,
            "regular",
            neg_large=spec.neg_large,
            spectral=spectral,
        )
        self.act = get_activation(spec.activation)
        self.head = nn.Parameter(torch.empty(spec.final_length, channels[-1]))
        bound = 1.0 / float(np.sqrt(spec.final_length * channels[-1]))
        nn.init.uniform_(self.head, -bound, bound)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for block in self.blocks_before:
            x = block(x)
        x = x + self.attention(self.attention_norm(x))
        for block in self.blocks_after:
            x = block(x)
        return (self.act(x) * self.head).sum(dim=(-2, -1))


class TtganDiscriminator(NetworkInstance):
    """稀疏注意力 + MLP 堆疊，輸出前 n_h 個通道在 l × n_h 上的加權總和"""

    role = "discriminator"

    def __init__(self, spec: DiscriminatorSpec):
        super().__init__(spec)
        d_h, spectral = spec.d_h, spec.spectral_norm
        self.input = RegularConv(spec.input_channels, d_h, 1, 1, spectral)
        self.attention_norms = nn.ModuleList()
        self.attentions = nn.ModuleList()
        self.mlp_norms = nn.ModuleList()
        self.mlps = nn.ModuleList()
        for _ in range(spec.n_layers):
            self.attention_norms.append(Norm(spec.norm, d_h))
            self.attentions.append(
                Attention(
                    d_h,
                    spec.n_a,
                    spec.n_h,
                    "sparse",
                    neg_large=spec.neg_large,
                    spectral=spectral,
                )
            )
            self.mlp_norms.append(Norm(spec.norm, d_h))
            self.mlps.append(Mlp(d_h, spec.n_m, spec.activation, spectral))
        self.head = nn.Parameter(torch.empty(spec.l, spec.n_h))
        bound = 1.0 / float(np.sqrt(spec.l * spec.n_h))
        nn.init.uniform_(self.head, -bound, bound)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.input(x)
        for j, attention in enumerate(self.attentions):
            h = h + attention(self.attention_norms[j](h))
            h = h + self.mlps[j](self.mlp_norms[j](h))
        n_h = self.head.shape[-1]
        return (h[..., :n_h] * self.head).sum(dim=(-2, -1))


# ============================================================
# 建構與使用
# ============================================================


def _build(cls, spec: Spec, seed: int) -> NetworkInstance:
    # 使用獨立的亂數狀態，相同 spec + seed 得到位元相同的參數
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        net = cls(spec)
    net.seed = seed
    net.eval()
    return net


def build_generator(spec: GeneratorSpec, seed: int = 0) -> NetworkInstance:
    """
    依規格建立生成器 (eval 模式)

    Args:
        spec: 生成器規格
        seed: 初始化種子

    Returns:
        生成器實例
    """
    cls = TaganGenerator if spec.family == "tagan" else TtganGenerator
    net = _build(cls, spec, seed)
    logger.info(
        f"Built {spec.family} generator: f={spec.f}, d_h={spec.d_h}, "
        f"parameters={count_parameters(net)}"
    )
    return net


def build_discriminator(spec: DiscriminatorSpec, seed: int = 0) -> NetworkInstance:
    """
    依規格建立判別器 (eval 模式)

    Args:
        spec: 判別器規格
        seed: 初始化種子

    Returns:
        判別器實例
    """
    cls = TaganDiscriminator if spec.family == "tagan" else TtganDiscriminator
    net = _build(cls, spec, seed)
    logger.info(
        f"Built {spec.family} discriminator: l={spec.l}, augment={spec.augment}, "
        f"parameters={count_parameters(net)}"
    )
    return net


def count_parameters(net: nn.Module) -> int:
    return sum(p.numel() for p in net.parameters())


def generate(g: NetworkInstance, noise: TimeSeriesMatrix) -> TimeSeriesMatrix:
    """
    由 (l' + f - 1) × d_n 的雜訊產生 l' × d 的序列

    Raises:
        NetworkModeError: 生成器不在 eval 模式
        ShapeError: 雜訊過短或通道數不符
    """
    spec: GeneratorSpec = g.spec
    if g.training:
        raise NetworkModeError("generation requires the generator in eval mode")
    if noise.n_c != spec.d_n:
        raise ShapeError(
            "noise channel count does not match the generator",
            {"n_c": noise.n_c, "d_n": spec.d_n},
        )
    if noise.n_l < spec.f:
        raise ShapeError(
            "noise shorter than the receptive field", {"n_l": noise.n_l, "f": spec.f}
        )
    with torch.no_grad():
        out = g(noise.values.to(g.dtype))
    return noise.shifted(out, spec.f - 1)


def discriminate(d: NetworkInstance, sample: TimeSeriesMatrix) -> torch.Tensor:
    """
    判別器輸出 (每個樣本一個純量，越大越像真實資料)

    sample 須已經過擴充，通道數為 d 或 2d。保留計算圖以便對輸入求梯度。
    """
    spec: DiscriminatorSpec = d.spec
    if sample.n_l != spec.l or sample.n_c != spec.input_channels:
        raise ShapeError(
            "sample shape does not match the discriminator",
            {
                "n_l": sample.n_l,
                "n_c": sample.n_c,
                "l": spec.l,
                "channels": spec.input_channels,
            },
        )
    return d(sample.values.to(d.dtype))


# ============================================================
# 特徵擴充
# ============================================================


def augment(x: torch.Tensor, mode: AugmentMode) -> torch.Tensor:
    """依模式擴充 (..., l, d) 張量：none / cumsum / returns"""
    if mode == "none":
        return x
    if mode == "cumsum":
        if x.shape[-1] != 1:
            raise ShapeError(
                "cumsum augmentation needs a single channel", {"n_c": int(x.shape[-1])}
            )
        return torch.cat([x, torch.cumsum(x, dim=-2)], dim=-1)
    if mode == "returns":
        diffs = x[..., 1:, :] - x[..., :-1, :]
        first = torch.zeros_like(x[..., :1, :])
        return torch.cat([x, torch.cat([first, diffs], dim=-2)], dim=-1)
    raise ShapeError(f"Unknown augment mode: {mode}")


def augment_cumsum(returns: TimeSeriesMatrix) -> TimeSeriesMatrix:
    """報酬率後接從 0 起算的累積對數價格"""
    return TimeSeriesMatrix(augment(returns.values, "cumsum"), returns.time_offset)


def augment_logvol_returns(surface: TimeSeriesMatrix) -> TimeSeriesMatrix:
    """對數波動率後接對數波動率報酬 (第一列為 0)"""
    return TimeSeriesMatrix(augment(surface.values, "returns"), surface.time_offset)


# ============================================================
# Checkpoint
# ============================================================


def save_checkpoint(net: NetworkInstance, path: Union[str, Path]) -> Path:
    """把規格、初始化種子與全部參數/緩衝區寫入 checkpoint 容器"""
    arrays: Dict[str, np.ndarray] = {
        name: tensor.detach().cpu().numpy() for name, tensor in net.state_dict().items()
    }
    header = {
        "format_version": CHECKPOINT_VERSION,
        "role": net.role,
        "seed": net.seed,
        "spec": net.spec.model_dump(mode="json"),
    }
    path = write_container(path, CHECKPOINT_MAGIC, header, arrays)
    logger.info(f"Saved {net.role} checkpoint to {path}")
    return path


def load_checkpoint(path: Union[str, Path]) -> NetworkInstance:
    """讀取 checkpoint 並重建網路 (eval 模式)"""
    header, arrays = read_container(path, CHECKPOINT_MAGIC)
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise DataFormatError(
            "unsupported checkpoint version",
            {"path": str(path), "version": header.get("format_version")},
        )
    role = header.get("role")
    if role == "generator":
        net = build_generator(GeneratorSpec(**header["spec"]), header["seed"])
    elif role == "discriminator":
        net = build_discriminator(DiscriminatorSpec(**header["spec"]), header["seed"])
    else:
        raise DataFormatError("unknown checkpoint role", {"role": role})
    state = net.state_dict()
    missing = set(state) - set(arrays)
    if missing:
        raise DataFormatError(
            "checkpoint is missing tensors", {"missing": sorted(missing)[:5]}
        )
    net.load_state_dict(
        {
            name: torch.from_numpy(arrays[name].copy()).to(state[name].dtype)
            for name in state
        }
    )
    net.eval()
    return net
