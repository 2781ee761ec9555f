"""
網路層服務

提供卷積、多頭注意力、MLP、正規化等可微分層。每種層有兩種用法：

- 函數式運算 (conv_causal, attention_sparse, ...)：輸入 TimeSeriesMatrix 與
  不可變的參數物件 (ConvParams, AttentionParams, MlpParams)，便於以
  naive 迴圈驗證。
- nn.Module 包裝 (CausalConv, Attention, ...)：持有可訓練參數，
  供 networks 組裝生成器與判別器；to_params() 匯出參數物件。

兩者共用同一組張量核心 (_conv_*_kernel, _attention_kernel, ...)。
張量佈局為 (..., n_l, n_c)，時間軸在倒數第二維。
"""

import math
from dataclasses import dataclass, field
from functools import partial
from typing import Callable, Dict, Literal, Optional

import torch
import torch.nn.functional as F
from torch import nn

from src.core.config import settings
from src.core.exceptions import ConfigurationError, ShapeError
from src.models.series import TimeSeriesMatrix

ConvKind = Literal["regular", "causal"]
AttentionKind = Literal["regular", "sparse", "causal"]

ACTIVATIONS: Dict[str, Callable[[torch.Tensor], torch.Tensor]] = {
    "identity": lambda x: x,
    "relu": F.relu,
    "leaky_relu": partial(F.leaky_relu, negative_slope=settings.LEAKY_SLOPE),
    "gelu": F.gelu,
    "tanh": torch.tanh,
}


def get_activation(tag: str) -> Callable[[torch.Tensor], torch.Tensor]:
    """依標籤取得激活函數"""
    try:
        return ACTIVATIONS[tag]
    except KeyError:
        raise ConfigurationError(
            f"Unknown activation tag: {tag}", {"known": sorted(ACTIVATIONS)}
        )


# ============================================================
# 參數物件
# ============================================================


@dataclass(frozen=True)
class ConvParams:
    """卷積層參數：weight (n_k, n_i, n_o)、bias (n_o)"""

    weight: torch.Tensor
    bias: torch.Tensor
    stride: int = 1
    kind: ConvKind = "causal"

    def __post_init__(self):
        if self.weight.dim() != 3:
            raise ShapeError(
                "conv weight must be n_k x n_i x n_o",
                {"shape": tuple(self.weight.shape)},
            )
        if self.bias.shape != (self.n_o,):
            raise ShapeError(
                "conv bias must have n_o entries",
                {"bias": tuple(self.bias.shape), "n_o": self.n_o},
            )
        if self.stride < 1:
            raise ConfigurationError(f"stride must be positive, got {self.stride}")
        if self.kind == "regular" and self.n_k % 2 == 0:
            raise ConfigurationError(
                f"regular convolution needs an odd kernel size, got {self.n_k}"
            )
        if self.kind == "causal" and self.stride != 1:
            raise ConfigurationError("causal convolution only supports stride 1")

    @property
    def n_k(self) -> int:
        return int(self.weight.shape[0])

    @property
    def n_i(self) -> int:
        return int(self.weight.shape[1])

    @property
    def n_o(self) -> int:
        return int(self.weight.shape[2])


@dataclass(frozen=True)
class AttentionParams:
    """多頭注意力參數"""

    wq: torch.Tensor
    wk: torch.Tensor
    wv: torch.Tensor
    wo: torch.Tensor
    bq: torch.Tensor
    bk: torch.Tensor
    bv: torch.Tensor
    bo: torch.Tensor
    n_h: int
    kind: AttentionKind = "regular"
    rfs: Optional[int] = None
    neg_large: float = settings.NEG_LARGE

    def __post_init__(self):
        n_i, n_a = self.n_i, self.n_a
        for name in ("wq", "wk", "wv"):
            if tuple(getattr(self, name).shape) != (n_i, n_a):
                raise ShapeError(f"{name} must be n_i x n_a", {"n_i": n_i, "n_a": n_a})
        if tuple(self.wo.shape) != (n_a, n_i):
            raise ShapeError("wo must be n_a x n_i", {"n_i": n_i, "n_a": n_a})
        for name in ("bq", "bk", "bv"):
            if tuple(getattr(self, name).shape) != (n_a,):
                raise ShapeError(f"{name} must have n_a entries", {"n_a": n_a})
        if tuple(self.bo.shape) != (n_i,):
            raise ShapeError("bo must have n_i entries", {"n_i": n_i})
        if self.n_h < 1 or n_a % self.n_h != 0:
            raise ConfigurationError(
                "attention hidden size must be divisible by the head count",
                {"n_a": n_a, "n_h": self.n_h},
            )
        if self.kind == "sparse" and self.n_h % 4 != 0:
            raise ConfigurationError(
                "sparse attention needs a multiple of 4 heads", {"n_h": self.n_h}
            )
        if self.kind == "causal" and (self.rfs is None or self.rfs < 1):
            raise ConfigurationError("causal attention needs rfs >= 1")
        if self.neg_large <= 0:
            raise ConfigurationError("neg_large must be positive")

    @property
    def n_i(self) -> int:
        return int(self.wq.shape[0])

    @property
    def n_a(self) -> int:
        return int(self.wq.shape[1])


@dataclass(frozen=True)
class MlpParams:
    """MLP 區塊參數：w1 (n_i, n_m)、w2 (n_m, n_i)"""

    w1: torch.Tensor
    b1: torch.Tensor
    w2: torch.Tensor
    b2: torch.Tensor
    activation: str = "gelu"

    def __post_init__(self):
        n_i, n_m = self.w1.shape
        if tuple(self.w2.shape) != (n_m, n_i):
            raise ShapeError("w2 must be n_m x n_i", {"n_i": n_i, "n_m": n_m})
        if tuple(self.b1.shape) != (n_m,) or tuple(self.b2.shape) != (n_i,):
            raise ShapeError("MLP bias sizes must be n_m and n_i")
        get_activation(self.activation)

    @property
    def n_i(self) -> int:
        return int(self.w1.shape[0])


@dataclass
class NormState:
    """正規化狀態 (單一寫入者)"""

    kind: Literal["batch", "layer", "spectral"]
    mode: Literal["train", "eval"] = "train"
    running_mean: Optional[torch.Tensor] = None
    running_var: Optional[torch.Tensor] = None
    weight: Optional[torch.Tensor] = None
    bias: Optional[torch.Tensor] = None
    power_iter_vector: Optional[torch.Tensor] = None
    right_vector: Optional[torch.Tensor] = None
    momentum: float = settings.BATCH_NORM_MOMENTUM
    eps: float = field(default=settings.BATCH_NORM_EPS)

    @classmethod
    def batch(cls, n_c: int, dtype=torch.float64) -> "NormState":
        return cls(
            kind="batch",
            running_mean=torch.zeros(n_c, dtype=dtype),
            running_var=torch.ones(n_c, dtype=dtype),
            weight=torch.ones(n_c, dtype=dtype),
            bias=torch.zeros(n_c, dtype=dtype),
        )

    @classmethod
    def spectral(cls, n_rows: int, seed: int = 0, dtype=torch.float64) -> "NormState":
        generator = torch.Generator().manual_seed(seed)
        u = torch.randn(n_rows, generator=generator, dtype=dtype)
        return cls(
            kind="spectral",
            power_iter_vector=u / u.norm(),
            eps=settings.SPECTRAL_EPS,
        )


# ============================================================
# 張量核心
# ============================================================


def _check_channels(x: torch.Tensor, n_i: int) -> None:
    if x.shape[-1] != n_i:
        raise ShapeError(
            "input channel count does not match the layer",
            {"n_c": int(x.shape[-1]), "n_i": n_i},
        )


def _conv_regular_kernel(
    x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor, stride: int
) -> torch.Tensor:
    _check_channels(x, weight.shape[1])
    n_l, n_k = x.shape[-2], weight.shape[0]
    n_out = n_l // stride
    if n_out < 1:
        raise ShapeError("input shorter than stride", {"n_l": n_l, "stride": stride})
    # 0 起算的取樣位置 s*i + k - (n_k-1)/2，超出範圍者複製首/尾列
    rows = torch.arange(n_out, device=x.device).unsqueeze(1) * stride
    taps = torch.arange(n_k, device=x.device).unsqueeze(0) - (n_k - 1) // 2
    index = (rows + taps).clamp(0, n_l - 1)
    gathered = x[..., index, :]
    return torch.einsum("...tki,kio->...to", gathered, weight) + bias


def _conv_causal_kernel(
    x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor
) -> torch.Tensor:
    _check_channels(x, weight.shape[1])
    n_l, n_k = x.shape[-2], weight.shape[0]
    if n_l < n_k:
        raise ShapeError("input shorter than kernel", {"n_l": n_l, "n_k": n_k})
    windows = x.unfold(-2, n_k, 1)
    return torch.einsum("...tik,kio->...to", windows, weight) + bias


def masked_softmax(logits: torch.Tensor, additive_mask: Optional[torch.Tensor] = None):
    """
    沿最後一維的 softmax，先加上遮罩再減去列最大值

    Args:
        logits: 任意形狀的分數張量
        additive_mask: 可廣播的加性遮罩 (允許處為 0，遮蔽處為 -L)

    Returns:
        每列總和為 1 的權重
    """
    z = logits if additive_mask is None else logits + additive_mask
    z = z - z.amax(dim=-1, keepdim=True).detach()
    e = torch.exp(z)
    return e / e.sum(dim=-1, keepdim=True)


def _split_heads(x: torch.Tensor, n_h: int) -> torch.Tensor:
    # (..., n_l, n_a) -> (..., n_h, n_l, n_a / n_h)；第 i 個頭取第 i 段連續欄位
    shape = x.shape[:-1] + (n_h, x.shape[-1] // n_h)
    return x.reshape(shape).transpose(-2, -3)


def _merge_heads(x: torch.Tensor) -> torch.Tensor:
    x = x.transpose(-2, -3)
    return x.reshape(x.shape[:-2] + (x.shape[-2] * x.shape[-1],))


def _attention_kernel(
    x: torch.Tensor,
    wq: torch.Tensor,
    wk: torch.Tensor,
    wv: torch.Tensor,
    wo: torch.Tensor,
    bq: torch.Tensor,
    bk: torch.Tensor,
    bv: torch.Tensor,
    bo: torch.Tensor,
    n_h: int,
    additive_mask: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    _check_channels(x, wq.shape[0])
    q = _split_heads(x @ wq + bq, n_h)
    k = _split_heads(x @ wk + bk, n_h)
    v = _split_heads(x @ wv + bv, n_h)
    # 不做 1/sqrt(n_a/n_h) 縮放
    weights = masked_softmax(q @ k.transpose(-1, -2), additive_mask)
    return _merge_heads(weights @ v) @ wo + bo


def _causal_attention_kernel(
    x: torch.Tensor,
    wq: torch.Tensor,
    wk: torch.Tensor,
    wv: torch.Tensor,
    wo: torch.Tensor,
    bq: torch.Tensor,
    bk: torch.Tensor,
    bv: torch.Tensor,
    bo: torch.Tensor,
    n_h: int,
    rfs: int,
) -> torch.Tensor:
    _check_channels(x, wq.shape[0])
    n_l = x.shape[-2]
    if n_l < rfs:
        raise ShapeError("input shorter than rfs", {"n_l": n_l, "rfs": rfs})
    # 只計算第 rfs-1 列之後的輸出，每列只看帶狀範圍內的 rfs 個鍵
    q = _split_heads(x[..., rfs - 1 :, :] @ wq + bq, n_h)
    k = _split_heads(x @ wk + bk, n_h).unfold(-2, rfs, 1)
    v = _split_heads(x @ wv + bv, n_h).unfold(-2, rfs, 1)
    # q: (..., n_h, n_out, e)  k, v: (..., n_h, n_out, e, rfs)
    scores = torch.einsum("...te,...tej->...tj", q, k)
    weights = masked_softmax(scores)
    out = torch.einsum("...tj,...tej->...te", weights, v)
    return _merge_heads(out) @ wo + bo


def _mlp_kernel(
    x: torch.Tensor,
    w1: torch.Tensor,
    b1: torch.Tensor,
    w2: torch.Tensor,
    b2: torch.Tensor,
    activation: Callable[[torch.Tensor], torch.Tensor],
) -> torch.Tensor:
    _check_channels(x, w1.shape[0])
    return activation(x @ w1 + b1) @ w2 + b2


def _batch_norm_kernel(
    x: torch.Tensor,
    running_mean: torch.Tensor,
    running_var: torch.Tensor,
    weight: Optional[torch.Tensor],
    bias: Optional[torch.Tensor],
    training: bool,
    momentum: float,
    eps: float,
) -> torch.Tensor:
    batch = int(x.shape[:-2].numel()) if x.dim() > 2 else 1
    if training and batch < 2:
        raise ShapeError("batch normalization in train mode needs batch size >= 2")
    flat = x.reshape((-1,) + tuple(x.shape[-2:])).transpose(1, 2)
    out = F.batch_norm(
        flat, running_mean, running_var, weight, bias, training, momentum, eps
    )
    return out.transpose(1, 2).reshape(x.shape)


def _power_iteration(
    matrix: torch.Tensor,
    u: torch.Tensor,
    v: Optional[torch.Tensor],
    update: bool,
    eps: float,
):
    """回傳 (sigma, u, v)；update 時做一次冪迭代並原地寫回 u, v"""
    with torch.no_grad():
        if update or v is None:
            v_new = F.normalize(matrix.t() @ u, dim=0, eps=eps)
            u_raw = matrix @ v_new
            if float(u_raw.norm()) > eps:
                u_new = u_raw / u_raw.norm()
            else:
                u_new = u.clone()
            if update:
                u.copy_(u_new)
                if v is not None:
                    v.copy_(v_new)
            u_used, v_used = u_new, v_new
        else:
            u_used, v_used = u, v
    sigma = torch.dot(u_used, matrix @ v_used)
    return sigma.clamp_min(eps), u_used, v_used


def _as_matrix(weight: torch.Tensor) -> torch.Tensor:
    # 卷積權重 (n_k, n_i, n_o) 視為 (n_o, n_k * n_i) 矩陣
    if weight.dim() == 3:
        return weight.reshape(-1, weight.shape[-1]).t()
    return weight


# ============================================================
# 函數式運算
# ============================================================


def conv_regular(input: TimeSeriesMatrix, p: ConvParams) -> TimeSeriesMatrix:
    """
    一般卷積 (same padding，邊界複製)

    Args:
        input: n_l × n_i 的輸入
        p: kind 為 regular 的卷積參數

    Returns:
        ⌊n_l/s⌋ × n_o 的輸出
    """
    if p.kind != "regular":
        raise ConfigurationError("conv_regular needs regular ConvParams")
    out = _conv_regular_kernel(input.values, p.weight, p.bias, p.stride)
    return TimeSeriesMatrix(out, input.time_offset)


def conv_causal(input: TimeSeriesMatrix, p: ConvParams) -> TimeSeriesMatrix:
    """
    因果卷積，不補值；輸出第 t 列只依賴輸入第 t-n_k+1..t 列

    Returns:
        (n_l - n_k + 1) × n_o 的輸出，time_offset 前移 n_k - 1
    """
    if p.kind != "causal":
        raise ConfigurationError("conv_causal needs causal ConvParams")
    out = _conv_causal_kernel(input.values, p.weight, p.bias)
    return input.shifted(out, p.n_k - 1)


def build_sparse_masks(n_l: int) -> torch.Tensor:
    """
    建立四種稀疏遮罩 S1..S4 (True 表示允許注意)

    索引為 1 起算，步長 s = ⌊√n_l⌋：
    S1 同區塊且 i ≥ j；S2 同區塊且 i ≤ j；
    S3 mod(j, s) = 0 或 i = j；S4 mod(j, s) = 1 或 i = j。

    Returns:
        形狀 (4, n_l, n_l) 的布林張量
    """
    if n_l < 1:
        raise ShapeError("mask length must be positive", {"n_l": n_l})
    s = math.isqrt(n_l)
    idx = torch.arange(1, n_l + 1)
    i, j = idx.unsqueeze(1), idx.unsqueeze(0)
    same_block = (i - 1) // s == (j - 1) // s
    diagonal = i == j
    return torch.stack(
        [
            same_block & (i >= j),
            same_block & (i <= j),
            (j % s == 0) | diagonal,
            (j % s == 1) | diagonal,
        ]
    )


def sparse_head_mask(
    n_l: int, n_h: int, neg_large: float, dtype=torch.float64, device=None
) -> torch.Tensor:
    """第 h 個頭 (0 起算) 使用 S_{h mod 4}，轉成 (n_h, n_l, n_l) 加性遮罩"""
    allowed = build_sparse_masks(n_l).to(device)
    per_head = allowed[torch.arange(n_h) % 4]
    zeros = torch.zeros((), dtype=dtype, device=device)
    return torch.where(per_head, zeros, zeros - neg_large)


def attention_regular(input: TimeSeriesMatrix, p: AttentionParams) -> TimeSeriesMatrix:
    """一般多頭注意力，softmax 沿列計算且不縮放"""
    if p.kind != "regular":
        raise ConfigurationError("attention_regular needs regular AttentionParams")
    out = _attention_kernel(
        input.values, p.wq, p.wk, p.wv, p.wo, p.bq, p.bk, p.bv, p.bo, p.n_h
    )
    return TimeSeriesMatrix(out, input.time_offset)


def attention_sparse(input: TimeSeriesMatrix, p: AttentionParams) -> TimeSeriesMatrix:
    """稀疏多頭注意力，遮蔽位置加上 -L"""
    if p.kind != "sparse":
        raise ConfigurationError("attention_sparse needs sparse AttentionParams")
    mask = sparse_head_mask(
        input.n_l, p.n_h, p.neg_large, input.values.dtype, input.values.device
    )
    out = _attention_kernel(
        input.values, p.wq, p.wk, p.wv, p.wo, p.bq, p.bk, p.bv, p.bo, p.n_h, mask
    )
    return TimeSeriesMatrix(out, input.time_offset)


def attention_causal(input: TimeSeriesMatrix, p: AttentionParams) -> TimeSeriesMatrix:
    """
    因果多頭注意力

    帶狀遮罩下第 i 列只注意 i-n_f+1..i 列，輸出保留第 n_f..n_l 列。
    帶狀外的位置直接不參與計算，因此輸出與未來輸入位元級無關。
    """
    if p.kind != "causal":
        raise ConfigurationError("attention_causal needs causal AttentionParams")
    out = _causal_attention_kernel(
        input.values, p.wq, p.wk, p.wv, p.wo, p.bq, p.bk, p.bv, p.bo, p.n_h, p.rfs
    )
    return input.shifted(out, p.rfs - 1)


def mlp_block(input: TimeSeriesMatrix, p: MlpParams) -> TimeSeriesMatrix:
    """O = h(I·w1 + b1)·w2 + b2"""
    out = _mlp_kernel(
        input.values, p.w1, p.b1, p.w2, p.b2, get_activation(p.activation)
    )
    return TimeSeriesMatrix(out, input.time_offset)


def batch_norm(input: TimeSeriesMatrix, state: NormState) -> TimeSeriesMatrix:
    """
    批次正規化：train 模式以 (批次 × 時間) 統計量正規化並更新 running 統計量，
    eval 模式使用凍結的統計量

    Raises:
        ShapeError: train 模式下批次大小為 1
    """
    if state.kind != "batch":
        raise ConfigurationError("batch_norm needs a batch NormState")
    out = _batch_norm_kernel(
        input.values,
        state.running_mean,
        state.running_var,
        state.weight,
        state.bias,
        state.mode == "train",
        state.momentum,
        state.eps,
    )
    return TimeSeriesMatrix(out, input.time_offset)


def layer_norm(
    input: TimeSeriesMatrix,
    weight: Optional[torch.Tensor] = None,
    bias: Optional[torch.Tensor] = None,
    eps: float = settings.BATCH_NORM_EPS,
) -> TimeSeriesMatrix:
    """每個時間步各自跨通道正規化"""
    out = F.layer_norm(input.values, (input.n_c,), weight, bias, eps)
    return TimeSeriesMatrix(out, input.time_offset)


def spectral_normalize(weight: torch.Tensor, state: NormState) -> torch.Tensor:
    """
    以冪迭代估計最大奇異值 σ̂ 並回傳 W / σ̂

    train 模式每次呼叫做一次冪迭代並原地更新 state；σ̂ 下限為 eps，
    因此零矩陣回傳零矩陣。
    """
    if state.kind != "spectral" or state.power_iter_vector is None:
        raise ConfigurationError("spectral_normalize needs a spectral NormState")
    matrix = _as_matrix(weight)
    if matrix.shape[0] != state.power_iter_vector.shape[0]:
        raise ShapeError(
            "power iteration vector does not match the weight rows",
            {"rows": int(matrix.shape[0]), "u": int(state.power_iter_vector.shape[0])},
        )
    if state.right_vector is None:
        state.right_vector = F.normalize(
            matrix.detach().t() @ state.power_iter_vector, dim=0, eps=state.eps
        )
    sigma, _, _ = _power_iteration(
        matrix,
        state.power_iter_vector,
        state.right_vector,
        state.mode == "train",
        state.eps,
    )
    return weight / sigma


# ============================================================
# nn.Module 包裝
# ============================================================


class SpectralLayer(nn.Module):
    """持有權重並可選擇性套用譜正規化的層基底類別"""

    def __init__(self, spectral: bool = False):
        super().__init__()
        self.spectral = spectral
        self._spectral_names = []

    def register_weight(self, name: str, param: nn.Parameter) -> None:
        self.register_parameter(name, param)
        if self.spectral:
            rows, cols = _as_matrix(param.data).shape
            self.register_buffer(f"{name}_u", F.normalize(torch.ones(rows), dim=0))
            self.register_buffer(f"{name}_v", F.normalize(torch.ones(cols), dim=0))
            self._spectral_names.append(name)

    def reset_power_vectors(self, warmup: int = 15) -> None:
        """以目前的亂數狀態重設冪迭代向量，並預先迭代 warmup 次"""
        for name in self._spectral_names:
            u = getattr(self, f"{name}_u")
            v = getattr(self, f"{name}_v")
            matrix = _as_matrix(getattr(self, name).detach())
            with torch.no_grad():
                u.copy_(F.normalize(torch.randn_like(u), dim=0))
                v.copy_(F.normalize(torch.randn_like(v), dim=0))
            for _ in range(warmup):
                _power_iteration(matrix, u, v, True, settings.SPECTRAL_EPS)

    def weight_of(self, name: str) -> torch.Tensor:
        weight = getattr(self, name)
        if not self.spectral:
            return weight
        sigma, _, _ = _power_iteration(
            _as_matrix(weight),
            getattr(self, f"{name}_u"),
            getattr(self, f"{name}_v"),
            self.training,
            settings.SPECTRAL_EPS,
        )
        return weight / sigma


class CausalConv(SpectralLayer):
    """因果卷積層"""

    def __init__(self, n_i: int, n_o: int, n_k: int = 1, spectral: bool = False):
        super().__init__(spectral)
        self.n_k = n_k
        self.register_weight("weight", nn.Parameter(torch.empty(n_k, n_i, n_o)))
        self.bias = nn.Parameter(torch.empty(n_o))
        self.reset_parameters()

    def reset_parameters(self) -> None:
        bound = 1.0 / math.sqrt(self.weight.shape[0] * self.weight.shape[1])
        nn.init.uniform_(self.weight, -bound, bound)
        nn.init.uniform_(self.bias, -bound, bound)
        self.reset_power_vectors()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return _conv_causal_kernel(x, self.weight_of("weight"), self.bias)

    def to_params(self) -> ConvParams:
        return ConvParams(self.weight_of("weight").detach(), self.bias.detach())


class RegularConv(SpectralLayer):
    """一般卷積層 (邊界複製，步長 s)"""

    def __init__(
        self, n_i: int, n_o: int, n_k: int = 3, stride: int = 1, spectral: bool = False
    ):
        super().__init__(spectral)
        if n_k % 2 == 0:
            raise ConfigurationError(
                f"regular convolution needs an odd kernel size, got {n_k}"
            )
        self.stride = stride
        self.register_weight("weight", nn.Parameter(torch.empty(n_k, n_i, n_o)))
        self.bias = nn.Parameter(torch.empty(n_o))
        self.reset_parameters()

    def reset_parameters(self) -> None:
        bound = 1.0 / math.sqrt(self.weight.shape[0] * self.weight.shape[1])
        nn.init.uniform_(self.weight, -bound, bound)
        nn.init.uniform_(self.bias, -bound, bound)
        self.reset_power_vectors()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return _conv_regular_kernel(x, self.weight_of("weight"), self.bias, self.stride)

    def to_params(self) -> ConvParams:
        return ConvParams(
            self.weight_of("weight").detach(),
            self.bias.detach(),
            self.stride,
            "regular",
        )


class Attention(SpectralLayer):
    """多頭注意力層 (regular / sparse / causal)"""

    def __init__(
        self,
        n_i: int,
        n_a: int,
        n_h: int,
        kind: AttentionKind = "regular",
        rfs: Optional[int] = None,
        neg_large: float = settings.NEG_LARGE,
        spectral: bool = False,
    ):
        super().__init__(spectral)
        if n_a % n_h != 0:
            raise ConfigurationError(
                "attention hidden size must be divisible by the head count",
                {"n_a": n_a, "n_h": n_h},
            )
        if kind == "sparse" and n_h % 4 != 0:
            raise ConfigurationError(
                "sparse attention needs a multiple of 4 heads", {"n_h": n_h}
            )
        if kind == "causal" and (rfs is None or rfs < 1):
            raise ConfigurationError("causal attention needs rfs >= 1")
        self.n_h = n_h
        self.kind = kind
        self.rfs = rfs
        self.neg_large = neg_large
        for name in ("wq", "wk", "wv"):
            self.register_weight(name, nn.Parameter(torch.empty(n_i, n_a)))
        self.register_weight("wo", nn.Parameter(torch.empty(n_a, n_i)))
        for name in ("bq", "bk", "bv"):
            self.register_parameter(name, nn.Parameter(torch.empty(n_a)))
        self.bo = nn.Parameter(torch.empty(n_i))
        self._mask_cache: Dict[tuple, torch.Tensor] = {}
        self.reset_parameters()

    def reset_parameters(self) -> None:
        for name in ("wq", "wk", "wv", "wo"):
            nn.init.orthogonal_(getattr(self, name))
        for name in ("bq", "bk", "bv", "bo"):
            nn.init.zeros_(getattr(self, name))
        self.reset_power_vectors()

    def _weights(self):
        return (
            self.weight_of("wq"),
            self.weight_of("wk"),
            self.weight_of("wv"),
            self.weight_of("wo"),
        )

    def _sparse_mask(self, n_l: int, x: torch.Tensor) -> torch.Tensor:
        key = (n_l, x.dtype, x.device)
        if key not in self._mask_cache:
            self._mask_cache[key] = sparse_head_mask(
                n_l, self.n_h, self.neg_large, x.dtype, x.device
            )
        return self._mask_cache[key]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        wq, wk, wv, wo = self._weights()
        biases = (self.bq, self.bk, self.bv, self.bo)
        if self.kind == "causal":
            return _causal_attention_kernel(
                x, wq, wk, wv, wo, *biases, self.n_h, self.rfs
            )
        mask = self._sparse_mask(x.shape[-2], x) if self.kind == "sparse" else None
        return _attention_kernel(x, wq, wk, wv, wo, *biases, self.n_h, mask)

    def to_params(self) -> AttentionParams:
        wq, wk, wv, wo = (w.detach() for w in self._weights())
        return AttentionParams(
            wq,
            wk,
            wv,
            wo,
            self.bq.detach(),
            self.bk.detach(),
            self.bv.detach(),
            self.bo.detach(),
            self.n_h,
            self.kind,
            self.rfs,
            self.neg_large,
        )


class Mlp(SpectralLayer):
    """MLP 區塊"""

    def __init__(self, n_i: int, n_m: int, activation: str = "gelu", spectral=False):
        super().__init__(spectral)
        self.activation = activation
        self._act = get_activation(activation)
        self.register_weight("w1", nn.Parameter(torch.empty(n_i, n_m)))
        self.register_weight("w2", nn.Parameter(torch.empty(n_m, n_i)))
        self.b1 = nn.Parameter(torch.empty(n_m))
        self.b2 = nn.Parameter(torch.empty(n_i))
        self.reset_parameters()

    def reset_parameters(self) -> None:
        for weight, bias in ((self.w1, self.b1), (self.w2, self.b2)):
            bound = 1.0 / math.sqrt(weight.shape[0])
            nn.init.uniform_(weight, -bound, bound)
            nn.init.uniform_(bias, -bound, bound)
        self.reset_power_vectors()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return _mlp_kernel(
            x, self.weight_of("w1"), self.b1, self.weight_of("w2"), self.b2, self._act
        )

    def to_params(self) -> MlpParams:
        return MlpParams(
            self.weight_of("w1").detach(),
            self.b1.detach(),
            self.weight_of("w2").detach(),
            self.b2.detach(),
            self.activation,
        )


class Norm(nn.Module):
    """正規化層 (batch / layer / none)"""

    def __init__(self, kind: str, n_c: int):
        super().__init__()
        if kind not in ("batch", "layer", "none"):
            raise ConfigurationError(f"Unknown norm kind: {kind}")
        self.kind = kind
        self.n_c = n_c
        if kind != "none":
            self.weight = nn.Parameter(torch.ones(n_c))
            self.bias = nn.Parameter(torch.zeros(n_c))
        if kind == "batch":
            self.register_buffer("running_mean", torch.zeros(n_c))
            self.register_buffer("running_var", torch.ones(n_c))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if self.kind == "none":
            return x
        if self.kind == "layer":
            return F.layer_norm(
                x, (self.n_c,), self.weight, self.bias, settings.BATCH_NORM_EPS
            )
        return _batch_norm_kernel(
            x,
            self.running_mean,
            self.running_var,
            self.weight,
            self.bias,
            self.training,
            settings.BATCH_NORM_MOMENTUM,
            settings.BATCH_NORM_EPS,
        )

    def norm_state(self) -> NormState:
        if self.kind != "batch":
            raise ConfigurationError("only batch norm layers export a NormState")
        return NormState(
            kind="batch",
            mode="train" if self.training else "eval",
            running_mean=self.running_mean,
            running_var=self.running_var,
            weight=self.weight.detach(),
            bias=self.bias.detach(),
        )
