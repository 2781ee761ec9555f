"""
網路規格與訓練設定模型
"""

from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, Field, model_validator

from src.core.config import settings

Family = Literal["tagan", "ttgan"]
Activation = Literal["identity", "relu", "leaky_relu", "gelu", "tanh"]
NormKind = Literal["batch", "layer", "none"]
AugmentMode = Literal["none", "cumsum", "returns"]
DataKind = Literal["index", "surface"]


def split_rfs(f: int, n_layers: int) -> List[int]:
    """把總 RFS 平均分配到各注意力層，滿足 f - 1 = Σ(f_j - 1)"""
    if n_layers < 1:
        raise ValueError("n_layers must be positive")
    shrink = f - 1
    base, extra = divmod(shrink, n_layers)
    return [base + 1 + (1 if j < extra else 0) for j in range(n_layers)]


def default_activation(family: str) -> str:
    return "leaky_relu" if family == "tagan" else "gelu"


class GeneratorSpec(BaseModel):
    """生成器規格 (TAGAN / TTGAN)"""

    family: Family = Field(..., description="Network family")
    l: int = Field(128, description="Data length", ge=1)
    f: int = Field(127, description="Total receptive field size", ge=1)
    d_n: int = Field(3, description="Noise channels", ge=1)
    d: int = Field(1, description="Data channels", ge=1)
    d_h: int = Field(64, description="Hidden channels", ge=1)
    n_k: int = Field(3, description="Causal kernel size (tagan)", ge=1)
    blocks_before: int = Field(3, description="Conv blocks before attention", ge=0)
    blocks_after: int = Field(3, description="Conv blocks after attention", ge=0)
    n_layers: int = Field(5, description="Attention layers (ttgan)", ge=1)
    per_layer_rfs: Optional[List[int]] = Field(
        None, description="RFS of each causal attention layer (ttgan)"
    )
    n_h: int = Field(4, description="Attention heads", ge=1)
    n_a: int = Field(64, description="Attention hidden size", ge=1)
    n_m: int = Field(128, description="MLP hidden size (ttgan)", ge=1)
    activation: Optional[Activation] = Field(None, description="Activation tag")
    norm: NormKind = Field("batch", description="Normalization kind")
    spectral_norm: bool = Field(True, description="Spectral-normalize weights")
    neg_large: float = Field(settings.NEG_LARGE, description="Mask magnitude L", gt=0)

    @model_validator(mode="after")
    def check_invariants(self) -> "GeneratorSpec":
        if self.activation is None:
            self.activation = default_activation(self.family)
        if self.n_a % self.n_h != 0:
            raise ValueError(
                f"attention hidden size {self.n_a} is not divisible by "
                f"{self.n_h} heads"
            )
        if self.family == "tagan":
            if self.attention_rfs < 1:
                raise ValueError(
                    "inconsistent RFS budget: f - 2(L1+L2)(n_k-1) = "
                    f"{self.attention_rfs} < 1"
                )
        else:
            if self.per_layer_rfs is None:
                self.per_layer_rfs = split_rfs(self.f, self.n_layers)
            if len(self.per_layer_rfs) != self.n_layers:
                raise ValueError(
                    f"per_layer_rfs has {len(self.per_layer_rfs)} entries, "
                    f"expected {self.n_layers}"
                )
            if any(f_j < 1 for f_j in self.per_layer_rfs):
                raise ValueError("every per-layer RFS must be >= 1")
            if sum(f_j - 1 for f_j in self.per_layer_rfs) != self.f - 1:
                raise ValueError(
                    "inconsistent RFS budget: f - 1 != sum(f_j - 1) for "
                    f"f={self.f}, per_layer_rfs={self.per_layer_rfs}"
                )
        return self

    @property
    def attention_rfs(self) -> int:
        """TAGAN 中間注意力層的 RFS"""
        return self.f - 2 * (self.blocks_before + self.blocks_after) * (self.n_k - 1)

    def noise_length(self, l: Optional[int] = None) -> int:
        return (self.l if l is None else l) + self.f - 1


class DiscriminatorSpec(BaseModel):
    """判別器規格 (TAGAN / TTGAN)"""

    family: Family = Field(..., description="Network family")
    l: int = Field(128, description="Data length", ge=1)
    d: int = Field(1, description="Data channels before augmentation", ge=1)
    d_s: int = Field(32, description="Start hidden channel (tagan)", ge=1)
    d_m: int = Field(128, description="Max hidden channel (tagan)", ge=1)
    n_k: int = Field(3, description="Regular kernel size (tagan)", ge=1)
    blocks_before: int = Field(2, description="Conv blocks before attention", ge=0)
    blocks_after: int = Field(2, description="Conv blocks after attention", ge=0)
    n_layers: int = Field(3, description="Sparse attention layers (ttgan)", ge=1)
    d_h: int = Field(64, description="Hidden channels (ttgan)", ge=1)
    n_a: int = Field(64, description="Attention hidden size", ge=1)
    n_h: int = Field(4, description="Attention heads", ge=1)
    n_m: int = Field(128, description="MLP hidden size (ttgan)", ge=1)
    activation: Optional[Activation] = Field(None, description="Activation tag")
    augment: AugmentMode = Field("none", description="Input feature augmentation")
    norm: NormKind = Field("layer", description="Normalization kind")
    spectral_norm: bool = Field(True, description="Spectral-normalize weights")
    neg_large: float = Field(settings.NEG_LARGE, description="Mask magnitude L", gt=0)

    @model_validator(mode="after")
    def check_invariants(self) -> "DiscriminatorSpec":
        if self.activation is None:
            self.activation = default_activation(self.family)
        if self.n_a % self.n_h != 0:
            raise ValueError(
                f"attention hidden size {self.n_a} is not divisible by "
                f"{self.n_h} heads"
            )
        if self.augment == "cumsum" and self.d != 1:
            raise ValueError("cumsum augmentation needs a single data channel")
        if self.family == "tagan":
            if self.n_k % 2 == 0:
                raise ValueError(f"regular kernel size must be odd, got {self.n_k}")
            if self.final_length < 1:
                raise ValueError(
                    f"length {self.l} vanishes after "
                    f"{self.blocks_before + self.blocks_after} stride-2 blocks"
                )
        else:
            if self.n_h % 4 != 0:
                raise ValueError(
                    f"sparse attention needs a multiple of 4 heads, got {self.n_h}"
                )
            if self.d_h < self.n_h:
                raise ValueError("hidden channels must cover the n_h head columns")
        return self

    @property
    def input_channels(self) -> int:
        return self.d * (1 if self.augment == "none" else 2)

    def channel_at(self, depth: int) -> int:
        """深度 j (1 起算) 的通道數 min(2^{j-1} d_s, d_m)"""
        return min(2 ** (depth - 1) * self.d_s, self.d_m)

    @property
    def final_length(self) -> int:
        length = self.l
        for _ in range(self.blocks_before + self.blocks_after):
            length //= 2
        return length


class LossConfig(BaseModel):
    """GAN 損失設定"""

    kind: Literal["original", "wgan_gp"] = Field("wgan_gp", description="Loss kind")
    gp_lambda: float = Field(
        settings.GP_LAMBDA, description="Gradient penalty weight", ge=0
    )


class TrainConfig(BaseModel):
    """對抗訓練設定"""

    window: int = Field(128, description="Window length l", ge=1)
    batch_size: int = Field(64, description="Batch size", ge=2)
    d_steps: Optional[int] = Field(None, description="Discriminator steps", ge=1)
    g_steps: int = Field(1, description="Generator steps per iteration", ge=1)
    iterations: int = Field(20000, description="Total iterations", ge=0)
    lr_g: float = Field(1e-4, description="Generator learning rate", gt=0)
    lr_d: float = Field(1e-4, description="Discriminator learning rate", gt=0)
    betas: Optional[Tuple[float, float]] = Field(None, description="Adam betas")
    loss: LossConfig = Field(default_factory=LossConfig)
    seed: int = Field(settings.DEFAULT_SEED, description="Random seed")
    augment: AugmentMode = Field("none", description="Feature augmentation")
    eval_every: int = Field(0, description="Evaluation cadence (0 = off)", ge=0)
    eval_paths: int = Field(64, description="Paths sampled per evaluation", ge=1)
    eval_length: Optional[int] = Field(None, description="Evaluation path length")
    delta: Optional[int] = Field(None, description="Max lag in correlation scores")
    log_every: int = Field(100, description="Logging cadence", ge=1)
    snapshot_dir: Optional[str] = Field(None, description="Divergence dump dir")

    @model_validator(mode="after")
    def fill_loss_defaults(self) -> "TrainConfig":
        if self.d_steps is None:
            self.d_steps = 5 if self.loss.kind == "wgan_gp" else 1
        if self.betas is None:
            self.betas = (0.0, 0.9) if self.loss.kind == "wgan_gp" else (0.5, 0.9)
        return self


class RunConfig(BaseModel):
    """命令列執行設定 (設定檔 + 旗標覆寫)"""

    command: Literal["train", "generate", "evaluate", "repair-arbitrage", "report"]
    data: Optional[Path] = Field(None, description="Price or surface CSV")
    kind: DataKind = Field("index", description="Data kind")
    family: Family = Field("ttgan", description="Model family")
    preset: Literal["desk", "full"] = Field("full", description="Preset")
    overrides: Dict[str, Any] = Field(default_factory=dict)
    seed: int = Field(settings.DEFAULT_SEED, description="Random seed")
    out: Path = Field(Path(settings.OUTPUT_DIR), description="Output directory")
    checkpoint_dir: Optional[Path] = Field(None, description="Trained run dir")
    bundle: Optional[Path] = Field(None, description="Path bundle file")
    history: Optional[Path] = Field(None, description="Training history file")
    scores: Optional[Path] = Field(None, description="Score report file")
    n_paths: int = Field(settings.DEFAULT_N_PATHS, ge=1)
    length: int = Field(settings.DEFAULT_PATH_LENGTH, ge=1)
    delta: Optional[int] = Field(None, ge=1)
    iterations: Optional[int] = Field(None, ge=0)
    pca_components: Optional[int] = Field(
        None, description="PCA components (0 disables, None = preset)", ge=0
    )
    augment: Optional[AugmentMode] = Field(None)
    workers: int = Field(1, ge=1)

    @model_validator(mode="after")
    def check_paths(self) -> "RunConfig":
        for name in ("data", "checkpoint_dir", "bundle", "history", "scores"):
            value = getattr(self, name)
            if value is not None and not Path(value).exists():
                raise ValueError(f"{name} path does not exist: {value}")
        return self


class RunManifest(BaseModel):
    """訓練輸出目錄中的執行描述 (run.json)"""

    kind: DataKind
    family: Family
    augment: AugmentMode = "none"
    seed: int = 0
    generator: GeneratorSpec
    discriminator: DiscriminatorSpec
    train: TrainConfig
    pca_file: Optional[str] = None
    strikes: Optional[List[float]] = None
    maturities: Optional[List[float]] = None
