"""
預設超參數組合

full:  指數與曲面實驗的完整設定 (l=128、d_h=64、512 條 2560 長路徑)
desk:  CI 與桌機用的小型設定 (l=64、f=63、d_h=32、2000 次迭代)
"""

from typing import Any, Dict, Optional, Tuple

from pydantic import ValidationError

from src.core.config import settings
from src.core.exceptions import ConfigurationError
from src.models.specs import (
    AugmentMode,
    DataKind,
    DiscriminatorSpec,
    Family,
    GeneratorSpec,
    TrainConfig,
)

PRESETS: Dict[str, Dict[str, Dict[str, Any]]] = {
    "full": {
        "generator": {"l": 128, "d_h": 64, "n_a": 64, "n_m": 128},
        "discriminator": {"l": 128},
        "train": {"window": 128, "iterations": 20000, "batch_size": 64},
    },
    "desk": {
        "generator": {"l": 64, "f": 63, "d_h": 32, "n_a": 32, "n_m": 64},
        "discriminator": {"l": 64, "d_h": 32, "n_a": 32, "n_m": 64, "d_s": 16},
        "train": {"window": 64, "iterations": 2000, "batch_size": 64},
    },
}

RFS_BY_KIND = {"index": 127, "surface": 383}
DELTA_BY_KIND = {"index": settings.INDEX_DELTA, "surface": settings.SURFACE_DELTA}


def default_augment(kind: DataKind, family: Family, pca_components: int = 0):
    """指數：TTGAN 加上累積報酬；曲面：未使用 PCA 的模型加上對數波動率報酬"""
    if kind == "index":
        return "cumsum" if family == "ttgan" else "none"
    return "none" if pca_components else "returns"


def default_pca_components(kind: DataKind, family: Family) -> int:
    """曲面的 TAGAN 以 PCA 主成分訓練，其餘直接使用對數波動率"""
    if kind == "surface" and family == "tagan":
        return settings.PCA_COMPONENTS
    return 0


def build_presets(
    kind: DataKind,
    family: Family,
    preset: str = "full",
    d: int = 1,
    augment: Optional[AugmentMode] = None,
    pca_components: int = 0,
    overrides: Optional[Dict[str, Dict[str, Any]]] = None,
) -> Tuple[GeneratorSpec, DiscriminatorSpec, TrainConfig]:
    """
    組合生成器、判別器與訓練設定

    Args:
        kind: index 或 surface
        family: tagan 或 ttgan
        preset: full 或 desk
        d: 訓練資料的通道數 (使用 PCA 時為 d̃)
        augment: 特徵擴充模式，None 時依資料與模型決定
        pca_components: 曲面訓練使用的主成分數 (0 表示不用 PCA)
        overrides: {"generator": {...}, "discriminator": {...}, "train": {...}}

    Raises:
        ConfigurationError: 未知的 preset 或覆寫後違反規格不變量
    """
    if preset not in PRESETS:
        raise ConfigurationError(f"Unknown preset: {preset}")
    overrides = dict(overrides or {})
    unknown = set(overrides) - {"generator", "discriminator", "train"}
    if unknown:
        raise ConfigurationError(
            "unknown override sections", {"sections": sorted(unknown)}
        )
    base = PRESETS[preset]
    if augment is None:
        augment = default_augment(kind, family, pca_components)

    g_fields = {"family": family, "d": d, "f": RFS_BY_KIND[kind]}
    g_fields.update(base["generator"])
    if kind == "surface" and preset == "desk":
        g_fields["f"] = 2 * base["generator"]["l"] - 1
    g_fields.update(overrides.get("generator", {}))

    d_fields = {"family": family, "d": d, "augment": augment}
    d_fields.update(base["discriminator"])
    d_fields.update(overrides.get("discriminator", {}))

    t_fields: Dict[str, Any] = {"augment": augment}
    t_fields.update(base["train"])
    t_fields.update(overrides.get("train", {}))

    try:
        generator = GeneratorSpec(**g_fields)
        discriminator = DiscriminatorSpec(**d_fields)
        train = TrainConfig(**t_fields)
    except ValidationError as exc:
        raise ConfigurationError(
            "invalid hyperparameters", {"preset": preset, "detail": str(exc)}
        ) from exc
    if not generator.l == discriminator.l == train.window:
        raise ConfigurationError(
            "generator, discriminator and window lengths differ",
            {"g": generator.l, "d": discriminator.l, "window": train.window},
        )
    return generator, discriminator, train
