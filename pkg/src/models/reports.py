"""
評估報告與訓練紀錄模型
"""

import math
from typing import Any, Dict, Literal, Optional

from pydantic import BaseModel, Field, field_validator


class DatasetStats(BaseModel):
    """資料集統計量"""

    t_x: int = Field(..., description="Series length", ge=1)
    mean: float = Field(..., description="Sample mean")
    std: float = Field(..., description="Sample standard deviation", ge=0)
    skewness: float = Field(..., description="Skewness m3 / m2^1.5")
    kurtosis: float = Field(..., description="Non-excess kurtosis m4 / m2^2")


class ScoreReport(BaseModel):
    """評分報告，鍵值順序固定以便比對"""

    mode: Literal["index", "surface"] = Field(..., description="Evaluation mode")
    scores: Dict[str, float] = Field(..., description="Named scores")
    delta: int = Field(..., description="Max lag of correlation scores", ge=1)
    n_paths: int = Field(..., description="Generated path count", ge=1)
    path_length: int = Field(..., description="Generated path length", ge=1)
    real_stats: Optional[DatasetStats] = Field(None, description="Real data stats")
    metadata: Dict[str, Any] = Field(default_factory=dict)

    @field_validator("scores")
    @classmethod
    def check_scores(cls, value: Dict[str, float]) -> Dict[str, float]:
        for name, score in value.items():
            if not math.isfinite(score) or score < 0:
                raise ValueError(f"score {name} must be finite and >= 0, got {score}")
        return value

    def to_json(self) -> str:
        return self.model_dump_json(indent=2)


class TrainingRecord(BaseModel):
    """訓練歷史中的單筆紀錄 (每次迭代一行)"""

    iter: int = Field(..., ge=0)
    loss_G: float
    loss_D: float
    grad_penalty_mean: Optional[float] = None
    scores: Optional[Dict[str, float]] = None
