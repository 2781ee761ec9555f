"""
時間序列與曲面資料容器

這些容器承載 numpy/torch 陣列，因此以 dataclass 實作並在
__post_init__ 中驗證不變量；設定與報告類模型請見 specs.py / reports.py。
"""

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import torch

from src.core.config import settings
from src.core.exceptions import DataFormatError, ShapeError


@dataclass(frozen=True)
class TimeSeriesMatrix:
    """時間序列矩陣：列為時間步，行為通道，可帶前置批次維度"""

    values: torch.Tensor
    time_offset: int = 0

    def __post_init__(self):
        if self.values.dim() < 2:
            raise ShapeError(
                "TimeSeriesMatrix needs at least 2 dims (time, channel)",
                {"shape": tuple(self.values.shape)},
            )
        if self.values.shape[-2] < 1 or self.values.shape[-1] < 1:
            raise ShapeError(
                "TimeSeriesMatrix needs n_l >= 1 and n_c >= 1",
                {"shape": tuple(self.values.shape)},
            )
        if not bool(torch.isfinite(self.values).all()):
            raise ShapeError("TimeSeriesMatrix entries must be finite")

    @property
    def n_l(self) -> int:
        return int(self.values.shape[-2])

    @property
    def n_c(self) -> int:
        return int(self.values.shape[-1])

    def shifted(self, values: torch.Tensor, rows_dropped: int) -> "TimeSeriesMatrix":
        """以新的數值建立矩陣，起始時間索引前移 rows_dropped"""
        return TimeSeriesMatrix(values, self.time_offset + rows_dropped)

    @classmethod
    def from_numpy(cls, array: np.ndarray, time_offset: int = 0) -> "TimeSeriesMatrix":
        return cls(torch.as_tensor(np.asarray(array)), time_offset)

    def numpy(self) -> np.ndarray:
        return self.values.detach().cpu().numpy()


@dataclass
class PathBundle:
    """N 條長度 T、d 通道的生成路徑，附帶來源資訊"""

    paths: np.ndarray
    seed: int = 0
    model_id: str = ""

    def __post_init__(self):
        paths = np.asarray(self.paths)
        if paths.ndim == 2:
            paths = paths[:, :, None]
        if paths.ndim != 3:
            raise ShapeError(
                "PathBundle paths must have shape (N, T, d)", {"shape": paths.shape}
            )
        if paths.shape[0] < 1 or paths.shape[1] < 1 or paths.shape[2] < 1:
            raise ShapeError("PathBundle needs N, T, d >= 1", {"shape": paths.shape})
        # 持久化格式為 32 位元浮點數，統一在此轉換以確保存取可逐位元還原
        paths = np.ascontiguousarray(paths, dtype="<f4")
        if not np.isfinite(paths).all():
            raise ShapeError("PathBundle entries must be finite")
        self.paths = paths

    @property
    def n_paths(self) -> int:
        return int(self.paths.shape[0])

    @property
    def length(self) -> int:
        return int(self.paths.shape[1])

    @property
    def channels(self) -> int:
        return int(self.paths.shape[2])

    def channel(self, j: int) -> np.ndarray:
        """第 j 個通道 (0 起算)，形狀 (N, T)，以 float64 回傳供評估使用"""
        return self.paths[:, :, j].astype(np.float64)


@dataclass
class SurfaceGrid:
    """履約價/到期日網格與 T×d 對數波動率矩陣

    通道順序以到期日為主：欄位 (j_m - 1) * N_K + j_k 對應
    到期日 M_{j_m} 與相對履約價 K_{j_k} (皆為 1 起算)。
    """

    strikes: np.ndarray
    maturities: np.ndarray
    data: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    dates: Optional[List[str]] = None

    def __post_init__(self):
        self.strikes = np.asarray(self.strikes, dtype=np.float64).ravel()
        self.maturities = np.asarray(self.maturities, dtype=np.float64).ravel()
        if self.strikes.size < 1 or self.maturities.size < 1:
            raise DataFormatError("surface grid needs at least one strike and maturity")
        if np.any(np.diff(self.strikes) <= 0):
            raise DataFormatError("strikes must be strictly increasing")
        if self.strikes.size > 2:
            steps = np.diff(self.strikes)
            if not np.allclose(steps, steps[0], rtol=1e-6, atol=1e-12):
                raise DataFormatError("strikes must be equally spaced")
        if np.any(np.diff(self.maturities) <= 0):
            raise DataFormatError("maturities must be strictly increasing")
        if np.any(self.maturities <= 0):
            raise DataFormatError("maturities must be positive")

        data = np.asarray(self.data, dtype=np.float64)
        if data.size == 0:
            data = np.zeros((0, self.d))
        if data.ndim != 2 or data.shape[1] != self.d:
            raise ShapeError(
                "surface data must be T x (N_M * N_K)",
                {"shape": data.shape, "d": self.d},
            )
        if not np.isfinite(data).all():
            raise DataFormatError("surface data must be finite")
        self.data = data

    @property
    def n_k(self) -> int:
        return int(self.strikes.size)

    @property
    def n_m(self) -> int:
        return int(self.maturities.size)

    @property
    def d(self) -> int:
        return self.n_k * self.n_m

    def flat_index(self, maturity_index: int, strike_index: int) -> int:
        """(j_m, j_k) -> 欄位索引，全部 0 起算"""
        if not (0 <= maturity_index < self.n_m and 0 <= strike_index < self.n_k):
            raise ShapeError(
                "grid position out of range",
                {"maturity_index": maturity_index, "strike_index": strike_index},
            )
        return maturity_index * self.n_k + strike_index

    def grid_position(self, column: int) -> Tuple[int, int]:
        """欄位索引 -> (j_m, j_k)，全部 0 起算"""
        if not 0 <= column < self.d:
            raise ShapeError("column out of range", {"column": column, "d": self.d})
        return divmod(column, self.n_k)

    def to_strike_major(self, row: np.ndarray) -> np.ndarray:
        """把 (..., d) 的扁平列重排成 (..., N_K, N_M)"""
        row = np.asarray(row)
        shaped = row.reshape(row.shape[:-1] + (self.n_m, self.n_k))
        return np.swapaxes(shaped, -1, -2)

    def from_strike_major(self, values: np.ndarray) -> np.ndarray:
        """(..., N_K, N_M) -> (..., d)"""
        values = np.asarray(values)
        swapped = np.swapaxes(values, -1, -2)
        return swapped.reshape(values.shape[:-2] + (self.d,))

    def labels(self) -> List[str]:
        """依欄位順序產生 `maturity-strike` 標籤"""
        out = []
        for j_m in range(self.n_m):
            for j_k in range(self.n_k):
                out.append(
                    f"{maturity_label(self.maturities[j_m])}-"
                    f"{strike_label(self.strikes[j_k])}"
                )
        return out


@dataclass
class CallGrid:
    """標準化買權價格網格 C[i, j]：i 為履約價、j 為到期日"""

    values: np.ndarray
    strikes: np.ndarray
    maturities: np.ndarray
    lower_strike: float = settings.LOWER_BOUNDARY_STRIKE
    upper_strike: float = settings.UPPER_BOUNDARY_STRIKE

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.strikes = np.asarray(self.strikes, dtype=np.float64).ravel()
        self.maturities = np.asarray(self.maturities, dtype=np.float64).ravel()
        expected = (self.strikes.size, self.maturities.size)
        if self.values.shape != expected:
            raise ShapeError(
                "call grid shape must be (N_K, N_M)",
                {"shape": self.values.shape, "expected": expected},
            )
        if not np.isfinite(self.values).all():
            raise ShapeError("call prices must be finite")
        if not (self.lower_strike < self.strikes[0]):
            raise ShapeError("lower boundary strike must lie below K_1")
        if not (self.upper_strike > self.strikes[-1]):
            raise ShapeError("upper boundary strike must lie above K_N")
        upper = self.lower_price + 1e-12
        if np.any(self.values < -1e-12) or np.any(self.values > upper):
            raise ShapeError(
                "call prices must lie in [0, 1 - K_0]",
                {"min": float(self.values.min()), "max": float(self.values.max())},
            )

    @property
    def lower_price(self) -> float:
        return 1.0 - self.lower_strike

    @property
    def n_k(self) -> int:
        return int(self.strikes.size)

    @property
    def n_m(self) -> int:
        return int(self.maturities.size)

    def with_values(self, values: np.ndarray) -> "CallGrid":
        return CallGrid(
            values, self.strikes, self.maturities, self.lower_strike, self.upper_strike
        )


@dataclass
class PcaModel:
    """截斷 SVD 主成分模型：V (d × d̃) 與奇異值 D (d̃)"""

    vectors: np.ndarray
    singular_values: np.ndarray

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        self.singular_values = np.asarray(self.singular_values, dtype=np.float64)
        if self.vectors.ndim != 2 or self.vectors.shape[1] != self.singular_values.size:
            raise ShapeError(
                "PCA vectors must be d x d_tilde matching the singular values",
                {
                    "vectors": self.vectors.shape,
                    "singular_values": self.singular_values.shape,
                },
            )
        if np.any(self.singular_values < 0) or np.any(
            np.diff(self.singular_values) > 1e-12
        ):
            raise ShapeError("singular values must be nonnegative and nonincreasing")

    @property
    def n_components(self) -> int:
        return int(self.singular_values.size)

    @property
    def d(self) -> int:
        return int(self.vectors.shape[0])


@dataclass
class PriceSeries:
    """歷史價格 p_0..p_T 與日期"""

    dates: List[str]
    prices: np.ndarray

    def __post_init__(self):
        self.prices = np.asarray(self.prices, dtype=np.float64).ravel()
        if len(self.dates) != self.prices.size:
            raise DataFormatError(
                "dates and prices differ in length",
                {"dates": len(self.dates), "prices": self.prices.size},
            )
        if np.any(~np.isfinite(self.prices)) or np.any(self.prices <= 0):
            bad = int(np.argmax(~np.isfinite(self.prices) | (self.prices <= 0)))
            raise DataFormatError(
                "prices must be finite and strictly positive",
                {"row": bad, "date": self.dates[bad]},
            )


def maturity_label(years: float) -> str:
    """年化到期日 -> 標籤 (1m, 6m, 1y, 30d)"""
    months = years * 12.0
    if abs(months - round(months)) < 1e-9 and round(months) % 12 != 0:
        return f"{int(round(months))}m"
    if abs(years - round(years)) < 1e-9:
        return f"{int(round(years))}y"
    return f"{int(round(years * 365.0))}d"


def strike_label(strike: float) -> str:
    """相對履約價 -> 百分比標籤"""
    return f"{strike * 100:g}%"
