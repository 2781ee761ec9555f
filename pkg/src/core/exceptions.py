"""
例外類別模組

每個例外帶有 exit_code，命令列層依此決定行程結束碼
(類似 HTTPException 的 status_code)。
"""

from typing import Any, Dict, Optional


class SimulationError(Exception):
    """所有模擬相關錯誤的基底類別"""

    exit_code: int = 1

    def __init__(self, message: str, context: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.context: Dict[str, Any] = dict(context or {})

    def __str__(self) -> str:
        if not self.context:
            return self.message
        details = ", ".join(f"{key}={value}" for key, value in self.context.items())
        return f"{self.message} ({details})"


class ConfigurationError(SimulationError, ValueError):
    """規格、覆寫參數或路徑無效"""

    exit_code = 2


class DataFormatError(SimulationError, ValueError):
    """CSV 或二進位容器格式錯誤"""

    exit_code = 2


class ShapeError(SimulationError, ValueError):
    """矩陣形狀或通道數不符"""


class DegenerateSeriesError(SimulationError, ValueError):
    """序列變異數為零，無法計算動差或相關係數"""


class NetworkModeError(SimulationError, RuntimeError):
    """網路處於錯誤的模式 (train/eval)"""


class InversionError(SimulationError, ValueError):
    """買權價格落在靜態邊界上或之外，無法反推隱含波動率"""


class LinearProgramError(SimulationError, RuntimeError):
    """線性規劃無可行解、無界或超過迭代上限"""


class TrainingDivergedError(SimulationError, RuntimeError):
    """訓練損失出現非有限值"""

    exit_code = 4
