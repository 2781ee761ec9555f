"""
核心配置模組
"""

import os
from typing import Tuple
from dotenv import load_dotenv

# Load environment variables
load_dotenv()


class Settings:
    """
    應用程式設定
    """

    # 專案資訊
    PROJECT_NAME: str = "Attention GAN Time Series Simulator"
    PROJECT_DESCRIPTION: str = (
        "TAGAN/TTGAN simulation of index returns and option surfaces"
    )
    VERSION: str = "0.1.0"

    # 執行環境設定
    LOG_LEVEL: str = os.getenv("LOG_LEVEL", "INFO")
    LOG_FORMAT: str = os.getenv(
        "TSGAN_LOG_FORMAT", "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    )
    RUN_LOG_LEVEL: str = os.getenv("TSGAN_RUN_LOG_LEVEL", "INFO")
    NUM_THREADS: int = int(os.getenv("TSGAN_NUM_THREADS", "1"))
    DEFAULT_SEED: int = int(os.getenv("TSGAN_SEED", "0"))
    OUTPUT_DIR: str = os.getenv("TSGAN_OUTPUT_DIR", "./runs")
    DEVICE: str = os.getenv("TSGAN_DEVICE", "cpu")

    # 網路層數值設定
    NEG_LARGE: float = 1e3
    BATCH_NORM_EPS: float = 1e-5
    BATCH_NORM_MOMENTUM: float = 0.1
    SPECTRAL_EPS: float = 1e-12
    LEAKY_SLOPE: float = 0.2

    # 損失函數
    GP_LAMBDA: float = 10.0

    # 評估預設值
    DEFAULT_N_PATHS: int = 512
    DEFAULT_PATH_LENGTH: int = 2560
    INDEX_DELTA: int = 250
    SURFACE_DELTA: int = 64
    W1_HORIZONS: Tuple[int, ...] = (1, 5, 20, 100, 200)

    # 選擇權曲面
    PCA_COMPONENTS: int = 10
    ARBITRAGE_TOL: float = 1e-8
    REPAIR_MARGIN: float = 1e-6
    LOWER_BOUNDARY_STRIKE: float = 0.0
    UPPER_BOUNDARY_STRIKE: float = float(
        os.getenv("TSGAN_UPPER_BOUNDARY_STRIKE", "10.0")
    )


settings = Settings()
