"""
測試配置
"""

import os
import sys

import numpy as np
import pandas as pd
import pytest
import torch

# 添加src目錄到Python路徑
sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from src.models.series import SurfaceGrid, maturity_label, strike_label
from src.models.specs import DiscriminatorSpec, GeneratorSpec

STRIKES = np.array([0.85, 0.90, 0.95, 1.00, 1.05, 1.10, 1.15])
MATURITIES = np.array([1.0, 2.0, 3.0, 6.0]) / 12.0


@pytest.fixture(autouse=True)
def single_thread():
    """確定性測試在單執行緒下進行"""
    torch.set_num_threads(1)
    yield


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_generator_spec():
    """Create a small generator spec (l=16, f=9, d_h=8)."""

    def make(family: str = "ttgan", **kwargs) -> GeneratorSpec:
        fields = dict(family=family, l=16, f=9, d_n=2, d=1, d_h=8, n_h=2, n_a=8)
        if family == "tagan":
            fields.update(n_k=2, blocks_before=1, blocks_after=1)
        else:
            fields.update(n_layers=2, n_m=16)
        fields.update(kwargs)
        return GeneratorSpec(**fields)

    return make


@pytest.fixture
def tiny_discriminator_spec():
    """Create a small discriminator spec matching the tiny generator."""

    def make(family: str = "ttgan", **kwargs) -> DiscriminatorSpec:
        fields = dict(family=family, l=16, d=1, n_a=8)
        if family == "tagan":
            fields.update(d_s=4, d_m=8, blocks_before=1, blocks_after=1, n_h=2)
        else:
            fields.update(d_h=8, n_h=4, n_m=16, n_layers=1)
        fields.update(kwargs)
        return DiscriminatorSpec(**fields)

    return make


@pytest.fixture
def garch_returns():
    from src.services.training import simulate_garch

    return simulate_garch(600, seed=7)


@pytest.fixture
def price_csv(tmp_path, garch_returns):
    """Price CSV (date, close) built from GARCH returns."""
    prices = 100.0 * np.exp(np.concatenate([[0.0], np.cumsum(garch_returns)]))
    dates = pd.bdate_range("2010-01-04", periods=prices.size)
    path = tmp_path / "prices.csv"
    pd.DataFrame({"date": dates.strftime("%Y-%m-%d"), "close": prices}).to_csv(
        path, index=False
    )
    return path


def make_surface_vols(n_rows: int, seed: int = 0) -> np.ndarray:
    """共同因子 + 小幅個別雜訊的隱含波動率，欄位以到期日為主"""
    rng = np.random.default_rng(seed)
    level = np.zeros(n_rows)
    for t in range(1, n_rows):
        level[t] = 0.97 * level[t - 1] + 0.03 * rng.standard_normal()
    d = STRIKES.size * MATURITIES.size
    noise = 0.01 * rng.standard_normal((n_rows, d))
    return 0.2 * np.exp(level[:, None] + noise)


@pytest.fixture
def surface_grid() -> SurfaceGrid:
    vols = make_surface_vols(200)
    return SurfaceGrid(STRIKES, MATURITIES, np.log(vols))


@pytest.fixture
def surface_csv(tmp_path):
    """Surface CSV with `maturity-strike` headers over {1m,2m,3m,6m} x 85..115%."""
    vols = make_surface_vols(200)
    columns = [
        f"{maturity_label(m)}-{strike_label(k)}" for m in MATURITIES for k in STRIKES
    ]
    frame = pd.DataFrame(vols, columns=columns)
    dates = pd.bdate_range("2015-01-02", periods=len(frame))
    frame.insert(0, "date", dates.strftime("%Y-%m-%d"))
    path = tmp_path / "surface.csv"
    frame.to_csv(path, index=False)
    return path
