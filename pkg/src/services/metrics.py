"""
評估指標服務

多期 Wasserstein-1 距離、高階動差分數、四種相關分數、
曲面版本的平均分數、交叉相關分數與套利比率。
"""

from typing import Dict, Iterable, Optional, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import stats

from src.core.config import settings
from src.core.exceptions import DegenerateSeriesError, ShapeError
from src.core.logging import logger
from src.models.reports import DatasetStats, ScoreReport
from src.models.series import PathBundle, SurfaceGrid
from src.services.surfaces import arbitrage_flags

CORRELATION_KINDS = ("acf", "acf_abs", "acf_sq", "lev", "acf_r")
INDEX_CORRELATION_LABELS = {
    "acf": "ACF",
    "acf_abs": "ACF^(abs)",
    "acf_sq": "ACF^(sq)",
    "lev": "Lev",
}

Paths = Union[PathBundle, np.ndarray]


def _as_paths(paths: Paths, channel: int = 0) -> np.ndarray:
    """PathBundle 或陣列 -> (N, T) 的 float64 陣列"""
    if isinstance(paths, PathBundle):
        return paths.channel(channel)
    array = np.asarray(paths, dtype=np.float64)
    if array.ndim == 1:
        array = array[None, :]
    if array.ndim != 2:
        raise ShapeError("paths must be (N, T)", {"shape": array.shape})
    return array


def wasserstein1(samples_a: Iterable[float], samples_b: Iterable[float]) -> float:
    """兩組樣本經驗分布之間的 Wasserstein-1 距離 ∫|F_a - F_b|dx"""
    a = np.asarray(samples_a, dtype=np.float64).ravel()
    b = np.asarray(samples_b, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise ShapeError("Wasserstein distance needs nonempty samples")
    return float(stats.wasserstein_distance(a, b))


def multiday_returns(series: np.ndarray, tau: int) -> np.ndarray:
    """所有重疊的 τ 日報酬 Σ_{j<τ} x_{t+j}；輸入為 (T,) 或 (N, T)"""
    x = np.asarray(series, dtype=np.float64)
    if tau < 1 or x.shape[-1] < tau:
        raise ShapeError(
            "series shorter than horizon", {"length": x.shape[-1], "tau": tau}
        )
    return sliding_window_view(x, tau, axis=-1).sum(axis=-1)


def skewness(x: np.ndarray) -> Union[float, np.ndarray]:
    """m3 / m2^{3/2}，沿最後一維"""
    x = np.asarray(x, dtype=np.float64)
    _check_variance(x)
    value = stats.skew(x, axis=-1, bias=True)
    return float(value) if np.ndim(value) == 0 else value


def kurtosis(x: np.ndarray) -> Union[float, np.ndarray]:
    """非超額峰度 m4 / m2²，常態分布為 3"""
    x = np.asarray(x, dtype=np.float64)
    _check_variance(x)
    value = stats.kurtosis(x, axis=-1, fisher=False, bias=True)
    return float(value) if np.ndim(value) == 0 else value


def _check_variance(x: np.ndarray) -> None:
    if x.shape[-1] < 2 or np.any(np.ptp(x, axis=-1) == 0):
        raise DegenerateSeriesError("series has zero variance")


def moment_gap(real_series: np.ndarray, bundle: Paths, which: str, channel=0) -> float:
    """
    |moment(real) - mean_i moment(path_i)|

    Args:
        real_series: 真實序列
        bundle: 生成路徑
        which: skew 或 kurt
        channel: PathBundle 的通道
    """
    real = np.asarray(real_series, dtype=np.float64).ravel()
    paths = _as_paths(bundle, channel)
    if real.size < 4 or paths.shape[1] < 4:
        raise ShapeError("moment scores need series of length >= 4")
    if which == "skew":
        moment = skewness
    elif which == "kurt":
        moment = kurtosis
    else:
        raise ShapeError(f"Unknown moment: {which}")
    return float(abs(moment(real) - np.mean(moment(paths))))


def _lag_pairs(x: np.ndarray, kind: str, tau: int):
    head, tail = x[..., :-tau], x[..., tau:]
    if kind in ("acf", "acf_r"):
        return head, tail
    if kind == "acf_abs":
        return np.abs(head), np.abs(tail)
    if kind == "acf_sq":
        return head**2, tail**2
    if kind == "lev":
        return head, tail**2
    raise ShapeError(f"Unknown correlation kind: {kind}")


def _pearson(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = a - a.mean(axis=-1, keepdims=True)
    b = b - b.mean(axis=-1, keepdims=True)
    denominator = np.sqrt((a * a).sum(axis=-1) * (b * b).sum(axis=-1))
    if np.any(denominator == 0):
        raise DegenerateSeriesError("constant series in lagged correlation")
    return (a * b).sum(axis=-1) / denominator


def acf_curve(series: np.ndarray, kind: str, delta: int) -> np.ndarray:
    """
    第 1..δ 期的相關係數曲線

    每個時差以重疊配對 (x_t, x_{t+τ}) 的樣本 Pearson 相關係數計算，
    平均與變異數皆依時差分別計算。

    Returns:
        輸入 (T,) 時為 (δ,)；輸入 (N, T) 時為 (N, δ)
    """
    if kind not in CORRELATION_KINDS:
        raise ShapeError(f"Unknown correlation kind: {kind}")
    x = np.asarray(series, dtype=np.float64)
    if kind == "acf_r":
        x = np.diff(x, axis=-1)
    if x.shape[-1] <= delta:
        raise ShapeError(
            "series must be longer than delta",
            {"length": x.shape[-1], "delta": delta, "kind": kind},
        )
    curve = [_pearson(*_lag_pairs(x, kind, tau)) for tau in range(1, delta + 1)]
    return np.stack(curve, axis=-1)


def correlation_score(
    real_series: np.ndarray, bundle: Paths, kind: str, delta: int, channel: int = 0
) -> float:
    """√Σ_τ (score_τ(real) - mean_i score_τ(path_i))²"""
    real = np.asarray(real_series, dtype=np.float64).ravel()
    real_curve = acf_curve(real, kind, delta)
    path_curves = acf_curve(_as_paths(bundle, channel), kind, delta)
    return float(np.sqrt(np.sum((real_curve - path_curves.mean(axis=0)) ** 2)))


def cross_corr_score(real: np.ndarray, generated: np.ndarray) -> float:
    """‖Σ_x - Σ_y‖_F，Σ_y 合併所有路徑與時間點"""
    x = np.asarray(real, dtype=np.float64)
    y = np.asarray(generated, dtype=np.float64)
    y = y.reshape(-1, y.shape[-1])
    if x.shape[-1] != y.shape[-1]:
        raise ShapeError(
            "channel mismatch", {"real": x.shape[-1], "generated": y.shape[-1]}
        )
    for data in (x, y):
        if np.any(np.ptp(data, axis=0) == 0):
            raise DegenerateSeriesError("constant channel in cross-correlation")
    sigma_x = np.atleast_2d(np.corrcoef(x, rowvar=False))
    sigma_y = np.atleast_2d(np.corrcoef(y, rowvar=False))
    return float(np.linalg.norm(sigma_x - sigma_y, ord="fro"))


def arbitrage_rate(bundle: PathBundle, grid: SurfaceGrid) -> float:
    """違反無套利條件的 (i, t) 曲面比例"""
    if bundle.channels != grid.d:
        raise ShapeError(
            "bundle channels do not match the surface grid",
            {"channels": bundle.channels, "d": grid.d},
        )
    flags = arbitrage_flags(bundle.paths.astype(np.float64), grid)
    return float(flags.mean())


def index_scores(
    real_returns: np.ndarray,
    bundle: Paths,
    delta: int = settings.INDEX_DELTA,
    horizons: Iterable[int] = settings.W1_HORIZONS,
    real_stats: Optional[DatasetStats] = None,
    metadata: Optional[Dict] = None,
) -> ScoreReport:
    """
    指數報酬的完整評分報告

    Args:
        real_returns: 歷史對數報酬
        bundle: 生成的報酬路徑 (單通道)
        delta: 相關分數的最大時差
        horizons: W1 距離的天數

    Returns:
        鍵值為 W_1^(τ)、skewness、kurtosis、ACF、ACF^(abs)、ACF^(sq)、Lev 的報告
    """
    real = np.asarray(real_returns, dtype=np.float64).ravel()
    paths = _as_paths(bundle)
    scores: Dict[str, float] = {}
    for tau in horizons:
        if tau > paths.shape[1] or tau > real.size:
            logger.warning(f"Skipping W_1^({tau}): series shorter than horizon")
            continue
        scores[f"W_1^({tau})"] = wasserstein1(
            multiday_returns(real, tau), multiday_returns(paths, tau)
        )
    scores["skewness"] = moment_gap(real, paths, "skew")
    scores["kurtosis"] = moment_gap(real, paths, "kurt")
    for kind, label in INDEX_CORRELATION_LABELS.items():
        scores[label] = correlation_score(real, paths, kind, delta)
    return ScoreReport(
        mode="index",
        scores=scores,
        delta=delta,
        n_paths=paths.shape[0],
        path_length=paths.shape[1],
        real_stats=real_stats,
        metadata=dict(metadata or {}),
    )


def surface_scores(
    real: SurfaceGrid,
    bundle: PathBundle,
    delta: int = settings.SURFACE_DELTA,
    raw_bundle: Optional[PathBundle] = None,
    metadata: Optional[Dict] = None,
) -> ScoreReport:
    """
    曲面的完整評分報告

    各通道的 W1、偏度、峰度、ACF、ACF^(r) 取通道平均；交叉相關以
    Frobenius 範數比較；套利比率以 raw_bundle (修正前) 計算，
    未提供時使用 bundle。
    """
    if bundle.channels != real.d:
        raise ShapeError(
            "bundle channels do not match the surface grid",
            {"channels": bundle.channels, "d": real.d},
        )
    sums = dict.fromkeys(("W_1^(1)", "skewness", "kurtosis", "ACF", "ACF^(r)"), 0.0)
    for j in range(real.d):
        x = real.data[:, j]
        y = bundle.channel(j)
        sums["W_1^(1)"] += wasserstein1(x, y)
        sums["skewness"] += moment_gap(x, y, "skew")
        sums["kurtosis"] += moment_gap(x, y, "kurt")
        sums["ACF"] += correlation_score(x, y, "acf", delta)
        sums["ACF^(r)"] += correlation_score(x, y, "acf_r", delta)
    scores = {name: value / real.d for name, value in sums.items()}
    scores["cross-corr"] = cross_corr_score(real.data, bundle.paths)
    flagged = raw_bundle if raw_bundle is not None else bundle
    scores["arbitrage rate"] = arbitrage_rate(flagged, real)
    return ScoreReport(
        mode="surface",
        scores=scores,
        delta=delta,
        n_paths=bundle.n_paths,
        path_length=bundle.length,
        metadata=dict(metadata or {}),
    )
