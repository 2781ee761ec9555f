"""
選擇權曲面服務

PCA 降維與還原、隱含波動率與標準化買權價格互轉、
無套利條件檢查與以線性規劃求最近的無套利曲面。
"""

from concurrent.futures import ThreadPoolExecutor
from typing import List, Tuple

import numpy as np
from scipy.optimize import brentq
from scipy.stats import norm

from src.core.config import settings
from src.core.exceptions import InversionError, ShapeError
from src.core.logging import logger
from src.models.series import CallGrid, PathBundle, PcaModel, SurfaceGrid
from src.services.simplex import solve_lp

LOG_VOL_BRACKET = (-20.0, 5.0)


# ---------------------------------------------------------------------------
# PCA
# ---------------------------------------------------------------------------


def pca_fit(data: np.ndarray, n_components: int) -> Tuple[PcaModel, np.ndarray]:
    """
    以 SVD 分解 X = U·D·Vᵀ，取前 d̃ 個主成分

    Args:
        data: T × d 的資料矩陣 (不做中心化)
        n_components: d̃，1 ≤ d̃ ≤ min(T, d)

    Returns:
        (PcaModel, U[:, :d̃])；秩不足時尾端奇異值補零
    """
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError("PCA input must be a T x d matrix", {"shape": x.shape})
    if not 1 <= n_components <= min(x.shape):
        raise ShapeError(
            "component count must lie in [1, min(T, d)]",
            {"n_components": n_components, "shape": x.shape},
        )
    u, s, vt = np.linalg.svd(x, full_matrices=False)
    cutoff = s[0] * max(x.shape) * np.finfo(np.float64).eps if s.size else 0.0
    s = np.where(s > cutoff, s, 0.0)
    model = PcaModel(vectors=vt[:n_components].T, singular_values=s[:n_components])
    logger.info(
        f"PCA kept {n_components}/{x.shape[1]} components, "
        f"leading singular value {s[0]:.4g}"
    )
    return model, u[:, :n_components]


def pca_invert(model: PcaModel, components: np.ndarray) -> np.ndarray:
    """ŷ_t = V·D·ỹ_t，逐列套用；接受 (..., d̃)"""
    y = np.asarray(components, dtype=np.float64)
    if y.shape[-1] != model.n_components:
        raise ShapeError(
            "component width does not match the PCA model",
            {"width": y.shape[-1], "n_components": model.n_components},
        )
    return (y * model.singular_values) @ model.vectors.T


# ---------------------------------------------------------------------------
# 價格與隱含波動率
# ---------------------------------------------------------------------------


def black_call(strike, maturity, sigma) -> np.ndarray:
    """單位現貨、零利率的 Black 買權價格 Φ(d₁) - K·Φ(d₂)"""
    strike = np.asarray(strike, dtype=np.float64)
    maturity = np.asarray(maturity, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(maturity <= 0):
        raise ShapeError("maturities must be positive")
    total = sigma * np.sqrt(maturity)
    with np.errstate(divide="ignore", invalid="ignore"):
        d1 = (-np.log(strike) + 0.5 * total**2) / total
    d2 = d1 - total
    return norm.cdf(d1) - strike * norm.cdf(d2)


def vol_to_calls(row: np.ndarray, grid: SurfaceGrid) -> CallGrid:
    """一列對數波動率 (d,) -> 買權價格網格 (N_K, N_M)"""
    log_vols = np.asarray(row, dtype=np.float64).ravel()
    if log_vols.size != grid.d:
        raise ShapeError("surface row does not match the grid", {"d": log_vols.size})
    if not np.isfinite(log_vols).all():
        raise ShapeError("log-vols must be finite")
    sigma = np.exp(grid.to_strike_major(log_vols))
    prices = black_call(grid.strikes[:, None], grid.maturities[None, :], sigma)
    return CallGrid(np.clip(prices, 0.0, 1.0), grid.strikes, grid.maturities)


def _implied_log_vol(price: float, strike: float, maturity: float, where) -> float:
    intrinsic = max(1.0 - strike, 0.0)
    if not intrinsic < price < 1.0:
        raise InversionError(
            "call price at or outside the static bounds",
            {"point": where, "price": price, "intrinsic": intrinsic},
        )

    def gap(log_vol: float) -> float:
        return float(black_call(strike, maturity, np.exp(log_vol))) - price

    low, high = LOG_VOL_BRACKET
    if gap(low) > 0 or gap(high) < 0:
        raise InversionError(
            "implied volatility outside the search bracket",
            {"point": where, "price": price},
        )
    return brentq(gap, low, high, xtol=1e-14, rtol=4 * np.finfo(float).eps)


def calls_to_vols(calls: CallGrid, grid: SurfaceGrid) -> np.ndarray:
    """
    買權價格 -> 對數隱含波動率 (d,)，以 Brent 法逐點反推

    Raises:
        InversionError: 價格不在 (max(1-K, 0), 1) 內，錯誤訊息附上 (i, j)
    """
    out = np.empty((calls.n_k, calls.n_m))
    for i in range(calls.n_k):
        for j in range(calls.n_m):
            out[i, j] = _implied_log_vol(
                float(calls.values[i, j]),
                float(calls.strikes[i]),
                float(calls.maturities[j]),
                (i, j),
            )
    return grid.from_strike_major(out)


# ---------------------------------------------------------------------------
# 無套利條件
# ---------------------------------------------------------------------------


def no_arbitrage_constraints(
    strikes: np.ndarray,
    maturities: np.ndarray,
    lower_strike: float = settings.LOWER_BOUNDARY_STRIKE,
    upper_strike: float = settings.UPPER_BOUNDARY_STRIKE,
) -> Tuple[np.ndarray, np.ndarray, List[str]]:
    """
    無套利條件的矩陣形式 A·c ≥ b

    變數 c 為 C[i, j] 依 i * N_M + j 攤平 (i 為履約價、j 為到期日)。
    邊界價格 C_0 = 1 - K_0、C_{N_K+1} = 0 移到右手邊。

    Returns:
        (A, b, labels)，labels 為每一列的條件名稱，索引皆 0 起算
    """
    strikes = np.asarray(strikes, dtype=np.float64).ravel()
    n_k, n_m = strikes.size, np.asarray(maturities).size
    n = n_k * n_m
    full = np.concatenate(([lower_strike], strikes, [upper_strike]))
    rows, rhs, labels = [], [], []

    def var(i: int, j: int) -> int:
        return i * n_m + j

    for j in range(n_m):
        row = np.zeros(n)
        row[var(0, j)] = 1.0
        rows.append(row)
        rhs.append(1.0 - strikes[0])
        labels.append(f"lower_bound(0,{j})")
    for j in range(n_m):
        row = np.zeros(n)
        row[var(n_k - 1, j)] = 1.0
        rows.append(row)
        rhs.append(0.0)
        labels.append(f"nonnegative({n_k - 1},{j})")
    for i in range(n_k):
        for j in range(1, n_m):
            row = np.zeros(n)
            row[var(i, j)] = 1.0
            row[var(i, j - 1)] = -1.0
            rows.append(row)
            rhs.append(0.0)
            labels.append(f"calendar({i},{j})")
    # 斜率形式：C_{i+1}/h₊ - C_i(1/h₋ + 1/h₊) + C_{i-1}/h₋ ≥ 0
    for i in range(n_k):
        h_left = full[i + 1] - full[i]
        h_right = full[i + 2] - full[i + 1]
        for j in range(n_m):
            row = np.zeros(n)
            bound = 0.0
            row[var(i, j)] = -(1.0 / h_left + 1.0 / h_right)
            if i > 0:
                row[var(i - 1, j)] = 1.0 / h_left
            else:
                bound -= (1.0 - lower_strike) / h_left
            if i < n_k - 1:
                row[var(i + 1, j)] = 1.0 / h_right
            rows.append(row)
            rhs.append(bound)
            labels.append(f"convexity({i},{j})")
    return np.vstack(rows), np.asarray(rhs), labels


def _constraints_for(calls: CallGrid):
    return no_arbitrage_constraints(
        calls.strikes, calls.maturities, calls.lower_strike, calls.upper_strike
    )


def check_no_arbitrage(
    calls: CallGrid, tol: float = settings.ARBITRAGE_TOL
) -> List[str]:
    """回傳違反的條件名稱，例如 'convexity(1,0)'；無套利時為空串列"""
    A, b, labels = _constraints_for(calls)
    residual = A @ calls.values.ravel() - b
    return [labels[k] for k in np.flatnonzero(residual < -tol)]


def arbitrage_flags(
    log_vols: np.ndarray, grid: SurfaceGrid, tol: float = settings.ARBITRAGE_TOL
) -> np.ndarray:
    """
    對 (..., d) 的對數波動率曲面批次判斷是否違反無套利條件

    與 check_no_arbitrage 使用同一組限制矩陣，回傳前置維度形狀的布林陣列。
    """
    x = np.asarray(log_vols, dtype=np.float64)
    if x.shape[-1] != grid.d:
        raise ShapeError(
            "surface width does not match the grid", {"width": x.shape[-1]}
        )
    sigma = np.exp(grid.to_strike_major(x))
    prices = np.clip(
        black_call(grid.strikes[:, None], grid.maturities[None, :], sigma), 0.0, 1.0
    )
    flat = prices.reshape(prices.shape[:-2] + (grid.d,))
    A, b, _ = no_arbitrage_constraints(grid.strikes, grid.maturities)
    residual = flat @ A.T - b
    return np.any(residual < -tol, axis=-1)


def repair_arbitrage(
    calls: CallGrid, margin: float = 0.0, tol: float = settings.ARBITRAGE_TOL
) -> CallGrid:
    """
    以 L1 距離最近的無套利價格取代輸入

    min Σ|Ĉ - C| 拆成 C = Ĉ + p - q，p, q ≥ 0；
    已無套利的輸入原樣回傳。margin > 0 時要求每條限制至少留出該餘裕。

    Raises:
        LinearProgramError: 求解失敗
    """
    if not check_no_arbitrage(calls, tol):
        return calls
    A, b, _ = _constraints_for(calls)
    b = b + margin
    c_hat = calls.values.ravel()
    n = c_hat.size
    solution = solve_lp(
        c=np.ones(2 * n),
        A_ub=np.hstack([-A, A]),
        b_ub=A @ c_hat - b,
    )
    repaired = c_hat + solution.x[:n] - solution.x[n:]
    repaired = np.clip(repaired, 0.0, calls.lower_price)
    logger.debug(
        f"Arbitrage repair moved prices by {solution.objective:.3e} (L1) "
        f"in {solution.iterations} pivots"
    )
    return calls.with_values(repaired.reshape(calls.values.shape))


def repair_pipeline(
    bundle: PathBundle, grid: SurfaceGrid, workers: int = 1
) -> Tuple[PathBundle, np.ndarray]:
    """
    逐一 (i, t) 檢查並修正生成的對數波動率曲面

    Args:
        bundle: N × T × d 的對數波動率路徑
        grid: 履約價/到期日網格
        workers: 平行修正的執行緒數

    Returns:
        (修正後的 PathBundle, (N, T) 的違規旗標)；未違規的曲面逐位元保留
    """
    if bundle.channels != grid.d:
        raise ShapeError(
            "bundle channels do not match the surface grid",
            {"channels": bundle.channels, "d": grid.d},
        )
    flags = arbitrage_flags(bundle.paths.astype(np.float64), grid)
    targets = [tuple(int(v) for v in pos) for pos in np.argwhere(flags)]
    logger.info(
        f"Repairing {len(targets)} of {flags.size} surfaces "
        f"({flags.mean():.2%} flagged)"
    )

    def repair_one(position: Tuple[int, int]) -> np.ndarray:
        i, t = position
        row = bundle.paths[i, t].astype(np.float64)
        try:
            calls = vol_to_calls(row, grid)
            fixed = repair_arbitrage(calls, margin=settings.REPAIR_MARGIN)
            return calls_to_vols(fixed, grid)
        except InversionError as exc:
            logger.error(f"Surface ({i}, {t}) could not be inverted: {exc}")
            raise InversionError(
                exc.message, {**exc.context, "path": i, "time": t}
            ) from exc

    paths = bundle.paths.copy()
    if workers > 1 and len(targets) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(repair_one, targets))
    else:
        rows = [repair_one(position) for position in targets]
    for (i, t), row in zip(targets, rows):
        paths[i, t] = row
    repaired = PathBundle(paths, seed=bundle.seed, model_id=bundle.model_id)
    return repaired, flags
