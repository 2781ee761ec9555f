"""
資料讀寫服務

價格與曲面 CSV 的讀取、對數報酬轉換、資料集統計量，以及
PathBundle / checkpoint / PCA 共用的二進位容器格式。

容器格式：8 位元組魔術字 + 8 位元組小端序標頭長度 + UTF-8 JSON 標頭
+ 依標頭順序排列的小端序浮點數資料。
"""

import json
import re
import struct
from pathlib import Path
from typing import Any, Dict, List, Tuple, Union

import numpy as np
import pandas as pd

from src.core.exceptions import (
    DataFormatError,
    DegenerateSeriesError,
    SimulationError,
)
from src.core.logging import logger
from src.models.reports import DatasetStats
from src.models.series import PathBundle, PcaModel, PriceSeries, SurfaceGrid
from src.services.metrics import kurtosis, skewness

BUNDLE_MAGIC = b"TSGANPB1"
PCA_MAGIC = b"TSGANPCA"
BUNDLE_VERSION = 1

_MATURITY_PATTERN = re.compile(r"^(\d+(?:\.\d+)?)([dwmy])$", re.IGNORECASE)
_STRIKE_PATTERN = re.compile(r"^(\d+(?:\.\d+)?)%$")
_MATURITY_UNITS = {"d": 1.0 / 365.0, "w": 7.0 / 365.0, "m": 1.0 / 12.0, "y": 1.0}


# ============================================================
# 二進位容器
# ============================================================


def write_container(
    path: Union[str, Path],
    magic: bytes,
    header: Dict[str, Any],
    arrays: Dict[str, np.ndarray],
    dtype: str = "<f4",
) -> Path:
    """
    寫入容器檔案

    Args:
        path: 輸出路徑
        magic: 8 位元組魔術字
        header: 可 JSON 序列化的標頭
        arrays: 名稱 -> 陣列，依插入順序寫入
        dtype: 資料型別 ('<f4' 或 '<f8')

    Returns:
        寫入的路徑
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    entries = []
    payloads = []
    for name, array in arrays.items():
        data = np.ascontiguousarray(np.asarray(array), dtype=dtype)
        entries.append({"name": name, "shape": list(data.shape)})
        payloads.append(data.tobytes())
    full_header = dict(header)
    full_header["dtype"] = dtype
    full_header["arrays"] = entries
    header_bytes = json.dumps(full_header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as handle:
        handle.write(magic)
        handle.write(struct.pack("<Q", len(header_bytes)))
        handle.write(header_bytes)
        for payload in payloads:
            handle.write(payload)
    return path


def read_container(
    path: Union[str, Path], magic: bytes
) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    """
    讀取容器檔案

    Returns:
        (標頭, 名稱 -> 陣列)

    Raises:
        DataFormatError: 魔術字、標頭或資料長度不符
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise DataFormatError(f"Cannot read container: {e}", {"path": str(path)})
    if raw[: len(magic)] != magic:
        raise DataFormatError("bad container magic", {"path": str(path)})
    offset = len(magic)
    if len(raw) < offset + 8:
        raise DataFormatError("truncated container header", {"path": str(path)})
    (header_length,) = struct.unpack("<Q", raw[offset : offset + 8])
    offset += 8
    try:
        header = json.loads(raw[offset : offset + header_length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataFormatError(f"malformed container header: {e}", {"path": str(path)})
    offset += header_length

    dtype = np.dtype(header.get("dtype", "<f4"))
    arrays: Dict[str, np.ndarray] = {}
    for entry in header.get("arrays", []):
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        size = count * dtype.itemsize
        if offset + size > len(raw):
            raise DataFormatError(
                "truncated container payload",
                {"path": str(path), "array": entry["name"]},
            )
        arrays[entry["name"]] = np.frombuffer(
            raw, dtype=dtype, count=count, offset=offset
        ).reshape(shape)
        offset += size
    if offset != len(raw):
        raise DataFormatError(
            "trailing bytes after container payload", {"path": str(path)}
        )
    return header, arrays


# ============================================================
# PathBundle / PCA
# ============================================================


def save_bundle(bundle: PathBundle, path: Union[str, Path]) -> Path:
    """以 32 位元小端序浮點數保存路徑組"""
    header = {
        "format_version": BUNDLE_VERSION,
        "seed": bundle.seed,
        "model_id": bundle.model_id,
    }
    path = write_container(path, BUNDLE_MAGIC, header, {"paths": bundle.paths})
    logger.info(
        f"Saved bundle {bundle.n_paths}x{bundle.length}x{bundle.channels} to {path}"
    )
    return path


def load_bundle(path: Union[str, Path]) -> PathBundle:
    header, arrays = read_container(path, BUNDLE_MAGIC)
    if header.get("format_version") != BUNDLE_VERSION or "paths" not in arrays:
        raise DataFormatError("unsupported bundle file", {"path": str(path)})
    try:
        return PathBundle(
            arrays["paths"].copy(),
            seed=int(header.get("seed", 0)),
            model_id=str(header.get("model_id", "")),
        )
    except SimulationError as e:
        raise DataFormatError(f"invalid bundle contents: {e}", {"path": str(path)})


def save_pca(model: PcaModel, path: Union[str, Path]) -> Path:
    return write_container(
        path,
        PCA_MAGIC,
        {"format_version": 1},
        {"vectors": model.vectors, "singular_values": model.singular_values},
        dtype="<f8",
    )


def load_pca(path: Union[str, Path]) -> PcaModel:
    _, arrays = read_container(path, PCA_MAGIC)
    return PcaModel(arrays["vectors"].copy(), arrays["singular_values"].copy())


# ============================================================
# CSV
# ============================================================


def _read_csv(path: Union[str, Path]) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DataFormatError(f"Cannot read CSV: {e}", {"path": str(path)})
    frame.columns = [str(c).strip() for c in frame.columns]
    return frame


def _check_dates(frame: pd.DataFrame, path) -> List[str]:
    if "date" not in frame.columns:
        raise DataFormatError("CSV has no date column", {"path": str(path)})
    try:
        parsed = pd.to_datetime(frame["date"])
    except (ValueError, TypeError) as e:
        raise DataFormatError(f"unparseable dates: {e}", {"path": str(path)})
    if not parsed.is_monotonic_increasing or parsed.duplicated().any():
        bad = int(np.argmax(np.diff(parsed.values.astype("int64")) <= 0)) + 1
        raise DataFormatError(
            "dates must be strictly increasing",
            {"path": str(path), "row": bad, "date": str(frame["date"].iloc[bad])},
        )
    return [str(d) for d in frame["date"]]


def _check_finite(values: np.ndarray, columns: List[str], path) -> None:
    bad = ~np.isfinite(values)
    if bad.any():
        row, col = (int(i) for i in np.argwhere(bad)[0])
        raise DataFormatError(
            "missing or non-finite value",
            {"path": str(path), "row": row, "column": columns[col]},
        )


def load_price_csv(path: Union[str, Path]) -> PriceSeries:
    """讀取 `date,close` 價格檔"""
    frame = _read_csv(path)
    if "close" not in frame.columns:
        raise DataFormatError("price CSV needs a close column", {"path": str(path)})
    dates = _check_dates(frame, path)
    prices = pd.to_numeric(frame["close"], errors="coerce").to_numpy(np.float64)
    _check_finite(prices[:, None], ["close"], path)
    series = PriceSeries(dates, prices)
    logger.info(f"Loaded {len(dates)} prices from {path}")
    return series


def parse_maturity(label: str) -> float:
    """到期日標籤 (30d, 2w, 1m, 1y) -> 年"""
    match = _MATURITY_PATTERN.match(label.strip())
    if not match:
        raise DataFormatError("malformed maturity label", {"label": label})
    return float(match.group(1)) * _MATURITY_UNITS[match.group(2).lower()]


def parse_strike(label: str) -> float:
    """相對履約價標籤 (85%) -> 0.85"""
    match = _STRIKE_PATTERN.match(label.strip())
    if not match:
        raise DataFormatError("malformed strike label", {"label": label})
    return float(match.group(1)) / 100.0


def load_surface_csv(path: Union[str, Path]) -> SurfaceGrid:
    """
    讀取 `date,maturity-strike,...` 隱含波動率曲面檔

    欄位依標頭解析，與欄位順序無關；數值取對數後以到期日為主排列。

    Raises:
        DataFormatError: 標頭格式錯誤、網格不完整、缺值或非正波動率
    """
    frame = _read_csv(path)
    dates = _check_dates(frame, path)
    labels = [c for c in frame.columns if c != "date"]
    if not labels:
        raise DataFormatError("surface CSV has no data columns", {"path": str(path)})

    positions = {}
    for label in labels:
        parts = label.split("-")
        if len(parts) != 2:
            raise DataFormatError(
                "surface column must be `maturity-strike`",
                {"path": str(path), "column": label},
            )
        key = (round(parse_maturity(parts[0]), 12), round(parse_strike(parts[1]), 12))
        if key in positions:
            raise DataFormatError(
                "duplicate surface column", {"path": str(path), "column": label}
            )
        positions[key] = label

    maturities = sorted({m for m, _ in positions})
    strikes = sorted({k for _, k in positions})
    if len(positions) != len(maturities) * len(strikes):
        raise DataFormatError(
            "surface columns do not form a full strike x maturity grid",
            {"path": str(path), "columns": len(positions)},
        )
    ordered = [positions[(m, k)] for m in maturities for k in strikes]
    vols = frame[ordered].apply(pd.to_numeric, errors="coerce").to_numpy(np.float64)
    _check_finite(vols, ordered, path)
    if np.any(vols <= 0):
        row, col = (int(i) for i in np.argwhere(vols <= 0)[0])
        raise DataFormatError(
            "implied volatilities must be positive",
            {"path": str(path), "row": row, "column": ordered[col]},
        )
    grid = SurfaceGrid(strikes, maturities, np.log(vols), dates)
    logger.info(
        f"Loaded surface data {path}: T={len(dates)}, "
        f"N_M={grid.n_m}, N_K={grid.n_k}"
    )
    return grid


def save_surface_csv(grid: SurfaceGrid, path: Union[str, Path]) -> Path:
    """把曲面網格寫回隱含波動率 CSV (欄位以到期日為主)"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(np.exp(grid.data), columns=grid.labels())
    dates = grid.dates or [str(i) for i in range(len(frame))]
    frame.insert(0, "date", dates)
    frame.to_csv(path, index=False)
    return path


# ============================================================
# 轉換與統計量
# ============================================================


def to_log_returns(prices: Union[PriceSeries, np.ndarray]) -> np.ndarray:
    """x_t = ln(p_t / p_{t-1})"""
    if isinstance(prices, PriceSeries):
        p = prices.prices
    else:
        p = np.asarray(prices, dtype=np.float64).ravel()
        if np.any(~np.isfinite(p)) or np.any(p <= 0):
            raise DataFormatError("prices must be finite and strictly positive")
    if p.size < 2:
        raise DataFormatError("need at least two prices", {"n": int(p.size)})
    return np.diff(np.log(p))


def dataset_stats(x: np.ndarray) -> DatasetStats:
    """長度、平均、標準差 (母體)、偏度、非超額峰度"""
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size < 4:
        raise DegenerateSeriesError("need at least 4 observations", {"n": int(x.size)})
    std = float(np.std(x))
    if std == 0.0:
        raise DegenerateSeriesError("series has zero variance")
    return DatasetStats(
        t_x=int(x.size),
        mean=float(np.mean(x)),
        std=std,
        skewness=skewness(x),
        kurtosis=kurtosis(x),
    )
