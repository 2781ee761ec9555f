"""
稠密兩階段單形法

求解 min cᵀx，限制 A_ub·x ≤ b_ub、x ≥ 0。
第一階段以人工變數找可行基底，第二階段最佳化原目標；
進基與出基皆採 Bland 規則，保證在退化問題上也會終止。
"""

from dataclasses import dataclass
from typing import List

import numpy as np

from src.core.exceptions import LinearProgramError
from src.core.logging import logger

PIVOT_TOL = 1e-10
FEASIBILITY_TOL = 1e-9


@dataclass
class LpSolution:
    """線性規劃的解"""

    x: np.ndarray
    objective: float
    status: str
    iterations: int


def _pivot(tableau: np.ndarray, row: int, col: int) -> None:
    tableau[row, :] /= tableau[row, col]
    column = tableau[:, col].copy()
    column[row] = 0.0
    tableau -= np.outer(column, tableau[row, :])


def _enter(cost_row: np.ndarray) -> int:
    """最左邊的負縮減成本欄位，沒有則回傳 -1"""
    negative = np.flatnonzero(cost_row[:-1] < -PIVOT_TOL)
    return int(negative[0]) if negative.size else -1


def _leave(tableau: np.ndarray, col: int, basis: List[int]) -> int:
    """最小比值列；同值時取基底變數索引最小者"""
    body = tableau[:-1]
    candidates = np.flatnonzero(body[:, col] > PIVOT_TOL)
    if candidates.size == 0:
        return -1
    ratios = body[candidates, -1] / body[candidates, col]
    best = ratios.min()
    tied = candidates[ratios <= best + PIVOT_TOL * max(1.0, abs(best))]
    return int(min(tied, key=lambda r: basis[r]))


def _price_out(tableau: np.ndarray, costs: np.ndarray, basis: List[int]) -> None:
    """以基底變數消去目標列，使其成為縮減成本"""
    tableau[-1, :-1] = costs
    tableau[-1, -1] = 0.0
    for row, var in enumerate(basis):
        if tableau[-1, var] != 0.0:
            tableau[-1, :] -= tableau[-1, var] * tableau[row, :]


def _run(tableau: np.ndarray, basis: List[int], max_iter: int, phase: str) -> int:
    iterations = 0
    while True:
        col = _enter(tableau[-1])
        if col < 0:
            return iterations
        row = _leave(tableau, col, basis)
        if row < 0:
            raise LinearProgramError(
                "linear program is unbounded", {"phase": phase, "column": col}
            )
        _pivot(tableau, row, col)
        basis[row] = col
        iterations += 1
        if iterations >= max_iter:
            raise LinearProgramError(
                "simplex iteration limit reached",
                {"phase": phase, "max_iter": max_iter},
            )


def solve_lp(
    c: np.ndarray, A_ub: np.ndarray, b_ub: np.ndarray, max_iter: int = 10000
) -> LpSolution:
    """
    求解 min cᵀx s.t. A_ub x ≤ b_ub, x ≥ 0

    Args:
        c: 目標係數 (n,)
        A_ub: 限制矩陣 (m, n)
        b_ub: 右手邊 (m,)
        max_iter: 每個階段的樞軸次數上限

    Returns:
        LpSolution

    Raises:
        LinearProgramError: 不可行、無界或超過迭代上限
    """
    c = np.asarray(c, dtype=np.float64).ravel()
    A = np.atleast_2d(np.asarray(A_ub, dtype=np.float64))
    b = np.asarray(b_ub, dtype=np.float64).ravel()
    m, n = A.shape
    if c.size != n or b.size != m:
        raise LinearProgramError(
            "inconsistent LP dimensions", {"c": c.size, "A": A.shape, "b": b.size}
        )

    # 讓右手邊非負；翻號的列改為 ≥，需要剩餘變數與人工變數
    flipped = b < 0
    sign = np.where(flipped, -1.0, 1.0)
    artificial_rows = np.flatnonzero(flipped)
    n_art = artificial_rows.size
    width = n + m + n_art

    tableau = np.zeros((m + 1, width + 1))
    tableau[:m, :n] = A * sign[:, None]
    tableau[:m, n : n + m] = np.diag(sign)
    tableau[:m, -1] = b * sign
    basis = [n + i for i in range(m)]
    for k, row in enumerate(artificial_rows):
        tableau[row, n + m + k] = 1.0
        basis[row] = n + m + k

    iterations = 0
    if n_art:
        phase_one = np.zeros(width)
        phase_one[n + m :] = 1.0
        _price_out(tableau, phase_one, basis)
        iterations += _run(tableau, basis, max_iter, "phase I")
        if -tableau[-1, -1] > FEASIBILITY_TOL:
            raise LinearProgramError(
                "linear program is infeasible",
                {"infeasibility": float(-tableau[-1, -1])},
            )
        # 仍在基底中的人工變數 (值為零) 換出；整列為零時為冗餘列
        keep = []
        for row in range(m):
            if basis[row] < n + m:
                keep.append(row)
                continue
            candidates = np.flatnonzero(np.abs(tableau[row, : n + m]) > PIVOT_TOL)
            if candidates.size:
                _pivot(tableau, row, int(candidates[0]))
                basis[row] = int(candidates[0])
                keep.append(row)
        tableau = np.vstack([tableau[keep], tableau[-1:]])
        tableau = np.delete(tableau, np.s_[n + m : n + m + n_art], axis=1)
        basis = [basis[row] for row in keep]

    costs = np.zeros(n + m)
    costs[:n] = c
    _price_out(tableau, costs, basis)
    iterations += _run(tableau, basis, max_iter, "phase II")

    x = np.zeros(n + m)
    for row, var in enumerate(basis):
        x[var] = tableau[row, -1]
    solution = x[:n]
    objective = float(c @ solution)
    logger.debug(f"Simplex solved {m}x{n} LP in {iterations} pivots")
    return LpSolution(
        x=solution, objective=objective, status="optimal", iterations=iterations
    )
