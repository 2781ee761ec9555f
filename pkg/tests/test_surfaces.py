"""
選擇權曲面與線性規劃測試
"""

import os
import sys
import time

import numpy as np
import pytest
from scipy.optimize import linprog

# 添加src目錄到Python路徑
sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from src.core.exceptions import InversionError, LinearProgramError, ShapeError
from src.models.series import CallGrid, PathBundle, SurfaceGrid
from src.services.simplex import solve_lp
from src.services.surfaces import (
    arbitrage_flags,
    black_call,
    calls_to_vols,
    check_no_arbitrage,
    no_arbitrage_constraints,
    pca_fit,
    pca_invert,
    repair_arbitrage,
    repair_pipeline,
    vol_to_calls,
)

HAND_STRIKES = np.array([0.9, 1.0, 1.1])


def _flat_grid(surface_grid, vol=0.2):
    return SurfaceGrid(
        surface_grid.strikes,
        surface_grid.maturities,
        np.full((1, surface_grid.d), np.log(vol)),
    )


def _corrupt(row, grid, vol=0.5):
    """把最短到期日、價平的波動率拉高，造成蝶式與日曆套利"""
    row = row.copy()
    row[grid.flat_index(0, grid.n_k // 2)] = np.log(vol)
    return row


class TestPca:
    """測試 PCA"""

    def test_full_rank_is_exact(self, rng):
        x = rng.normal(size=(30, 6))
        model, components = pca_fit(x, 6)
        np.testing.assert_allclose(pca_invert(model, components), x, atol=1e-12)

    def test_truncation_error(self, rng):
        """截斷誤差等於捨棄的奇異值平方和"""
        x = rng.normal(size=(40, 8))
        singular = np.linalg.svd(x, compute_uv=False)
        model, components = pca_fit(x, 3)
        error = np.sum((pca_invert(model, components) - x) ** 2)
        assert error == pytest.approx(np.sum(singular[3:] ** 2))
        np.testing.assert_allclose(model.singular_values, singular[:3])

    def test_vectors_orthonormal(self, rng):
        model, _ = pca_fit(rng.normal(size=(20, 5)), 4)
        gram = model.vectors.T @ model.vectors
        np.testing.assert_allclose(gram, np.eye(4), atol=1e-12)

    def test_batched_inversion(self, rng):
        model, components = pca_fit(rng.normal(size=(20, 5)), 2)
        batched = np.stack([components, components])
        out = pca_invert(model, batched)
        assert out.shape == (2, 20, 5)
        np.testing.assert_allclose(out[1], pca_invert(model, components))

    def test_invalid_component_count(self, rng):
        with pytest.raises(ShapeError):
            pca_fit(rng.normal(size=(5, 3)), 4)
        with pytest.raises(ShapeError):
            pca_fit(rng.normal(size=(5, 3)), 0)

    def test_width_mismatch(self, rng):
        model, _ = pca_fit(rng.normal(size=(10, 4)), 2)
        with pytest.raises(ShapeError):
            pca_invert(model, np.zeros((3, 3)))


class TestPricing:
    """測試 Black 價格與隱含波動率"""

    def test_atm_value(self):
        """σ = 0.2、M = 0.25、K = 1 時約為 0.039878"""
        assert float(black_call(1.0, 0.25, 0.2)) == pytest.approx(0.039878, abs=1e-6)

    def test_zero_volatility_limit(self):
        assert float(black_call(0.8, 1.0, 1e-12)) == pytest.approx(0.2)
        assert float(black_call(1.2, 1.0, 1e-12)) == pytest.approx(0.0, abs=1e-12)

    def test_round_trip(self, surface_grid):
        row = surface_grid.data[17]
        calls = vol_to_calls(row, surface_grid)
        assert calls.values.shape == (surface_grid.n_k, surface_grid.n_m)
        np.testing.assert_allclose(calls_to_vols(calls, surface_grid), row, atol=1e-8)

    def test_strike_major_layout(self, surface_grid):
        """C[i, j] 對應第 i 個履約價、第 j 個到期日"""
        row = surface_grid.data[0]
        calls = vol_to_calls(row, surface_grid)
        column = surface_grid.flat_index(2, 1)
        expected = black_call(
            surface_grid.strikes[1],
            surface_grid.maturities[2],
            np.exp(row[column]),
        )
        assert calls.values[1, 2] == pytest.approx(float(expected))

    def test_intrinsic_price_not_invertible(self, surface_grid):
        calls = vol_to_calls(surface_grid.data[0], surface_grid)
        values = calls.values.copy()
        values[0, 0] = 1.0 - surface_grid.strikes[0]
        with pytest.raises(InversionError) as exc_info:
            calls_to_vols(calls.with_values(values), surface_grid)
        assert exc_info.value.context["point"] == (0, 0)


class TestNoArbitrage:
    """測試無套利條件"""

    def _hand_calls(self, values=(0.12, 0.09, 0.02)):
        return CallGrid(np.array(values)[:, None], HAND_STRIKES, [0.25])

    def test_constraint_count(self, surface_grid):
        A, b, labels = no_arbitrage_constraints(
            surface_grid.strikes, surface_grid.maturities
        )
        n_k, n_m = surface_grid.n_k, surface_grid.n_m
        assert A.shape == (2 * n_m + n_k * (n_m - 1) + n_k * n_m, n_k * n_m)
        assert b.shape == (A.shape[0],)
        assert len(labels) == A.shape[0]

    def test_flat_surface_is_clean(self, surface_grid):
        grid = _flat_grid(surface_grid)
        assert check_no_arbitrage(vol_to_calls(grid.data[0], grid)) == []

    def test_convexity_violation(self):
        assert check_no_arbitrage(self._hand_calls()) == ["convexity(1,0)"]

    def test_calendar_violation(self, surface_grid):
        grid = _flat_grid(surface_grid)
        row = grid.data[0].copy()
        for j_k in range(grid.n_k):
            row[grid.flat_index(1, j_k)] = np.log(0.05)
        violations = check_no_arbitrage(vol_to_calls(row, grid))
        assert "calendar(3,1)" in violations
        assert all(label.startswith(("calendar", "convexity")) for label in violations)

    def test_flags_agree_with_check(self, surface_grid):
        rows = surface_grid.data[:6].copy()
        rows[2] = _corrupt(rows[2], surface_grid)
        flags = arbitrage_flags(rows, surface_grid)
        expected = [
            bool(check_no_arbitrage(vol_to_calls(row, surface_grid))) for row in rows
        ]
        assert flags.tolist() == expected
        assert flags[2]


class TestRepair:
    """測試套利修正"""

    def test_hand_example(self):
        """C₂ 由 0.09 移到 0.07，其餘不變"""
        calls = CallGrid(np.array([[0.12], [0.09], [0.02]]), HAND_STRIKES, [0.25])
        fixed = repair_arbitrage(calls)
        np.testing.assert_allclose(
            fixed.values.ravel(), [0.12, 0.07, 0.02], rtol=0, atol=1e-12
        )
        assert check_no_arbitrage(fixed) == []

    def test_clean_input_unchanged(self, surface_grid):
        calls = vol_to_calls(surface_grid.data[0], surface_grid)
        assert repair_arbitrage(calls) is calls

    def test_repaired_surface_is_clean(self, surface_grid):
        calls = vol_to_calls(_corrupt(surface_grid.data[4], surface_grid), surface_grid)
        assert check_no_arbitrage(calls)
        fixed = repair_arbitrage(calls, margin=1e-6)
        assert check_no_arbitrage(fixed) == []
        # 修正後仍可反推隱含波動率
        assert np.isfinite(calls_to_vols(fixed, surface_grid)).all()

    def test_single_surface_is_fast(self, surface_grid):
        """d = 28 的曲面修正在一秒內完成"""
        calls = vol_to_calls(_corrupt(surface_grid.data[9], surface_grid), surface_grid)
        start = time.perf_counter()
        repair_arbitrage(calls)
        assert time.perf_counter() - start < 1.0


class TestRepairPipeline:
    """測試路徑組的套利修正流程"""

    @pytest.fixture
    def corrupted(self, surface_grid):
        paths = surface_grid.data[:40].reshape(2, 20, surface_grid.d).copy()
        positions = [(0, 3), (0, 10), (1, 5), (1, 19)]
        for i, t in positions:
            paths[i, t] = _corrupt(paths[i, t], surface_grid)
        return PathBundle(paths, seed=4, model_id="test"), positions

    def test_flags_and_repair(self, surface_grid, corrupted):
        bundle, positions = corrupted
        repaired, flags = repair_pipeline(bundle, surface_grid)

        assert flags.shape == (2, 20)
        assert flags.mean() == pytest.approx(0.1)
        assert sorted(map(tuple, np.argwhere(flags).tolist())) == positions
        remaining = arbitrage_flags(repaired.paths.astype(np.float64), surface_grid)
        assert not remaining.any()
        assert np.array_equal(repaired.paths[~flags], bundle.paths[~flags])
        assert repaired.seed == 4 and repaired.model_id == "test"

    def test_idempotent(self, surface_grid, corrupted):
        """修正後的路徑組再修正一次不會改變"""
        repaired, _ = repair_pipeline(corrupted[0], surface_grid)
        again, flags = repair_pipeline(repaired, surface_grid)
        assert not flags.any()
        assert again.paths.tobytes() == repaired.paths.tobytes()

    def test_workers_agree(self, surface_grid, corrupted):
        serial, _ = repair_pipeline(corrupted[0], surface_grid, workers=1)
        parallel, _ = repair_pipeline(corrupted[0], surface_grid, workers=3)
        assert np.array_equal(serial.paths, parallel.paths)

    def test_channel_mismatch(self, surface_grid):
        with pytest.raises(ShapeError):
            repair_pipeline(PathBundle(np.zeros((1, 3, 5))), surface_grid)


class TestSimplex:
    """測試兩階段單體法"""

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_scipy(self, seed):
        """隨機可行 LP 的最佳值與 scipy 一致 (含負右手邊)"""
        rng = np.random.default_rng(seed)
        A = rng.normal(size=(8, 5))
        x0 = rng.uniform(0.5, 1.5, size=5)
        b = A @ x0 + rng.uniform(0.0, 0.5, size=8)
        c = rng.uniform(0.1, 1.0, size=5)
        c[0] = -0.2
        A = np.vstack([A, np.ones(5)])
        b = np.append(b, 10.0)

        ours = solve_lp(c, A, b)
        reference = linprog(c, A_ub=A, b_ub=b, bounds=(0, None), method="highs")
        assert reference.status == 0
        assert ours.status == "optimal"
        assert ours.objective == pytest.approx(reference.fun, abs=1e-8)
        assert np.all(A @ ours.x <= b + 1e-9)
        assert np.all(ours.x >= -1e-12)

    def test_degenerate_cycling_example(self):
        """Bland 法則在經典循環例子上仍會終止"""
        c = np.array([-0.75, 20.0, -0.5, 6.0])
        A = np.array(
            [
                [0.25, -8.0, -1.0, 9.0],
                [0.5, -12.0, -0.5, 3.0],
                [0.0, 0.0, 1.0, 0.0],
            ]
        )
        b = np.array([0.0, 0.0, 1.0])
        solution = solve_lp(c, A, b)
        assert solution.objective == pytest.approx(-1.25)

    def test_phase_one_needed(self):
        """x ≥ 1 需要人工變數"""
        solution = solve_lp(np.array([1.0]), np.array([[-1.0]]), np.array([-1.0]))
        assert solution.x[0] == pytest.approx(1.0)
        assert solution.objective == pytest.approx(1.0)

    def test_infeasible(self):
        with pytest.raises(LinearProgramError):
            solve_lp(np.array([1.0]), np.array([[1.0]]), np.array([-1.0]))

    def test_unbounded(self):
        with pytest.raises(LinearProgramError):
            solve_lp(np.array([-1.0]), np.array([[-1.0]]), np.array([0.0]))

    def test_dimension_mismatch(self):
        with pytest.raises(LinearProgramError):
            solve_lp(np.ones(2), np.ones((1, 3)), np.ones(1))

    def test_redundant_equalities(self):
        """x ≥ 1 與 x ≤ 1 同時成立的退化情形"""
        A = np.array([[-1.0, 0.0], [1.0, 0.0], [-1.0, 0.0]])
        b = np.array([-1.0, 1.0, -1.0])
        solution = solve_lp(np.array([1.0, 1.0]), A, b)
        np.testing.assert_allclose(solution.x, [1.0, 0.0], atol=1e-12)
