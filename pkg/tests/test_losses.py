"""
GAN 損失測試
"""

import math
import os
import sys

import pytest
import torch

# 添加src目錄到Python路徑
sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from src.core.exceptions import ConfigurationError, ShapeError
from src.models.series import TimeSeriesMatrix
from src.models.specs import LossConfig
from src.services.losses import (
    discriminator_loss,
    generator_loss,
    gp_interpolate,
    gradient_norm,
    gradient_penalty,
)

ORIGINAL = LossConfig(kind="original")
WGAN = LossConfig(kind="wgan_gp", gp_lambda=10.0)


class TestOriginalLoss:
    """測試原始 GAN 損失"""

    def test_generator_at_zero(self):
        """d_f = 0 時生成器損失為 ln 2"""
        assert float(generator_loss(0.0, ORIGINAL)) == pytest.approx(math.log(2.0))

    def test_discriminator_at_zero(self):
        assert float(discriminator_loss(0.0, 0.0, cfg=ORIGINAL)) == pytest.approx(
            2.0 * math.log(2.0)
        )

    def test_generator_is_non_saturating(self):
        """生成器損失隨 d_f 增加而下降，且大負值下仍有限"""
        losses = [float(generator_loss(x, ORIGINAL)) for x in (-50.0, 0.0, 50.0)]
        assert losses[0] > losses[1] > losses[2]
        assert math.isfinite(losses[0])
        assert losses[0] == pytest.approx(50.0, rel=1e-6)

    def test_batch_mean(self):
        d_f = torch.tensor([0.0, 0.0, 0.0], dtype=torch.float64)
        assert float(generator_loss(d_f, ORIGINAL)) == pytest.approx(math.log(2.0))


class TestWassersteinLoss:
    """測試 WGAN-GP 損失"""

    def test_generator_loss(self):
        d_f = torch.tensor([1.0, 3.0], dtype=torch.float64)
        assert float(generator_loss(d_f, WGAN)) == pytest.approx(-2.0)

    def test_penalty_vanishes_at_unit_norm(self):
        loss = discriminator_loss(2.0, 1.0, grad_norms=1.0, cfg=WGAN)
        assert float(loss) == pytest.approx(-1.0)

    def test_penalty_at_norm_two(self):
        """‖g‖ = 2 時懲罰項為 λ"""
        loss = discriminator_loss(0.0, 0.0, grad_norms=2.0, cfg=WGAN)
        assert float(loss) == pytest.approx(10.0)

    def test_needs_gradient_norms(self):
        with pytest.raises(ConfigurationError):
            discriminator_loss(0.0, 0.0, cfg=WGAN)

    def test_penalty_is_mean_over_batch(self):
        norms = torch.tensor([1.0, 3.0], dtype=torch.float64)
        assert float(gradient_penalty(norms)) == pytest.approx(2.0)


class TestGradientPenalty:
    """測試插值與梯度範數"""

    def test_interpolate_per_sample(self):
        x = torch.zeros(2, 3, 1, dtype=torch.float64)
        y = torch.ones(2, 3, 1, dtype=torch.float64)
        mixed = gp_interpolate(x, y, torch.tensor([0.25, 1.0], dtype=torch.float64))
        torch.testing.assert_close(
            mixed[0], torch.full((3, 1), 0.25, dtype=torch.float64)
        )
        torch.testing.assert_close(mixed[1], torch.ones(3, 1, dtype=torch.float64))

    def test_interpolate_matrices(self):
        x = TimeSeriesMatrix(torch.zeros(4, 2, dtype=torch.float64))
        y = TimeSeriesMatrix(torch.full((4, 2), 2.0, dtype=torch.float64))
        mixed = gp_interpolate(x, y, 0.5)
        assert isinstance(mixed, TimeSeriesMatrix)
        torch.testing.assert_close(mixed.values, torch.ones(4, 2, dtype=torch.float64))

    def test_interpolate_shape_mismatch(self):
        with pytest.raises(ShapeError):
            gp_interpolate(torch.zeros(2, 3, 1), torch.zeros(2, 4, 1), 0.5)

    def test_linear_discriminator_norm(self):
        """全 1 權重的線性判別器梯度範數為 √(l·d)"""
        l, d = 16, 3

        def linear(x):
            return x.sum(dim=(-2, -1))

        x = torch.randn(5, l, d, dtype=torch.float64)
        norms = gradient_norm(linear, x)
        torch.testing.assert_close(
            norms, torch.full((5,), math.sqrt(l * d), dtype=torch.float64)
        )

    def test_norm_is_differentiable_in_parameters(self):
        """懲罰項可對判別器參數反向傳播"""
        weight = torch.ones(4, 1, dtype=torch.float64, requires_grad=True)

        def critic(x):
            return (x * weight).sum(dim=(-2, -1))

        norms = gradient_norm(critic, torch.randn(2, 4, 1, dtype=torch.float64))
        gradient_penalty(norms).backward()
        # ‖g‖ = ‖w‖ = 2，d/dw (‖w‖ - 1)² = 2(‖w‖ - 1) w / ‖w‖ = 1
        torch.testing.assert_close(
            weight.grad, torch.ones(4, 1, dtype=torch.float64)
        )

    def test_constant_discriminator(self):
        norms = gradient_norm(lambda x: torch.zeros(x.shape[0]), torch.randn(3, 4, 1))
        assert torch.equal(norms, torch.zeros(3))
