import math

import pytest
import torch

from gatwsge.schedule import OptimizerConfig, lr_at


def test_warmup_and_decay():
    cfg = OptimizerConfig(max_epochs=60)
    assert lr_at(0, cfg) == pytest.approx(2e-5)
    assert lr_at(2.5, cfg) == pytest.approx(6e-5)
    assert lr_at(5, cfg) == pytest.approx(1e-4)
    assert lr_at(60, cfg) < 1e-6
    mid = 5 + 55 / 2
    assert lr_at(mid, cfg) == pytest.approx(5e-5)
    lrs = [lr_at(5 + k * 0.5, cfg) for k in range(111)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))


def test_short_horizon():
    cfg = OptimizerConfig(max_epochs=3, warmup_epochs=5, min_epochs=1)
    assert lr_at(3, cfg) < 1e-4


def test_config_validation():
    with pytest.raises(ValueError):
        OptimizerConfig(warmup_start_lr=1e-3)
    with pytest.raises(ValueError):
        OptimizerConfig(patience=0)
    assert OptimizerConfig(**OptimizerConfig(seed=3).to_dict()) == OptimizerConfig(seed=3)


def test_zero_gradient_step_is_pure_weight_decay():
    cfg = OptimizerConfig()
    p = torch.nn.Parameter(torch.randn(10, dtype=torch.float64))
    before = p.detach().clone()
    opt = torch.optim.AdamW([p], lr=1e-4, betas=cfg.betas, weight_decay=cfg.weight_decay)
    p.grad = torch.zeros_like(p)
    opt.step()
    assert torch.allclose(p.detach(), before * (1 - 1e-4 * 0.01), rtol=0, atol=1e-18)
    assert math.isclose(float(p.detach()[0] / before[0]), 1 - 1e-6, rel_tol=1e-15)
