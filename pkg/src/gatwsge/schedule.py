from __future__ import annotations

import math
from dataclasses import asdict, dataclass


@dataclass(frozen=True)
class OptimizerConfig:
    base_lr: float = 1e-4
    warmup_epochs: float = 5.0
    warmup_start_lr: float = 2e-5
    max_epochs: int = 60          # also the cosine horizon
    min_epochs: int = 20
    patience: int = 10
    batch_size: int = 32
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(self.betas))
        if self.warmup_start_lr > self.base_lr:
            raise ValueError("warmup_start_lr must not exceed base_lr")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d


def lr_at(epoch: float, cfg: OptimizerConfig) -> float:
    """Linear warmup to ``base_lr``, then half-cosine decay to zero at ``max_epochs``."""
    if epoch < cfg.warmup_epochs:
        return cfg.warmup_start_lr + (cfg.base_lr - cfg.warmup_start_lr) * epoch / cfg.warmup_epochs
    span = cfg.max_epochs - cfg.warmup_epochs
    if span <= 0:
        return cfg.base_lr
    progress = min(1.0, (epoch - cfg.warmup_epochs) / span)
    return 0.5 * cfg.base_lr * (1.0 + math.cos(math.pi * progress))
