"""Central finite-difference check of analytic gradients through a whole model."""
from __future__ import annotations

import copy
from typing import Callable, NamedTuple

import numpy as np
import torch

from .datasets.preprocess import DEFAULT_CROP_SCALE, head_crop_standardize
from .datasets.synth import PRESETS, random_synth_spec, render_synth
from .geometry import project_to_2d
from .losses import gaze_loss, ws_loss_2d
from .model import ModelConfig, build_model, gradcheck_config

DEFAULT_STEP = 1e-4
TOLERANCE = 1e-3
MIN_COORDS = 200

LOSSES: dict[str, Callable] = {"gaze": gaze_loss, "ws": ws_loss_2d}


class GradCheckResult(NamedTuple):
    max_rel_error: float
    n_coords: int
    n_groups: int
    worst: str  # "<param name>[flat index]"

    @property
    def passed(self) -> bool:
        return self.max_rel_error < TOLERANCE

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} max_rel_error={self.max_rel_error:.3e} coords={self.n_coords} "
                f"groups={self.n_groups} worst={self.worst}")


def relative_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def toy_samples(kind: str = "gaze", batch: int = 2, frames: int = 4, size: int = 16, seed: int = 0):
    """Rendered training-like clips with their 3D (``gaze``) or 2D (``ws``) labels."""
    rng = np.random.default_rng(seed)
    domain = PRESETS["3d"]
    xs, ys = [], []
    for _ in range(batch):
        spec = random_synth_spec(rng, domain, frames)
        frames_ = render_synth(spec)
        xs.append(np.stack([head_crop_standardize(f, spec["head_box"], DEFAULT_CROP_SCALE, size)
                            for f in frames_]))
        gazes = np.asarray(spec["gazes"])
        ys.append(project_to_2d(gazes[0]) if kind == "ws" else gazes)
    return torch.from_numpy(np.stack(xs)).double(), torch.from_numpy(np.stack(ys))


def _pick_coords(params, n_coords: int, rng: np.random.Generator):
    """At least one coordinate per tensor, the rest spread in proportion to size."""
    sizes = np.array([p.numel() for _, p in params])
    n_coords = min(max(n_coords, len(params)), int(sizes.sum()))
    extra = n_coords - len(params)
    alloc = np.ones(len(params), dtype=int)
    if extra:
        alloc += rng.multinomial(extra, sizes / sizes.sum())
    alloc = np.minimum(alloc, sizes)
    # hand any overflow from small tensors to the largest ones with room
    for i in np.argsort(-sizes, kind="stable"):
        alloc[i] += min(sizes[i] - alloc[i], n_coords - alloc.sum())
    picks = []
    for (name, p), k in zip(params, alloc):
        for idx in rng.choice(p.numel(), size=int(k), replace=False):
            picks.append((name, p, int(idx)))
    return picks


def grad_check(model: ModelConfig | torch.nn.Module | None = None, loss: str | Callable = "gaze",
               samples=None, step: float = DEFAULT_STEP, n_coords: int = MIN_COORDS,
               seed: int = 0) -> GradCheckResult:
    """Compare backprop gradients with central differences in float64.

    ``model`` may be a config (a fresh network is built) or a module (a float64
    copy is checked). ``loss`` is ``"gaze"``, ``"ws"`` or ``f(pred, target)``.
    """
    if model is None or isinstance(model, ModelConfig):
        net = build_model(model or gradcheck_config(), seed=seed, dtype=torch.float64)
    else:
        net = copy.deepcopy(model).to(torch.float64)
    net.eval()
    loss_fn = LOSSES[loss] if isinstance(loss, str) else loss
    if samples is None:
        samples = toy_samples(loss if isinstance(loss, str) else "gaze", seed=seed)
    x, y = (torch.as_tensor(s, dtype=torch.float64) for s in samples)

    def objective() -> torch.Tensor:
        return loss_fn(net(x), y)

    net.zero_grad(set_to_none=True)
    objective().backward()
    params = [(n, p) for n, p in net.named_parameters() if p.requires_grad]
    analytic = {n: p.grad.detach().clone().reshape(-1) if p.grad is not None else torch.zeros(p.numel(),
                                                                                               dtype=p.dtype)
                for n, p in params}

    worst, worst_name = 0.0, ""
    picks = _pick_coords(params, n_coords, np.random.default_rng(seed))
    with torch.no_grad():
        for name, p, idx in picks:
            flat = p.view(-1)
            orig = flat[idx].item()
            flat[idx] = orig + step
            up = objective().item()
            flat[idx] = orig - step
            down = objective().item()
            flat[idx] = orig
            numeric = (up - down) / (2 * step)
            err = relative_error(analytic[name][idx].item(), numeric)
            if err > worst or not worst_name:
                worst, worst_name = err, f"{name}[{idx}]"
    return GradCheckResult(worst, len(picks), len(params), worst_name)


__all__ = ["GradCheckResult", "grad_check", "relative_error", "toy_samples"]
