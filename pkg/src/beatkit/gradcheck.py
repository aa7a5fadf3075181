"""Central finite-difference verification of every analytic gradient.

Each random instance draws a small tensor and a small model (all sub-modules
enabled), computes the two-head loss, and compares the hand-derived gradient
of every parameter scalar against a central difference with step 1e-5.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .classifier import FrameTargets, bce_loss
from .model import (
    ModelDims,
    ModelParams,
    forward,
    init_params,
    loss_and_grads,
    named_grads,
    named_params,
)
from .tensors import FeatureTensor

FD_STEP = 1e-5
REL_TOLERANCE = 1e-4


@dataclass
class GradCheckResult:
    passed: bool
    max_rel_error: float
    instances: int
    checked_values: int
    elapsed_s: float


def relative_error(analytic: float, numeric: float) -> float:
    scale = max(abs(analytic), abs(numeric), 1.0)
    return abs(analytic - numeric) / scale


def random_instance(rng: np.random.Generator):
    """A small random tensor, matching model and widening-level targets."""
    n = int(rng.integers(1, 5))
    f = int(rng.integers(1, 9))
    t = int(rng.integers(1, 9))
    dims = ModelDims(
        n=n,
        f=f,
        hidden=int(rng.integers(2, 7)),
        attn_dim=int(rng.integers(2, 6)),
        kernel_width=3,
        channel_kernel_width=3,
        dilations=(1, 2),
    )
    params = init_params(rng, dims)
    tensor = FeatureTensor(rng.normal(0.0, 1.0, size=(n, f, t)), 100.0)
    levels = np.asarray([0.0, 0.25, 0.5, 1.0])
    targets = FrameTargets(rng.choice(levels, size=t), rng.choice(levels, size=t))
    return tensor, params, targets


def _loss_only(params: ModelParams, tensor: FeatureTensor, targets: FrameTargets) -> float:
    curves, _ = forward(params, tensor)
    loss, _, _ = bce_loss(curves, targets)
    return loss


def check_instance(
    tensor: FeatureTensor,
    params: ModelParams,
    targets: FrameTargets,
    check_input: bool = False,
    step: float = FD_STEP,
) -> tuple[float, int]:
    """Max relative error over every parameter scalar (and optionally input)."""
    _, grads, grad_h = loss_and_grads(params, tensor, targets)
    analytic = dict(named_grads(params, grads))
    worst = 0.0
    checked = 0
    for name, arr in named_params(params):
        grad_arr = analytic[name]
        flat = arr.reshape(-1)
        grad_flat = grad_arr.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + step
            up = _loss_only(params, tensor, targets)
            flat[i] = original - step
            down = _loss_only(params, tensor, targets)
            flat[i] = original
            numeric = (up - down) / (2.0 * step)
            worst = max(worst, relative_error(float(grad_flat[i]), numeric))
            checked += 1
    if check_input:
        flat = tensor.data.reshape(-1)
        grad_flat = grad_h.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + step
            up = _loss_only(params, tensor, targets)
            flat[i] = original - step
            down = _loss_only(params, tensor, targets)
            flat[i] = original
            numeric = (up - down) / (2.0 * step)
            worst = max(worst, relative_error(float(grad_flat[i]), numeric))
            checked += 1
    return worst, checked


def run_suite(seed: int = 0, instances: int = 100) -> GradCheckResult:
    """Run ``instances`` random gradient checks; passes at 1e-4 relative."""
    rng = np.random.default_rng(seed)
    start = time.monotonic()
    worst = 0.0
    checked = 0
    for _ in range(instances):
        tensor, params, targets = random_instance(rng)
        err, values = check_instance(tensor, params, targets)
        worst = max(worst, err)
        checked += values
    elapsed = time.monotonic() - start
    return GradCheckResult(worst <= REL_TOLERANCE, worst, instances, checked, elapsed)
