"""Whole-model parameter handling and the end-to-end forward/backward pass.

Glues the aggregation module and the classifier together so the trainer, the
gradient checker and the checkpoint code can treat "the model" as one flat,
deterministically ordered collection of named float64 arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .classifier import (
    ClassifierParams,
    FrameTargets,
    bce_loss,
    classifier_backward,
    classify,
    zero_classifier_grads,
)
from .msam import (
    DEFAULT_DILATIONS,
    ChannelAttnParams,
    MsamParams,
    MsConvParams,
    msam_backward,
    msam_forward,
    zero_msam_grads,
)
from .tensors import FeatureTensor


@dataclass
class ModelDims:
    """Structural hyper-parameters; everything needed to rebuild the model."""

    n: int
    f: int
    hidden: int = 128
    attn_dim: int = 16
    kernel_width: int = 3
    channel_kernel_width: int = 3
    dilations: tuple[int, ...] = DEFAULT_DILATIONS
    temporal: bool = True
    frequency: bool = True
    channel: bool = True


@dataclass
class ModelParams:
    msam: MsamParams
    classifier: ClassifierParams
    dims: ModelDims


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(float(fan_in))
    return rng.uniform(-bound, bound, size=shape)


def _init_ms_conv(rng: np.random.Generator, n: int, k: int, dilations) -> MsConvParams:
    m = len(dilations)
    kernels = [_uniform(rng, (n, n, k), n * k) for _ in range(m)]
    return MsConvParams(
        kernels=kernels,
        dilations=tuple(dilations),
        mlp_weight=_uniform(rng, (n, m * n), m * n),
        mlp_bias=_uniform(rng, (n,), m * n),
    )


def init_params(rng: np.random.Generator, dims: ModelDims) -> ModelParams:
    """Fresh parameters, uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) per array."""
    temporal = _init_ms_conv(rng, dims.n, dims.kernel_width, dims.dilations) if dims.temporal else None
    frequency = _init_ms_conv(rng, dims.n, dims.kernel_width, dims.dilations) if dims.frequency else None
    channel = None
    if dims.channel:
        d_c, k_c = dims.attn_dim, dims.channel_kernel_width
        channel = ChannelAttnParams(
            w_q=_uniform(rng, (d_c, 1, k_c), k_c),
            w_k=_uniform(rng, (d_c, 1, k_c), k_c),
            w_v=_uniform(rng, (d_c, 1, k_c), k_c),
            w_out=_uniform(rng, (1, d_c, k_c), d_c * k_c),
        )
    in_width = dims.n * dims.f
    classifier = ClassifierParams(
        w_shared=_uniform(rng, (dims.hidden, in_width), in_width),
        b_shared=_uniform(rng, (dims.hidden,), in_width),
        w_beat=_uniform(rng, (1, dims.hidden), dims.hidden),
        b_beat=_uniform(rng, (1,), dims.hidden),
        w_down=_uniform(rng, (1, dims.hidden), dims.hidden),
        b_down=_uniform(rng, (1,), dims.hidden),
    )
    return ModelParams(MsamParams(temporal, frequency, channel), classifier, dims)


def named_params(params: ModelParams) -> list[tuple[str, np.ndarray]]:
    """Deterministically ordered (name, array) pairs over all enabled weights."""
    out: list[tuple[str, np.ndarray]] = []
    for branch_name in ("temporal", "frequency"):
        branch = getattr(params.msam, branch_name)
        if branch is None:
            continue
        for i, kern in enumerate(branch.kernels):
            out.append((f"msam.{branch_name}.kernel{i}", kern))
        out.append((f"msam.{branch_name}.mlp_weight", branch.mlp_weight))
        out.append((f"msam.{branch_name}.mlp_bias", branch.mlp_bias))
    if params.msam.channel is not None:
        ch = params.msam.channel
        out.extend(
            [
                ("msam.channel.w_q", ch.w_q),
                ("msam.channel.w_k", ch.w_k),
                ("msam.channel.w_v", ch.w_v),
                ("msam.channel.w_out", ch.w_out),
            ]
        )
    cl = params.classifier
    out.extend(
        [
            ("classifier.w_shared", cl.w_shared),
            ("classifier.b_shared", cl.b_shared),
            ("classifier.w_beat", cl.w_beat),
            ("classifier.b_beat", cl.b_beat),
            ("classifier.w_down", cl.w_down),
            ("classifier.b_down", cl.b_down),
        ]
    )
    return out


def named_grads(params: ModelParams, grads: dict) -> list[tuple[str, np.ndarray]]:
    """Flatten a gradient dict (from :func:`loss_and_grads`) in named_params order."""
    out: list[tuple[str, np.ndarray]] = []
    for branch_name in ("temporal", "frequency"):
        if getattr(params.msam, branch_name) is None:
            continue
        branch = grads["msam"][branch_name]
        for i, kern in enumerate(branch["kernels"]):
            out.append((f"msam.{branch_name}.kernel{i}", kern))
        out.append((f"msam.{branch_name}.mlp_weight", branch["mlp_weight"]))
        out.append((f"msam.{branch_name}.mlp_bias", branch["mlp_bias"]))
    if params.msam.channel is not None:
        ch = grads["msam"]["channel"]
        out.extend(
            [
                ("msam.channel.w_q", ch["w_q"]),
                ("msam.channel.w_k", ch["w_k"]),
                ("msam.channel.w_v", ch["w_v"]),
                ("msam.channel.w_out", ch["w_out"]),
            ]
        )
    cl = grads["classifier"]
    out.extend(
        [
            ("classifier.w_shared", cl["w_shared"]),
            ("classifier.b_shared", cl["b_shared"]),
            ("classifier.w_beat", cl["w_beat"]),
            ("classifier.b_beat", cl["b_beat"]),
            ("classifier.w_down", cl["w_down"]),
            ("classifier.b_down", cl["b_down"]),
        ]
    )
    return out


def zero_grads(params: ModelParams) -> dict:
    return {
        "msam": zero_msam_grads(params.msam),
        "classifier": zero_classifier_grads(params.classifier),
    }


def accumulate_grads(total: dict, delta: dict, scale: float = 1.0) -> None:
    """total += scale * delta, recursing through the gradient dict layout."""
    for key, value in delta.items():
        slot = total[key]
        if isinstance(value, dict):
            accumulate_grads(slot, value, scale)
        elif isinstance(value, list):
            for tgt, src in zip(slot, value):
                tgt += scale * src
        else:
            slot += scale * value


def count_params(params: ModelParams) -> int:
    return sum(arr.size for _, arr in named_params(params))


def forward(params: ModelParams, h: FeatureTensor):
    """Full inference pass: returns (curves, msam maps)."""
    h_tilde, maps, _ = msam_forward(h, params.msam)
    curves, _ = classify(h_tilde, params.classifier)
    return curves, maps


def loss_and_grads(params: ModelParams, h: FeatureTensor, targets: FrameTargets):
    """Loss plus exact gradients for every parameter and the input tensor.

    Returns ``(loss, grads, grad_h)`` with ``grads`` shaped like
    :func:`zero_grads`.
    """
    h_tilde, _, msam_cache = msam_forward(h, params.msam)
    curves, cls_cache = classify(h_tilde, params.classifier)
    loss, grad_beat_logit, grad_down_logit = bce_loss(curves, targets)
    grad_h_tilde, cls_grads = classifier_backward(cls_cache, grad_beat_logit, grad_down_logit)
    grad_h, msam_grads = msam_backward(msam_cache, grad_h_tilde)
    return loss, {"msam": msam_grads, "classifier": cls_grads}, grad_h
