"""Multi-axis semantic aggregation: attention over time, feature and channel axes.

Three parallel sub-modules each produce a sigmoid attention map from a pooled
view of the input tensor:

* temporal: mean over features -> multi-scale dilated convolutions -> per-frame
  affine map -> sigmoid, giving ``attn_t [n, t]``;
* frequency: same structure (separate weights) on the mean over frames, giving
  ``attn_f [n, f]``;
* channel: mean over features and frames -> single-head self-attention across
  the channel axis -> sigmoid, giving ``attn_c [n]``.

The maps multiply into one broadcast attention volume which gates the input
residually: ``out = h * (1 + attn)``. Both the forward map and its exact
reverse-mode gradients are implemented here; there is no autodiff anywhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .tensors import FeatureTensor

DEFAULT_DILATIONS = (1, 2, 4, 8)


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax_rows(x: np.ndarray) -> np.ndarray:
    """Row-wise softmax of a 2-D array."""
    shifted = x - x.max(axis=1, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# parameter containers


@dataclass
class MsConvParams:
    """Weights of one multi-scale convolution sub-module.

    ``kernels[i]`` has shape ``[n, n, k]`` and is applied with dilation
    ``dilations[i]``; the branch outputs are concatenated to ``[M*n, L]`` and
    mapped back to ``[n, L]`` by the per-position affine layer
    (``mlp_weight [n, M*n]``, ``mlp_bias [n]``). Convolutions carry no bias.
    """

    kernels: list[np.ndarray]
    dilations: tuple[int, ...]
    mlp_weight: np.ndarray
    mlp_bias: np.ndarray

    def __post_init__(self):
        if len(self.kernels) != len(self.dilations) or not self.kernels:
            raise ShapeError("need one kernel per dilation rate")
        if any(d2 <= d1 for d1, d2 in zip(self.dilations, self.dilations[1:])):
            raise ValueError(f"dilation rates must be strictly increasing: {self.dilations}")
        n = self.kernels[0].shape[0]
        for kern in self.kernels:
            if kern.ndim != 3 or kern.shape[0] != n or kern.shape[1] != n:
                raise ShapeError(f"branch kernel must be [n, n, k], got {kern.shape}")
            if kern.shape[2] % 2 == 0:
                raise ValueError(f"kernel width must be odd, got {kern.shape[2]}")
        m = len(self.kernels)
        if self.mlp_weight.shape != (n, m * n):
            raise ShapeError(
                f"mlp weight must be [{n}, {m * n}], got {self.mlp_weight.shape}"
            )
        if self.mlp_bias.shape != (n,):
            raise ShapeError(f"mlp bias must be [{n}], got {self.mlp_bias.shape}")


@dataclass
class ChannelAttnParams:
    """Weights of the channel self-attention sub-module.

    The pooled channel vector is treated as a length-n sequence of scalar
    tokens. ``w_q/w_k/w_v`` are ``[d_c, 1, k_c]`` convolutions lifting it to
    d_c-dimensional token embeddings; ``w_out [1, d_c, k_c]`` maps the attended
    tokens back to one scalar per channel. Scores are scaled by sqrt(d_c).
    """

    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_out: np.ndarray

    def __post_init__(self):
        d_c = self.w_q.shape[0]
        for name, kern in (("w_q", self.w_q), ("w_k", self.w_k), ("w_v", self.w_v)):
            if kern.ndim != 3 or kern.shape[:2] != (d_c, 1):
                raise ShapeError(f"{name} must be [d_c, 1, k_c], got {kern.shape}")
            if kern.shape[2] % 2 == 0:
                raise ValueError(f"{name} width must be odd, got {kern.shape[2]}")
        if self.w_out.ndim != 3 or self.w_out.shape[:2] != (1, d_c):
            raise ShapeError(f"w_out must be [1, d_c, k_c], got {self.w_out.shape}")
        if self.w_out.shape[2] % 2 == 0:
            raise ValueError(f"w_out width must be odd, got {self.w_out.shape[2]}")

    @property
    def d_c(self) -> int:
        return self.w_q.shape[0]


@dataclass
class MsamParams:
    """All learnable weights of the aggregation module.

    Any sub-module may be ``None``, which removes its factor from the fused
    attention product entirely (used by the ablation harness). Temporal and
    frequency banks are always distinct parameter sets.
    """

    temporal: MsConvParams | None
    frequency: MsConvParams | None
    channel: ChannelAttnParams | None

    @property
    def any_enabled(self) -> bool:
        return any(p is not None for p in (self.temporal, self.frequency, self.channel))


@dataclass
class AttentionMaps:
    """The three factor maps plus their broadcast product.

    Disabled sub-modules leave their entry (and possibly ``fused``) as None.
    """

    attn_t: np.ndarray | None
    attn_f: np.ndarray | None
    attn_c: np.ndarray | None
    fused: np.ndarray | None


# ---------------------------------------------------------------------------
# pooling


def t_avg_pool(h: FeatureTensor) -> np.ndarray:
    """Mean over the feature axis: ``out[c, j] = mean_i h[c, i, j]`` -> [n, t]."""
    return h.data.mean(axis=1)


def f_avg_pool(h: FeatureTensor) -> np.ndarray:
    """Mean over the frame axis: ``out[c, i] = mean_j h[c, i, j]`` -> [n, f]."""
    return h.data.mean(axis=2)


def c_avg_pool(h: FeatureTensor) -> np.ndarray:
    """Mean over features and frames: ``out[c] = mean_{i,j} h[c, i, j]`` -> [n]."""
    return h.data.mean(axis=(1, 2))


# ---------------------------------------------------------------------------
# dilated 1-D convolution


def dilated_conv1d(x: np.ndarray, kernel: np.ndarray, dilation: int) -> np.ndarray:
    """Length-preserving dilated 1-D convolution, no bias.

    ``out[o, j] = sum_{c, k} kernel[o, c, k] * x[c, j + (k - (K-1)/2) * dilation]``
    with out-of-range input treated as zero (same-padding).

    Parameters
    ----------
    x : ndarray, shape (n_in, L)
    kernel : ndarray, shape (n_out, n_in, K), K odd
    dilation : int, >= 1
    """
    if x.ndim != 2 or kernel.ndim != 3:
        raise ShapeError("conv expects x [n_in, L] and kernel [n_out, n_in, K]")
    n_out, n_in, width = kernel.shape
    if x.shape[0] != n_in:
        raise ShapeError(f"kernel expects {n_in} input channels, x has {x.shape[0]}")
    if width % 2 == 0:
        raise ValueError(f"kernel width must be odd, got {width}")
    if dilation < 1:
        raise ValueError(f"dilation must be >= 1, got {dilation}")
    length = x.shape[1]
    half = (width - 1) // 2
    out = np.zeros((n_out, length), dtype=np.float64)
    for tap in range(width):
        offset = (tap - half) * dilation
        lo = max(0, -offset)
        hi = min(length, length - offset)
        if lo < hi:
            out[:, lo:hi] += kernel[:, :, tap] @ x[:, lo + offset : hi + offset]
    return out


def dilated_conv1d_backward(
    grad_out: np.ndarray, x: np.ndarray, kernel: np.ndarray, dilation: int
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of :func:`dilated_conv1d` w.r.t. input and kernel."""
    n_out, n_in, width = kernel.shape
    length = x.shape[1]
    half = (width - 1) // 2
    grad_x = np.zeros_like(x)
    grad_kernel = np.zeros_like(kernel)
    for tap in range(width):
        offset = (tap - half) * dilation
        lo = max(0, -offset)
        hi = min(length, length - offset)
        if lo < hi:
            grad_kernel[:, :, tap] = grad_out[:, lo:hi] @ x[:, lo + offset : hi + offset].T
            grad_x[:, lo + offset : hi + offset] += kernel[:, :, tap].T @ grad_out[:, lo:hi]
    return grad_x, grad_kernel


# ---------------------------------------------------------------------------
# the two pooled-axis attention branches (temporal / frequency)


def ms_conv_attention(x: np.ndarray, params: MsConvParams) -> np.ndarray:
    """Multi-scale conv branch: sigmoid(affine(concat of dilated convs))."""
    out, _ = _ms_conv_forward(x, params)
    return out


def _ms_conv_forward(x: np.ndarray, params: MsConvParams):
    branch_outs = [
        dilated_conv1d(x, kern, dil) for kern, dil in zip(params.kernels, params.dilations)
    ]
    concat = np.concatenate(branch_outs, axis=0)
    z = params.mlp_weight @ concat + params.mlp_bias[:, None]
    attn = sigmoid(z)
    return attn, {"x": x, "concat": concat, "attn": attn}


def _ms_conv_backward(grad_attn: np.ndarray, cache: dict, params: MsConvParams):
    """Returns (grad_x, dict of parameter gradients)."""
    attn = cache["attn"]
    grad_z = grad_attn * attn * (1.0 - attn)
    grad_w = grad_z @ cache["concat"].T
    grad_b = grad_z.sum(axis=1)
    grad_concat = params.mlp_weight.T @ grad_z
    n = params.kernels[0].shape[0]
    grad_x = np.zeros_like(cache["x"])
    grad_kernels = []
    for i, (kern, dil) in enumerate(zip(params.kernels, params.dilations)):
        gx, gk = dilated_conv1d_backward(grad_concat[i * n : (i + 1) * n], cache["x"], kern, dil)
        grad_x += gx
        grad_kernels.append(gk)
    return grad_x, {"kernels": grad_kernels, "mlp_weight": grad_w, "mlp_bias": grad_b}


# ---------------------------------------------------------------------------
# channel self-attention branch


def channel_attention(h_c: np.ndarray, params: ChannelAttnParams) -> np.ndarray:
    """Single-head self-attention over the channel axis -> sigmoid gate [n]."""
    out, _ = _channel_attn_forward(h_c, params)
    return out


def _channel_attn_forward(h_c: np.ndarray, params: ChannelAttnParams):
    if h_c.ndim != 1:
        raise ShapeError(f"channel vector must be rank 1, got {h_c.shape}")
    x = h_c[None, :]  # one scalar token per channel
    q = dilated_conv1d(x, params.w_q, 1).T  # [n, d_c]
    k = dilated_conv1d(x, params.w_k, 1).T
    v = dilated_conv1d(x, params.w_v, 1).T
    scale = 1.0 / np.sqrt(float(params.d_c))
    scores = (q @ k.T) * scale
    weights = softmax_rows(scores)
    mixed = weights @ v  # [n, d_c]
    pre = dilated_conv1d(mixed.T, params.w_out, 1)  # [1, n]
    attn = sigmoid(pre[0])
    return attn, {
        "x": x,
        "q": q,
        "k": k,
        "v": v,
        "weights": weights,
        "mixed": mixed,
        "attn": attn,
        "scale": scale,
    }


def _channel_attn_backward(grad_attn: np.ndarray, cache: dict, params: ChannelAttnParams):
    attn = cache["attn"]
    grad_pre = (grad_attn * attn * (1.0 - attn))[None, :]
    grad_mixed_t, grad_w_out = dilated_conv1d_backward(
        grad_pre, cache["mixed"].T, params.w_out, 1
    )
    grad_mixed = grad_mixed_t.T
    weights = cache["weights"]
    grad_weights = grad_mixed @ cache["v"].T
    grad_v = weights.T @ grad_mixed
    # softmax backward, row-wise
    inner = (grad_weights * weights).sum(axis=1, keepdims=True)
    grad_scores = weights * (grad_weights - inner)
    scale = cache["scale"]
    grad_q = (grad_scores @ cache["k"]) * scale
    grad_k = (grad_scores.T @ cache["q"]) * scale
    gx_q, grad_w_q = dilated_conv1d_backward(grad_q.T, cache["x"], params.w_q, 1)
    gx_k, grad_w_k = dilated_conv1d_backward(grad_k.T, cache["x"], params.w_k, 1)
    gx_v, grad_w_v = dilated_conv1d_backward(grad_v.T, cache["x"], params.w_v, 1)
    grad_h_c = (gx_q + gx_k + gx_v)[0]
    return grad_h_c, {"w_q": grad_w_q, "w_k": grad_w_k, "w_v": grad_w_v, "w_out": grad_w_out}


# ---------------------------------------------------------------------------
# fusion and residual application


def fuse_attention(
    attn_t: np.ndarray | None,
    attn_f: np.ndarray | None,
    attn_c: np.ndarray | None,
    shape: tuple[int, int, int],
) -> np.ndarray | None:
    """Broadcast product of the enabled factor maps over ``[n, f, t]``.

    ``fused[c, i, j] = attn_t[c, j] * attn_f[c, i] * attn_c[c]`` with disabled
    (None) factors omitted; returns None when all three are disabled.
    """
    n, f, t = shape
    factors = []
    if attn_t is not None:
        if attn_t.shape != (n, t):
            raise ShapeError(f"attn_t must be [{n}, {t}], got {attn_t.shape}")
        factors.append(attn_t[:, None, :])
    if attn_f is not None:
        if attn_f.shape != (n, f):
            raise ShapeError(f"attn_f must be [{n}, {f}], got {attn_f.shape}")
        factors.append(attn_f[:, :, None])
    if attn_c is not None:
        if attn_c.shape != (n,):
            raise ShapeError(f"attn_c must be [{n}], got {attn_c.shape}")
        factors.append(attn_c[:, None, None])
    if not factors:
        return None
    fused = factors[0]
    for factor in factors[1:]:
        fused = fused * factor
    return np.broadcast_to(fused, (n, f, t)).copy() if fused.shape != (n, f, t) else fused


def apply_attention(h: FeatureTensor, fused: np.ndarray) -> FeatureTensor:
    """Residual gating ``out = h * (1 + fused)``; shape preserved."""
    if fused.shape != h.shape:
        raise ShapeError(f"attention volume {fused.shape} does not match tensor {h.shape}")
    return FeatureTensor(h.data * (1.0 + fused), h.frame_rate_hz)


# ---------------------------------------------------------------------------
# full module


@dataclass
class ForwardCache:
    """Every intermediate needed to run the exact backward pass."""

    params: MsamParams
    h: FeatureTensor
    temporal: dict | None
    frequency: dict | None
    channel: dict | None
    maps: AttentionMaps


def msam_forward(
    h: FeatureTensor, params: MsamParams
) -> tuple[FeatureTensor, AttentionMaps, ForwardCache]:
    """Run the aggregation module: returns (gated tensor, attention maps, cache)."""
    t_cache = f_cache = c_cache = None
    attn_t = attn_f = attn_c = None
    if params.temporal is not None:
        attn_t, t_cache = _ms_conv_forward(t_avg_pool(h), params.temporal)
    if params.frequency is not None:
        attn_f, f_cache = _ms_conv_forward(f_avg_pool(h), params.frequency)
    if params.channel is not None:
        attn_c, c_cache = _channel_attn_forward(c_avg_pool(h), params.channel)
    fused = fuse_attention(attn_t, attn_f, attn_c, h.shape)
    maps = AttentionMaps(attn_t, attn_f, attn_c, fused)
    if fused is None:
        out = FeatureTensor(h.data.copy(), h.frame_rate_hz)
    else:
        out = apply_attention(h, fused)
    cache = ForwardCache(params, h, t_cache, f_cache, c_cache, maps)
    return out, maps, cache


def zero_msam_grads(params: MsamParams) -> dict:
    """Gradient buffers matching the enabled parts of ``params``."""
    grads: dict = {}
    for name in ("temporal", "frequency"):
        branch = getattr(params, name)
        if branch is not None:
            grads[name] = {
                "kernels": [np.zeros_like(k) for k in branch.kernels],
                "mlp_weight": np.zeros_like(branch.mlp_weight),
                "mlp_bias": np.zeros_like(branch.mlp_bias),
            }
    if params.channel is not None:
        grads["channel"] = {
            "w_q": np.zeros_like(params.channel.w_q),
            "w_k": np.zeros_like(params.channel.w_k),
            "w_v": np.zeros_like(params.channel.w_v),
            "w_out": np.zeros_like(params.channel.w_out),
        }
    return grads


def msam_backward(cache: ForwardCache, grad_out: np.ndarray) -> tuple[np.ndarray, dict]:
    """Exact gradients of :func:`msam_forward` w.r.t. input and all parameters.

    Returns ``(grad_h [n, f, t], grads)`` where ``grads`` mirrors the layout of
    :func:`zero_msam_grads`.
    """
    h = cache.h
    n, f, t = h.shape
    if grad_out.shape != (n, f, t):
        raise ShapeError(f"grad_out {grad_out.shape} does not match cached input {h.shape}")
    params = cache.params
    maps = cache.maps
    grads: dict = {}

    if maps.fused is None:
        return grad_out.copy(), grads

    grad_h = grad_out * (1.0 + maps.fused)
    grad_fused = grad_out * h.data

    # split the product gradient among the enabled factors
    attn_t, attn_f, attn_c = maps.attn_t, maps.attn_f, maps.attn_c

    if attn_t is not None:
        other = grad_fused
        if attn_f is not None:
            other = other * attn_f[:, :, None]
        if attn_c is not None:
            other = other * attn_c[:, None, None]
        grad_attn_t = other.sum(axis=1)
        grad_ht, grads["temporal"] = _ms_conv_backward(grad_attn_t, cache.temporal, params.temporal)
        grad_h += grad_ht[:, None, :] / f
    if attn_f is not None:
        other = grad_fused
        if attn_t is not None:
            other = other * attn_t[:, None, :]
        if attn_c is not None:
            other = other * attn_c[:, None, None]
        grad_attn_f = other.sum(axis=2)
        grad_hf, grads["frequency"] = _ms_conv_backward(
            grad_attn_f, cache.frequency, params.frequency
        )
        grad_h += grad_hf[:, :, None] / t
    if attn_c is not None:
        other = grad_fused
        if attn_t is not None:
            other = other * attn_t[:, None, :]
        if attn_f is not None:
            other = other * attn_f[:, :, None]
        grad_attn_c = other.sum(axis=(1, 2))
        grad_hc, grads["channel"] = _channel_attn_backward(
            grad_attn_c, cache.channel, params.channel
        )
        grad_h += grad_hc[:, None, None] / (f * t)
    return grad_h, grads
