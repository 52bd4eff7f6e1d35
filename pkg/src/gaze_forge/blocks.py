"""Desk-scale reference implementations of the network building blocks.

Forward passes here are direct (no im2col/FFT) and operate on (batch,
channels, height, width) float arrays.  Each block also ships an analytic
input-gradient function so :func:`finite_diff_gradcheck` can verify the
mechanism against central differences.  Batch norm runs in inference mode
with supplied statistics; nothing here trains.

Conventions:

* conv kernels are (out_channels, in_channels, kh, kw) and perform
  cross-correlation;
* transposed-conv kernels are (in_channels, out_channels, kh, kw), and
  :func:`deconv2d` is exactly the linear adjoint of :func:`conv2d` with the
  same kernel array and hyperparameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Largest tensor finite_diff_gradcheck will sweep (4 * 4 * 8 * 8).
GRADCHECK_MAX_ELEMENTS = 1024

BN_EPS = 1e-5


def _require_4d(x, name: str = "input") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 4:
        raise ValueError(f"{name} must be (batch, channels, height, width), got {arr.shape}")
    return arr


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def conv2d(x, kernel, stride: int = 1, padding: int = 0, bias=None) -> np.ndarray:
    """Direct 2-D cross-correlation.

    Output spatial size is floor((in + 2 pad - k) / stride) + 1.
    """
    x = _require_4d(x)
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.ndim != 4:
        raise ValueError(f"kernel must be (out, in, kh, kw), got {kernel.shape}")
    out_ch, in_ch, kh, kw = kernel.shape
    batch, channels, h, w = x.shape
    if channels != in_ch:
        raise ValueError(f"kernel expects {in_ch} input channels, input has {channels}")
    hp, wp = h + 2 * padding, w + 2 * padding
    if kh > hp or kw > wp:
        raise ValueError(f"kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    if stride < 1:
        raise ValueError("stride must be >= 1")

    h_out = (hp - kh) // stride + 1
    w_out = (wp - kw) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out = np.zeros((batch, out_ch, h_out, w_out))
    for u in range(kh):
        for v in range(kw):
            window = xp[
                :,
                :,
                u : u + (h_out - 1) * stride + 1 : stride,
                v : v + (w_out - 1) * stride + 1 : stride,
            ]
            out += np.einsum("bchw,oc->bohw", window, kernel[:, :, u, v])
    if bias is not None:
        out += np.asarray(bias, dtype=np.float64)[None, :, None, None]
    return out


def conv2d_input_grad(gout, kernel, stride: int, padding: int, input_hw: tuple[int, int]) -> np.ndarray:
    """Adjoint of :func:`conv2d`: gradient of <gout, conv2d(x)> w.r.t. x."""
    gout = _require_4d(gout, "gout")
    kernel = np.asarray(kernel, dtype=np.float64)
    out_ch, in_ch, kh, kw = kernel.shape
    batch, channels, h_out, w_out = gout.shape
    if channels != out_ch:
        raise ValueError(f"kernel produces {out_ch} channels, gout has {channels}")
    h, w = input_hw
    gpad = np.zeros((batch, in_ch, h + 2 * padding, w + 2 * padding))
    for u in range(kh):
        for v in range(kw):
            gpad[
                :,
                :,
                u : u + (h_out - 1) * stride + 1 : stride,
                v : v + (w_out - 1) * stride + 1 : stride,
            ] += np.einsum("bohw,oc->bchw", gout, kernel[:, :, u, v])
    if padding:
        return gpad[:, :, padding : padding + h, padding : padding + w]
    return gpad


def deconv2d(x, kernel, stride: int = 2, padding: int = 1, bias=None) -> np.ndarray:
    """Transposed convolution; with a 4x4 kernel, stride 2, padding 1 the
    spatial size exactly doubles.

    Implemented as the adjoint of :func:`conv2d`, so
    <conv2d(v, k, s, p), y> == <v, deconv2d(y, k, s, p)> holds identically.
    """
    x = _require_4d(x)
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.ndim != 4:
        raise ValueError(f"kernel must be (in, out, kh, kw), got {kernel.shape}")
    in_ch, out_ch, kh, kw = kernel.shape
    if x.shape[1] != in_ch:
        raise ValueError(f"kernel expects {in_ch} input channels, input has {x.shape[1]}")
    h, w = x.shape[2:]
    h_out = (h - 1) * stride - 2 * padding + kh
    w_out = (w - 1) * stride - 2 * padding + kw
    if h_out < 1 or w_out < 1:
        raise ValueError(f"transposed output would be empty: {h_out}x{w_out}")
    out = conv2d_input_grad(x, kernel, stride, padding, (h_out, w_out))
    if bias is not None:
        out += np.asarray(bias, dtype=np.float64)[None, :, None, None]
    return out


def deconv2d_input_grad(gout, kernel, stride: int = 2, padding: int = 1) -> np.ndarray:
    """Gradient of <gout, deconv2d(x)> w.r.t. x (the adjoint's adjoint)."""
    return conv2d(gout, np.asarray(kernel, dtype=np.float64), stride, padding)


@dataclass(frozen=True)
class BatchNormParams:
    """Inference-mode batch norm statistics and affine terms, one per channel."""

    mean: np.ndarray
    var: np.ndarray
    scale: np.ndarray
    shift: np.ndarray


def batch_norm(x, p: BatchNormParams, eps: float = BN_EPS) -> np.ndarray:
    x = _require_4d(x)
    var = np.asarray(p.var, dtype=np.float64)
    if np.any(var <= 0):
        raise ValueError("batch norm variance must be positive")
    inv = (np.asarray(p.scale) / np.sqrt(var + eps))[None, :, None, None]
    return (x - np.asarray(p.mean)[None, :, None, None]) * inv + np.asarray(p.shift)[
        None, :, None, None
    ]


def _bn_gain(p: BatchNormParams, eps: float = BN_EPS) -> np.ndarray:
    return (np.asarray(p.scale) / np.sqrt(np.asarray(p.var) + eps))[None, :, None, None]


@dataclass(frozen=True)
class AttentionGateParams:
    """Channel gate: global average pool -> 1x1 conv -> sigmoid.

    ``weight`` is the (C, C) matrix of the 1x1 convolution applied to the
    pooled feature vector.
    """

    weight: np.ndarray
    bias: np.ndarray


def _am_gate(x: np.ndarray, p: AttentionGateParams) -> np.ndarray:
    weight = np.asarray(p.weight, dtype=np.float64)
    if weight.ndim != 2 or weight.shape[0] != weight.shape[1] or weight.shape[1] != x.shape[1]:
        raise ValueError(f"gate weight must be ({x.shape[1]}, {x.shape[1]}), got {weight.shape}")
    pooled = x.mean(axis=(2, 3))
    return _sigmoid(pooled @ weight.T + np.asarray(p.bias, dtype=np.float64))


def am_forward(x, p: AttentionGateParams) -> np.ndarray:
    """Multiply each channel by its pooled sigmoid gate (a contraction)."""
    x = _require_4d(x)
    gate = _am_gate(x, p)
    return x * gate[:, :, None, None]


def am_input_grad(x, p: AttentionGateParams, gout) -> np.ndarray:
    x = _require_4d(x)
    gout = _require_4d(gout, "gout")
    weight = np.asarray(p.weight, dtype=np.float64)
    gate = _am_gate(x, p)
    area = x.shape[2] * x.shape[3]

    inner = (gout * x).sum(axis=(2, 3))          # <gout_c, x_c> per (batch, channel)
    dz = gate * (1.0 - gate) * inner             # through the sigmoid
    dpooled = dz @ weight                        # through the 1x1 conv
    return gout * gate[:, :, None, None] + dpooled[:, :, None, None] / area


@dataclass(frozen=True)
class ScseParams:
    """Concurrent spatial and channel squeeze-excitation parameters.

    Channel branch: pool -> (C -> C/r) -> ReLU -> (C/r -> C) -> sigmoid.
    Spatial branch: 1x1 conv to a single map -> sigmoid.  The gated tensors
    are fused with an elementwise maximum.
    """

    channel_reduce: np.ndarray
    channel_reduce_bias: np.ndarray
    channel_expand: np.ndarray
    channel_expand_bias: np.ndarray
    spatial_weight: np.ndarray
    spatial_bias: float


def _scse_parts(x: np.ndarray, p: ScseParams):
    reduce_w = np.asarray(p.channel_reduce, dtype=np.float64)
    expand_w = np.asarray(p.channel_expand, dtype=np.float64)
    spatial_w = np.asarray(p.spatial_weight, dtype=np.float64)
    c = x.shape[1]
    if reduce_w.shape[1] != c or expand_w.shape[0] != c or expand_w.shape[1] != reduce_w.shape[0]:
        raise ValueError(
            f"inconsistent scSE shapes for {c} channels: "
            f"reduce {reduce_w.shape}, expand {expand_w.shape}"
        )
    if spatial_w.shape != (c,):
        raise ValueError(f"spatial weight must be ({c},), got {spatial_w.shape}")

    pooled = x.mean(axis=(2, 3))
    hidden_pre = pooled @ reduce_w.T + np.asarray(p.channel_reduce_bias)
    hidden = np.maximum(hidden_pre, 0.0)
    channel_gate = _sigmoid(hidden @ expand_w.T + np.asarray(p.channel_expand_bias))
    spatial_pre = np.einsum("bchw,c->bhw", x, spatial_w) + p.spatial_bias
    spatial_gate = _sigmoid(spatial_pre)
    gated_channel = x * channel_gate[:, :, None, None]
    gated_spatial = x * spatial_gate[:, None, :, :]
    return hidden_pre, hidden, channel_gate, spatial_gate, gated_channel, gated_spatial


def scse_forward(x, p: ScseParams) -> np.ndarray:
    """Elementwise max of the channel-gated and spatial-gated tensors."""
    x = _require_4d(x)
    *_, gated_channel, gated_spatial = _scse_parts(x, p)
    return np.maximum(gated_channel, gated_spatial)


def scse_input_grad(x, p: ScseParams, gout) -> np.ndarray:
    x = _require_4d(x)
    gout = _require_4d(gout, "gout")
    hidden_pre, _, channel_gate, spatial_gate, gated_channel, gated_spatial = _scse_parts(x, p)
    area = x.shape[2] * x.shape[3]
    reduce_w = np.asarray(p.channel_reduce, dtype=np.float64)
    expand_w = np.asarray(p.channel_expand, dtype=np.float64)
    spatial_w = np.asarray(p.spatial_weight, dtype=np.float64)

    # Subgradient at exact branch ties goes to the channel branch.
    take_channel = gated_channel >= gated_spatial
    g_channel = gout * take_channel
    g_spatial = gout * ~take_channel

    gin = g_channel * channel_gate[:, :, None, None]
    dz = channel_gate * (1.0 - channel_gate) * (g_channel * x).sum(axis=(2, 3))
    dhidden = (dz @ expand_w) * (hidden_pre > 0)
    gin += (dhidden @ reduce_w)[:, :, None, None] / area

    gin += g_spatial * spatial_gate[:, None, :, :]
    dzs = spatial_gate * (1.0 - spatial_gate) * (g_spatial * x).sum(axis=1)
    gin += dzs[:, None, :, :] * spatial_w[None, :, None, None]
    return gin


@dataclass(frozen=True)
class BoundaryRefineParams:
    """Residual refinement branch: conv3x3 -> ReLU -> conv3x3, added to x."""

    conv1: np.ndarray
    bias1: np.ndarray
    conv2: np.ndarray
    bias2: np.ndarray


def br_forward(x, p: BoundaryRefineParams) -> np.ndarray:
    x = _require_4d(x)
    pre = conv2d(x, p.conv1, 1, 1, p.bias1)
    return x + conv2d(np.maximum(pre, 0.0), p.conv2, 1, 1, p.bias2)


def br_input_grad(x, p: BoundaryRefineParams, gout) -> np.ndarray:
    x = _require_4d(x)
    gout = _require_4d(gout, "gout")
    pre = conv2d(x, p.conv1, 1, 1, p.bias1)
    ghidden = conv2d_input_grad(gout, p.conv2, 1, 1, pre.shape[2:]) * (pre > 0)
    return gout + conv2d_input_grad(ghidden, p.conv1, 1, 1, x.shape[2:])


def zero_boundary_refine(channels: int) -> BoundaryRefineParams:
    """All-zero refinement branch; the block reduces to the identity."""
    return BoundaryRefineParams(
        conv1=np.zeros((channels, channels, 3, 3)),
        bias1=np.zeros(channels),
        conv2=np.zeros((channels, channels, 3, 3)),
        bias2=np.zeros(channels),
    )


@dataclass(frozen=True)
class ConvBnParams:
    kernel: np.ndarray
    bias: np.ndarray
    bn: BatchNormParams


@dataclass(frozen=True)
class AmDecoderBlockParams:
    """conv3x3 -> deconv4x4(s2, p1) -> conv3x3, each BN+ReLU, then the gate."""

    conv_in: ConvBnParams
    up: ConvBnParams
    conv_out: ConvBnParams
    gate: AttentionGateParams


@dataclass(frozen=True)
class ScseDecoderBlockParams:
    """conv3x3 + activated BN -> deconv4x4(s2, p1) -> scSE."""

    conv: ConvBnParams
    up_kernel: np.ndarray
    up_bias: np.ndarray
    scse: ScseParams


DECODER_AM = "AM"
DECODER_SCSE = "scSE"


def _concat_skip(x: np.ndarray, skip) -> np.ndarray:
    if skip is None:
        return x
    skip = _require_4d(skip, "skip")
    if skip.shape[0] != x.shape[0] or skip.shape[2:] != x.shape[2:]:
        raise ValueError(
            f"skip tensor {skip.shape} incompatible; expected "
            f"({x.shape[0]}, any, {x.shape[2]}, {x.shape[3]})"
        )
    return np.concatenate([x, skip], axis=1)


def _am_block_forward(x: np.ndarray, skip, blk: AmDecoderBlockParams) -> np.ndarray:
    merged = _concat_skip(x, skip)
    h = np.maximum(batch_norm(conv2d(merged, blk.conv_in.kernel, 1, 1, blk.conv_in.bias), blk.conv_in.bn), 0.0)
    h = np.maximum(batch_norm(deconv2d(h, blk.up.kernel, 2, 1, blk.up.bias), blk.up.bn), 0.0)
    h = np.maximum(batch_norm(conv2d(h, blk.conv_out.kernel, 1, 1, blk.conv_out.bias), blk.conv_out.bn), 0.0)
    return am_forward(h, blk.gate)


def _am_block_input_grad(x: np.ndarray, skip, blk: AmDecoderBlockParams, gout: np.ndarray) -> np.ndarray:
    merged = _concat_skip(x, skip)
    c1 = conv2d(merged, blk.conv_in.kernel, 1, 1, blk.conv_in.bias)
    b1 = batch_norm(c1, blk.conv_in.bn)
    r1 = np.maximum(b1, 0.0)
    c2 = deconv2d(r1, blk.up.kernel, 2, 1, blk.up.bias)
    b2 = batch_norm(c2, blk.up.bn)
    r2 = np.maximum(b2, 0.0)
    c3 = conv2d(r2, blk.conv_out.kernel, 1, 1, blk.conv_out.bias)
    b3 = batch_norm(c3, blk.conv_out.bn)
    r3 = np.maximum(b3, 0.0)

    g = am_input_grad(r3, blk.gate, gout)
    g = g * (b3 > 0) * _bn_gain(blk.conv_out.bn)
    g = conv2d_input_grad(g, blk.conv_out.kernel, 1, 1, r2.shape[2:])
    g = g * (b2 > 0) * _bn_gain(blk.up.bn)
    g = deconv2d_input_grad(g, blk.up.kernel, 2, 1)
    g = g * (b1 > 0) * _bn_gain(blk.conv_in.bn)
    g = conv2d_input_grad(g, blk.conv_in.kernel, 1, 1, merged.shape[2:])
    return g[:, : x.shape[1]]


def _scse_block_forward(x: np.ndarray, skip, blk: ScseDecoderBlockParams) -> np.ndarray:
    merged = _concat_skip(x, skip)
    h = np.maximum(batch_norm(conv2d(merged, blk.conv.kernel, 1, 1, blk.conv.bias), blk.conv.bn), 0.0)
    h = deconv2d(h, blk.up_kernel, 2, 1, blk.up_bias)
    return scse_forward(h, blk.scse)


def _scse_block_input_grad(x: np.ndarray, skip, blk: ScseDecoderBlockParams, gout: np.ndarray) -> np.ndarray:
    merged = _concat_skip(x, skip)
    c1 = conv2d(merged, blk.conv.kernel, 1, 1, blk.conv.bias)
    b1 = batch_norm(c1, blk.conv.bn)
    r1 = np.maximum(b1, 0.0)
    up = deconv2d(r1, blk.up_kernel, 2, 1, blk.up_bias)

    g = scse_input_grad(up, blk.scse, gout)
    g = deconv2d_input_grad(g, blk.up_kernel, 2, 1)
    g = g * (b1 > 0) * _bn_gain(blk.conv.bn)
    g = conv2d_input_grad(g, blk.conv.kernel, 1, 1, merged.shape[2:])
    return g[:, : x.shape[1]]


def decoder_forward(features: list, blocks: list, kind: str) -> np.ndarray:
    """Run a stack of decoder blocks over ``features``.

    ``features[0]`` is the deepest feature map; ``features[i]`` (i >= 1) is
    the skip tensor concatenated at block i (may be None for a skipless
    block).  Each block doubles the spatial size, so a k-block stack scales
    8x8 input to (8 * 2**k) square output.
    """
    if not features:
        raise ValueError("need at least the initial feature map")
    if len(features) - 1 > len(blocks):
        raise ValueError(f"{len(features) - 1} skip tensors but only {len(blocks)} blocks")
    step = {DECODER_AM: _am_block_forward, DECODER_SCSE: _scse_block_forward}.get(kind)
    if step is None:
        raise ValueError(f"decoder kind must be {DECODER_AM!r} or {DECODER_SCSE!r}, got {kind!r}")

    x = _require_4d(features[0])
    for i, blk in enumerate(blocks):
        skip = features[i + 1] if i + 1 < len(features) else None
        x = step(x, skip, blk)
    return x


def decoder_input_grad(features: list, blocks: list, kind: str, gout) -> np.ndarray:
    """Gradient of <gout, decoder_forward(...)> w.r.t. ``features[0]``."""
    step_fwd = {DECODER_AM: _am_block_forward, DECODER_SCSE: _scse_block_forward}[kind]
    step_bwd = {DECODER_AM: _am_block_input_grad, DECODER_SCSE: _scse_block_input_grad}[kind]

    inputs = [_require_4d(features[0])]
    for i, blk in enumerate(blocks):
        skip = features[i + 1] if i + 1 < len(features) else None
        inputs.append(step_fwd(inputs[-1], skip, blk))

    g = _require_4d(gout, "gout")
    for i in reversed(range(len(blocks))):
        skip = features[i + 1] if i + 1 < len(features) else None
        g = step_bwd(inputs[i], skip, blocks[i], g)
    return g


def finite_diff_gradcheck(forward, input_grad, x, h: float = 1e-4) -> float:
    """Max relative error between analytic and central-difference gradients.

    The probed scalar is sum(forward(x)); ``input_grad(x, ones)`` must
    return its analytic gradient.  Relative error per coordinate is
    |a - n| / max(|a| + |n|, 1e-8).
    """
    x = np.array(x, dtype=np.float64)
    if x.size > GRADCHECK_MAX_ELEMENTS:
        raise ValueError(f"gradcheck tensor too large ({x.size} > {GRADCHECK_MAX_ELEMENTS})")
    analytic = np.asarray(input_grad(x, np.ones_like(forward(x)))).ravel()

    flat = x.ravel()
    numeric = np.empty(flat.size)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = float(forward(x).sum())
        flat[i] = orig - h
        lo = float(forward(x).sum())
        flat[i] = orig
        numeric[i] = (hi - lo) / (2.0 * h)

    rel = np.abs(analytic - numeric) / np.maximum(np.abs(analytic) + np.abs(numeric), 1e-8)
    return float(rel.max())


# ---------------------------------------------------------------------------
# Random parameter factories (used by the self-test/gradcheck commands and
# the test suite; weights are scaled to keep gates away from saturation).
# ---------------------------------------------------------------------------


def random_bn_params(rng: np.random.Generator, channels: int) -> BatchNormParams:
    return BatchNormParams(
        mean=rng.normal(0.0, 0.3, channels),
        var=rng.uniform(0.5, 1.5, channels),
        scale=rng.normal(1.0, 0.2, channels),
        shift=rng.normal(0.0, 0.2, channels),
    )


def random_conv_kernel(rng: np.random.Generator, out_ch: int, in_ch: int, k: int) -> np.ndarray:
    return rng.normal(0.0, 1.0 / math.sqrt(in_ch * k * k), (out_ch, in_ch, k, k))


def random_conv_bn(rng: np.random.Generator, in_ch: int, out_ch: int, k: int) -> ConvBnParams:
    return ConvBnParams(
        kernel=random_conv_kernel(rng, out_ch, in_ch, k),
        bias=rng.normal(0.0, 0.1, out_ch),
        bn=random_bn_params(rng, out_ch),
    )


def random_deconv_kernel(rng: np.random.Generator, in_ch: int, out_ch: int, k: int = 4) -> np.ndarray:
    return rng.normal(0.0, 1.0 / math.sqrt(in_ch * k * k), (in_ch, out_ch, k, k))


def random_am_params(rng: np.random.Generator, channels: int) -> AttentionGateParams:
    return AttentionGateParams(
        weight=rng.normal(0.0, 1.0 / math.sqrt(channels), (channels, channels)),
        bias=rng.normal(0.0, 0.1, channels),
    )


def random_scse_params(rng: np.random.Generator, channels: int, reduction: int = 2) -> ScseParams:
    if channels % reduction:
        raise ValueError(f"reduction {reduction} must divide channel count {channels}")
    hidden = channels // reduction
    return ScseParams(
        channel_reduce=rng.normal(0.0, 1.0 / math.sqrt(channels), (hidden, channels)),
        channel_reduce_bias=rng.normal(0.0, 0.1, hidden),
        channel_expand=rng.normal(0.0, 1.0 / math.sqrt(hidden), (channels, hidden)),
        channel_expand_bias=rng.normal(0.0, 0.1, channels),
        spatial_weight=rng.normal(0.0, 1.0 / math.sqrt(channels), channels),
        spatial_bias=float(rng.normal(0.0, 0.1)),
    )


def random_br_params(rng: np.random.Generator, channels: int) -> BoundaryRefineParams:
    return BoundaryRefineParams(
        conv1=random_conv_kernel(rng, channels, channels, 3),
        bias1=rng.normal(0.0, 0.1, channels),
        conv2=random_conv_kernel(rng, channels, channels, 3),
        bias2=rng.normal(0.0, 0.1, channels),
    )


def random_am_decoder_block(
    rng: np.random.Generator, in_ch: int, skip_ch: int, out_ch: int
) -> AmDecoderBlockParams:
    merged = in_ch + skip_ch
    return AmDecoderBlockParams(
        conv_in=random_conv_bn(rng, merged, out_ch, 3),
        up=ConvBnParams(
            kernel=random_deconv_kernel(rng, out_ch, out_ch),
            bias=rng.normal(0.0, 0.1, out_ch),
            bn=random_bn_params(rng, out_ch),
        ),
        conv_out=random_conv_bn(rng, out_ch, out_ch, 3),
        gate=random_am_params(rng, out_ch),
    )


def random_scse_decoder_block(
    rng: np.random.Generator, in_ch: int, skip_ch: int, out_ch: int
) -> ScseDecoderBlockParams:
    merged = in_ch + skip_ch
    return ScseDecoderBlockParams(
        conv=random_conv_bn(rng, merged, out_ch, 3),
        up_kernel=random_deconv_kernel(rng, out_ch, out_ch),
        up_bias=rng.normal(0.0, 0.1, out_ch),
        scse=random_scse_params(rng, out_ch),
    )


# ---------------------------------------------------------------------------
# Suites backing the `blocks gradcheck` / `blocks selftest` commands.
# ---------------------------------------------------------------------------


def gradcheck_suite(seed: int = 0, instances: int = 3, h: float = 1e-4) -> dict[str, float]:
    """Max finite-difference relative error per block over random instances."""
    rng = np.random.default_rng(seed)
    results: dict[str, float] = {}

    def record(name: str, builder):
        worst = 0.0
        for _ in range(instances):
            forward, input_grad, x = builder(rng)
            worst = max(worst, finite_diff_gradcheck(forward, input_grad, x, h))
        results[name] = worst

    record("conv2d", _build_conv_case)
    record("deconv2d", _build_deconv_case)
    record("am_forward", _build_am_case)
    record("scse_forward", _build_scse_case)
    record("br_forward", _build_br_case)
    record("decoder_am", lambda r: _build_decoder_case(r, DECODER_AM))
    record("decoder_scse", lambda r: _build_decoder_case(r, DECODER_SCSE))
    return results


def _build_conv_case(rng):
    x = rng.normal(size=(2, 3, 6, 6))
    kernel = random_conv_kernel(rng, 4, 3, 3)
    bias = rng.normal(0.0, 0.1, 4)
    return (
        lambda v: conv2d(v, kernel, 1, 1, bias),
        lambda v, g: conv2d_input_grad(g, kernel, 1, 1, v.shape[2:]),
        x,
    )


def _build_deconv_case(rng):
    x = rng.normal(size=(2, 3, 4, 4))
    kernel = random_deconv_kernel(rng, 3, 2)
    bias = rng.normal(0.0, 0.1, 2)
    return (
        lambda v: deconv2d(v, kernel, 2, 1, bias),
        lambda v, g: deconv2d_input_grad(g, kernel, 2, 1),
        x,
    )


def _build_am_case(rng):
    x = rng.normal(size=(2, 4, 5, 5))
    params = random_am_params(rng, 4)
    return (
        lambda v: am_forward(v, params),
        lambda v, g: am_input_grad(v, params, g),
        x,
    )


def _build_scse_case(rng):
    x = rng.normal(size=(2, 4, 5, 5))
    params = random_scse_params(rng, 4)
    return (
        lambda v: scse_forward(v, params),
        lambda v, g: scse_input_grad(v, params, g),
        x,
    )


def _build_br_case(rng):
    x = rng.normal(size=(2, 3, 5, 5))
    params = random_br_params(rng, 3)
    return (
        lambda v: br_forward(v, params),
        lambda v, g: br_input_grad(v, params, g),
        x,
    )


def _build_decoder_case(rng, kind: str):
    x = rng.normal(size=(1, 4, 4, 4))
    skip = rng.normal(size=(1, 2, 4, 4))
    if kind == DECODER_AM:
        blocks = [random_am_decoder_block(rng, 4, 2, 4)]
    else:
        blocks = [random_scse_decoder_block(rng, 4, 2, 4)]
    return (
        lambda v: decoder_forward([v, skip], blocks, kind),
        lambda v, g: decoder_input_grad([v, skip], blocks, kind, g),
        x,
    )


@dataclass(frozen=True)
class SelftestResult:
    name: str
    passed: bool
    detail: str


def shape_selftest(seed: int = 0) -> list[SelftestResult]:
    """Structural checks: shape contracts, gate contraction, identities."""
    rng = np.random.default_rng(seed)
    results: list[SelftestResult] = []

    def check(name: str, passed: bool, detail: str):
        results.append(SelftestResult(name, bool(passed), detail))

    x = rng.normal(size=(2, 3, 8, 8))
    ident = np.zeros((3, 3, 1, 1))
    for c in range(3):
        ident[c, c, 0, 0] = 1.0
    check("conv2d identity 1x1", np.array_equal(conv2d(x, ident), x), "1x1 identity kernel reproduces input")
    check("conv2d zero kernel", not conv2d(x, np.zeros((2, 3, 3, 3)), 1, 1).any(), "zero kernel yields zero output")

    y = rng.normal(size=(2, 4, 4, 4))
    kernel = random_conv_kernel(rng, 4, 3, 4)
    lhs = float((conv2d(x, kernel, 2, 1) * y).sum())
    rhs = float((x * deconv2d(y, kernel, 2, 1)).sum())
    check("conv/deconv adjoint", abs(lhs - rhs) < 1e-10, f"<conv x, y> - <x, deconv y> = {lhs - rhs:.2e}")

    up = deconv2d(y, random_deconv_kernel(rng, 4, 3), 2, 1)
    check("deconv doubles size", up.shape == (2, 3, 8, 8), f"4x4 kernel, stride 2, pad 1: {y.shape} -> {up.shape}")

    gated = am_forward(x, random_am_params(rng, 3))
    check("am contraction", bool(np.all(np.abs(gated) <= np.abs(x) + 1e-15)), "|gate(x)| <= |x| elementwise")
    gated = scse_forward(x, random_scse_params(rng, 3, reduction=3))
    check("scse contraction", bool(np.all(np.abs(gated) <= np.abs(x) + 1e-15)), "|gate(x)| <= |x| elementwise")

    check(
        "br zero branch identity",
        np.array_equal(br_forward(x, zero_boundary_refine(3)), x),
        "zeroed residual branch is bit-identical to input",
    )

    feats = [rng.normal(size=(1, 4, 8, 8)), rng.normal(size=(1, 2, 8, 8)),
             rng.normal(size=(1, 2, 16, 16)), rng.normal(size=(1, 2, 32, 32))]
    am_blocks = [random_am_decoder_block(rng, 4, 2, 4) for _ in range(3)]
    out = decoder_forward(feats, am_blocks, DECODER_AM)
    check("am decoder 3 blocks 8->64", out.shape == (1, 4, 64, 64), f"output {out.shape}")
    scse_blocks = [random_scse_decoder_block(rng, 4, 2, 4) for _ in range(3)]
    out = decoder_forward(feats, scse_blocks, DECODER_SCSE)
    check("scse decoder 3 blocks 8->64", out.shape == (1, 4, 64, 64), f"output {out.shape}")
    check("decoder output finite", bool(np.all(np.isfinite(out))), "finite in -> finite out")
    return results
