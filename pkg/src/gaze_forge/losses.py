"""Multitask loss stack: batch transport loss, BCE, fusion, and scheduling.

The saliency transport loss views the whole batch as one distribution: every
map is mean-pooled to half resolution, the batch is flattened into a single
vector, both sides are normalized to probability vectors, and the
Wasserstein-1 distance is taken on the flattened index line with ground cost
|i - j| / n.  On a line that distance has an exact O(n) closed form through
cumulative sums, which is what makes the batch formulation cheap:

    value = (1/n) * sum_k |C_k|,   C_k = sum_{i<=k} (p_i - q_i)

Gradients are analytic throughout (subgradient sign(0) = 0 at the |C_k|
kinks) and are validated against an independent linear-programming oracle
(:func:`exact_ot_oracle`) and finite differences in the test suite.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .raster import ZERO_MASS_EPS, downsample_half, normalize_to_distribution, validate_label_mask, validate_real_map

# Predictions are clamped into [BCE_CLAMP, 1 - BCE_CLAMP] so the BCE value
# and gradient stay bounded.
BCE_CLAMP = 1e-7

DEFAULT_ALPHA = 0.3
DEFAULT_POLY_POWER = 0.9

ORACLE_MAX_POINTS = 64

PHASE_I = "I"
PHASE_II = "II"
TASK_NONE = "none"
TASK_SEGMENTATION = "segmentation"
TASK_SALIENCY = "saliency"


@dataclass
class LossReport:
    """A scalar loss with an optional gradient.

    ``gradient`` is aligned with the prediction values the loss was taken
    over; for batch losses operating at half resolution it is the flat
    vector over the downsampled, batch-flattened prediction (documented per
    function).
    """

    value: float
    gradient: np.ndarray | None = None


@dataclass
class ScheduleState:
    """Bookkeeping for the two-phase loss-weight schedule.

    Phase I trains both tasks at weight 1.  The first convergence signal
    moves the state to phase II, after which the converged task's weight
    decays polynomially over the remaining iterations while the other task
    keeps weight 1.  Single-writer: advance one instance sequentially.
    """

    max_iter: int
    power: float = DEFAULT_POLY_POWER
    phase: str = PHASE_I
    converged_task: str = TASK_NONE
    convergence_iter: int = field(default=-1)


def bce_loss(pred, gt, clamp: float = BCE_CLAMP) -> LossReport:
    """Mean binary cross entropy between two same-size maps.

    ``pred`` is clamped into [clamp, 1-clamp]; ``gt`` must lie in [0, 1].
    The gradient (same shape as ``pred``) is (p - g) / (p (1-p) n).
    """
    p = validate_real_map(pred)
    g = validate_real_map(gt)
    if p.shape != g.shape:
        raise ValueError(f"prediction {p.shape} and ground truth {g.shape} differ in size")
    if g.min() < 0 or g.max() > 1:
        raise ValueError("ground truth values must lie in [0, 1]")
    value, grad = _bce_raw(p, g, clamp)
    return LossReport(value=value, gradient=grad)


def _bce_raw(pred: np.ndarray, gt: np.ndarray, clamp: float = BCE_CLAMP):
    p = np.clip(pred, clamp, 1.0 - clamp)
    n = p.size
    value = float(-(gt * np.log(p) + (1.0 - gt) * np.log1p(-p)).mean())
    grad = (p - gt) / (p * (1.0 - p) * n)
    return value, grad


def wasserstein_flat(pred_values, gt_values) -> LossReport:
    """Wasserstein-1 between two non-negative vectors on the index line.

    Both vectors are normalized to distributions first (a zero-mass vector
    becomes uniform).  The gradient is taken with respect to the raw
    ``pred_values``, i.e. it is propagated through the normalization; at a
    kink of |C_k| the subgradient sign(0) = 0 is used.  A zero-mass
    prediction sits on the locally constant uniform fallback, so its
    gradient is zero.
    """
    x = np.asarray(pred_values, dtype=np.float64).ravel()
    y = np.asarray(gt_values, dtype=np.float64).ravel()
    if x.size != y.size:
        raise ValueError(f"vector lengths differ: {x.size} vs {y.size}")
    p = normalize_to_distribution(x)
    q = normalize_to_distribution(y)

    n = x.size
    cum = np.cumsum(p - q)
    value = float(np.abs(cum).sum() / n)

    # d value / d p_i = (1/n) sum_{k >= i} sign(C_k); then through p = x / S.
    suffix = np.cumsum(np.sign(cum)[::-1])[::-1] / n
    total = x.sum()
    if total < ZERO_MASS_EPS:
        grad = np.zeros(n)
    else:
        grad = (suffix - float(suffix @ p)) / total
    return LossReport(value=value, gradient=grad)


def flatten_batch_half(batch) -> np.ndarray:
    """Downsample every map by half and flatten the batch into one vector."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    return np.concatenate([downsample_half(m).ravel() for m in batch])


def batch_wasserstein(pred_batch, gt_batch) -> LossReport:
    """Transport loss over a whole batch of saliency maps.

    Each map is mean-pooled to half resolution, the batch is flattened into
    one vector per side, and :func:`wasserstein_flat` is applied.  The
    returned gradient lives at the downsampled resolution: one entry per
    pooled pixel, maps concatenated in batch order, row-major within a map.
    """
    if len(pred_batch) != len(gt_batch):
        raise ValueError(
            f"batch sizes differ: {len(pred_batch)} predictions vs {len(gt_batch)} ground truths"
        )
    if len(pred_batch) == 0:
        raise ValueError("empty batch")
    for i, (p, g) in enumerate(zip(pred_batch, gt_batch)):
        p = validate_real_map(p)
        g = validate_real_map(g)
        if p.shape != g.shape:
            raise ValueError(f"pair {i}: map dimensions differ {p.shape} vs {g.shape}")
        if p.min() < 0 or g.min() < 0:
            raise ValueError(f"pair {i}: negative map values are not a valid mass")
    return wasserstein_flat(flatten_batch_half(pred_batch), flatten_batch_half(gt_batch))


@lru_cache(maxsize=None)
def _transport_lp_system(n: int):
    idx = np.arange(n)
    cost = (np.abs(idx[:, None] - idx[None, :]) / n).ravel()
    row_sums = sparse.kron(sparse.eye(n), np.ones((1, n)), format="csc")
    col_sums = sparse.kron(np.ones((1, n)), sparse.eye(n), format="csc")
    return cost, sparse.vstack([row_sums, col_sums]).tocsc()


def exact_ot_oracle(p, q) -> float:
    """Exact optimal-transport cost via linear programming (desk scale).

    Solves the full n x n transportation problem with ground cost
    |i - j| / n using a dual-simplex LP, independently of the cumulative-sum
    closed form it validates.  Both inputs must be probability vectors of
    equal length n <= 64.
    """
    pv = np.asarray(p, dtype=np.float64).ravel()
    qv = np.asarray(q, dtype=np.float64).ravel()
    if pv.size != qv.size:
        raise ValueError(f"distribution lengths differ: {pv.size} vs {qv.size}")
    n = pv.size
    if n < 1 or n > ORACLE_MAX_POINTS:
        raise ValueError(f"oracle supports 1..{ORACLE_MAX_POINTS} points, got {n}")
    for name, vec in (("p", pv), ("q", qv)):
        if np.any(vec < 0) or abs(vec.sum() - 1.0) > 1e-9:
            raise ValueError(f"{name} is not a probability vector")

    cost, system = _transport_lp_system(n)
    result = linprog(
        cost,
        A_eq=system,
        b_eq=np.concatenate([pv, qv]),
        bounds=(0, None),
        method="highs-ds",
        options={"presolve": False},
    )
    if result.status != 0:
        raise RuntimeError(f"transport LP failed: {result.message}")
    return float(result.fun)


def block_sum_half(values) -> np.ndarray:
    """Sum each 2x2 block (adjoint of broadcasting a half-resolution change)."""
    arr = validate_real_map(values)
    h, w = arr.shape
    if h < 2 or w < 2:
        raise ValueError(f"map of shape {h}x{w} is too small to pool by half")
    h2, w2 = h // 2, w // 2
    return arr[: 2 * h2, : 2 * w2].reshape(h2, 2, w2, 2).sum(axis=(1, 3))


def batch_bce(pred_batch, gt_batch, clamp: float = BCE_CLAMP) -> LossReport:
    """BCE taken over every full-resolution pixel of a batch at once.

    The gradient is aggregated to the transport loss's half resolution by
    summing each 2x2 block of the per-pixel gradient (the adjoint of
    applying one pooled-pixel change uniformly to its block), trailing odd
    rows/columns dropped, maps concatenated in batch order.
    """
    if len(pred_batch) != len(gt_batch):
        raise ValueError(
            f"batch sizes differ: {len(pred_batch)} predictions vs {len(gt_batch)} ground truths"
        )
    if len(pred_batch) == 0:
        raise ValueError("empty batch")

    losses_flat = []
    grads_full = []
    total = sum(np.asarray(p).size for p in pred_batch)
    for p, g in zip(pred_batch, gt_batch):
        p = validate_real_map(p)
        g = validate_real_map(g)
        if p.shape != g.shape:
            raise ValueError(f"map dimensions differ: {p.shape} vs {g.shape}")
        if g.min() < 0 or g.max() > 1:
            raise ValueError("ground truth values must lie in [0, 1]")
        pc = np.clip(p, clamp, 1.0 - clamp)
        losses_flat.append(-(g * np.log(pc) + (1.0 - g) * np.log1p(-pc)).ravel())
        grads_full.append((pc - g) / (pc * (1.0 - pc) * total))
    value = float(np.concatenate(losses_flat).mean())
    grad = np.concatenate([block_sum_half(g).ravel() for g in grads_full])
    return LossReport(value=value, gradient=grad)


def fused_saliency_loss(pred_batch, gt_batch, alpha: float = DEFAULT_ALPHA) -> LossReport:
    """Convex combination of the batch transport loss and batch BCE.

    value = alpha * L_transport + (1 - alpha) * L_bce.  The gradient is the
    same combination at the transport loss's half resolution, with the BCE
    side aggregated as documented on :func:`batch_bce`.  The endpoints are
    exact: alpha = 0 reproduces :func:`batch_bce` and alpha = 1 reproduces
    :func:`batch_wasserstein`, bit for bit.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    transport = batch_wasserstein(pred_batch, gt_batch)
    bce = batch_bce(pred_batch, gt_batch)
    value = alpha * transport.value + (1.0 - alpha) * bce.value
    grad = alpha * transport.gradient + (1.0 - alpha) * bce.gradient
    return LossReport(value=value, gradient=grad)


def cross_entropy_seg(logits, labels) -> LossReport:
    """Pixelwise multi-class cross entropy from a (C, H, W) score stack.

    value = mean over pixels of -log softmax(logits)[label];
    gradient = (softmax - one_hot) / n_pixels, shaped like ``logits``.
    """
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 3:
        raise ValueError(f"logits must be (classes, height, width), got shape {z.shape}")
    n_classes = z.shape[0]
    if n_classes < 2:
        raise ValueError("need at least 2 classes")
    lab = validate_label_mask(labels, n_classes=n_classes)
    if lab.shape != z.shape[1:]:
        raise ValueError(f"labels {lab.shape} do not match logits spatial dims {z.shape[1:]}")

    shifted = z - z.max(axis=0, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=0, keepdims=True))
    rows, cols = np.indices(lab.shape)
    n = lab.size
    value = float(-log_probs[lab, rows, cols].mean())
    grad = np.exp(log_probs)
    grad[lab, rows, cols] -= 1.0
    grad /= n
    return LossReport(value=value, gradient=grad)


def total_loss(l_seg: float, l_sal: float, lambda_seg: float, lambda_sal: float) -> float:
    """Weighted sum of the segmentation and saliency losses."""
    if lambda_seg < 0 or lambda_sal < 0:
        raise ValueError("loss weights must be non-negative")
    return lambda_seg * l_seg + lambda_sal * l_sal


def poly_weight(iteration: int, max_iter: int, power: float = DEFAULT_POLY_POWER) -> float:
    """Polynomial decay (1 - iter/max_iter)**power from 1 down to 0.

    Iterations past the end clamp to 0 with a warning.
    """
    if max_iter < 1:
        raise ValueError(f"max_iter must be >= 1, got {max_iter}")
    if power <= 0:
        raise ValueError(f"power must be positive, got {power}")
    if iteration < 0:
        raise ValueError(f"iteration must be non-negative, got {iteration}")
    if iteration > max_iter:
        warnings.warn(
            f"iteration {iteration} is past the schedule end {max_iter}; weight clamped to 0",
            RuntimeWarning,
            stacklevel=2,
        )
        return 0.0
    return float((1.0 - iteration / max_iter) ** power)


def two_phase_schedule(
    state: ScheduleState, iteration: int, task_converged: str | None = None
) -> tuple[float, float]:
    """Advance the two-phase schedule and return (lambda_seg, lambda_sal).

    Phase I returns (1, 1).  The first convergence signal records the task
    and iteration and switches to phase II, in which the converged task's
    weight follows :func:`poly_weight` measured from the convergence
    iteration over the remaining iterations (so it reaches 0 at
    ``max_iter``), while the other task's weight stays 1.  Re-signalling
    the same task is a no-op; a signal for the other task is ignored with
    a warning.
    """
    if task_converged is not None:
        if task_converged not in (TASK_SEGMENTATION, TASK_SALIENCY):
            raise ValueError(f"unknown task {task_converged!r}")
        if state.phase == PHASE_I:
            state.phase = PHASE_II
            state.converged_task = task_converged
            state.convergence_iter = iteration
        elif task_converged != state.converged_task:
            warnings.warn(
                f"ignoring convergence signal for {task_converged!r}: "
                f"{state.converged_task!r} already converged at iteration {state.convergence_iter}",
                RuntimeWarning,
                stacklevel=2,
            )

    if state.phase == PHASE_I:
        return 1.0, 1.0

    remaining = max(state.max_iter - state.convergence_iter, 1)
    decayed = poly_weight(iteration - state.convergence_iter, remaining, state.power)
    if state.converged_task == TASK_SEGMENTATION:
        return decayed, 1.0
    return 1.0, decayed
