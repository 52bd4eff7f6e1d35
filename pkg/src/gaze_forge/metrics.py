"""Evaluation metrics for saliency maps, segmentation masks, and scanpaths.

Saliency: BCE (see losses), histogram-intersection similarity, normalized
scanpath saliency (NSS), and the split-sampled ROC area (AUC-Borji).
Segmentation: Dice overlap (binary or per class) and the symmetric
Hausdorff distance between boundary pixel sets.  Scanpaths: top-one and
whole-sequence agreement at instrument-id granularity, with Kendall's tau
as an auxiliary rank diagnostic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.stats import kendalltau

from .raster import normalize_to_distribution, validate_label_mask, validate_real_map
from .saliency import Fixation

DICE_BINARY = "binary"
DICE_PER_TYPE = "per-type"


def nss(sal, fixations: list[Fixation]) -> float:
    """Mean z-scored saliency at the fixation pixels.

    The map is normalized with its population mean/std; a constant map has
    no contrast and scores 0 by convention.
    """
    arr = validate_real_map(sal)
    if not fixations:
        raise ValueError("NSS needs at least one fixation")
    std = arr.std()
    # Constant maps can show a ~1e-16 std from summation rounding alone.
    if std <= 1e-12 * max(abs(arr.mean()), 1.0):
        return 0.0
    z = (arr - arr.mean()) / std
    h, w = arr.shape
    values = []
    for fix in fixations:
        r, c = fix.point
        if not (0 <= r < h and 0 <= c < w):
            raise ValueError(f"fixation {fix.point} outside {h}x{w} map")
        values.append(z[r, c])
    return float(np.mean(values))


def auc_borji(
    sal,
    fixations: list[Fixation],
    n_splits: int = 100,
    n_negatives: int | None = None,
    seed=None,
) -> float:
    """ROC area with fixation pixels as positives and random negatives.

    Each split samples ``n_negatives`` pixels uniformly (with replacement)
    from the non-fixation pixels, sweeps thresholds over the union of the
    sampled saliency values, and integrates the ROC curve with the
    trapezoid rule; the mean over splits is returned.  Deterministic given
    ``seed``; ``n_negatives`` defaults to the number of distinct fixation
    pixels.
    """
    arr = validate_real_map(sal)
    if not fixations:
        raise ValueError("AUC needs at least one fixation")
    if n_splits < 1:
        raise ValueError("n_splits must be >= 1")

    h, w = arr.shape
    fix_linear = set()
    for fix in fixations:
        r, c = fix.point
        if not (0 <= r < h and 0 <= c < w):
            raise ValueError(f"fixation {fix.point} outside {h}x{w} map")
        fix_linear.add(r * w + c)
    fix_idx = np.fromiter(sorted(fix_linear), dtype=np.int64)

    flat = arr.ravel()
    candidates = np.setdiff1d(np.arange(flat.size), fix_idx, assume_unique=False)
    if candidates.size == 0:
        raise ValueError("fixations cover every pixel; no negatives available")

    positives = flat[fix_idx]
    count = n_negatives if n_negatives is not None else fix_idx.size
    if count < 1:
        raise ValueError("n_negatives must be >= 1")

    rng = np.random.default_rng(seed)
    scores = [
        _roc_auc(positives, flat[rng.choice(candidates, size=count, replace=True)])
        for _ in range(n_splits)
    ]
    return float(np.mean(scores))


def _roc_auc(positives: np.ndarray, negatives: np.ndarray) -> float:
    thresholds = np.unique(np.concatenate([positives, negatives]))[::-1]
    tpr = (positives[None, :] >= thresholds[:, None]).mean(axis=1)
    fpr = (negatives[None, :] >= thresholds[:, None]).mean(axis=1)
    tpr = np.concatenate([[0.0], tpr, [1.0]])
    fpr = np.concatenate([[0.0], fpr, [1.0]])
    return float(np.trapezoid(tpr, fpr))


def similarity(a, b) -> float:
    """Histogram intersection of two maps normalized to unit mass."""
    x = validate_real_map(a)
    y = validate_real_map(b)
    if x.shape != y.shape:
        raise ValueError(f"map dimensions differ: {x.shape} vs {y.shape}")
    if x.min() < 0 or y.min() < 0:
        raise ValueError("similarity expects non-negative maps")
    p = normalize_to_distribution(x.ravel())
    q = normalize_to_distribution(y.ravel())
    return float(np.minimum(p, q).sum())


def dice_per_class(pred, gt) -> dict[int, float]:
    """Dice overlap per non-background class present in either mask."""
    p = validate_label_mask(pred)
    g = validate_label_mask(gt)
    if p.shape != g.shape:
        raise ValueError(f"mask dimensions differ: {p.shape} vs {g.shape}")
    classes = np.union1d(np.unique(p), np.unique(g))
    out: dict[int, float] = {}
    for cls in classes:
        if cls == 0:
            continue
        pc = p == cls
        gc = g == cls
        out[int(cls)] = 2.0 * float(np.logical_and(pc, gc).sum()) / float(pc.sum() + gc.sum())
    return out


def dice(pred, gt, mode: str = DICE_BINARY) -> float:
    """Mean Dice overlap; classes absent from both masks are skipped.

    ``binary`` collapses every instrument class to foreground first;
    ``per-type`` averages the per-class scores.  Two empty masks agree
    perfectly and score 1.
    """
    if mode == DICE_BINARY:
        p = (validate_label_mask(pred) > 0).astype(np.int64)
        g = (validate_label_mask(gt) > 0).astype(np.int64)
        scores = dice_per_class(p, g)
    elif mode == DICE_PER_TYPE:
        scores = dice_per_class(pred, gt)
    else:
        raise ValueError(f"unknown dice mode {mode!r}")
    if not scores:
        return 1.0
    return float(np.mean(list(scores.values())))


def boundary_pixels(mask) -> np.ndarray:
    """(k, 2) coordinates of foreground pixels with a 4-neighbor background.

    The image border counts as background, so the outline of a region
    touching the edge is included.
    """
    fg = np.asarray(mask, dtype=bool)
    padded = np.pad(fg, 1, constant_values=False)
    interior = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    return np.argwhere(fg & ~interior)


def hausdorff(pred, gt) -> float:
    """Symmetric Hausdorff distance between boundary pixel sets, in pixels.

    Both masks are collapsed to binary foreground; an empty mask has no
    boundary and is an error (callers skip such frames).
    """
    p = validate_label_mask(pred) > 0
    g = validate_label_mask(gt) > 0
    if not p.any() or not g.any():
        raise ValueError("Hausdorff distance undefined for an empty mask")
    pb = boundary_pixels(p).astype(np.float64)
    gb = boundary_pixels(g).astype(np.float64)
    forward = cKDTree(gb).query(pb)[0].max()
    backward = cKDTree(pb).query(gb)[0].max()
    return float(max(forward, backward))


@dataclass(frozen=True)
class ScanpathScore:
    """Agreement of two scanpaths at instrument-id granularity.

    ``top_one`` and ``whole`` are 0/1 indicators; ``kendall_tau`` is the
    rank correlation of the shared instruments (NaN with fewer than two in
    common).
    """

    top_one: float
    whole: float
    kendall_tau: float


def instrument_order(path: list[Fixation]) -> list[int]:
    """Instrument ids in order of first appearance along a scanpath."""
    seen: list[int] = []
    for fix in path:
        if fix.instrument_id not in seen:
            seen.append(fix.instrument_id)
    return seen


def scanpath_accuracy(pred: list[Fixation], gt: list[Fixation]) -> ScanpathScore:
    """Compare two scanpaths by the order in which they visit instruments."""
    if not pred or not gt:
        raise ValueError("cannot score an empty scanpath")
    pred_order = instrument_order(pred)
    gt_order = instrument_order(gt)
    top_one = 1.0 if pred_order[0] == gt_order[0] else 0.0
    whole = 1.0 if pred_order == gt_order else 0.0

    common = [i for i in pred_order if i in gt_order]
    if len(common) < 2:
        tau = math.nan
    else:
        pred_rank = [pred_order.index(i) for i in common]
        gt_rank = [gt_order.index(i) for i in common]
        tau = float(kendalltau(pred_rank, gt_rank).statistic)
    return ScanpathScore(top_one=top_one, whole=whole, kendall_tau=tau)


def aggregate_rows(rows: list[dict], fields: list[str] | None = None) -> dict[str, dict]:
    """Mean/std/count per metric over per-frame rows, skipping NaNs."""
    if fields is None:
        fields = sorted({k for row in rows for k in row if k != "frame_id"})
    out: dict[str, dict] = {}
    for name in fields:
        values = [
            float(row[name])
            for row in rows
            if name in row and row[name] is not None and not math.isnan(float(row[name]))
        ]
        if values:
            out[name] = {
                "mean": float(np.mean(values)),
                "std": float(np.std(values)),
                "count": len(values),
            }
        else:
            out[name] = {"mean": math.nan, "std": math.nan, "count": 0}
    return out


@dataclass(frozen=True)
class MetricReport:
    """Per-frame metric rows plus their mean/std aggregate over a sequence.

    Frames where a metric could not be computed carry NaN and are excluded
    from that metric's aggregate.
    """

    frames: list[dict]
    aggregate: dict[str, dict]

    @classmethod
    def from_frames(cls, rows: list[dict], fields: list[str] | None = None) -> "MetricReport":
        return cls(frames=rows, aggregate=aggregate_rows(rows, fields))
