"""Task-oriented saliency and scanpath generation from instrument part masks.

The pipeline, frame pair by frame pair:

1. :func:`part_dynamics` measures each instrument's wrist+clasper region in
   the current and a single previous reference frame (first-order temporal
   model: only one earlier frame is consulted).
2. :func:`instrument_weights` merges deformation and displacement into one
   attention weight per instrument.
3. :func:`place_fixations` drops simulated click points into the wrist and
   clasper regions, carrying the instrument weight.
4. :func:`render_saliency` sums weighted isotropic Gaussians and rescales
   the map to a unit peak.
5. :func:`generate_scanpath` orders the fixations by descending weight.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .raster import (
    CLASPER,
    WRIST,
    attended_mask,
    binary_components,
    part_label,
    validate_label_mask,
)

log = logging.getLogger(__name__)

# Floor applied to displacements so the log ratio stays finite when
# instruments are stationary.
DISPLACEMENT_EPS = 1e-6

DEFAULT_LAMBDA_DEFORMATION = 0.5
DEFAULT_LAMBDA_DISPLACEMENT = 0.5

_PART_RANK = {WRIST: 0, CLASPER: 1}


@dataclass(frozen=True)
class PartDynamics:
    """Wrist+clasper region statistics of one instrument across a frame pair.

    ``deformation`` is the area ratio max/min between the two frames (>= 1);
    ``displacement`` is the Euclidean distance in pixels between the region
    centroids.
    """

    instrument_id: int
    area_t: int
    area_prev: int
    deformation: float
    displacement: float
    centroid_t: tuple[float, float]
    centroid_prev: tuple[float, float]


@dataclass(frozen=True)
class Fixation:
    """A simulated attended point inside one instrument part.

    ``part`` is WRIST or CLASPER for generated fixations and may be None
    for fixations read back from serialized scanpaths.
    """

    instrument_id: int
    point: tuple[int, int]
    weight: float
    part: int | None = None


#: A fixation set is an unordered list of fixations; a scanpath is the same
#: list sorted by generate_scanpath.
FixationSet = list
Scanpath = list


def default_sigma(width: int) -> float:
    """Default Gaussian radius: 1/32 of the frame width, the usual
    one-degree-of-visual-angle convention for fixation maps."""
    return width / 32.0


def part_dynamics(parts_t, parts_prev, instrument_ids) -> list[PartDynamics]:
    """Measure per-instrument deformation and displacement between frames.

    Instruments missing a wrist/clasper region in exactly one of the two
    frames are omitted with a warning (no temporal reference); instruments
    absent from both frames are omitted silently.
    """
    cur = validate_label_mask(parts_t)
    prev = validate_label_mask(parts_prev)
    if cur.shape != prev.shape:
        raise ValueError(
            f"frame dimensions differ: {cur.shape} (current) vs {prev.shape} (previous)"
        )

    out: list[PartDynamics] = []
    for instrument_id in instrument_ids:
        mask_t = attended_mask(cur, instrument_id)
        mask_prev = attended_mask(prev, instrument_id)
        has_t, has_prev = bool(mask_t.any()), bool(mask_prev.any())
        if not has_t and not has_prev:
            continue
        if not (has_t and has_prev):
            log.warning(
                "instrument %d has no wrist/clasper pixels in the %s frame; omitted",
                instrument_id,
                "current" if not has_t else "previous",
            )
            continue
        area_t = int(mask_t.sum())
        area_prev = int(mask_prev.sum())
        cen_t = _mask_centroid(mask_t)
        cen_prev = _mask_centroid(mask_prev)
        deformation = max(area_t, area_prev) / min(area_t, area_prev)
        displacement = math.hypot(cen_t[0] - cen_prev[0], cen_t[1] - cen_prev[1])
        out.append(
            PartDynamics(
                instrument_id=instrument_id,
                area_t=area_t,
                area_prev=area_prev,
                deformation=deformation,
                displacement=displacement,
                centroid_t=cen_t,
                centroid_prev=cen_prev,
            )
        )
    return out


def instrument_weights(
    dynamics: list[PartDynamics],
    lambda_deformation: float = DEFAULT_LAMBDA_DEFORMATION,
    lambda_displacement: float = DEFAULT_LAMBDA_DISPLACEMENT,
    eps: float = DISPLACEMENT_EPS,
) -> dict[int, float]:
    """Attention weight per instrument from its deformation and displacement.

    w_i = lambda_deformation * mu_i / min(mu)
        + lambda_displacement * ln(2 d_i / min(d))

    with every displacement floored at ``eps`` before the ratio, so a fully
    stationary scene still yields the finite offset ln(2) in the second term.
    The natural logarithm is used; a different base only rescales
    ``lambda_displacement``.
    """
    if not dynamics:
        raise ValueError("no trackable instruments: dynamics list is empty")
    if lambda_deformation < 0 or lambda_displacement < 0:
        raise ValueError("term weights must be non-negative")
    if eps <= 0:
        raise ValueError("displacement floor must be positive")

    mu = np.array([d.deformation for d in dynamics], dtype=np.float64)
    dist = np.maximum([d.displacement for d in dynamics], eps)
    weights = lambda_deformation * (mu / mu.min()) + lambda_displacement * np.log(
        2.0 * dist / dist.min()
    )
    return {
        d.instrument_id: float(w) for d, w in zip(dynamics, weights)
    }


def place_fixations(parts_t, weights: dict[int, float], points_per_part: int = 1) -> list[Fixation]:
    """Drop fixation points into each weighted instrument's wrist/clasper parts.

    Every connected wrist or clasper region contributes its centroid, snapped
    to the nearest in-region pixel.  With ``points_per_part`` > 1, extra
    points are taken from a deterministic uniform grid laid over each
    region's bounding box and snapped in-region as well.  All points of an
    instrument carry that instrument's weight.
    """
    if points_per_part < 1:
        raise ValueError("points_per_part must be >= 1")
    parts = validate_label_mask(parts_t)

    fixations: list[Fixation] = []
    missing: list[int] = []
    for instrument_id in sorted(weights):
        weight = weights[instrument_id]
        placed_any = False
        for part in (WRIST, CLASPER):
            mask = parts == part_label(instrument_id, part)
            if not mask.any():
                continue
            placed_any = True
            for comp in binary_components(mask):
                anchor = _snap_to_pixels(comp.pixels, comp.centroid)
                fixations.append(Fixation(instrument_id, anchor, weight, part))
                for extra in _grid_points(comp.pixels, anchor, points_per_part - 1):
                    fixations.append(Fixation(instrument_id, extra, weight, part))
        if not placed_any:
            missing.append(instrument_id)
    if missing:
        raise ValueError(
            "weighted instruments without wrist/clasper pixels: "
            + ", ".join(str(i) for i in missing)
        )
    return fixations


def render_saliency(fixations: list[Fixation], width: int, height: int, sigma: float) -> np.ndarray:
    """Sum weighted isotropic Gaussians at the fixations, then rescale to [0, 1].

    The output peak is exactly 1 unless there are no fixations, in which
    case the map is all zero.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if width < 1 or height < 1:
        raise ValueError("map dimensions must be positive")

    rows = np.arange(height, dtype=np.float64)[:, None]
    cols = np.arange(width, dtype=np.float64)[None, :]
    out = np.zeros((height, width), dtype=np.float64)
    inv = 1.0 / (2.0 * sigma * sigma)
    # Canonical accumulation order: float sums are order-dependent, so sort
    # first to make the output bit-identical under fixation permutations.
    ordered = sorted(fixations, key=lambda f: (f.point, f.weight, f.instrument_id))
    for fix in ordered:
        r, c = fix.point
        if not (0 <= r < height and 0 <= c < width):
            raise ValueError(f"fixation {fix.point} outside {height}x{width} map")
        out += fix.weight * np.exp(-((rows - r) ** 2 + (cols - c) ** 2) * inv)
    peak = out.max()
    if peak > 0:
        out /= peak
    return out


def generate_scanpath(fixations: list[Fixation]) -> list[Fixation]:
    """Order fixations by descending weight.

    Ties break by ascending instrument id; within one instrument the wrist
    point precedes clasper points, then row-major point order.
    """
    return sorted(
        fixations,
        key=lambda f: (
            -f.weight,
            f.instrument_id,
            _PART_RANK.get(f.part, 0),
            f.point[0],
            f.point[1],
        ),
    )


def _mask_centroid(mask: np.ndarray) -> tuple[float, float]:
    pixels = np.argwhere(mask)
    return float(pixels[:, 0].mean()), float(pixels[:, 1].mean())


def _snap_to_pixels(pixels: np.ndarray, point: tuple[float, float]) -> tuple[int, int]:
    """Nearest region pixel to a real-valued point; row-major tie-break."""
    d2 = (pixels[:, 0] - point[0]) ** 2 + (pixels[:, 1] - point[1]) ** 2
    best = pixels[int(np.argmin(d2))]
    return int(best[0]), int(best[1])


def _grid_points(pixels: np.ndarray, anchor: tuple[int, int], count: int) -> list[tuple[int, int]]:
    """Up to ``count`` extra in-region points from a uniform bounding-box grid."""
    if count <= 0:
        return []
    r0, c0 = pixels.min(axis=0)
    r1, c1 = pixels.max(axis=0)
    side = math.ceil(math.sqrt(count + 1))
    centers_r = r0 + (r1 - r0 + 1) * (2 * np.arange(side) + 1) / (2 * side) - 0.5
    centers_c = c0 + (c1 - c0 + 1) * (2 * np.arange(side) + 1) / (2 * side) - 0.5

    seen = {anchor}
    extras: list[tuple[int, int]] = []
    for gr in centers_r:
        for gc in centers_c:
            point = _snap_to_pixels(pixels, (float(gr), float(gc)))
            if point not in seen:
                seen.add(point)
                extras.append(point)
            if len(extras) == count:
                return extras
    return extras
