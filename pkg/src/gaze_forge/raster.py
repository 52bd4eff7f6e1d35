"""Raster primitives shared by every other module.

Two raster kinds flow through the toolkit:

* a *label mask* — a 2-D integer array of non-negative class ids, 0 being
  background.  Part masks use one block of three labels per instrument
  slot (see :data:`SHAFT`, :data:`WRIST`, :data:`CLASPER`).
* a *real map* — a 2-D float array of finite values, e.g. a saliency map.

All functions are pure and never mutate their inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

BACKGROUND = 0

# Part ids within one instrument slot.  A parts mask stores
# ``3 * (slot - 1) + part`` so every instrument owns a disjoint label block:
# instrument 1 -> {1, 2, 3}, instrument 2 -> {4, 5, 6}, ...
SHAFT = 1
WRIST = 2
CLASPER = 3
PARTS_PER_INSTRUMENT = 3

# Below this total mass a value vector is considered empty and is
# normalized to the uniform distribution instead of dividing by ~0.
ZERO_MASS_EPS = 1e-12

_CONNECTIVITY_STRUCTURE = {
    4: ndimage.generate_binary_structure(2, 1),
    8: ndimage.generate_binary_structure(2, 2),
}


def validate_label_mask(labels, n_classes: int | None = None) -> np.ndarray:
    """Return ``labels`` as a 2-D int array, checking mask invariants."""
    arr = np.asarray(labels)
    if arr.ndim != 2:
        raise ValueError(f"label mask must be 2-D, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.all(arr == np.floor(arr)):
            raise ValueError("label mask must contain integer class ids")
        arr = arr.astype(np.int64)
    if arr.size and arr.min() < 0:
        raise ValueError("label mask contains negative class ids")
    if n_classes is not None and arr.size and arr.max() >= n_classes:
        raise ValueError(
            f"label id {int(arr.max())} outside declared class count {n_classes}"
        )
    return arr.astype(np.int64, copy=False)


def validate_real_map(values) -> np.ndarray:
    """Return ``values`` as a 2-D float64 array, rejecting NaN/inf."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"real map must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("real map contains non-finite values")
    return arr


@dataclass(frozen=True)
class Component:
    """One maximal connected region of a single label.

    ``pixels`` is an ``(area, 2)`` array of (row, col) coordinates in
    row-major scan order, so ``pixels[0]`` is the top-left pixel.
    """

    label: int
    pixels: np.ndarray
    area: int
    centroid: tuple[float, float]


def connected_components(labels, connectivity: int = 4) -> list[Component]:
    """Split a label mask into maximal same-label connected regions.

    Background (label 0) is ignored.  The result is ordered by
    ``(label, top-left pixel)`` and therefore deterministic.
    ``connectivity`` is 4 or 8.
    """
    arr = validate_label_mask(labels)
    try:
        structure = _CONNECTIVITY_STRUCTURE[connectivity]
    except KeyError:
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}") from None

    components: list[Component] = []
    for value in np.unique(arr):
        if value == BACKGROUND:
            continue
        labelled, count = ndimage.label(arr == value, structure=structure)
        for k in range(1, count + 1):
            pixels = np.argwhere(labelled == k)
            centroid = (float(pixels[:, 0].mean()), float(pixels[:, 1].mean()))
            components.append(
                Component(
                    label=int(value),
                    pixels=pixels,
                    area=int(len(pixels)),
                    centroid=centroid,
                )
            )
    components.sort(key=lambda c: (c.label, int(c.pixels[0, 0]), int(c.pixels[0, 1])))
    return components


def binary_components(mask, connectivity: int = 4) -> list[Component]:
    """Connected regions of a boolean mask (reported with label 1)."""
    return connected_components(np.asarray(mask, dtype=bool).astype(np.int64), connectivity)


def downsample_half(values) -> np.ndarray:
    """Mean-pool a real map by 2x, dropping a trailing odd row/column."""
    arr = validate_real_map(values)
    h, w = arr.shape
    if h < 2 or w < 2:
        raise ValueError(f"map of shape {h}x{w} is too small to downsample by half")
    h2, w2 = h // 2, w // 2
    return arr[: 2 * h2, : 2 * w2].reshape(h2, 2, w2, 2).mean(axis=(1, 3))


def normalize_to_distribution(values) -> np.ndarray:
    """Scale non-negative values to sum to 1.

    A vector with (near-)zero total mass maps to the uniform distribution,
    which keeps downstream transport distances defined on empty frames.
    Negative entries are a domain error.
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("cannot normalize an empty value vector")
    if not np.all(np.isfinite(arr)):
        raise ValueError("values contain non-finite entries")
    if np.any(arr < 0):
        raise ValueError("values must be non-negative to form a distribution")
    total = arr.sum()
    if total < ZERO_MASS_EPS:
        return np.full(arr.shape, 1.0 / arr.size)
    return arr / total


def instrument_slot(labels) -> np.ndarray:
    """Instrument slot (1-based) owning each part label; 0 for background."""
    arr = validate_label_mask(labels)
    return np.where(arr > 0, (arr - 1) // PARTS_PER_INSTRUMENT + 1, 0)


def part_id(labels) -> np.ndarray:
    """Part id (SHAFT/WRIST/CLASPER) of each label; 0 for background."""
    arr = validate_label_mask(labels)
    return np.where(arr > 0, (arr - 1) % PARTS_PER_INSTRUMENT + 1, 0)


def part_label(instrument_id: int, part: int) -> int:
    """Mask label of ``part`` belonging to instrument ``instrument_id``."""
    if instrument_id < 1:
        raise ValueError(f"instrument ids are 1-based, got {instrument_id}")
    if part not in (SHAFT, WRIST, CLASPER):
        raise ValueError(f"unknown part id {part}")
    return PARTS_PER_INSTRUMENT * (instrument_id - 1) + part


def attended_mask(parts, instrument_id: int) -> np.ndarray:
    """Boolean mask of the wrist and clasper pixels of one instrument.

    These are the parts that receive fixations and whose union defines the
    instrument's tracked size.
    """
    arr = validate_label_mask(parts)
    return (arr == part_label(instrument_id, WRIST)) | (
        arr == part_label(instrument_id, CLASPER)
    )
