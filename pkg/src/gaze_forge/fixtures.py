"""Synthetic mask sequences so the full pipeline runs without real data.

Each instrument is a vertical tool built from rectangles: a long shaft, a
wrist segment, and two clasper jaws at the tip.  Instruments drift with a
constant per-instrument velocity and one of them breathes in size, so the
sequences exercise both the displacement and the deformation pathways.
Everything is deterministic given the seed.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .io import GROUND_TRUTH_DIR, PARTS_DIR, TYPES_DIR, sequence_dir, write_mask_png
from .raster import CLASPER, SHAFT, WRIST, part_label

_FRAME_NAME = "frame{:03d}.png"


def _stamp(mask: np.ndarray, r0: int, c0: int, h: int, w: int, label: int) -> None:
    rows, cols = mask.shape
    r0 = int(np.clip(r0, 0, rows - 1))
    c0 = int(np.clip(c0, 0, cols - 1))
    r1 = int(np.clip(r0 + h, 1, rows))
    c1 = int(np.clip(c0 + w, 1, cols))
    mask[r0:r1, c0:c1] = label


def render_instrument(parts: np.ndarray, types: np.ndarray, instrument_id: int,
                      tip_row: int, tip_col: int, scale: float) -> None:
    """Draw one tool with its tip (claspers) around (tip_row, tip_col)."""
    wrist_h = max(2, round(4 * scale))
    wrist_w = max(2, round(6 * scale))
    jaw = max(1, round(2 * scale))

    # Two clasper jaws side by side at the tip, wrist behind, shaft below.
    _stamp(parts, tip_row, tip_col - jaw - 1, jaw, jaw, part_label(instrument_id, CLASPER))
    _stamp(parts, tip_row, tip_col + 1, jaw, jaw, part_label(instrument_id, CLASPER))
    wrist_r = tip_row + jaw + 1
    _stamp(parts, wrist_r, tip_col - wrist_w // 2, wrist_h, wrist_w, part_label(instrument_id, WRIST))
    shaft_r = wrist_r + wrist_h
    _stamp(parts, shaft_r, tip_col - 1, 10, 3, part_label(instrument_id, SHAFT))

    for label in (SHAFT, WRIST, CLASPER):
        types[parts == part_label(instrument_id, label)] = instrument_id


def make_fixture_sequence(
    root,
    seq: int = 1,
    frames: int = 8,
    height: int = 96,
    width: int = 96,
    instruments: int = 2,
    seed: int = 0,
) -> Path:
    """Write a synthetic sequence under ``root`` and return its directory.

    Instruments live in separate horizontal bands so they never overlap;
    instrument 1 additionally grows over time to exercise deformation.
    """
    if instruments < 1:
        raise ValueError("need at least one instrument")
    if frames < 2:
        raise ValueError("need at least two frames for temporal dynamics")
    band = width // instruments
    if band < 16:
        raise ValueError("frame too narrow for the requested instrument count")

    rng = np.random.default_rng(seed)
    starts = []
    velocities = []
    for i in range(instruments):
        margin = 8
        starts.append(
            (
                int(rng.integers(margin, max(margin + 1, height // 2))),
                int(band * i + rng.integers(margin, band - margin)),
            )
        )
        velocities.append((int(rng.integers(1, 4)), int(rng.integers(-2, 3))))

    seq_dir = sequence_dir(root, seq)
    parts_dir = seq_dir / GROUND_TRUTH_DIR / PARTS_DIR
    types_dir = seq_dir / GROUND_TRUTH_DIR / TYPES_DIR
    for t in range(frames):
        parts = np.zeros((height, width), dtype=np.int64)
        types = np.zeros((height, width), dtype=np.int64)
        for i in range(instruments):
            instrument_id = i + 1
            vy, vx = velocities[i]
            tip_r = starts[i][0] + vy * t
            tip_c = starts[i][1] + vx * t
            tip_r = int(np.clip(tip_r, 2, height - 20))
            tip_c = int(np.clip(tip_c, band * i + 6, band * (i + 1) - 7))
            scale = 1.0 + (0.15 * t if instrument_id == 1 else 0.0)
            render_instrument(parts, types, instrument_id, tip_r, tip_c, scale)
        write_mask_png(parts, parts_dir / _FRAME_NAME.format(t))
        write_mask_png(types, types_dir / _FRAME_NAME.format(t))
    return seq_dir
