"""File formats and dataset ingestion.

Dataset layout (EndoVis-2017 style, one directory per sequence)::

    <root>/instrument_dataset_<seq>/ground_truth/parts_masks/frame###.png
    <root>/instrument_dataset_<seq>/ground_truth/type_masks/frame###.png

Masks are 8-bit grayscale label images.  Dataset-specific label encodings
are handled by remap tables in the run config, never in code; the internal
convention is one block of {shaft, wrist, clasper} labels per instrument
slot (see raster module).

Saliency maps travel as raw little-endian float32 rasters with a JSON
sidecar (lossless round trip) plus optional 8/16-bit grayscale previews
(lossy, for visualization).  Scanpaths are JSON lists of
{order, instrument_id, row, col, weight}.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from PIL import Image

from . import __version__
from .losses import DEFAULT_ALPHA, DEFAULT_POLY_POWER
from .raster import PARTS_PER_INSTRUMENT, validate_label_mask, validate_real_map
from .saliency import (
    DEFAULT_LAMBDA_DEFORMATION,
    DEFAULT_LAMBDA_DISPLACEMENT,
    DISPLACEMENT_EPS,
    Fixation,
)

log = logging.getLogger(__name__)

GROUND_TRUTH_DIR = "ground_truth"
PARTS_DIR = "parts_masks"
TYPES_DIR = "type_masks"

_FRAME_RE = re.compile(r"frame(\d+)\.png$")


@dataclass
class RunConfig:
    """Tunable knobs of a run; see the README for the default conventions."""

    lambda_de: float = DEFAULT_LAMBDA_DEFORMATION
    lambda_di: float = DEFAULT_LAMBDA_DISPLACEMENT
    alpha: float = DEFAULT_ALPHA
    sigma: float | None = None  # None -> width / 32 at render time
    delta_t: int = 1
    eps: float = DISPLACEMENT_EPS
    power: float = DEFAULT_POLY_POWER
    auc_splits: int = 100
    auc_negatives: int | None = None
    points_per_part: int = 1
    seed: int | None = None
    jobs: int = 1
    n_instrument_slots: int = 8
    n_types: int = 8
    parts_remap: dict = field(default_factory=dict)
    types_remap: dict = field(default_factory=dict)

    def validate(self) -> "RunConfig":
        bad = []
        if not 0.0 <= self.alpha <= 1.0:
            bad.append(f"alpha={self.alpha} (must be in [0, 1])")
        if self.sigma is not None and self.sigma <= 0:
            bad.append(f"sigma={self.sigma} (must be positive)")
        if self.delta_t < 1:
            bad.append(f"delta_t={self.delta_t} (must be >= 1)")
        if self.lambda_de < 0 or self.lambda_di < 0:
            bad.append("lambda_de/lambda_di (must be non-negative)")
        if self.eps <= 0:
            bad.append(f"eps={self.eps} (must be positive)")
        if self.power <= 0:
            bad.append(f"power={self.power} (must be positive)")
        if self.auc_splits < 1:
            bad.append(f"auc_splits={self.auc_splits} (must be >= 1)")
        if self.points_per_part < 1:
            bad.append(f"points_per_part={self.points_per_part} (must be >= 1)")
        if self.jobs < 1:
            bad.append(f"jobs={self.jobs} (must be >= 1)")
        if self.n_instrument_slots < 1 or self.n_types < 1:
            bad.append("n_instrument_slots/n_types (must be >= 1)")
        if bad:
            raise ValueError("invalid configuration: " + "; ".join(bad))
        return self

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown config fields in {path}: {', '.join(unknown)}")
        cfg = cls(**data)
        cfg.parts_remap = {int(k): int(v) for k, v in cfg.parts_remap.items()}
        cfg.types_remap = {int(k): int(v) for k, v in cfg.types_remap.items()}
        return cfg.validate()

    def with_overrides(self, **overrides) -> "RunConfig":
        filtered = {k: v for k, v in overrides.items() if v is not None}
        return replace(self, **filtered).validate()

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["parts_remap"] = {str(k): v for k, v in self.parts_remap.items()}
        out["types_remap"] = {str(k): v for k, v in self.types_remap.items()}
        return out


@dataclass
class FrameBundle:
    """One frame's rasters (and, when loaded for evaluation, predictions)."""

    frame_id: int
    parts: np.ndarray
    types: np.ndarray
    saliency: np.ndarray | None = None
    scanpath: list[Fixation] | None = None


def read_mask_png(path) -> np.ndarray:
    """Read an 8-bit grayscale label image as an int array."""
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("L"), dtype=np.int64)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise ValueError(f"unreadable mask {path}: {exc}") from exc


def write_mask_png(mask, path) -> None:
    arr = validate_label_mask(mask)
    if arr.max(initial=0) > 255:
        raise ValueError("label ids above 255 do not fit an 8-bit mask image")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr.astype(np.uint8), mode="L").save(path)


def write_map(values, path, kind: str = "saliency") -> None:
    """Write a real map as raw little-endian float32 plus a JSON sidecar."""
    arr = validate_real_map(values)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(arr.astype("<f4").tobytes())
    sidecar = {
        "width": int(arr.shape[1]),
        "height": int(arr.shape[0]),
        "dtype": "f32le",
        "kind": kind,
    }
    _sidecar_path(path).write_text(json.dumps(sidecar, sort_keys=True) + "\n", encoding="utf-8")


def read_map(path) -> np.ndarray:
    """Read a raw float32 map written by :func:`write_map` (bit-exact)."""
    path = Path(path)
    meta = json.loads(_sidecar_path(path).read_text(encoding="utf-8"))
    if meta.get("dtype") != "f32le":
        raise ValueError(f"{path}: unsupported dtype {meta.get('dtype')!r}")
    width, height = int(meta["width"]), int(meta["height"])
    raw = path.read_bytes()
    expected = width * height * 4
    if len(raw) != expected:
        raise ValueError(f"{path}: raster holds {len(raw)} bytes, sidecar expects {expected}")
    return np.frombuffer(raw, dtype="<f4").reshape(height, width).astype(np.float64)


def _sidecar_path(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def export_map_png(values, path, bits: int = 8) -> None:
    """Quantized grayscale preview of a [0, 1] map (lossy, monotone)."""
    arr = validate_real_map(values)
    if arr.min() < 0 or arr.max() > 1:
        raise ValueError("image export expects values in [0, 1]")
    if bits == 8:
        img = Image.fromarray(np.round(arr * 255).astype(np.uint8))
    elif bits == 16:
        img = Image.fromarray(np.round(arr * 65535).astype(np.uint16))
    else:
        raise ValueError(f"bits must be 8 or 16, got {bits}")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    img.save(path)


def write_scanpath(path, scanpath: list[Fixation]) -> None:
    rows = [
        {
            "order": k,
            "instrument_id": fix.instrument_id,
            "row": int(fix.point[0]),
            "col": int(fix.point[1]),
            "weight": float(fix.weight),
        }
        for k, fix in enumerate(scanpath)
    ]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_scanpath(path) -> list[Fixation]:
    rows = json.loads(Path(path).read_text(encoding="utf-8"))
    rows.sort(key=lambda r: r["order"])
    return [
        Fixation(
            instrument_id=int(r["instrument_id"]),
            point=(int(r["row"]), int(r["col"])),
            weight=float(r["weight"]),
        )
        for r in rows
    ]


def sequence_dir(root, seq: int) -> Path:
    return Path(root) / f"instrument_dataset_{seq}"


def _remap_labels(arr: np.ndarray, table: dict, n_classes: int, path) -> np.ndarray:
    if table:
        lookup = np.full(max(int(arr.max(initial=0)), max(table)) + 1, -1, dtype=np.int64)
        for raw, internal in table.items():
            lookup[raw] = internal
        identity = np.arange(lookup.size)
        unmapped = np.setdiff1d(np.unique(arr), np.fromiter(table, dtype=np.int64))
        lookup[unmapped] = identity[unmapped]  # ids outside the table pass through
        arr = lookup[arr]
    bad = np.unique(arr[(arr < 0) | (arr >= n_classes)])
    if bad.size:
        raise ValueError(
            f"{path}: unknown label id(s) {', '.join(str(int(b)) for b in bad)} "
            f"(declared class count {n_classes})"
        )
    return arr


def load_sequence(root, seq: int, config: RunConfig | None = None) -> list[FrameBundle]:
    """Load a mask sequence as FrameBundles ordered by numeric frame id.

    Gaps in the frame numbering are reported with a warning; frames must
    agree on raster dimensions and every (remapped) label must fall inside
    the declared class counts.
    """
    config = config or RunConfig()
    base = sequence_dir(root, seq) / GROUND_TRUTH_DIR
    parts_dir = base / PARTS_DIR
    types_dir = base / TYPES_DIR
    if not parts_dir.is_dir():
        raise FileNotFoundError(f"no parts masks at {parts_dir}")

    frames: dict[int, Path] = {}
    for path in parts_dir.iterdir():
        match = _FRAME_RE.search(path.name)
        if match:
            frames[int(match.group(1))] = path
    if not frames:
        raise FileNotFoundError(f"no frame###.png masks in {parts_dir}")

    ids = sorted(frames)
    missing = sorted(set(range(ids[0], ids[-1] + 1)) - set(ids))
    if missing:
        log.warning(
            "sequence %s is missing frame(s) %s", seq, ", ".join(str(i) for i in missing)
        )

    n_part_labels = 1 + PARTS_PER_INSTRUMENT * config.n_instrument_slots
    n_type_labels = 1 + config.n_types
    bundles: list[FrameBundle] = []
    shape = None
    for frame_id in ids:
        parts_path = frames[frame_id]
        parts = _remap_labels(
            read_mask_png(parts_path), config.parts_remap, n_part_labels, parts_path
        )
        types_path = types_dir / parts_path.name
        if not types_path.is_file():
            raise FileNotFoundError(f"missing type mask {types_path}")
        types = _remap_labels(
            read_mask_png(types_path), config.types_remap, n_type_labels, types_path
        )
        if parts.shape != types.shape:
            raise ValueError(
                f"frame {frame_id}: parts {parts.shape} and types {types.shape} differ"
            )
        if shape is None:
            shape = parts.shape
        elif parts.shape != shape:
            raise ValueError(
                f"frame {frame_id}: dimensions {parts.shape} differ from sequence {shape}"
            )
        bundles.append(FrameBundle(frame_id=frame_id, parts=parts, types=types))
    return bundles


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(out_dir, command: str, config: RunConfig | None, inputs, seed=None, extra=None) -> Path:
    """Write the reproducibility manifest beside a run's outputs.

    Contains the tool version, the command, the effective config, the
    sha256 of every input file, and the seed; deliberately no timestamps so
    reruns are byte-identical.
    """
    manifest = {
        "tool": "gaze-forge",
        "version": __version__,
        "command": command,
        "config": config.to_dict() if config is not None else None,
        "inputs": {str(p): sha256_file(p) for p in sorted(map(str, inputs))},
        "seed": seed,
    }
    if extra:
        manifest.update(extra)
    out = Path(out_dir) / "manifest.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return out
