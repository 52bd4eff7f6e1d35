"""Command-line surface.

Subcommands::

    make-fixtures   write a synthetic mask sequence (no external data needed)
    gen-saliency    saliency map + scanpath per frame from a mask sequence
    gen-scanpath    scanpaths only
    eval-saliency   BCE / SIM / NSS / AUC-Borji between two map directories
    eval-seg        Dice and Hausdorff of predicted masks vs dataset masks
    eval-scanpath   top-one / whole-sequence / Kendall-tau scanpath agreement
    loss            saliency loss stack (BCE, batch transport, fusion) on files
    schedule        two-phase loss-weight curve as CSV + plot
    blocks          selftest | gradcheck of the reference network blocks

Every run writes a ``manifest.json`` (tool version, config echo, input
digests, seed) beside its outputs; metric commands write per-frame CSV, an
aggregate JSON, and a rendered figure.  Outputs are byte-reproducible given
the same inputs and seed.  Errors are reported as JSON on stderr with a
non-zero exit code.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import re
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, blocks, losses, metrics
from .fixtures import make_fixture_sequence
from .io import (
    FrameBundle,
    RunConfig,
    load_sequence,
    read_map,
    read_mask_png,
    read_scanpath,
    sequence_dir,
    export_map_png,
    write_manifest,
    write_map,
    write_scanpath,
)
from .raster import CLASPER, WRIST, instrument_slot, part_id
from .reports import (
    plot_error_bars,
    plot_map,
    plot_metric_lines,
    plot_schedule,
    write_csv,
    write_json,
)
from .saliency import (
    default_sigma,
    generate_scanpath,
    instrument_weights,
    part_dynamics,
    place_fixations,
    render_saliency,
)

log = logging.getLogger("gaze_forge")

GRADCHECK_THRESHOLD = 1e-4

_MAP_RE = re.compile(r"sal_(\d+)\.f32$")
_SCANPATH_RE = re.compile(r"scanpath_(\d+)\.json$")
_MASK_RE = re.compile(r"frame(\d+)\.png$")


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, RuntimeError) as exc:
        json.dump({"error": str(exc), "command": args.command}, sys.stderr)
        sys.stderr.write("\n")
        return 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gaze-forge",
        description="Task-oriented saliency/scanpath generation and evaluation "
        "for surgical instrument sequences.",
    )
    parser.add_argument("--version", action="version", version=f"gaze-forge {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-fixtures", help="write a synthetic mask sequence")
    p.add_argument("--out", required=True, help="dataset root to create")
    p.add_argument("--seq", type=int, default=1)
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--height", type=int, default=96)
    p.add_argument("--width", type=int, default=96)
    p.add_argument("--instruments", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_make_fixtures)

    for name, func in (("gen-saliency", _cmd_gen_saliency), ("gen-scanpath", _cmd_gen_scanpath)):
        p = sub.add_parser(name, help=f"{name.replace('-', ' ')} from a mask sequence")
        p.add_argument("--root", required=True, help="dataset root")
        p.add_argument("--seq", type=int, required=True)
        p.add_argument("--out", required=True)
        _add_config_flags(p)
        p.set_defaults(func=func)

    p = sub.add_parser("eval-saliency", help="saliency metrics between two map directories")
    p.add_argument("--pred", required=True, help="directory of predicted maps")
    p.add_argument("--gt", required=True, help="directory of ground-truth maps + scanpaths")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True, help="AUC-Borji sampling seed")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--auc-splits", type=int, default=None)
    p.add_argument("--auc-negatives", type=int, default=None)
    p.add_argument("--jobs", type=int, default=None)
    p.set_defaults(func=_cmd_eval_saliency)

    p = sub.add_parser("eval-seg", help="segmentation metrics of predicted type masks")
    p.add_argument("--pred", required=True, help="directory of predicted frame###.png type masks")
    p.add_argument("--root", required=True)
    p.add_argument("--seq", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--jobs", type=int, default=None)
    p.set_defaults(func=_cmd_eval_seg)

    p = sub.add_parser("eval-scanpath", help="scanpath agreement between two directories")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_eval_scanpath)

    p = sub.add_parser("loss", help="saliency loss stack between two map directories")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--l-seg", type=float, default=None,
                   help="optionally combine with a segmentation loss value")
    p.add_argument("--lambda-seg", type=float, default=1.0)
    p.add_argument("--lambda-sal", type=float, default=1.0)
    p.set_defaults(func=_cmd_loss)

    p = sub.add_parser("schedule", help="emit the two-phase loss-weight curve")
    p.add_argument("--max-iter", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--power", type=float, default=losses.DEFAULT_POLY_POWER)
    p.add_argument("--converge-task", choices=[losses.TASK_SEGMENTATION, losses.TASK_SALIENCY])
    p.add_argument("--converge-iter", type=int, default=None)
    p.set_defaults(func=_cmd_schedule)

    p = sub.add_parser("blocks", help="reference network block verification")
    p.add_argument("action", choices=["selftest", "gradcheck"])
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=3,
                   help="random instances per block in gradcheck")
    p.set_defaults(func=_cmd_blocks)

    return parser


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--delta-t", type=int, default=None)
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--lambda-de", type=float, default=None)
    p.add_argument("--lambda-di", type=float, default=None)
    p.add_argument("--points-per-part", type=int, default=None)
    p.add_argument("--jobs", type=int, default=None)


def _resolve_config(args) -> RunConfig:
    config = RunConfig.from_file(args.config) if getattr(args, "config", None) else RunConfig()
    overrides = {}
    for flag, field_name in (
        ("seed", "seed"),
        ("delta_t", "delta_t"),
        ("sigma", "sigma"),
        ("alpha", "alpha"),
        ("lambda_de", "lambda_de"),
        ("lambda_di", "lambda_di"),
        ("points_per_part", "points_per_part"),
        ("auc_splits", "auc_splits"),
        ("auc_negatives", "auc_negatives"),
    ):
        if getattr(args, flag, None) is not None:
            overrides[field_name] = getattr(args, flag)
    jobs = getattr(args, "jobs", None)
    if jobs is None:
        env = os.environ.get("GAZE_FORGE_JOBS")
        jobs = int(env) if env else None
    if jobs is not None:
        overrides["jobs"] = jobs
    return config.with_overrides(**overrides)


def _parallel_map(fn, items, jobs: int):
    """Order-preserving map, threaded when jobs > 1."""
    if jobs <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _indexed_files(directory, pattern: re.Pattern) -> dict[int, Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"no such directory: {directory}")
    return {
        int(m.group(1)): path
        for path in directory.iterdir()
        if (m := pattern.search(path.name))
    }


def _common_ids(a: dict[int, Path], b: dict[int, Path], what: str) -> list[int]:
    common = sorted(set(a) & set(b))
    if not common:
        raise ValueError(f"no overlapping frame ids between the two {what} directories")
    for missing in sorted(set(a) ^ set(b)):
        log.warning("frame %d present on one side only; skipped", missing)
    return common


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------


def _cmd_make_fixtures(args) -> int:
    seq_dir = make_fixture_sequence(
        args.out,
        seq=args.seq,
        frames=args.frames,
        height=args.height,
        width=args.width,
        instruments=args.instruments,
        seed=args.seed,
    )
    write_manifest(seq_dir, "make-fixtures", None, [], seed=args.seed,
                   extra={"frames": args.frames, "instruments": args.instruments})
    print(f"fixture sequence written to {seq_dir}")
    return 0


def _present_instruments(parts: np.ndarray) -> list[int]:
    attended = np.isin(part_id(parts), (WRIST, CLASPER))
    return [int(s) for s in np.unique(instrument_slot(parts)[attended]) if s > 0]


def _frame_products(bundles: list[FrameBundle], config: RunConfig):
    """Pair each frame with its reference frame and compute map + scanpath."""
    by_id = {b.frame_id: b for b in bundles}

    def compute(bundle: FrameBundle):
        prev = by_id.get(bundle.frame_id - config.delta_t)
        if prev is None:
            log.warning("frame %d has no reference frame %d; skipped",
                        bundle.frame_id, bundle.frame_id - config.delta_t)
            return None
        dynamics = part_dynamics(bundle.parts, prev.parts, _present_instruments(bundle.parts))
        if not dynamics:
            log.warning("frame %d has no instrument visible in both frames; skipped",
                        bundle.frame_id)
            return None
        weights = instrument_weights(dynamics, config.lambda_de, config.lambda_di, config.eps)
        fixations = place_fixations(bundle.parts, weights, config.points_per_part)
        height, width = bundle.parts.shape
        sigma = config.sigma if config.sigma is not None else default_sigma(width)
        saliency_map = render_saliency(fixations, width, height, sigma)
        return bundle.frame_id, weights, generate_scanpath(fixations), saliency_map

    products = _parallel_map(compute, bundles, config.jobs)
    return [p for p in products if p is not None]


def _sequence_inputs(root, seq: int) -> list[Path]:
    base = sequence_dir(root, seq)
    return sorted(p for p in base.rglob("*.png"))


def _run_generation(args, write_maps: bool) -> int:
    config = _resolve_config(args)
    bundles = load_sequence(args.root, args.seq, config)
    products = _frame_products(bundles, config)
    if not products:
        raise ValueError(f"sequence {args.seq}: no frame had a usable reference frame")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summary_rows = []
    mean_map = None
    for frame_id, weights, scanpath, saliency_map in products:
        write_scanpath(out / f"scanpath_{frame_id:03d}.json", scanpath)
        if write_maps:
            write_map(saliency_map, out / f"sal_{frame_id:03d}.f32")
            export_map_png(saliency_map, out / f"sal_{frame_id:03d}.png")
            mean_map = saliency_map if mean_map is None else mean_map + saliency_map
        top = scanpath[0]
        summary_rows.append(
            {
                "frame_id": frame_id,
                "instruments": len(weights),
                "fixations": len(scanpath),
                "top_instrument": top.instrument_id,
                "top_weight": float(top.weight),
            }
        )

    command = "gen-saliency" if write_maps else "gen-scanpath"
    write_csv(out / "frames.csv",
              ["frame_id", "instruments", "fixations", "top_instrument", "top_weight"],
              summary_rows)
    plot_metric_lines(summary_rows, ["top_weight"], out / "summary.png",
                      f"{command}: top instrument weight per frame", ylabel="weight")
    if write_maps and mean_map is not None:
        plot_map(mean_map / len(products), out / "mean_saliency.png", "mean saliency over sequence")
    write_manifest(out, command, config, _sequence_inputs(args.root, args.seq),
                   seed=config.seed, extra={"sequence": args.seq, "frames": len(products)})
    print(f"{command}: {len(products)} frame(s) written to {out}")
    return 0


def _cmd_gen_saliency(args) -> int:
    return _run_generation(args, write_maps=True)


def _cmd_gen_scanpath(args) -> int:
    return _run_generation(args, write_maps=False)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def _cmd_eval_saliency(args) -> int:
    config = _resolve_config(args).with_overrides(seed=args.seed)
    pred_maps = _indexed_files(args.pred, _MAP_RE)
    gt_maps = _indexed_files(args.gt, _MAP_RE)
    gt_paths = _indexed_files(args.gt, _SCANPATH_RE)
    ids = _common_ids(pred_maps, gt_maps, "map")

    def score(frame_id: int) -> dict:
        pred = read_map(pred_maps[frame_id])
        gt = read_map(gt_maps[frame_id])
        row = {
            "frame_id": frame_id,
            "bce": losses.bce_loss(pred, gt).value,
            "sim": metrics.similarity(pred, gt),
        }
        scanpath = read_scanpath(gt_paths[frame_id]) if frame_id in gt_paths else []
        if scanpath:
            row["nss"] = metrics.nss(pred, scanpath)
            row["auc_borji"] = metrics.auc_borji(
                pred,
                scanpath,
                n_splits=config.auc_splits,
                n_negatives=config.auc_negatives,
                seed=(config.seed, frame_id),  # split per frame: thread-order independent
            )
        else:
            log.warning("frame %d: no ground-truth scanpath; NSS/AUC skipped", frame_id)
            row["nss"] = float("nan")
            row["auc_borji"] = float("nan")
        return row

    rows = _parallel_map(score, ids, config.jobs)
    fields = ["bce", "sim", "nss", "auc_borji"]
    report = metrics.MetricReport.from_frames(rows, fields)
    out = Path(args.out)
    write_csv(out / "metrics.csv", ["frame_id"] + fields, report.frames)
    write_json(out / "aggregate.json", report.aggregate)
    plot_metric_lines(rows, fields, out / "metrics.png", "saliency metrics per frame")
    inputs = [pred_maps[i] for i in ids] + [gt_maps[i] for i in ids]
    inputs += [gt_paths[i] for i in ids if i in gt_paths]
    write_manifest(out, "eval-saliency", config, inputs, seed=args.seed)
    print(f"eval-saliency: {len(rows)} frame(s) -> {out / 'metrics.csv'}")
    return 0


def _cmd_eval_seg(args) -> int:
    config = _resolve_config(args)
    bundles = {b.frame_id: b for b in load_sequence(args.root, args.seq, config)}
    pred_masks = _indexed_files(args.pred, _MASK_RE)
    ids = _common_ids(pred_masks, {k: None for k in bundles}, "mask")

    def score(frame_id: int) -> dict:
        pred = read_mask_png(pred_masks[frame_id])
        gt = bundles[frame_id].types
        if pred.shape != gt.shape:
            raise ValueError(
                f"frame {frame_id}: prediction {pred.shape} vs ground truth {gt.shape}"
            )
        row = {
            "frame_id": frame_id,
            "dice_binary": metrics.dice(pred, gt, metrics.DICE_BINARY),
            "dice_type": metrics.dice(pred, gt, metrics.DICE_PER_TYPE),
        }
        try:
            row["hausdorff_binary"] = metrics.hausdorff(pred, gt)
        except ValueError as exc:
            log.warning("frame %d: %s; excluded from the Hausdorff aggregate", frame_id, exc)
            row["hausdorff_binary"] = float("nan")
        row["hausdorff_type"] = _hausdorff_per_type(pred, gt, frame_id)
        return row

    rows = _parallel_map(score, ids, config.jobs)
    fields = ["dice_binary", "dice_type", "hausdorff_binary", "hausdorff_type"]
    report = metrics.MetricReport.from_frames(rows, fields)
    out = Path(args.out)
    write_csv(out / "metrics.csv", ["frame_id"] + fields, report.frames)
    write_json(out / "aggregate.json", report.aggregate)
    plot_metric_lines(rows, fields, out / "metrics.png", "segmentation metrics per frame")
    inputs = list(pred_masks.values()) + _sequence_inputs(args.root, args.seq)
    write_manifest(out, "eval-seg", config, inputs, seed=config.seed)
    print(f"eval-seg: {len(rows)} frame(s) -> {out / 'metrics.csv'}")
    return 0


def _hausdorff_per_type(pred: np.ndarray, gt: np.ndarray, frame_id: int) -> float:
    classes = sorted(set(np.unique(pred)) & set(np.unique(gt)) - {0})
    values = []
    for cls in classes:
        values.append(metrics.hausdorff(pred == cls, gt == cls))
    if not values:
        log.warning("frame %d: no class present in both masks; per-type Hausdorff skipped",
                    frame_id)
        return float("nan")
    return float(np.mean(values))


def _cmd_eval_scanpath(args) -> int:
    pred_paths = _indexed_files(args.pred, _SCANPATH_RE)
    gt_paths = _indexed_files(args.gt, _SCANPATH_RE)
    ids = _common_ids(pred_paths, gt_paths, "scanpath")

    rows = []
    for frame_id in ids:
        pred = read_scanpath(pred_paths[frame_id])
        gt = read_scanpath(gt_paths[frame_id])
        if not pred or not gt:
            log.warning("frame %d: empty scanpath; skipped", frame_id)
            continue
        score = metrics.scanpath_accuracy(pred, gt)
        rows.append(
            {
                "frame_id": frame_id,
                "top_one": score.top_one,
                "whole": score.whole,
                "kendall_tau": score.kendall_tau,
            }
        )
    if not rows:
        raise ValueError("every frame pair had an empty scanpath")

    fields = ["top_one", "whole", "kendall_tau"]
    report = metrics.MetricReport.from_frames(rows, fields)
    out = Path(args.out)
    write_csv(out / "metrics.csv", ["frame_id"] + fields, report.frames)
    write_json(out / "aggregate.json", report.aggregate)
    plot_metric_lines(rows, fields, out / "metrics.png", "scanpath agreement per frame")
    inputs = [pred_paths[i] for i in ids] + [gt_paths[i] for i in ids]
    write_manifest(out, "eval-scanpath", None, inputs)
    print(f"eval-scanpath: {len(rows)} frame(s) -> {out / 'metrics.csv'}")
    return 0


# ---------------------------------------------------------------------------
# Losses / schedule / blocks
# ---------------------------------------------------------------------------


def _cmd_loss(args) -> int:
    config = _resolve_config(args)
    pred_maps = _indexed_files(args.pred, _MAP_RE)
    gt_maps = _indexed_files(args.gt, _MAP_RE)
    ids = _common_ids(pred_maps, gt_maps, "map")

    pred_batch = [read_map(pred_maps[i]) for i in ids]
    gt_batch = [read_map(gt_maps[i]) for i in ids]
    rows = [
        {"frame_id": i, "bce": losses.bce_loss(p, g).value}
        for i, p, g in zip(ids, pred_batch, gt_batch)
    ]
    transport = losses.batch_wasserstein(pred_batch, gt_batch)
    fused = losses.fused_saliency_loss(pred_batch, gt_batch, config.alpha)

    payload = {
        "alpha": config.alpha,
        "frames": len(ids),
        "bce_mean": float(np.mean([r["bce"] for r in rows])),
        "batch_wasserstein": transport.value,
        "fused_saliency": fused.value,
    }
    if args.l_seg is not None:
        payload["l_seg"] = args.l_seg
        payload["lambda_seg"] = args.lambda_seg
        payload["lambda_sal"] = args.lambda_sal
        payload["total"] = losses.total_loss(
            args.l_seg, fused.value, args.lambda_seg, args.lambda_sal
        )

    out = Path(args.out)
    write_csv(out / "per_frame.csv", ["frame_id", "bce"], rows)
    write_json(out / "loss.json", payload)
    plot_metric_lines(rows, ["bce"], out / "loss.png", "per-frame BCE", ylabel="loss")
    inputs = [pred_maps[i] for i in ids] + [gt_maps[i] for i in ids]
    write_manifest(out, "loss", config, inputs, seed=config.seed)
    print(f"loss: fused={fused.value:.6g} (bW={transport.value:.6g}, "
          f"bce={payload['bce_mean']:.6g}) -> {out / 'loss.json'}")
    return 0


def _cmd_schedule(args) -> int:
    if args.converge_task is not None and args.converge_iter is None:
        raise ValueError("--converge-iter is required with --converge-task")
    state = losses.ScheduleState(max_iter=args.max_iter, power=args.power)
    rows = []
    for iteration in range(args.max_iter + 1):
        signal = (
            args.converge_task
            if args.converge_task is not None and iteration == args.converge_iter
            else None
        )
        lam_seg, lam_sal = losses.two_phase_schedule(state, iteration, signal)
        rows.append(
            {
                "iter": iteration,
                "phase": state.phase,
                "lambda_seg": lam_seg,
                "lambda_sal": lam_sal,
            }
        )

    out = Path(args.out)
    write_csv(out / "schedule.csv", ["iter", "phase", "lambda_seg", "lambda_sal"], rows)
    write_json(
        out / "schedule.json",
        {
            "max_iter": args.max_iter,
            "power": args.power,
            "converged_task": state.converged_task,
            "convergence_iter": state.convergence_iter,
            "final": {"lambda_seg": rows[-1]["lambda_seg"], "lambda_sal": rows[-1]["lambda_sal"]},
        },
    )
    plot_schedule(rows, out / "schedule.png")
    write_manifest(out, "schedule", None, [], extra={"max_iter": args.max_iter, "power": args.power})
    print(f"schedule: {len(rows)} iterations -> {out / 'schedule.csv'}")
    return 0


def _cmd_blocks(args) -> int:
    out = Path(args.out)
    if args.action == "selftest":
        results = blocks.shape_selftest(args.seed)
        rows = [{"check": r.name, "passed": int(r.passed), "detail": r.detail} for r in results]
        write_csv(out / "selftest.csv", ["check", "passed", "detail"], rows)
        write_json(out / "selftest.json", {r.name: r.passed for r in results})
        for r in results:
            print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: {r.detail}")
        failed = [r.name for r in results if not r.passed]
        write_manifest(out, "blocks selftest", None, [], seed=args.seed)
        if failed:
            raise RuntimeError(f"selftest failures: {', '.join(failed)}")
        return 0

    errors = blocks.gradcheck_suite(seed=args.seed, instances=args.instances)
    rows = [
        {"block": name, "max_rel_error": err, "passed": int(err < GRADCHECK_THRESHOLD)}
        for name, err in errors.items()
    ]
    write_csv(out / "gradcheck.csv", ["block", "max_rel_error", "passed"], rows)
    write_json(out / "gradcheck.json", errors)
    plot_error_bars(errors, GRADCHECK_THRESHOLD, out / "gradcheck.png",
                    "finite-difference gradient check")
    for row in rows:
        print(f"{'PASS' if row['passed'] else 'FAIL'} {row['block']}: "
              f"max rel error {row['max_rel_error']:.3e}")
    write_manifest(out, "blocks gradcheck", None, [], seed=args.seed,
                   extra={"instances": args.instances})
    failing = [r["block"] for r in rows if not r["passed"]]
    if failing:
        raise RuntimeError(f"gradient check failures: {', '.join(failing)}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
