"""``suturegrasp`` command line.

Every stage can be run on its own from files written by the previous one;
``pipeline`` chains them from a config file and ``benchmark`` runs the
synthetic error-measurement suite. Errors exit with the code of their class
(see ``errors.py``).
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import kernels
from .errors import ConfigError, SutureGraspError
from .grasp import RigidTransform, plan_grasp
from .masks import (TipSeed, extract_centerline, load_mask, locate_tip, preprocess_mask,
                    save_mask)
from .pipeline import (DEFAULT_TIP_RADIUS, PipelineConfig, StageError,
                       apply_overrides, default_suite, load_config, run_benchmark,
                       run_pipeline)
from .sequence import PixelCurve, trace_sequence, tune_parameters
from .shape import build_distance_matrix, optimize_shape, save_matrix, vertex_penalties, weight_matrix
from .stereo import Polyline3, StereoRig, reconstruct_curve
from .synthetic import KINDS, SceneSpec, compare_masks, generate_scene, write_bundle


def _config(args) -> PipelineConfig:
    if getattr(args, "config", None):
        return load_config(args.config, args.set)
    return PipelineConfig.from_dict(apply_overrides({}, args.set))


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2))


def _parent(path) -> None:
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)


# --------------------------------------------------------------------------
# subcommands


def cmd_generate(args) -> int:
    spec = SceneSpec(rng_seed=args.seed, curve_kind=args.kind, length_mm=args.length,
                     thickness_px=args.thickness, noise=args.noise,
                     n_distractors=args.distractors)
    mask_l, mask_r, gt = generate_scene(spec)
    write_bundle(args.out, spec, mask_l, mask_r, gt)
    # Tip seeds come from the ground-truth start so the bundle runs as is.
    cfg = PipelineConfig(
        left_mask="mask_left.pgm", right_mask="mask_right.pgm",
        calibration="calibration.json", output_dir="out",
        tips={f: TipSeed(tuple(float(x) for x in tr.points[0]), DEFAULT_TIP_RADIUS)
              for f, tr in (("left", gt.trace_l), ("right", gt.trace_r))})
    cfg.save(os.path.join(args.out, "config.json"))
    _emit({"bundle": args.out, "curve_length_mm": gt.curve3d.length,
           "distractors": len(gt.distractors3d)})
    return 0


def cmd_trace(args) -> int:
    cfg = _config(args)
    mask = load_mask(args.mask)
    if args.tip is not None:
        seed = TipSeed(tuple(args.tip), args.tip_radius)
    elif args.frame in cfg.tips:
        seed = cfg.tips[args.frame]
    else:
        raise ConfigError(f"no tip given: pass --tip U V or set tips.{args.frame} in the config")
    zone = preprocess_mask(mask, cfg.min_component, cfg.closing)
    skeleton = extract_centerline(zone)
    tip = locate_tip(skeleton, seed)
    if cfg.tune:
        params, curve = tune_parameters(skeleton, zone, tip, cfg.search, cfg.tuning_grid,
                                        frame=args.frame, workers=cfg.workers)
    else:
        params, curve = cfg.search, trace_sequence(skeleton, zone, tip, cfg.search, args.frame)
    _parent(args.out)
    curve.save(args.out)
    if args.skeleton:
        save_mask(skeleton.as_mask(), args.skeleton)
    _emit({"frame": args.frame, "tip": list(tip), "length": len(curve),
           "skeleton_pixels": len(skeleton.pixels), "eps": list(params.eps)})
    return 0


def cmd_reconstruct(args) -> int:
    cfg = _config(args)
    left = PixelCurve.load(args.left)
    right = PixelCurve.load(args.right)
    rig = StereoRig.load(args.calibration or cfg.calibration or "")
    dense = reconstruct_curve(left, right, rig, cfg.max_row_discrepancy,
                              refine=cfg.refine_stereo, smooth=cfg.smooth,
                              median=cfg.median, average=cfg.average)
    _parent(args.out)
    dense.to_csv(args.out)
    _emit({"vertices": len(dense), "length_mm": dense.length})
    return 0


def cmd_optimize(args) -> int:
    cfg = _config(args)
    dense = Polyline3.from_csv(args.dense)
    res = optimize_shape(dense, cfg.graph)
    _parent(args.out)
    res.polyline.to_csv(args.out)
    if args.dump_matrices:
        os.makedirs(args.dump_matrices, exist_ok=True)
        D = build_distance_matrix(dense, res.tau_L)
        W = weight_matrix(vertex_penalties(dense, cfg.graph))
        with np.errstate(invalid="ignore"):
            G = D * W
        for name, M in (("D", D), ("W", W), ("G", G)):
            save_matrix(os.path.join(args.dump_matrices, f"{name}.csv"), M)
    _emit({"omega1": len(dense), "omega2": len(res.indices), "L_min": res.cost,
           "tau_L_final": res.tau_L, "tau_L_retries": res.retries,
           "length_mm": res.length})
    return 0


def cmd_grasp(args) -> int:
    cfg = _config(args)
    curve = Polyline3.from_csv(args.curve, check_depth=False)
    path = args.transform or cfg.transform
    T = RigidTransform.load(path) if path else RigidTransform.identity()
    reserve = args.reserve if args.reserve is not None else cfg.reserve_length
    plan = plan_grasp(curve, reserve, T)
    if args.out:
        _parent(args.out)
        plan.save(args.out)
    _emit(plan.to_dict())
    return 0


def cmd_metrics(args) -> int:
    iou, pre, rec, f1 = compare_masks(load_mask(args.pred), load_mask(args.truth))
    _emit({"iou": iou, "precision": pre, "recall": rec, "f1": f1})
    return 0


def cmd_pipeline(args) -> int:
    cfg = load_config(args.config, args.set)
    if args.out_dir:
        cfg.output_dir = args.out_dir
    try:
        res = run_pipeline(cfg)
    except StageError as exc:
        print(f"error: stage '{exc.stage}' failed: {type(exc.cause).__name__}: {exc.cause}",
              file=sys.stderr)
        print(f"partial artifacts and report in {cfg.output_dir}", file=sys.stderr)
        return exc.exit_code
    rep = res.report()
    _emit({"status": rep["status"], "output_dir": cfg.output_dir,
           "grasp": rep["grasp"], "total_ms": rep["total_ms"]})
    return 0


def cmd_benchmark(args) -> int:
    cfg = _config(args)
    kinds = args.groups.split(",") if args.groups else None
    suite = default_suite(args.per_group, noise=args.noise, thickness=args.thickness,
                          seed=args.seed)
    if kinds:
        unknown = set(kinds) - {s.group for s in suite}
        if unknown:
            raise ConfigError(f"unknown benchmark groups: {sorted(unknown)}")
        suite = [s for s in suite if s.group in kinds]
    rep = run_benchmark(suite, cfg, workers=args.workers)
    os.makedirs(args.out, exist_ok=True)
    rep.save_json(os.path.join(args.out, "benchmark.json"))
    rep.save_csv(os.path.join(args.out, "benchmark.csv"))
    print(rep.table())
    for s in rep.scenes:
        if not s.ok:
            print(f"scene {s.index} ({s.group}, seed {s.seed}) failed in {s.failed_stage}: "
                  f"{s.error}", file=sys.stderr)
    print(f"{len(rep.scenes)} scenes in {rep.total_ms / 1e3:.1f} s "
          f"[{kernels.BACKEND} kernels]")
    return 0


# --------------------------------------------------------------------------
# parser


def _add_config(p, required=False) -> None:
    if required:
        p.add_argument("config", help="pipeline config (JSON)")
    else:
        p.add_argument("--config", help="pipeline config (JSON) supplying parameters")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one config key; repeatable")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="suturegrasp",
        description="Suture tracing, stereo reconstruction and grasp planning from masks.")
    ap.add_argument("--version", action="version", version="%(prog)s 0.1.0")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="render a synthetic stereo scene bundle")
    p.add_argument("--kind", choices=KINDS, default="curved")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--length", type=float, default=80.0, help="suture length in mm")
    p.add_argument("--thickness", type=float, default=3.0, help="stroke width in px")
    p.add_argument("--noise", type=float, default=0.0, help="pixel flip probability")
    p.add_argument("--distractors", type=int, default=0)
    p.add_argument("--out", required=True, help="bundle directory")
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("trace", help="centerline, tip and ordering sequence for one mask")
    p.add_argument("mask")
    p.add_argument("--frame", choices=("left", "right"), default="left")
    p.add_argument("--tip", type=float, nargs=2, metavar=("U", "V"))
    p.add_argument("--tip-radius", type=float, default=DEFAULT_TIP_RADIUS)
    p.add_argument("--out", required=True, help="trace JSON")
    p.add_argument("--skeleton", help="also write the skeleton mask here")
    _add_config(p)
    p.set_defaults(fn=cmd_trace)

    p = sub.add_parser("reconstruct", help="triangulate a left/right trace pair")
    p.add_argument("left")
    p.add_argument("right")
    p.add_argument("--calibration")
    p.add_argument("--out", required=True, help="dense polyline CSV")
    _add_config(p)
    p.set_defaults(fn=cmd_reconstruct)

    p = sub.add_parser("optimize", help="reduce a dense polyline to its shortest weighted path")
    p.add_argument("dense")
    p.add_argument("--out", required=True, help="optimized polyline CSV")
    p.add_argument("--dump-matrices", metavar="DIR", help="write D.csv, W.csv and G.csv")
    _add_config(p)
    p.set_defaults(fn=cmd_optimize)

    p = sub.add_parser("grasp", help="grasp point at a reserved arc length")
    p.add_argument("curve")
    p.add_argument("--reserve", type=float, help="reserved length in mm")
    p.add_argument("--transform", help="camera-to-robot transform JSON")
    p.add_argument("--out", help="grasp plan JSON")
    _add_config(p)
    p.set_defaults(fn=cmd_grasp)

    p = sub.add_parser("metrics", help="IoU, precision, recall and F1 of two masks")
    p.add_argument("pred")
    p.add_argument("truth")
    p.set_defaults(fn=cmd_metrics)

    p = sub.add_parser("pipeline", help="run every stage from a config file")
    _add_config(p, required=True)
    p.add_argument("--out-dir", help="override paths.output_dir")
    p.set_defaults(fn=cmd_pipeline)

    p = sub.add_parser("benchmark", help="key-point and grasp errors over synthetic groups")
    p.add_argument("--per-group", type=int, default=8)
    p.add_argument("--noise", type=float, default=0.005)
    p.add_argument("--thickness", type=float, default=3.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--groups", help="comma-separated subset of group names")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default="benchmark", help="directory for benchmark.json/.csv")
    _add_config(p)
    p.set_defaults(fn=cmd_benchmark)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except SutureGraspError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return ConfigError.exit_code


if __name__ == "__main__":
    sys.exit(main())
