"""Command-line interface.

Subcommands: luts build, warp, exemplars build, map, nms, eval, run,
synth render, bench.  All read the config file named by --config or the
FPW_CONFIG environment variable, with flag overrides on top.  Exit codes:
0 success, 2 configuration error, 3 data error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

import numpy as np

from . import boxmap, evaluation, exemplars, nms, synth
from .compositor import layout_patch_specs, read_png, write_png, write_spec_sidecar
from .config import ConfigError, PipelineConfig, load_config, save_config
from .geometry import save_lut
from .pipeline import DataError, Pipeline, run_external_detector, \
    write_detections_atomic


def _add_nms_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--nms", choices=nms.STAGE2_METHODS, default=None,
                   help="stage-2 NMS method override")
    p.add_argument("--ag", type=float, default=None,
                   help="Gaussian soft-NMS strength override")
    p.add_argument("--stage1-iou", type=float, default=None,
                   help="stage-1 NMS IOU threshold override")


def _apply_overrides(cfg: PipelineConfig, args) -> PipelineConfig:
    nms_cfg = cfg.nms
    if getattr(args, "nms", None) is not None:
        nms_cfg = replace(nms_cfg, stage2_method=args.nms)
    if getattr(args, "ag", None) is not None:
        nms_cfg = replace(nms_cfg, a_g=args.ag)
    if getattr(args, "stage1_iou", None) is not None:
        nms_cfg = replace(nms_cfg, stage1_iou=args.stage1_iou)
    return replace(cfg, nms=nms_cfg)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fpw",
        description="Pedestrian detection in top-view fisheye images via "
                    "composites of perspective view patches")
    parser.add_argument("--config", default=None,
                        help="config JSON path (default: $FPW_CONFIG)")
    sub = parser.add_subparsers(dest="command", required=True)

    p_luts = sub.add_parser("luts", help="warp lookup table management")
    luts_sub = p_luts.add_subparsers(dest="subcommand", required=True)
    p = luts_sub.add_parser("build", help="precompute warp LUTs")
    p.add_argument("--out", default=None, help="output directory")

    p = sub.add_parser("warp", help="build a composite image")
    p.add_argument("--image", required=True, help="fisheye image (PNG)")
    p.add_argument("--out", required=True, help="composite PNG path")
    p.add_argument("--composite", type=int, choices=(0, 1), default=0)
    p.add_argument("--sidecar", default=None,
                   help="patch-spec JSON sidecar path")

    p_ex = sub.add_parser("exemplars", help="mapping exemplar management")
    ex_sub = p_ex.add_subparsers(dest="subcommand", required=True)
    p = ex_sub.add_parser("build", help="build exemplar caches")
    p.add_argument("--out", default=None,
                   help="cache base path (default: config exemplar_cache)")

    p = sub.add_parser("map", help="map composite detections to fisheye boxes")
    p.add_argument("--dets", required=True, help="composite detections JSONL")
    p.add_argument("--out", required=True, help="fisheye detections JSONL")
    _add_nms_flags(p)

    p = sub.add_parser("nms", help="stage-2 NMS on fisheye detections")
    p.add_argument("--dets", required=True, help="fisheye detections JSONL")
    p.add_argument("--out", required=True)
    _add_nms_flags(p)

    p = sub.add_parser("eval", help="evaluate detections against ground truth")
    p.add_argument("--dets", action="append", required=True,
                   help="fisheye detections JSONL (repeat to average runs)")
    p.add_argument("--gt", required=True, help="ground truth JSONL")
    p.add_argument("--report", default=None, help="write JSON report here")
    p.add_argument("--curves", default=None, help="write SVG curves here")
    p.add_argument("--match-iou", type=float, default=None)

    p = sub.add_parser("run", help="full pipeline on one frame")
    p.add_argument("--image", default=None, help="fisheye image (PNG)")
    p.add_argument("--dets", default=None, help="composite detections JSONL")
    p.add_argument("--scene", default=None, help="synthetic scene JSON")
    p.add_argument("--perfect-detector", action="store_true",
                   help="use the synthetic perfect detector (needs --scene)")
    p.add_argument("--detector-cmd", default=None,
                   help="external detector command; gets the composite PNG "
                        "path appended")
    p.add_argument("--out", required=True, help="final detections JSONL")
    p.add_argument("--tta", action="store_true",
                   help="fuse both composite orientations before NMS")
    p.add_argument("--gt-out", default=None,
                   help="write synthetic ground truth here")
    p.add_argument("--report", default=None,
                   help="evaluate against synthetic ground truth, write JSON")
    p.add_argument("--no-build-exemplars", action="store_true",
                   help="fail instead of building a missing exemplar cache")
    _add_nms_flags(p)

    p_synth = sub.add_parser("synth", help="synthetic scene tools")
    synth_sub = p_synth.add_subparsers(dest="subcommand", required=True)
    p = synth_sub.add_parser("render", help="render a scene description")
    p.add_argument("scene", help="scene JSON path")
    p.add_argument("--image", required=True, help="output PNG")
    p.add_argument("--gt", default=None, help="output ground-truth JSONL")

    p = sub.add_parser("bench", help="timing benchmark on synthetic frames")
    p.add_argument("--frames", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", default=None, help="write JSON report here")

    p = sub.add_parser("config", help="print the resolved configuration")
    p.add_argument("--out", default=None, help="write it to a file")
    return parser


def _cmd_luts_build(cfg: PipelineConfig, args) -> int:
    import os

    out_dir = args.out or cfg.lut_dir
    if out_dir is None:
        raise ConfigError("no LUT output directory (--out or config lut_dir)")
    os.makedirs(out_dir, exist_ok=True)
    pipe = Pipeline(cfg)
    n = 0
    for ci, layout in enumerate(pipe.layouts):
        for k, spec in enumerate(layout_patch_specs(layout)):
            lut = pipe.lut_cache.get(spec, cfg.camera)
            save_lut(lut, os.path.join(out_dir, f"c{ci}_p{k}.fplut"))
            n += 1
    print(f"wrote {n} LUTs to {out_dir}")
    return 0


def _cmd_warp(cfg: PipelineConfig, args) -> int:
    image = read_png(args.image)
    pipe = Pipeline(cfg)
    composite = pipe.build_composite(image, args.composite)
    write_png(args.out, composite.image)
    if args.sidecar:
        write_spec_sidecar(args.sidecar, composite)
    print(f"wrote composite {composite.image.shape[1]}x"
          f"{composite.image.shape[0]} to {args.out}")
    return 0


def _cmd_exemplars_build(cfg: PipelineConfig, args) -> int:
    if args.out is not None:
        cfg = replace(cfg, exemplar_cache=args.out)
    if cfg.exemplar_cache is None:
        raise ConfigError("no exemplar cache path (--out or config "
                          "exemplar_cache)")
    pipe = Pipeline(cfg)
    for ci in (0, 1):
        sets = pipe.ensure_exemplars(ci)
        sizes = [len(s) for s in sets]
        print(f"composite {ci}: exemplars per patch "
              f"min={min(sizes)} max={max(sizes)}")
    return 0


def _cmd_map(cfg: PipelineConfig, args) -> int:
    pipe = Pipeline(cfg)
    records = boxmap.read_composite_detections(args.dets,
                                               score_min=cfg.score_min)
    by_image: dict = {}
    for r in records:
        by_image.setdefault(r["image_id"], []).append(r)
    out: dict = {}
    for image_id, recs in by_image.items():
        mapped = []
        for composite in (0, 1):
            sub = [r for r in recs if r["composite_id"] == composite]
            if sub:
                mapped.extend(pipe._map_composite(pipe.ingest(sub, composite),
                                                  composite))
        out[image_id] = mapped
    write_detections_atomic(args.out, out, cfg.camera)
    n = sum(len(v) for v in out.values())
    print(f"mapped {n} detections ({pipe.unmapped_count} unmappable dropped)")
    return 0


def _cmd_nms(cfg: PipelineConfig, args) -> int:
    dets_by_image = boxmap.read_fisheye_detections(args.dets)
    out = {
        image_id: nms.stage2_nms(dets, cfg.camera, cfg.nms,
                                 image_width=cfg.image_width)
        for image_id, dets in dets_by_image.items()
    }
    write_detections_atomic(args.out, out, cfg.camera)
    print(f"kept {sum(len(v) for v in out.values())} detections "
          f"({cfg.nms.stage2_method})")
    return 0


def _cmd_eval(cfg: PipelineConfig, args) -> int:
    gt = evaluation.read_ground_truth(args.gt)
    match_iou = args.match_iou if args.match_iou is not None else cfg.match_iou
    results = []
    for path in args.dets:
        dets = boxmap.read_fisheye_detections(path)
        res = evaluation.evaluate(dets, gt, cfg.camera, iou_thresh=match_iou,
                                  report_threshold=cfg.report_threshold,
                                  interpolation=cfg.ap_interpolation,
                                  lamr_geometric=cfg.lamr_geometric)
        results.append(res)
        print(f"{path}: AP={res.ap:.4f} LAMR={res.lamr:.4f} "
              f"(tp={res.tp} fp={res.fp} fn={res.fn} @ "
              f"score>={res.report_threshold})")
    if len(results) > 1:
        mean = evaluation.mean_eval(results)
        print(f"mean over {len(results)} runs: AP={mean['ap']:.4f} "
              f"LAMR={mean['lamr']:.4f}")
    if args.report:
        payload = evaluation.result_to_dict(results[0])
        if len(results) > 1:
            payload = {"mean": evaluation.mean_eval(results),
                       "runs": [evaluation.result_to_dict(r) for r in results]}
        with open(args.report, "w") as f:
            json.dump(payload, f, indent=2)
    if args.curves:
        evaluation.plot_curves(args.curves, results[0])
    return 0


def _cmd_run(cfg: PipelineConfig, args) -> int:
    pipe = Pipeline(cfg)
    image = None
    gt = None
    if args.scene:
        scene = synth.load_scene(args.scene)
        image, gt = synth.render_fisheye(scene, cfg.camera)
    elif args.image:
        image = read_png(args.image)

    if args.perfect_detector:
        if args.scene is None:
            raise ConfigError("--perfect-detector requires --scene")
        records = []
        for composite in ((0, 1) if args.tta else (0,)):
            dets = synth.perfect_detections(scene, cfg.camera,
                                            pipe.layouts[composite])
            records.extend(synth.detections_to_composite_records(
                dets, pipe.layouts[composite], composite_id=composite))
    elif args.detector_cmd:
        if image is None:
            raise ConfigError("--detector-cmd requires --image or --scene")
        import shlex
        import tempfile

        records = []
        for composite in ((0, 1) if args.tta else (0,)):
            comp = pipe.build_composite(image, composite)
            with tempfile.NamedTemporaryFile(suffix=".png", delete=False) as t:
                write_png(t.name, comp.image)
                recs = run_external_detector(shlex.split(args.detector_cmd),
                                             t.name)
            for r in recs:
                r["composite_id"] = composite
            records.extend(records_filter(recs, cfg.score_min))
    elif args.dets:
        records = boxmap.read_composite_detections(args.dets,
                                                   score_min=cfg.score_min)
    else:
        raise ConfigError("run needs --dets, --perfect-detector, or "
                          "--detector-cmd")

    if args.no_build_exemplars:
        for composite in ((0, 1) if args.tta else (0,)):
            pipe.ensure_exemplars(composite, allow_build=False)
    if args.tta:
        final, timing = pipe.run_frame_tta(image, records)
    else:
        records = [r for r in records if r.get("composite_id", 0) == 0]
        final, timing = pipe.run_frame(image, records)
    write_detections_atomic(args.out, {"0": final}, cfg.camera)
    print(f"wrote {len(final)} detections to {args.out}")
    print("timing: " + json.dumps(timing.as_dict()))
    if args.gt_out and gt is not None:
        evaluation.write_ground_truth(args.gt_out, {"0": gt}, cfg.camera)
    if args.report:
        if gt is None:
            raise ConfigError("--report needs synthetic ground truth "
                              "(run with --scene)")
        res = evaluation.evaluate({"0": final}, {"0": gt}, cfg.camera,
                                  iou_thresh=cfg.match_iou,
                                  report_threshold=cfg.report_threshold)
        evaluation.write_report(args.report, res)
        print(f"AP={res.ap:.4f} LAMR={res.lamr:.4f}")
    return 0


def records_filter(records: list[dict], score_min: float) -> list[dict]:
    """Apply the ingest filter to in-memory detector records."""
    out = []
    for d in records:
        if d.get("class", "person") != "person":
            continue
        if float(d["score"]) < score_min:
            continue
        out.append({
            "composite_id": int(d.get("composite_id", 0)),
            "image_id": str(d.get("image_id", "0")),
            "x": float(d["x"]), "y": float(d["y"]),
            "w": float(d["w"]), "h": float(d["h"]),
            "score": float(d["score"]),
        })
    return out


def _cmd_synth_render(cfg: PipelineConfig, args) -> int:
    scene = synth.load_scene(args.scene)
    image, gt = synth.render_fisheye(scene, cfg.camera)
    write_png(args.image, image)
    if args.gt:
        evaluation.write_ground_truth(args.gt, {"0": gt}, cfg.camera)
    print(f"rendered {image.shape[1]}x{image.shape[0]} scene with "
          f"{len(scene.persons)} persons")
    return 0


def _cmd_bench(cfg: PipelineConfig, args) -> int:
    pipe = Pipeline(cfg)
    pipe.ensure_exemplars(0)
    rows = []
    for i in range(args.frames):
        scene = synth.random_scene(args.seed + i)
        _, _, timing = pipe.run_synthetic(scene)
        rows.append(timing.as_dict())
    report = {"frames": args.frames, "seed": args.seed, "stages": {}}
    for stage in ("warp_ms", "mapping_ms", "nms_ms"):
        vals = np.array([r[stage] for r in rows])
        report["stages"][stage] = {
            "mean": float(vals.mean()),
            "p50": float(np.percentile(vals, 50)),
            "p95": float(np.percentile(vals, 95)),
        }
        s = report["stages"][stage]
        print(f"{stage:12s} mean={s['mean']:7.2f}  p50={s['p50']:7.2f}  "
              f"p95={s['p95']:7.2f}")
    if args.report:
        with open(args.report, "w") as f:
            json.dump(report, f, indent=2)
    return 0


def _cmd_config(cfg: PipelineConfig, args) -> int:
    from .config import config_to_dict

    text = json.dumps(config_to_dict(cfg), indent=2)
    print(text)
    if args.out:
        save_config(args.out, cfg)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        cfg = _apply_overrides(cfg, args)
        if args.command == "luts":
            return _cmd_luts_build(cfg, args)
        if args.command == "warp":
            return _cmd_warp(cfg, args)
        if args.command == "exemplars":
            return _cmd_exemplars_build(cfg, args)
        if args.command == "map":
            return _cmd_map(cfg, args)
        if args.command == "nms":
            return _cmd_nms(cfg, args)
        if args.command == "eval":
            return _cmd_eval(cfg, args)
        if args.command == "run":
            return _cmd_run(cfg, args)
        if args.command == "synth":
            return _cmd_synth_render(cfg, args)
        if args.command == "bench":
            return _cmd_bench(cfg, args)
        if args.command == "config":
            return _cmd_config(cfg, args)
        raise ConfigError(f"unknown command {args.command}")
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (DataError, FileNotFoundError, ValueError, OSError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
