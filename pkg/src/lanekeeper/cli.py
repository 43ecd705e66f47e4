"""``lanekeeper`` command line: run, bench, extract, eval, simulate, decode.

Exit codes: 0 success, 1 operational failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from importlib import resources
from typing import List, Optional, Sequence

import numpy as np

from lanekeeper import __version__
from lanekeeper.capture import open_source
from lanekeeper.config import ENV_CONFIG, RunConfig, load_run_config
from lanekeeper.errors import ConfigError, LaneKeeperError
from lanekeeper.evaluate import classify_frame, extract_frames, load_detections, load_ground_truth, render_table, tally
from lanekeeper.infer import infer_timed, open_backend, preprocess
from lanekeeper.lanecore import LaneGrid, decode_grid
from lanekeeper.pipeline import STAGES, PipelineSettings, bench_speedup, run_bench, run_pipeline
from lanekeeper.sim import load_camera, load_corridor, run_closed_loop, write_trajectory_csv

log = logging.getLogger("lanekeeper")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def load_schema(name: str) -> dict:
    """JSON schema for a subcommand's ``--json`` output (``frame_record`` for records)."""
    text = resources.files("lanekeeper.schemas").joinpath(f"{name}.schema.json").read_text()
    return json.loads(text)


def _dump(doc) -> str:
    return json.dumps(doc, sort_keys=True, indent=2)


def _config(args, **overrides) -> RunConfig:
    values = {}
    for item in args.set or []:
        key, eq, value = item.partition("=")
        if not eq:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        values[key.strip()] = value.strip()
    values.update({k: v for k, v in overrides.items() if v is not None})
    return load_run_config(args.config, values)


def _write_csv(path: str, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def cmd_run(args) -> int:
    cfg = _config(args, governor_fps=args.fps, source_fps=args.source_fps, model=args.model)
    ctl = cfg.controller()
    settings = PipelineSettings(
        model=cfg.model_config(), gain=ctl.gain, v=ctl.v, track=ctl.track,
        lookahead_frac=ctl.lookahead_frac, governor_fps=cfg.governor_fps or None,
        source_fps=cfg.source_fps or None, max_frames=args.frames, max_seconds=args.seconds,
    )
    report = run_pipeline(args.source, args.backend, settings, args.sink or None)
    doc = report.to_json()
    if args.report_dir:
        from lanekeeper.plotting import plot_stage_latency

        os.makedirs(args.report_dir, exist_ok=True)
        _write_csv(os.path.join(args.report_dir, "stage_timings.csv"), STAGES,
                   ([getattr(t, s) for s in STAGES] for t in report.timings))
        plot_stage_latency(report, os.path.join(args.report_dir, "stage_latency.png"))
        with open(os.path.join(args.report_dir, "report.json"), "w") as fh:
            fh.write(_dump(doc) + "\n")
    if args.json:
        print(_dump(doc))
    else:
        fps = f"{report.achieved_fps:.2f}" if report.achieved_fps else "n/a"
        print(f"frames in {report.frames_in}, processed {report.frames_processed}, "
              f"dropped {report.frames_dropped}, achieved {fps} fps")
        for stage, stats in doc["stages"].items():
            if stats["count"]:
                print(f"  {stage:<18} mean {stats['mean']:8.2f}  p50 {stats['p50']:8.2f}  "
                      f"p95 {stats['p95']:8.2f}  max {stats['max']:8.2f} ms")
        if report.incomplete:
            print(f"incomplete: {report.error}", file=sys.stderr)
    return EXIT_FAIL if report.incomplete else EXIT_OK


def cmd_bench(args) -> int:
    cfg = _config(args, model=args.model)
    results = run_bench(args.backend, args.frames, cfg.model_config(), warmup=args.warmup)
    speedups = []
    base = results[0]
    for other in results[1:]:
        rep = bench_speedup(base.inference_ms, other.inference_ms)
        speedups.append({"a": base.spec, "b": other.spec, **rep.to_json()})
    doc = {"frames": args.frames, "backends": [r.to_json() for r in results], "speedups": speedups}
    if args.report_dir:
        from lanekeeper.plotting import plot_bench

        os.makedirs(args.report_dir, exist_ok=True)
        rows = [(r.spec, i, p, inf) for r in results
                for i, (p, inf) in enumerate(zip(r.preprocess_ms, r.inference_ms))]
        _write_csv(os.path.join(args.report_dir, "bench.csv"),
                   ("backend", "call", "preprocess_ms", "inference_ms"), rows)
        plot_bench(results, os.path.join(args.report_dir, "bench_latency.png"),
                   speedups[0]["speedup"] if speedups else None)
    if args.json:
        print(_dump(doc))
    else:
        for r in results:
            inf = r.to_json()["inference"]
            print(f"{r.spec}: inference mean {inf['mean']:.2f} ms, p50 {inf['p50']:.2f}, "
                  f"p95 {inf['p95']:.2f} over {inf['count']} calls")
        for s in speedups:
            print(f"speedup {s['a']} -> {s['b']}: {s['speedup']:.2f}x")
    return EXIT_OK


def cmd_extract(args) -> int:
    count = extract_frames(args.input, args.out, args.stride)
    if args.json:
        print(_dump({"frames_written": count, "out_dir": args.out, "stride": args.stride}))
    else:
        print(f"{count} frames written")
    return EXIT_OK


def _detections_from_source(args, cfg):
    model = cfg.model_config()
    source = open_source(args.source, model)
    backend = open_backend(args.backend, model)
    out, dims = {}, None
    try:
        for frame in source:
            grid = infer_timed(backend, preprocess(frame, model)).grid
            out[frame.frame_id] = decode_grid(grid, frame.width, frame.height)
            dims = (frame.width, frame.height)
    finally:
        source.close()
        backend.close()
    return out, dims


def cmd_eval(args) -> int:
    cfg = _config(args, deviation_threshold=args.threshold, model=args.model)
    truth = load_ground_truth(args.truth)
    if args.detections:
        detections, dims = load_detections(args.detections), None
    elif args.source:
        detections, dims = _detections_from_source(args, cfg)
    else:
        raise ConfigError("eval needs --detections or --source")
    width = args.width or (dims[0] if dims else 800)
    height = args.height or (dims[1] if dims else 288)
    verdicts = [
        classify_frame(detections.get(t.frame_id, []), t, cfg.deviation_threshold, width, height)
        for t in truth
    ]
    report = tally(verdicts, args.label, cfg.deviation_threshold)
    doc = {"report": report.to_json(), "verdicts": [v.to_json() for v in verdicts]}
    if args.report_dir:
        from lanekeeper.plotting import plot_tally

        os.makedirs(args.report_dir, exist_ok=True)
        _write_csv(os.path.join(args.report_dir, "verdicts.csv"), ("frame_id", "verdict", "reason"),
                   ((v.frame_id, v.verdict, v.reason) for v in verdicts))
        plot_tally([report], os.path.join(args.report_dir, "detection_rate.png"))
    print(_dump(doc) if args.json else render_table(verdicts, report))
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _config(args, offset=args.offset, gain=args.gain, duration=args.duration, dt=args.dt,
                  speed=args.speed, heading_error_deg=args.heading, model=args.model)
    corridor = load_corridor(args.corridor) if args.corridor else cfg.corridor()
    camera = load_camera(args.camera) if args.camera else cfg.camera()
    initial = corridor.pose_at(0.0, cfg.offset, math.radians(cfg.heading_error_deg))
    result = run_closed_loop(corridor, initial, cfg.controller(), cfg.duration, cfg.dt,
                             camera=camera, config=cfg.model_config())
    summary = result.summary()
    doc = {
        "summary": summary,
        "params": {"offset": cfg.offset, "heading_error_deg": cfg.heading_error_deg, "gain": cfg.gain,
                   "speed": cfg.speed, "track": cfg.track, "lookahead_frac": cfg.lookahead_frac,
                   "duration": cfg.duration, "dt": cfg.dt, "model": cfg.model},
        "corridor": {"half_width": corridor.half_width, "length": corridor.length,
                     "curvature": corridor.curvature},
        "camera": {"height": camera.height, "pitch_deg": camera.pitch_deg, "hfov_deg": camera.hfov_deg},
    }
    if args.report_dir:
        from lanekeeper.plotting import plot_trajectory

        os.makedirs(args.report_dir, exist_ok=True)
        write_trajectory_csv(os.path.join(args.report_dir, "trajectory.csv"), result)
        plot_trajectory(result, os.path.join(args.report_dir, "trajectory.png"), corridor.half_width,
                        title=f"offset {cfg.offset:+.2f} m, gain {cfg.gain:g}")
    if args.json:
        print(_dump(doc))
    else:
        print(f"settled={'true' if summary['settled'] else 'false'} "
              f"max_offset={summary['max_abs_offset_m']:.4f} m final_offset={summary['final_offset_m']:+.4f} m")
        if result.failed:
            print(f"run failed: {result.failure}")
    return EXIT_OK


def cmd_decode(args) -> int:
    cfg = _config(args, model=args.model)
    model = cfg.model_config()
    try:
        logits = np.load(args.grid, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise LaneKeeperError(f"cannot read grid {args.grid}: {exc}") from exc
    if logits.ndim == 4 and logits.shape[0] == 1:
        logits = logits[0]
    width = args.width or model.input_width
    height = args.height or model.input_height
    lanes = decode_grid(LaneGrid(logits, model), width, height)
    doc = {"model": model.name, "frame_width": width, "frame_height": height,
           "lanes": [lane.to_json() for lane in lanes]}
    if args.json:
        print(_dump(doc))
    else:
        print(f"{len(lanes)} lane(s)")
        for lane in lanes:
            print(f"  slot {lane.lane_index}: {len(lane.points)} points, direction {lane.direction_deg:+.2f} deg")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help=f"flat key=value config file (default: ${ENV_CONFIG})")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help=f"override a config key; keys: {', '.join(RunConfig.keys())}")
    common.add_argument("--model", help="tusimple, culane or a model config file")
    common.add_argument("--json", action="store_true", help="machine-readable JSON output")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="lanekeeper", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    p = sub.add_parser("run", parents=[common], help="capture -> infer -> decode -> control pipeline")
    p.add_argument("--source", required=True, help="image directory, .y4m file or synthetic[:scene][,frames=N]")
    p.add_argument("--backend", default="synthetic", help="onnx:<path> | synthetic[:<scene>][,delay=<ms>]")
    p.add_argument("--fps", type=float, help="consumer governor rate; 0 disables (config: governor_fps)")
    p.add_argument("--source-fps", type=float, help="producer rate; 0 = as fast as possible")
    p.add_argument("--frames", type=int, help="stop after this many processed frames")
    p.add_argument("--seconds", type=float, help="stop after this many seconds")
    p.add_argument("--sink", action="append", help="jsonl:<path> | overlay:<dir> | stdout | none (repeatable)")
    p.add_argument("--report-dir", help="write stage_timings.csv, stage_latency.png, report.json")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("bench", parents=[common], help="time backends and report speedup")
    p.add_argument("--backend", action="append", required=True, help="backend spec (repeat; first is baseline)")
    p.add_argument("--frames", type=int, default=10, help="timed calls per backend")
    p.add_argument("--warmup", type=int, default=0, help="untimed calls per backend")
    p.add_argument("--report-dir", help="write bench.csv and bench_latency.png")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("extract", parents=[common], help="Y4M video to numbered PPM frames")
    p.add_argument("--in", dest="input", required=True, help="input .y4m stream")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--stride", type=int, default=1, help="keep every N-th frame")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("eval", parents=[common], help="classify frames against ground truth and tally")
    p.add_argument("--truth", required=True, help="ground-truth JSONL")
    p.add_argument("--detections", help="per-frame records JSONL from `run --sink jsonl:...`")
    p.add_argument("--source", help="frames to run through --backend instead of --detections")
    p.add_argument("--backend", default="synthetic", help="backend used with --source")
    p.add_argument("--threshold", type=float, help="direction deviation threshold in degrees")
    p.add_argument("--label", default="run", help="run label for the report column")
    p.add_argument("--width", type=int, help="frame width of the detections")
    p.add_argument("--height", type=int, help="frame height of the detections")
    p.add_argument("--report-dir", help="write verdicts.csv and detection_rate.png")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("simulate", parents=[common], help="closed-loop lane keeping in a corridor")
    p.add_argument("--offset", type=float, help="initial offset right of center [m]")
    p.add_argument("--heading", type=float, help="initial heading error [deg], positive = left")
    p.add_argument("--gain", type=float, help="proportional gain [1/s]")
    p.add_argument("--speed", type=float, help="forward speed [m/s]")
    p.add_argument("--duration", type=float, help="simulated seconds")
    p.add_argument("--dt", type=float, help="time step [s]")
    p.add_argument("--corridor", help="corridor file (half_width, length, curvature)")
    p.add_argument("--camera", help="camera file (height, pitch_deg, hfov_deg)")
    p.add_argument("--report-dir", help="write trajectory.csv and trajectory.png")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("decode", parents=[common], help="decode one grid (.npy) to polylines")
    p.add_argument("--grid", required=True, help=".npy logits of shape (C+1, A, L)")
    p.add_argument("--width", type=int, help="frame width (default: model input width)")
    p.add_argument("--height", type=int, help="frame height (default: model input height)")
    p.set_defaults(func=cmd_decode)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"lanekeeper {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (LaneKeeperError, OSError, ValueError) as exc:
        print(f"lanekeeper {args.command}: {exc}", file=sys.stderr)
        return EXIT_FAIL


def dispatch(argv: Sequence[str]) -> int:
    """Run the CLI without letting argparse exit the process."""
    try:
        return main(list(argv))
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
