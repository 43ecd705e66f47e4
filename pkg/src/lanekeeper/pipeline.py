"""Two-context pipeline: acquisition thread -> mailbox -> paced consumer.

The producer thread only reads frames and drops them into a
:class:`~lanekeeper.capture.LatestMailbox`. The consumer (calling thread)
paces itself with a :class:`~lanekeeper.capture.Governor`, takes the
freshest frame and runs preprocess, inference, decode and control on it,
timing each stage.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
import sys
import threading
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from lanekeeper import ppm
from lanekeeper.capture import FrameBuffer, FrameSource, Governor, LatestMailbox, SyntheticSource, open_source
from lanekeeper.control import DEFAULT_LOOKAHEAD, lateral_error, steer
from lanekeeper.errors import ConfigError, InvalidInputError, LaneKeeperError
from lanekeeper.infer import Backend, FrameTensor, infer_timed, open_backend, preprocess
from lanekeeper.lanecore import ModelConfig, decode_grid, load_model_config

log = logging.getLogger(__name__)

STAGES = ("capture_staleness", "preprocess", "inference", "decode", "control", "end_to_end")
_POLL_S = 0.0005
_LANE_COLORS = ((255, 64, 64), (64, 255, 64), (64, 160, 255), (255, 220, 0))


@dataclass(frozen=True)
class StageTimings:
    capture_staleness: float
    preprocess: float
    inference: float
    decode: float
    control: float
    end_to_end: float


@dataclass(frozen=True)
class PipelineSettings:
    model: ModelConfig
    gain: float = 1.0
    v: float = 0.5
    track: float = 0.5
    lookahead_frac: float = DEFAULT_LOOKAHEAD
    governor_fps: Optional[float] = None
    source_fps: Optional[float] = 30.0
    max_frames: Optional[int] = None
    max_seconds: Optional[float] = None


def summarize(values: Sequence[float]) -> Dict[str, float]:
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        return {"count": 0, "mean": None, "p50": None, "p95": None, "max": None}
    return {
        "count": int(arr.size),
        "mean": float(arr.mean()),
        "p50": float(np.percentile(arr, 50)),
        "p95": float(np.percentile(arr, 95)),
        "max": float(arr.max()),
    }


@dataclass
class PipelineReport:
    frames_in: int = 0
    frames_processed: int = 0
    frames_dropped: int = 0
    frames_in_flight: int = 0
    target_fps: Optional[float] = None
    achieved_fps: Optional[float] = None
    elapsed_s: float = 0.0
    incomplete: bool = False
    error: str = ""
    backend: str = ""
    source: str = ""
    timings: List[StageTimings] = field(default_factory=list)

    def series(self, stage: str) -> List[float]:
        return [getattr(t, stage) for t in self.timings]

    def to_json(self) -> dict:
        return {
            "frames_in": self.frames_in,
            "frames_processed": self.frames_processed,
            "frames_dropped": self.frames_dropped,
            "frames_in_flight": self.frames_in_flight,
            "target_fps": self.target_fps,
            "achieved_fps": self.achieved_fps,
            "elapsed_s": self.elapsed_s,
            "incomplete": self.incomplete,
            "error": self.error,
            "backend": self.backend,
            "source": self.source,
            "stages": {stage: summarize(self.series(stage)) for stage in STAGES},
        }


class RecordSink:
    """Destination for per-frame records and (optionally) overlay images.

    Specs: ``jsonl:<path>``, ``overlay:<dir>``, ``stdout``, ``none``.
    Records are flushed line by line so a killed run leaves usable data.
    """

    def __init__(self, specs: Union[str, Sequence[str], None] = None):
        if specs is None:
            specs = []
        elif isinstance(specs, str):
            specs = [specs]
        self._files = []
        self._owned = []
        self.overlay_dir: Optional[str] = None
        for spec in specs:
            kind, _, arg = spec.partition(":")
            if kind == "none":
                continue
            if kind == "stdout":
                self._files.append(sys.stdout)
            elif kind == "jsonl" and arg:
                parent = os.path.dirname(arg)
                if parent:
                    os.makedirs(parent, exist_ok=True)
                fh = open(arg, "w", encoding="utf-8")
                self._files.append(fh)
                self._owned.append(fh)
            elif kind == "overlay" and arg:
                os.makedirs(arg, exist_ok=True)
                self.overlay_dir = arg
            else:
                raise ConfigError(f"bad sink spec {spec!r}; use jsonl:<path>, overlay:<dir>, stdout or none")

    def record(self, rec: dict) -> None:
        line = json.dumps(rec, sort_keys=True)
        for fh in self._files:
            fh.write(line + "\n")
            fh.flush()

    def overlay(self, frame: FrameBuffer, lanes, error) -> None:
        if self.overlay_dir is None:
            return
        image = draw_overlay(frame.pixels, lanes, error)
        ppm.write_ppm(os.path.join(self.overlay_dir, f"overlay_{frame.seq:06d}.ppm"), image)

    def close(self) -> None:
        for fh in self._owned:
            fh.close()


def draw_overlay(pixels: np.ndarray, lanes, error) -> np.ndarray:
    """Lane points as colored dots, the lookahead row, and the lane/image centers."""
    image = pixels.copy()
    h, w = image.shape[:2]
    for lane in lanes:
        color = _LANE_COLORS[lane.lane_index % len(_LANE_COLORS)]
        for x, y in lane.points:
            ppm.draw_disc(image, x, y, 2, color)
    if error is not None and error.lookahead_y is not None:
        ppm.draw_hline(image, error.lookahead_y, (255, 255, 0))
        ppm.draw_vline(image, w / 2.0, (255, 255, 255), int(error.lookahead_y) - 6, int(error.lookahead_y) + 7)
        if error.valid:
            ppm.draw_disc(image, error.lane_center, error.lookahead_y, 4, (255, 0, 255))
    return image


def _producer(source: FrameSource, mailbox: LatestMailbox, stop: threading.Event,
              done: threading.Event, fps: Optional[float], errors: list) -> None:
    interval = 1.0 / fps if fps else 0.0
    due = time.monotonic()
    try:
        for frame in source:
            if stop.is_set():
                break
            if interval:
                now = time.monotonic()
                if due > now:
                    time.sleep(due - now)
                due = max(due + interval, time.monotonic())
            # stamp at hand-off: this is the moment the frame leaves the camera side
            mailbox.put(dataclasses.replace(frame, captured_at=time.monotonic()))
            if stop.is_set():
                break
    except Exception as exc:  # reported through the pipeline report
        errors.append(exc)
    finally:
        done.set()


def process_frame(frame: FrameBuffer, staleness_ms: float, backend: Backend, settings: PipelineSettings):
    """Run one frame through preprocess -> infer -> decode -> control."""
    t0 = time.perf_counter()
    tensor = preprocess(frame, settings.model)
    t1 = time.perf_counter()
    timed = infer_timed(backend, tensor)
    t2 = time.perf_counter()
    lanes = decode_grid(timed.grid, frame.width, frame.height)
    t3 = time.perf_counter()
    error = lateral_error(lanes, frame.width, frame.height, settings.lookahead_frac)
    cmd = steer(error, settings.gain, settings.v, settings.track)
    t4 = time.perf_counter()
    timings = StageTimings(
        capture_staleness=staleness_ms,
        preprocess=(t1 - t0) * 1000.0,
        inference=timed.latency,
        decode=(t3 - t2) * 1000.0,
        control=(t4 - t3) * 1000.0,
        end_to_end=(t4 - t0) * 1000.0,
    )
    return lanes, error, cmd, timings


def frame_record(frame: FrameBuffer, lanes, error, cmd, timings: StageTimings) -> dict:
    return {
        "seq": frame.seq,
        "frame_id": frame.frame_id,
        "staleness_ms": timings.capture_staleness,
        "preprocess_ms": timings.preprocess,
        "inference_ms": timings.inference,
        "decode_ms": timings.decode,
        "control_ms": timings.control,
        "end_to_end_ms": timings.end_to_end,
        "lanes": [[[x, y] for x, y in lane.points] for lane in lanes],
        "error_value": error.value if error.valid else None,
        "error_valid": error.valid,
        "omega": cmd.omega,
        "v_left": cmd.v_left,
        "v_right": cmd.v_right,
        "blind": cmd.blind,
    }


def run_pipeline(
    source: Union[str, FrameSource],
    backend: Union[str, Backend],
    settings: PipelineSettings,
    sink: Union[str, Sequence[str], RecordSink, None] = None,
) -> PipelineReport:
    """Run until the source ends or a frame/time budget is spent.

    Failures in the source or backend end the run early; the report is
    then flagged ``incomplete`` and carries the error text.
    """
    report = PipelineReport(target_fps=settings.governor_fps)
    if isinstance(source, str):
        report.source = source
        source = open_source(source, settings.model)
    else:
        report.source = type(source).__name__
    if isinstance(backend, str):
        backend = open_backend(backend, settings.model)
    report.backend = backend.name
    sink = sink if isinstance(sink, RecordSink) else RecordSink(sink)

    mailbox = LatestMailbox()
    governor = Governor(settings.governor_fps)
    stop, done = threading.Event(), threading.Event()
    producer_errors: list = []
    thread = threading.Thread(
        target=_producer, name="lanekeeper-capture",
        args=(source, mailbox, stop, done, settings.source_fps, producer_errors), daemon=True,
    )
    starts: List[float] = []
    taken = 0
    start = time.monotonic()
    thread.start()
    try:
        while True:
            if settings.max_frames is not None and report.frames_processed >= settings.max_frames:
                break
            if settings.max_seconds is not None and time.monotonic() - start >= settings.max_seconds:
                break
            tick = governor.tick()
            frame = mailbox.take()
            while frame is None and not done.is_set():
                time.sleep(_POLL_S)
                frame = mailbox.take()
            if frame is None:
                break
            taken += 1
            starts.append(time.monotonic() if not governor.enabled else tick)
            lanes, error, cmd, timings = process_frame(frame, mailbox.last_staleness_ms, backend, settings)
            report.timings.append(timings)
            report.frames_processed += 1
            sink.record(frame_record(frame, lanes, error, cmd, timings))
            sink.overlay(frame, lanes, error)
    except LaneKeeperError as exc:
        report.incomplete, report.error = True, str(exc)
        log.error("pipeline stopped: %s", exc)
    finally:
        stop.set()
        thread.join(timeout=5.0)
        source.close()
        sink.close()
    if producer_errors:
        report.incomplete = True
        report.error = report.error or f"source failed: {producer_errors[0]}"
    report.elapsed_s = time.monotonic() - start
    report.frames_in = mailbox.puts
    report.frames_dropped = mailbox.dropped
    report.frames_in_flight = (taken - report.frames_processed) + mailbox.occupied
    if len(starts) >= 2 and starts[-1] > starts[0]:
        report.achieved_fps = (len(starts) - 1) / (starts[-1] - starts[0])
    return report


@dataclass(frozen=True)
class SpeedupReport:
    mean_a: float
    mean_b: float
    speedup: float
    stats_a: Dict[str, float]
    stats_b: Dict[str, float]

    def human(self, label_a: str = "A", label_b: str = "B") -> str:
        return (
            f"{label_a}: mean {self.mean_a:.2f} ms, p50 {self.stats_a['p50']:.2f}, p95 {self.stats_a['p95']:.2f}\n"
            f"{label_b}: mean {self.mean_b:.2f} ms, p50 {self.stats_b['p50']:.2f}, p95 {self.stats_b['p95']:.2f}\n"
            f"speedup {self.speedup:.2f}x"
        )

    def to_json(self) -> dict:
        return {"mean_a_ms": self.mean_a, "mean_b_ms": self.mean_b, "speedup": self.speedup,
                "stats_a": self.stats_a, "stats_b": self.stats_b}


def bench_speedup(timings_a: Sequence[float], timings_b: Sequence[float]) -> SpeedupReport:
    """How many times faster ``b`` is than ``a``: ``mean(a) / mean(b)``."""
    a = np.asarray(timings_a, dtype=np.float64)
    b = np.asarray(timings_b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise InvalidInputError("both timing lists must be non-empty")
    if np.any(~np.isfinite(a)) or np.any(~np.isfinite(b)) or np.any(a <= 0) or np.any(b <= 0):
        raise InvalidInputError("timings must be finite and positive")
    mean_a, mean_b = float(a.mean()), float(b.mean())
    return SpeedupReport(mean_a, mean_b, mean_a / mean_b, summarize(a), summarize(b))


@dataclass
class BenchResult:
    spec: str
    name: str
    preprocess_ms: List[float]
    inference_ms: List[float]

    @property
    def total_ms(self) -> List[float]:
        return [p + i for p, i in zip(self.preprocess_ms, self.inference_ms)]

    def to_json(self) -> dict:
        return {
            "spec": self.spec,
            "name": self.name,
            "preprocess": summarize(self.preprocess_ms),
            "inference": summarize(self.inference_ms),
            "total": summarize(self.total_ms),
            "inference_ms": list(self.inference_ms),
        }


def run_bench(backend_specs: Sequence[str], frames: int, model: ModelConfig,
              warmup: int = 0, frame: Optional[FrameBuffer] = None) -> List[BenchResult]:
    """Time ``frames`` inference calls per backend on the same input frame."""
    if frames < 1:
        raise ConfigError("bench needs at least one frame")
    if frame is None:
        frame = next(iter(SyntheticSource(config=model, frames=1)))
    results = []
    for spec in backend_specs:
        backend = open_backend(spec, model)
        try:
            for _ in range(warmup):
                infer_timed(backend, preprocess(frame, model))
            pre, inf = [], []
            for _ in range(frames):
                t0 = time.perf_counter()
                tensor: FrameTensor = preprocess(frame, model)
                pre.append((time.perf_counter() - t0) * 1000.0)
                inf.append(infer_timed(backend, tensor).latency)
            results.append(BenchResult(spec, backend.name, pre, inf))
        finally:
            backend.close()
    return results


def default_settings(**overrides) -> PipelineSettings:
    model = overrides.pop("model", None) or load_model_config("tusimple")
    return PipelineSettings(model=model, **overrides)
