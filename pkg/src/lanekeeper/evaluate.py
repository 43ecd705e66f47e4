"""Detected/undetected frame classification, tallying and frame extraction.

A frame counts as detected when both ego-lane boundaries are found and
neither found boundary points in a direction deviating from the truth by
more than a threshold. Imperfect but well-directed detections still count.
"""

from __future__ import annotations

import itertools
import json
import os
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from lanekeeper.errors import EmptyDatasetError, InvalidGroundTruthError, LaneKeeperError, Y4MError
from lanekeeper.lanecore import LanePolyline, fit_direction
from lanekeeper.ppm import write_ppm
from lanekeeper.y4m import Y4MReader

DEFAULT_DEVIATION_DEG = 15.0
REASONS = ("ok", "missing-left", "missing-right", "direction-deviation")
DETECTED, UNDETECTED = "Detected", "Undetected"


@dataclass(frozen=True)
class TruthLane:
    points: Optional[tuple] = None
    direction_deg: Optional[float] = None

    def __post_init__(self):
        if self.points is None and self.direction_deg is None:
            raise InvalidGroundTruthError("a labeled lane needs points or direction_deg")
        if self.points is not None:
            pts = tuple((float(x), float(y)) for x, y in self.points)
            if len(pts) < 2:
                raise InvalidGroundTruthError("truth polyline needs at least 2 points")
            object.__setattr__(self, "points", tuple(sorted(pts, key=lambda p: p[1])))

    @property
    def direction(self) -> float:
        if self.direction_deg is not None:
            return float(self.direction_deg)
        return fit_direction(self.points)

    @property
    def mean_x(self) -> Optional[float]:
        return None if self.points is None else float(np.mean([p[0] for p in self.points]))


@dataclass(frozen=True)
class GroundTruthFrame:
    frame_id: str
    left: Optional[TruthLane] = None
    right: Optional[TruthLane] = None

    @classmethod
    def from_json(cls, obj: dict) -> "GroundTruthFrame":
        def lane(key):
            raw = obj.get(key)
            if raw is None:
                return None
            return TruthLane(raw.get("points"), raw.get("direction_deg"))

        try:
            return cls(str(obj["frame_id"]), lane("left"), lane("right"))
        except (KeyError, TypeError, AttributeError) as exc:
            raise InvalidGroundTruthError(f"bad ground-truth record {obj!r}: {exc}") from None


@dataclass(frozen=True)
class FrameVerdict:
    frame_id: str
    verdict: str
    reason: str

    @property
    def detected(self) -> bool:
        return self.verdict == DETECTED

    def to_json(self) -> dict:
        return {"frame_id": self.frame_id, "verdict": self.verdict, "reason": self.reason}


def angle_difference(a: float, b: float) -> float:
    """Smallest difference between two line directions, in degrees."""
    d = abs(a - b) % 180.0
    return min(d, 180.0 - d)


def _mean_x_distance(det: LanePolyline, truth: TruthLane) -> Optional[float]:
    ys = det.ys
    lo, hi = ys.min(), ys.max()
    shared = [(x, y) for x, y in truth.points if lo <= y <= hi]
    if not shared:
        return None
    return float(np.mean([abs(det.x_at(y) - x) for x, y in shared]))


def _match(detections, truth: TruthLane, radius: float, side: str, frame_width: int, exclude):
    candidates = []
    for i, det in enumerate(detections):
        if i in exclude or len(det.points) < 2:
            continue
        if truth.points is not None:
            dist = _mean_x_distance(det, truth)
            if dist is not None and dist <= radius:
                candidates.append((dist, i))
        else:
            # direction-only truth: nearest detection on the correct side of center
            x = det.x_at(det.ys.max())
            gap = frame_width / 2.0 - x if side == "left" else x - frame_width / 2.0
            if gap >= 0:
                candidates.append((gap, i))
    return min(candidates)[1] if candidates else None


def classify_frame(
    detections: Sequence[LanePolyline],
    truth: GroundTruthFrame,
    deviation_threshold: float = DEFAULT_DEVIATION_DEG,
    frame_width: int = 800,
    frame_height: int = 288,
) -> FrameVerdict:
    if not deviation_threshold > 0:
        raise ValueError(f"deviation threshold must be positive, got {deviation_threshold}")
    if truth.left is None and truth.right is None:
        raise InvalidGroundTruthError(f"frame {truth.frame_id}: no labeled lanes")
    labeled = [(side, lane) for side, lane in (("left", truth.left), ("right", truth.right)) if lane is not None]
    if truth.left is not None and truth.right is not None and truth.left.points and truth.right.points:
        radius = abs(truth.right.mean_x - truth.left.mean_x) / 2.0
    else:
        radius = frame_width / 8.0

    matched = {}
    used = set()
    for side, lane in labeled:
        idx = _match(detections, lane, radius, side, frame_width, used)
        if idx is None:
            return FrameVerdict(truth.frame_id, UNDETECTED, f"missing-{side}")
        used.add(idx)
        matched[side] = idx
    for side, lane in labeled:
        det = detections[matched[side]]
        if angle_difference(det.direction_deg, lane.direction) > deviation_threshold:
            return FrameVerdict(truth.frame_id, UNDETECTED, "direction-deviation")
    return FrameVerdict(truth.frame_id, DETECTED, "ok")


@dataclass(frozen=True)
class TallyReport:
    label: str
    total: int
    detected: int
    undetected: int
    detection_rate: float
    rate_fraction: str
    reasons: Dict[str, int]
    deviation_threshold_deg: Optional[float] = None

    def to_json(self) -> dict:
        return {
            "label": self.label,
            "total": self.total,
            "detected": self.detected,
            "undetected": self.undetected,
            "detection_rate": self.detection_rate,
            "detection_rate_fraction": self.rate_fraction,
            "reasons": dict(self.reasons),
            "deviation_threshold_deg": self.deviation_threshold_deg,
        }


def tally(verdicts: Iterable[FrameVerdict], label: str = "run",
          deviation_threshold: Optional[float] = None) -> TallyReport:
    verdicts = list(verdicts)
    if not verdicts:
        raise EmptyDatasetError("cannot tally an empty dataset")
    detected = sum(v.detected for v in verdicts)
    rate = Fraction(detected, len(verdicts))
    counts = Counter(v.reason for v in verdicts)
    reasons = {r: counts.get(r, 0) for r in REASONS}
    return TallyReport(
        label, len(verdicts), detected, len(verdicts) - detected,
        detected / len(verdicts), f"{rate.numerator}/{rate.denominator}", reasons, deviation_threshold,
    )


def render_table(verdicts: Sequence[FrameVerdict], report: TallyReport) -> str:
    """Plain-text table with one check/dash row per frame, like a results sheet."""
    width = max([len(report.label), 8] + [len(v.frame_id) for v in verdicts])
    lines = [f"{'frame':<{width}}  {report.label}"]
    for v in verdicts:
        mark = "√" if v.detected else "-"
        note = "" if v.detected else f"  ({v.reason})"
        lines.append(f"{v.frame_id:<{width}}  {mark}{note}")
    lines.append(
        f"detected {report.detected}/{report.total} = {report.detection_rate:.3f}"
        + (f"  (threshold {report.deviation_threshold_deg:g} deg)" if report.deviation_threshold_deg else "")
    )
    return "\n".join(lines)


def load_ground_truth(path) -> List[GroundTruthFrame]:
    frames = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise InvalidGroundTruthError(f"{path}:{lineno}: {exc}") from None
            frames.append(GroundTruthFrame.from_json(obj))
    return frames


def load_detections(path) -> Dict[str, List[LanePolyline]]:
    """Per-frame lanes from a pipeline JSONL record stream, keyed by frame id."""
    out: Dict[str, List[LanePolyline]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            key = str(rec.get("frame_id", rec.get("seq")))
            lanes = []
            for i, pts in enumerate(rec.get("lanes", [])):
                if len(pts) >= 2:
                    lanes.append(LanePolyline.from_points(i, pts))
            out[key] = lanes
    return out


def extract_frames(video: str | os.PathLike, out_dir: str | os.PathLike, stride: int = 1) -> int:
    """Write every ``stride``-th frame of a Y4M stream as ``frame_%06d.ppm``.

    Files are named by source frame index. On a malformed stream the
    frames already written stay on disk and :class:`Y4MError` propagates.
    """
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise LaneKeeperError(f"cannot create output directory {out_dir}: {exc}") from exc
    written = 0
    with Y4MReader.open(video) as reader:
        for index in itertools.count():
            if index % stride:
                if reader.read_planes() is None:
                    break
                continue
            rgb = reader.read_rgb()
            if rgb is None:
                break
            try:
                write_ppm(os.path.join(out_dir, f"frame_{index:06d}.ppm"), rgb)
            except OSError as exc:
                raise LaneKeeperError(f"cannot write to {out_dir}: {exc}") from exc
            written += 1
    return written


__all__ = [
    "FrameVerdict", "GroundTruthFrame", "TallyReport", "TruthLane", "Y4MError",
    "classify_frame", "extract_frames", "load_detections", "load_ground_truth",
    "render_table", "tally",
]
