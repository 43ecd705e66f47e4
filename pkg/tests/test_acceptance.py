"""Acceptance criteria, one test each, at the stated tolerances.

Every test records a PASS/FAIL line shown under "acceptance criteria" in
the pytest summary.
"""

import gc
import hashlib
import json
import math
import os
import random
import weakref

import numpy as np
import pytest

from lanekeeper.capture import FrameBuffer, LatestMailbox
from lanekeeper.cli import dispatch
from lanekeeper.control import SteeringCommand
from lanekeeper.evaluate import FrameVerdict, extract_frames, tally
from lanekeeper.infer import OnnxBackend, infer_timed, preprocess
from lanekeeper.lanecore import LaneGrid, decode_grid, load_model_config
from lanekeeper.pipeline import bench_speedup, default_settings, run_pipeline
from lanekeeper.ppm import read_ppm
from lanekeeper.sim import Camera, ControllerParams, Corridor, RobotState, decode_quantization_m, run_closed_loop, step_unicycle
from oracles import brute_force_decode
from y4m_fixture import build_y4m, expected_rgb

GOLDEN_SHA256 = {
    "frame_000000.ppm": "23d5f75f7474b3ba389d2a847d1bff47fd385bc4355b824df0eaae92d9350db8",
    "frame_000010.ppm": "148c8aca22bc8d7be46e49fbd7d42a1f1ecb5fb701b8eda84eb8986f322e1e6e",
    "frame_000020.ppm": "ddb79a640a1e1b766c21ed54524d90facd251cae47dad8c3be26dce1db058c1c",
}


@pytest.fixture(scope="module")
def loaded_run():
    """Producer 100 fps, governor 9 fps, 50 ms backend, 5 s."""
    settings = default_settings(governor_fps=9, source_fps=100, max_seconds=5.0)
    return run_pipeline("synthetic", "synthetic:delay=50", settings)


def test_speedup_arithmetic(acceptance_line):
    a = bench_speedup([2295], [105]).speedup
    b = bench_speedup([2280], [101]).speedup
    ok = abs(a - 21.86) <= 0.005 and abs(b - 22.57) <= 0.005
    acceptance_line("speedup arithmetic 21.86 / 22.57 (+-0.005)", ok, f"{a:.4f}, {b:.4f}")
    assert ok


@pytest.mark.slow
def test_injected_delay_bench(capsys, acceptance_line):
    code = dispatch(["bench", "--backend", "synthetic:delay=2295", "--backend", "synthetic:delay=105",
                     "--frames", "10", "--json"])
    out = capsys.readouterr().out
    speedup = json.loads(out)["speedups"][0]["speedup"] if code == 0 else float("nan")
    ok = code == 0 and abs(speedup - 21.86) <= 0.5
    acceptance_line("bench with 2295/105 ms delays over 10 frames -> 21.86 +- 0.5", ok, f"{speedup:.3f}")
    assert ok


@pytest.mark.slow
def test_throughput_nine_fps(loaded_run, acceptance_line):
    fps = loaded_run.achieved_fps
    ok = fps is not None and abs(fps - 9.0) <= 0.05 * 9.0
    acceptance_line("governor 9 fps with 50 ms backend -> 9 fps +- 5%", ok, f"{fps:.3f} fps")
    assert ok


def test_decoder_oracle_equivalence(acceptance_line):
    cfg = load_model_config("tusimple")
    rng = np.random.default_rng(2024)
    worst, same_presence = 0.0, True
    for _ in range(1000):
        logits = rng.normal(0.0, rng.uniform(0.5, 4.0), cfg.grid_shape)
        logits[cfg.num_cells] += rng.normal(rng.uniform(-2, 6), 2.0, cfg.grid_shape[1:])
        lanes = {lane.lane_index: lane.points for lane in decode_grid(LaneGrid(logits, cfg), 800, 288)}
        ref = brute_force_decode(logits.tolist(), cfg.anchor_rows, cfg.input_height, 800, 288)
        if set(lanes) != set(ref) or any(len(lanes[k]) != len(ref[k]) for k in ref):
            same_presence = False
            break
        for k in ref:
            worst = max(worst, float(np.max(np.abs(np.asarray(lanes[k]) - np.asarray(ref[k])))))
    ok = same_presence and worst <= 1e-6
    acceptance_line("1000 random grids match brute-force decoder (1e-6 px, same presence)", ok,
                    f"max diff {worst:.2e}, presence {'equal' if same_presence else 'DIFFERS'}")
    assert ok


def test_decoder_symmetry(acceptance_line):
    cfg = load_model_config("tusimple")
    logits = np.zeros(cfg.grid_shape)
    logits[cfg.num_cells] = -100.0
    lanes = decode_grid(LaneGrid(logits, cfg), 800, 288)
    worst = max(abs(x - 399.5) for lane in lanes for x, _ in lane.points)
    ok = len(lanes) == cfg.num_lanes and worst <= 1e-6
    acceptance_line("uniform logits decode to (W-1)/2", ok, f"max |x - 399.5| = {worst:.1e}")
    assert ok


@pytest.mark.slow
def test_freshness(loaded_run, acceptance_line):
    staleness = max(loaded_run.series("capture_staleness"))
    box = LatestMailbox()
    refs = []
    for seq in range(1, 10001):
        frame = FrameBuffer(np.zeros((8, 8, 3), np.uint8), seq)
        refs.append(weakref.ref(frame))
        box.put(frame)
        del frame
    gc.collect()
    retained = sum(r() is not None for r in refs)
    ok = staleness <= 15.0 and loaded_run.frames_dropped > 0 and retained == 1 and loaded_run.frames_in_flight <= 1
    acceptance_line("freshness: staleness <= 15 ms, drops > 0, mailbox O(1)", ok,
                    f"max {staleness:.2f} ms, dropped {loaded_run.frames_dropped}, retained {retained}/10000")
    assert ok


def test_closed_loop_lane_keeping(acceptance_line):
    corridor = Corridor()
    params = ControllerParams(gain=1.0, v=0.5)
    right = run_closed_loop(corridor, corridor.pose_at(0.0, 0.3), params, 10.0, 0.02)
    left = run_closed_loop(corridor, corridor.pose_at(0.0, -0.3), params, 10.0, 0.02)
    q = decode_quantization_m(Camera(), load_model_config("tusimple"))
    mirror = float(np.max(np.abs(right.offsets + left.offsets)))
    ok = right.settled and left.settled and mirror <= q
    acceptance_line("closed loop from +-0.3 m settles, mirror within decode quantization", ok,
                    f"finals {right.final_offset:+.4f}/{left.final_offset:+.4f} m, mirror gap {mirror:.4f} <= {q:.4f} m")
    assert ok


def test_circle_closure(acceptance_line):
    state = RobotState()
    cmd = SteeringCommand(1.0, 1.0, 0.75, 1.25)
    dt = 1e-3
    steps = int(2 * math.pi / dt)
    for _ in range(steps):
        state = step_unicycle(state, cmd, dt)
    state = step_unicycle(state, cmd, 2 * math.pi - steps * dt)
    gap = math.hypot(state.x, state.y)
    ok = gap <= 1e-3
    acceptance_line("unicycle circle closes within 1e-3 m", ok, f"{gap:.2e} m")
    assert ok


def test_evaluation_tally(acceptance_line):
    marks = [True, True, True, False, True, True, True]
    verdicts = [FrameVerdict(f"f{i}", "Detected" if m else "Undetected", "ok" if m else "missing-left")
                for i, m in enumerate(marks)]
    ref = tally(verdicts, "tusimple-outdoor")
    rng = random.Random(7)
    invariant = True
    for _ in range(100):
        rng.shuffle(verdicts)
        invariant &= tally(verdicts, "tusimple-outdoor").to_json() == ref.to_json()
    ok = ref.rate_fraction == "6/7" and ref.detection_rate == 6 / 7 and invariant
    acceptance_line("tally 6 of 7 -> 6/7, permutation invariant over 100 shuffles", ok,
                    f"{ref.rate_fraction} = {ref.detection_rate:.3f}")
    assert ok


def test_frame_extraction(tmp_path, acceptance_line):
    video = build_y4m(tmp_path / "fixture.y4m", frames=30, width=800, height=288)
    out = tmp_path / "frames"
    count = extract_frames(video, out, 10)
    names = sorted(os.listdir(out))
    exact = all((read_ppm(out / n) == expected_rgb(int(n[6:12]), 800, 288)).all() for n in names)
    hashes = all(hashlib.sha256((out / n).read_bytes()).hexdigest() == GOLDEN_SHA256.get(n) for n in names)
    ok = count == 3 and names == sorted(GOLDEN_SHA256) and exact and hashes
    acceptance_line("extract stride 10 -> frames 0/10/20, pixel-exact", ok, ", ".join(names))
    assert ok


def test_onnx_smoke(acceptance_line):
    path = os.environ.get("LANEKEEPER_ONNX_MODEL")
    name = "pre-trained ONNX model decodes >= 1 lane (gated)"
    if not path or not os.path.isfile(path):
        acceptance_line(name, None, "LANEKEEPER_ONNX_MODEL not set")
        pytest.skip("no model file; set LANEKEEPER_ONNX_MODEL")
    pytest.importorskip("onnxruntime")
    from lanekeeper.capture import open_source

    config = load_model_config(os.environ.get("LANEKEEPER_ONNX_CONFIG", "tusimple"))
    frame = next(iter(open_source(os.environ.get("LANEKEEPER_ONNX_FRAME", "synthetic:frames=1"), config)))
    grid = infer_timed(OnnxBackend(path, config), preprocess(frame, config)).grid
    lanes = decode_grid(grid, frame.width, frame.height)
    ok = len(lanes) >= 1
    acceptance_line(name, ok, f"{len(lanes)} lanes")
    assert ok
