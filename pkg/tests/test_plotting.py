import pytest

from lanekeeper.evaluate import FrameVerdict, tally
from lanekeeper.pipeline import default_settings, run_bench, run_pipeline
from lanekeeper.plotting import plot_bench, plot_stage_latency, plot_tally, plot_trajectory
from lanekeeper.sim import ControllerParams, Corridor, run_closed_loop


def is_png(path):
    with open(path, "rb") as fh:
        return fh.read(8) == b"\x89PNG\r\n\x1a\n"


class TestPlots:
    def test_trajectory(self, tmp_path):
        res = run_closed_loop(Corridor(), Corridor().pose_at(0, 0.2), ControllerParams(), 1.0, 0.05)
        assert is_png(plot_trajectory(res, tmp_path / "sub" / "t.png", 0.5, "demo"))

    def test_bench(self, tmp_path, tusimple):
        results = run_bench(["synthetic:delay=2", "synthetic"], 2, tusimple)
        assert is_png(plot_bench(results, tmp_path / "b.png", 3.0))

    def test_stage_latency(self, tmp_path, tusimple):
        rep = run_pipeline("synthetic:frames=3", "synthetic", default_settings(model=tusimple, source_fps=20))
        assert is_png(plot_stage_latency(rep, tmp_path / "s.png"))

    @pytest.mark.parametrize("n", [1, 3])
    def test_tally(self, tmp_path, n):
        reports = [tally([FrameVerdict("a", "Detected", "ok")], f"run{i}") for i in range(n)]
        assert is_png(plot_tally(reports, tmp_path / "r.png"))
