import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lanekeeper.errors import ConfigError, InsufficientPointsError, InvalidInputError
from lanekeeper.lanecore import (
    LaneGrid,
    LanePolyline,
    ModelConfig,
    decode_anchor,
    decode_grid,
    fit_direction,
    load_model_config,
    softmax_expectation,
)
from lanekeeper.scene import SceneLane, saturated_logits, scene_positions
from oracles import brute_force_decode, scalar_softmax_expectation, tls_angle_deg

finite = st.floats(min_value=-50, max_value=50, allow_nan=False)


class TestModelConfig:
    def test_builtin_tusimple(self, tusimple):
        assert tusimple.grid_shape == (101, 56, 4)
        assert tusimple.anchor_rows[0] == 64 and tusimple.anchor_rows[-1] == 284
        assert (tusimple.input_width, tusimple.input_height) == (800, 288)

    def test_builtin_culane(self, culane):
        assert culane.grid_shape == (201, 18, 4)
        assert culane.anchor_rows[-1] == 287

    def test_round_trip_through_file(self, tmp_path, culane):
        path = tmp_path / "model.cfg"
        path.write_text(culane.to_kv())
        assert load_model_config(path) == culane

    @pytest.mark.parametrize("kwargs", [
        dict(num_cells=1),
        dict(num_anchors=1, anchor_rows=(10,)),
        dict(num_lanes=0),
        dict(anchor_rows=(10, 10, 20)),
        dict(anchor_rows=(10, 20, 288)),
        dict(anchor_rows=(10, 20)),
    ])
    def test_invalid(self, kwargs):
        base = dict(num_cells=4, num_anchors=3, num_lanes=2, input_width=16, input_height=288,
                    anchor_rows=(10, 20, 30))
        base.update(kwargs)
        with pytest.raises(ConfigError):
            ModelConfig(**base)

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("num_cells = 4\nnum_anchors = 2\nnum_lanes = 1\ninput_width = 8\n"
                        "input_height = 8\nanchor_rows = 1,2\ncolour = red\n")
        with pytest.raises(ConfigError, match="colour"):
            load_model_config(path)


class TestSoftmaxExpectation:
    def test_uniform_is_center(self):
        _, e = softmax_expectation(np.zeros(100))
        assert e == pytest.approx(49.5, abs=1e-12)

    def test_saturated(self):
        z = np.zeros(100)
        z[30] = 1000.0
        _, e = softmax_expectation(z)
        assert e == pytest.approx(30.0, abs=1e-6)

    def test_log_weights_against_scalar_oracle(self):
        z = [math.log(1), math.log(2), math.log(4)]
        probs_ref, e_ref = scalar_softmax_expectation(z)
        assert probs_ref == pytest.approx([1 / 7, 2 / 7, 4 / 7], abs=1e-15)
        assert e_ref == pytest.approx(10 / 7, abs=1e-15)
        probs, e = softmax_expectation(z)
        np.testing.assert_allclose(probs, probs_ref, atol=1e-12)
        assert e == pytest.approx(e_ref, abs=1e-12)

    @pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
    def test_non_finite(self, bad):
        with pytest.raises(InvalidInputError):
            softmax_expectation([0.0, bad, 1.0])

    @given(st.lists(finite, min_size=2, max_size=64))
    def test_probs_normalized_and_expectation_in_range(self, z):
        probs, e = softmax_expectation(z)
        assert abs(probs.sum() - 1.0) <= 1e-9
        assert 0.0 <= e <= len(z) - 1

    @given(st.lists(finite, min_size=2, max_size=64), st.floats(-1e3, 1e3))
    def test_shift_invariance(self, z, shift):
        p1, e1 = softmax_expectation(z)
        p2, e2 = softmax_expectation([v + shift for v in z])
        np.testing.assert_allclose(p1, p2, atol=1e-9)
        assert e1 == pytest.approx(e2, abs=1e-9)

    @given(st.lists(finite, min_size=2, max_size=32), st.data(), st.floats(1e-3, 20))
    def test_boost_never_moves_away(self, z, data, delta):
        j = data.draw(st.integers(0, len(z) - 1))
        _, before = softmax_expectation(z)
        boosted = list(z)
        boosted[j] += delta
        _, after = softmax_expectation(boosted)
        assert abs(after - j) <= abs(before - j) + 1e-9


class TestDecodeAnchor:
    def test_background_dominates(self, tusimple):
        col = np.zeros(101)
        col[100] = 10.0
        assert decode_anchor(col, tusimple, 800) is None

    def test_leftmost_cell(self, tusimple):
        col = np.zeros(101)
        col[0] = 1000.0
        assert decode_anchor(col, tusimple, 800) == pytest.approx(0.0, abs=1e-9)

    def test_linear_map(self):
        cfg = ModelConfig(3, 2, 1, 800, 288, (100, 200))
        col = [math.log(1), math.log(2), math.log(4), -1000.0]
        _, e = scalar_softmax_expectation(col[:3])
        expected = e / 2 * 799
        assert expected == pytest.approx(570.7142857, abs=1e-6)
        assert decode_anchor(col, cfg, 800) == pytest.approx(expected, abs=1e-9)

    def test_wrong_length(self, tusimple):
        with pytest.raises(InvalidInputError):
            decode_anchor(np.zeros(100), tusimple, 800)

    def test_non_finite(self, tusimple):
        col = np.zeros(101)
        col[3] = np.nan
        with pytest.raises(InvalidInputError):
            decode_anchor(col, tusimple, 800)


class TestDecodeGrid:
    def test_all_background(self, tusimple):
        logits = np.zeros(tusimple.grid_shape)
        logits[100] = 5.0
        assert decode_grid(LaneGrid(logits, tusimple), 800, 288) == []

    def test_vertical_lane_round_trip(self, tusimple):
        logits = saturated_logits(tusimple, scene_positions([SceneLane.const(0.5)], tusimple))
        lanes = decode_grid(LaneGrid(logits, tusimple), 800, 288)
        assert len(lanes) == 1
        half_cell = tusimple.cell_width(800) / 2
        assert all(abs(x - 399.5) <= half_cell for x, _ in lanes[0].points)

    def test_partial_presence_count(self, tusimple):
        rng = np.random.default_rng(3)
        logits = np.zeros(tusimple.grid_shape)
        logits[100] = 10.0
        present = rng.choice(56, size=40, replace=False)
        logits[100, present, 0] = 0.0
        logits[rng.integers(0, 100, size=40), present, 0] = 10.0
        lanes = decode_grid(LaneGrid(logits, tusimple), 800, 288)
        assert [lane.lane_index for lane in lanes] == [0]
        assert len(lanes[0].points) == 40

    def test_single_anchor_lane_dropped(self, tusimple):
        logits = np.zeros(tusimple.grid_shape)
        logits[100] = 10.0
        logits[100, 7, 2] = 0.0
        logits[20, 7, 2] = 10.0
        assert decode_grid(LaneGrid(logits, tusimple), 800, 288) == []

    def test_shape_mismatch(self, tusimple):
        with pytest.raises(InvalidInputError):
            LaneGrid(np.zeros((100, 56, 4)), tusimple)

    def test_non_finite_grid(self, tusimple):
        logits = np.zeros(tusimple.grid_shape)
        logits[0, 0, 0] = np.inf
        with pytest.raises(InvalidInputError):
            LaneGrid(logits, tusimple)

    def test_matches_brute_force_on_culane(self, culane):
        rng = np.random.default_rng(11)
        for _ in range(20):
            logits = rng.normal(0, 2, culane.grid_shape)
            logits[200] += rng.normal(4, 3, (18, 4))
            lanes = decode_grid(LaneGrid(logits, culane), 1640, 590)
            ref = brute_force_decode(logits.tolist(), culane.anchor_rows, 288, 1640, 590)
            assert {lane.lane_index for lane in lanes} == set(ref)
            for lane in lanes:
                np.testing.assert_allclose(lane.points, ref[lane.lane_index], atol=1e-6)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_y_strictly_increasing(self, seed):
        cfg = load_model_config("tusimple")
        rng = np.random.default_rng(seed)
        logits = rng.normal(0, 3, cfg.grid_shape)
        for lane in decode_grid(LaneGrid(logits, cfg), 1280, 720):
            ys = [p[1] for p in lane.points]
            assert all(b > a for a, b in zip(ys, ys[1:]))
            assert all(0 <= x < 1280 and 0 <= y < 720 for x, y in lane.points)

    @settings(max_examples=40, deadline=None)
    @given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
    def test_saturated_round_trip_within_one_cell(self, x_top, x_bottom):
        cfg = load_model_config("tusimple")
        lane = SceneLane.linear(x_top, x_bottom)
        logits = saturated_logits(cfg, scene_positions([lane], cfg))
        (decoded,) = decode_grid(LaneGrid(logits, cfg), 800, 288)
        ys = np.asarray(cfg.anchor_rows) / cfg.input_height
        truth = [lane.x_of_y(y) * 799 for y in ys]
        assert np.max(np.abs(decoded.xs - truth)) <= cfg.cell_width(800)


class TestFitDirection:
    def test_vertical(self):
        assert fit_direction([(100, 50), (100, 150), (100, 250)]) == 0.0

    def test_diagonal(self):
        assert fit_direction([(0, 0), (100, 100), (200, 200)]) == pytest.approx(45.0, abs=1e-9)

    def test_horizontal_is_plus_90(self):
        assert fit_direction([(0, 10), (50, 10), (90, 10)]) == pytest.approx(90.0)

    def test_opposite_lean_is_negative(self):
        assert fit_direction([(200, 0), (100, 100), (0, 200)]) == pytest.approx(-45.0, abs=1e-9)

    def test_noisy_line_matches_closed_form(self):
        rng = np.random.default_rng(7)
        ys = rng.uniform(0, 288, 50)
        xs = 300 + 0.4 * ys + rng.normal(0, 3, 50)
        pts = list(zip(xs, ys))
        assert fit_direction(pts) == pytest.approx(tls_angle_deg(pts), abs=1e-6)

    @settings(max_examples=50)
    @given(st.lists(st.tuples(st.floats(0, 800), st.floats(0, 288)), min_size=3, max_size=30, unique=True))
    def test_range_and_oracle(self, pts):
        xs = np.array(pts)
        if np.ptp(xs, axis=0).max() < 1e-3:
            return
        angle = fit_direction(pts)
        assert -90.0 < angle <= 90.0
        ref = tls_angle_deg(pts)
        diff = abs(angle - ref) % 180.0
        # a near-isotropic scatter has no stable axis; skip those
        cov = np.cov(xs.T)
        eig = np.linalg.eigvalsh(cov)
        if eig[1] - eig[0] > 1e-6 * max(eig[1], 1.0):
            assert min(diff, 180.0 - diff) < 1e-4

    @pytest.mark.parametrize("pts", [[(1, 1)], [(3, 4), (3, 4), (3, 4)], []])
    def test_insufficient(self, pts):
        with pytest.raises(InsufficientPointsError):
            fit_direction(pts)

    def test_polyline_from_points(self):
        lane = LanePolyline.from_points(1, [(10, 0), (20, 10)])
        assert lane.direction_deg == pytest.approx(45.0)
        assert lane.x_at(5) == pytest.approx(15.0)
        assert lane.x_at(20) == pytest.approx(30.0)
