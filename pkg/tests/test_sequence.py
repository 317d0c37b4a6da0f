import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from oracles import coverage, distractor_fraction, gt_index_map, kendall_tau, on_ideal_line
from suturegrasp.errors import ParameterRangeError, PreconditionError
from suturegrasp.masks import Mask, Skeleton, TipSeed, extract_centerline, locate_tip, preprocess_mask
from suturegrasp.sequence import (PixelCurve, SearchParams, SearchState, active_nodes, bresenham,
                                  candidate_cost, iter_search, out_of_zone_count, parameter_grid,
                                  trace_sequence, tune_parameters, turning_angle)
from suturegrasp.synthetic import SceneSpec, generate_scene


def _skeleton(pixels, w=80, h=40):
    m = Mask.from_pixels(w, h, pixels)
    return Skeleton(frozenset(m.pixels()), m), m


def _line(n=50, u0=5, v=10):
    return [(u0 + k, v) for k in range(n)]


def _scene(kind, seed, noise=0.0):
    spec = SceneSpec(rng_seed=seed, curve_kind=kind, noise=noise)
    mask_l, _, gt = generate_scene(spec)
    zone = preprocess_mask(mask_l)
    sk = extract_centerline(zone)
    tip = locate_tip(sk, TipSeed(tuple(float(x) for x in gt.trace_l.points[0]), 6.0))
    return sk, zone, tip, gt


# --------------------------------------------------------------------------
# parameters


def test_defaults_follow_the_termination_rule():
    p = SearchParams()
    assert p.tau_o == pytest.approx(2.6 * p.roi_radius)
    assert p.tau_v == pytest.approx(2 * math.pi / 3)
    assert p.mu > 0


@pytest.mark.parametrize("kw,label", [({"eps1": 0.5}, "R1"), ({"eps2": 0.9}, "R2"),
                                      ({"eps3": 0.2}, "R3")])
def test_out_of_range_weights_cite_their_range(kw, label):
    with pytest.raises(ParameterRangeError, match=label):
        SearchParams(**kw)


def test_eps2_message_names_the_interval():
    with pytest.raises(ParameterRangeError, match=r"R2 = \[0\.1, 0\.5\]"):
        SearchParams(eps2=0.9)


def test_bad_mode_and_mu():
    with pytest.raises(ParameterRangeError):
        SearchParams(mode="greedy")
    with pytest.raises(ParameterRangeError):
        SearchParams(mu=0)


def test_pixel_curve_round_trip(tmp_path):
    c = PixelCurve(((1, 2), (3, 4), (5, 6)), "right")
    c.save(tmp_path / "c.json")
    assert PixelCurve.load(tmp_path / "c.json") == c


def test_pixel_curve_frame_is_checked():
    with pytest.raises(ValueError):
        PixelCurve(((0, 0),), "centre")


# --------------------------------------------------------------------------
# active nodes


def test_isolated_tip_has_no_active_nodes():
    sk, m = _skeleton([(5, 5), (30, 30)])
    state = SearchState([(5, 5)], set(), set(sk.pixels) - {(5, 5)}, m)
    assert active_nodes(state, (5, 5), 10) == set()


def test_active_nodes_on_a_line():
    pts = _line(20)
    sk, m = _skeleton(pts)
    detected = [pts[3], pts[4], pts[5]]
    state = SearchState(detected, set(), set(pts) - set(detected), m)
    got = active_nodes(state, pts[5], 3)
    want = {pts[k] for k in (2, 3, 4, 6, 7, 8)} - set(detected)
    assert got == want == {pts[2], pts[6], pts[7], pts[8]}


def test_active_nodes_near_a_crossing_come_from_both_branches():
    a = [(10 + k, 20) for k in range(21)]
    b = [(20, 10 + k) for k in range(21)]
    sk, m = _skeleton(a + b)
    v_t = (18, 20)
    state = SearchState([a[0], v_t], set(), set(sk.pixels) - {a[0], v_t}, m)
    got = active_nodes(state, v_t, 5)
    want = {p for p in sk.pixels if p not in (a[0], v_t)
            and (p[0] - 18) ** 2 + (p[1] - 20) ** 2 <= 25}
    assert got == want
    assert got & (set(b) - set(a)) and got & (set(a) - set(b))


# --------------------------------------------------------------------------
# out-of-zone count and rasterisation


def test_out_of_zone_inside_a_blob():
    bits = np.zeros((20, 20), dtype=bool)
    bits[5:15, 5:15] = True
    assert out_of_zone_count((13, 12), (6, 6), Mask(bits)) == 0


def test_out_of_zone_counts_missing_pixels():
    bits = np.zeros((3, 10), dtype=bool)
    bits[0, :] = True
    bits[0, 2] = bits[0, 3] = False
    assert out_of_zone_count((5, 0), (0, 0), Mask(bits)) == 2


@pytest.mark.parametrize("a", [(1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1)])
def test_adjacent_pixels_have_no_interior(a):
    bits = np.zeros((5, 5), dtype=bool)
    assert out_of_zone_count((2 + a[0], 2 + a[1]), (2, 2), Mask(bits)) == 0


def test_out_of_zone_rejects_coincident_points():
    with pytest.raises(PreconditionError):
        out_of_zone_count((3, 3), (3, 3), Mask(np.ones((5, 5), dtype=bool)))


@settings(max_examples=300, deadline=None)
@given(st.tuples(st.integers(-30, 30), st.integers(-30, 30)),
       st.tuples(st.integers(-30, 30), st.integers(-30, 30)))
def test_bresenham_is_an_ideal_digital_line(a, b):
    assert on_ideal_line(bresenham(a, b), a, b)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2 ** 32 - 1),
       st.tuples(st.integers(0, 23), st.integers(0, 17)),
       st.tuples(st.integers(0, 23), st.integers(0, 17)))
def test_out_of_zone_matches_enumeration(seed, a, v):
    assume(a != v)
    bits = np.random.default_rng(seed).random((18, 24)) < 0.6
    zone = Mask(bits)
    interior = bresenham(v, a)[1:-1]
    assert out_of_zone_count(a, v, zone) == sum(1 for p in interior if p not in zone)


# --------------------------------------------------------------------------
# cost


def test_cost_without_penalties():
    p = SearchParams(mu=1.0, eps2=0.3)
    assert candidate_cost((8, 4), (5, 0), None, 0, p) == pytest.approx(math.log(1.0) + 0.3 * 5)


def test_cost_worked_example():
    p = SearchParams(mu=1.0, eps1=1.0, eps2=0.1, eps3=0.05)
    # V_prev ahead of V_t on the same line gives delta = pi
    c = candidate_cost((5, 0), (0, 0), (-3, 0), 3, p)
    assert turning_angle((5, 0), (0, 0), (-3, 0)) == 0.0
    c = candidate_cost((5, 0), (0, 0), (3, 0), 3, p)
    assert turning_angle((5, 0), (0, 0), (3, 0)) == pytest.approx(math.pi)
    assert c == pytest.approx(math.log(4) + 0.5 * math.exp(0.05))
    assert c == pytest.approx(1.9119, abs=1e-4)


def test_collinear_forward_has_zero_turn():
    p = SearchParams(eps2=0.2)
    assert candidate_cost((6, 6), (3, 3), (1, 1), 0, p) == pytest.approx(0.2 * math.hypot(3, 3))


def test_cost_preconditions():
    p = SearchParams()
    with pytest.raises(PreconditionError):
        candidate_cost((1, 1), (1, 1), None, 0, p)
    with pytest.raises(PreconditionError):
        candidate_cost((2, 1), (1, 1), (1, 1), 0, p)


weights = st.tuples(st.floats(1, 5), st.floats(0.1, 0.5), st.floats(0.02, 0.1), st.floats(0.01, 3))


@settings(max_examples=200, deadline=None)
@given(weights, st.integers(0, 40))
def test_cost_strictly_increasing_and_concave_in_o(w, o):
    p = SearchParams(eps1=w[0], eps2=w[1], eps3=w[2], mu=w[3])
    c = [candidate_cost((7, 3), (0, 0), (-2, -1), k, p) for k in (o, o + 1, o + 2)]
    assert c[0] < c[1] < c[2]
    assert c[2] - c[1] <= c[1] - c[0] + 1e-12


@settings(max_examples=200, deadline=None)
@given(weights, st.floats(0, math.pi - 0.01), st.floats(0.005, 0.5))
def test_cost_strictly_increasing_in_turn(w, delta, step):
    p = SearchParams(eps1=w[0], eps2=w[1], eps3=w[2], mu=w[3])
    d2 = min(math.pi, delta + step)

    def cost(d):
        # V_prev placed so the heading makes angle d with the step to the candidate
        prev = (-10 * math.cos(d), -10 * math.sin(d))
        return candidate_cost((6, 0), (0, 0), prev, 2, p)

    assert cost(delta) < cost(d2)


# --------------------------------------------------------------------------
# search


@pytest.mark.parametrize("mode", ["rim", "pixel"])
def test_straight_line_is_traced_in_order(mode):
    pts = _line(50)
    sk, m = _skeleton(pts)
    c = trace_sequence(sk, m, pts[0], SearchParams(mode=mode))
    assert list(c.points) == pts


def test_diagonal_line_is_traced_in_order():
    pts = [(5 + k, 3 + k) for k in range(30)]
    sk, m = _skeleton(pts)
    assert list(trace_sequence(sk, m, pts[-1], SearchParams()).points) == pts[::-1]


def test_tip_must_be_on_the_skeleton():
    sk, m = _skeleton(_line(10))
    with pytest.raises(PreconditionError):
        trace_sequence(sk, m, (0, 0), SearchParams())


@pytest.mark.parametrize("eps3", [0.02, 0.06, 0.1])
def test_figure_eight_passes_straight_through(eps3):
    sk, zone, tip, gt = _scene("self-intersecting", 3)
    c = trace_sequence(sk, zone, tip, SearchParams(eps3=eps3))
    idx = gt_index_map(c.points, gt.trace_l.points)
    assert kendall_tau(idx) >= 0.99
    assert coverage(c.points, gt.trace_l.points) >= 0.95


def test_distractor_crossing_is_not_followed():
    sk, zone, tip, gt = _scene("crossed-by-distractor", 1)
    c = trace_sequence(sk, zone, tip, SearchParams())
    assert kendall_tau(gt_index_map(c.points, gt.trace_l.points)) >= 0.99
    assert distractor_fraction(c.points, gt.distractor_mask_l.bits, gt.label_mask_l.bits) <= 0.02


def test_reference_search_invariants():
    sk, zone, tip, _ = _scene("curved", 4)
    p = SearchParams(roi_radius=5, mode="pixel")
    prev_len = 0
    steps = 0
    for state, chosen in iter_search(sk, zone, tip, p):
        det = set(state.detected)
        assert len(det) == len(state.detected) == prev_len + 1
        assert not (det & state.active) and not (det & state.far) and not (state.active & state.far)
        assert det | state.active | state.far <= sk.pixels
        v_t = state.detected[-1]
        for a in state.active:
            assert (a[0] - v_t[0]) ** 2 + (a[1] - v_t[1]) ** 2 <= p.roi_radius ** 2
            assert a in zone and a not in det
        prev_len = len(state.detected)
        steps += 1
        if chosen is None:
            break
    assert steps <= len(sk.pixels)


def test_pixel_kernel_matches_reference_search():
    sk, zone, tip, _ = _scene("curved", 5)
    p = SearchParams(roi_radius=6, mode="pixel", eps1=2.0, eps2=0.3, eps3=0.07)
    ref = None
    for state, chosen in iter_search(sk, zone, tip, p):
        ref = list(state.detected) + ([chosen] if chosen else [])
        if chosen is None:
            break
    assert list(trace_sequence(sk, zone, tip, p).points) == ref


def test_trace_stops_at_a_sharp_turn():
    # A V whose second arm doubles back 150 degrees from the first.
    leg1 = [(10 + k, 30) for k in range(25)]
    leg2 = bresenham((34, 30), (34 - 17, 30 - 10))[1:]
    sk, m = _skeleton(leg1 + leg2, h=50)
    c = trace_sequence(sk, m, leg1[0], SearchParams(roi_radius=8))
    assert list(c.points) == leg1


def test_trace_stops_at_a_gap_wider_than_the_roi():
    pts = _line(20) + _line(20, u0=40)
    sk, m = _skeleton(pts)
    assert list(trace_sequence(sk, m, pts[0], SearchParams(roi_radius=8)).points) == pts[:20]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31), st.sampled_from(["rim", "pixel"]))
def test_random_skeletons_terminate_without_repeats(seed, mode):
    rng = np.random.default_rng(seed)
    bits = rng.random((24, 24)) < 0.35
    m = Mask(bits)
    if m.count == 0:
        return
    sk = extract_centerline(m)
    tip = sk.sorted_pixels()[0]
    c = trace_sequence(sk, m, tip, SearchParams(roi_radius=4, mode=mode))
    assert len(set(c.points)) == len(c.points) <= len(sk.pixels)
    assert c.points[0] == tip


# --------------------------------------------------------------------------
# tuning


def test_grid_is_uniform_over_the_ranges():
    g = parameter_grid(SearchParams(), (2, 3, 1))
    assert len(g) == 6
    assert {t[0] for t in g} == {1.0, 5.0}
    assert {round(t[1], 9) for t in g} == {0.1, 0.3, 0.5}
    assert {t[2] for t in g} == {0.02}


def test_grid_counts_must_be_positive():
    with pytest.raises(PreconditionError):
        parameter_grid(SearchParams(), (0, 1, 1))


def test_tuning_straight_line_picks_smallest_triple():
    pts = _line(40)
    sk, m = _skeleton(pts)
    p, c = tune_parameters(sk, m, pts[0], SearchParams(), (3, 3, 3))
    assert p.eps == (1.0, 0.1, 0.02)
    assert len(c) == 40


def test_single_point_grid_returns_base():
    pts = _line(20)
    sk, m = _skeleton(pts)
    base = SearchParams(eps1=2.5, eps2=0.25, eps3=0.04)
    p, c = tune_parameters(sk, m, pts[0], base, (1, 1, 1))
    assert p == base
    assert c == trace_sequence(sk, m, pts[0], base)


def test_tuning_beats_every_grid_triple():
    sk, zone, tip, _ = _scene("self-intersecting", 7, noise=0.005)
    base = SearchParams(roi_radius=8)
    p, c = tune_parameters(sk, zone, tip, base, (3, 3, 3))
    lengths = {t: len(trace_sequence(sk, zone, tip, base.with_eps(*t)))
               for t in parameter_grid(base, (3, 3, 3))}
    assert len(c) == max(lengths.values())
    assert p.eps == min(t for t, n in lengths.items() if n == len(c))


def test_threaded_tuning_is_identical():
    sk, zone, tip, _ = _scene("crossed-by-distractor", 2, noise=0.005)
    a = tune_parameters(sk, zone, tip, SearchParams(), (3, 2, 3), workers=1)
    b = tune_parameters(sk, zone, tip, SearchParams(), (3, 2, 3), workers=4)
    assert a == b
