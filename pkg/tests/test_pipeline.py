import json
import math
import os

import numpy as np
import pytest

from suturegrasp.cli import main
from suturegrasp.errors import ConfigError, ParameterRangeError, PreconditionError
from suturegrasp.grasp import arc_length_point
from suturegrasp.masks import TipSeed
from suturegrasp.pipeline import (ARTIFACTS, BenchmarkScene, PipelineConfig, StageError,
                                  apply_overrides, default_suite, key_points, load_config,
                                  point_polyline_distance, run_benchmark, run_pipeline,
                                  run_scene)
from suturegrasp.stereo import Polyline3, quantization_bound
from suturegrasp.synthetic import SceneSpec, generate_scene


@pytest.fixture(scope="module")
def bundle(tmp_path_factory):
    d = tmp_path_factory.mktemp("scene")
    assert main(["generate", "--kind", "straight", "--seed", "3", "--noise", "0.005",
                 "--out", str(d)]) == 0
    return d


# --------------------------------------------------------------------------
# config


def test_config_round_trip(tmp_path):
    cfg = PipelineConfig(left_mask="/a.pgm", right_mask="/b.pgm", calibration="/c.json", output_dir="/o",
                         tips={"left": TipSeed((1.0, 2.0), 5.0), "right": TipSeed((3.0, 4.0), 6.0)},
                         tuning_grid=(2, 3, 4), reserve_length=40.0)
    cfg.save(tmp_path / "c.json")
    again = load_config(tmp_path / "c.json")
    assert again.to_dict() == cfg.to_dict()


def test_relative_paths_resolve_against_the_config(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"paths": {"left_mask": "l.pgm"}}))
    assert load_config(tmp_path / "c.json").left_mask == str(tmp_path / "l.pgm")


def test_overrides():
    raw = apply_overrides({"search": {"eps1": 2.0}},
                          ["search.eps2=0.2", "tips.left.radius=8", "stereo.refine=false"])
    assert raw == {"search": {"eps1": 2.0, "eps2": 0.2}, "tips": {"left": {"radius": 8}},
                   "stereo": {"refine": False}}


@pytest.mark.parametrize("item", ["eps2=0.2", "bogus.key=1", "search"])
def test_malformed_overrides(item):
    with pytest.raises(ConfigError):
        apply_overrides({}, [item])


@pytest.mark.parametrize("raw", [{"extra": {}}, {"search": {"eps9": 1}}, {"tips": {"middle": {}}},
                                 {"tips": {"left": {"center": [1, 2]}}},
                                 {"tuning": {"grid": [1, 0, 1]}}, {"grasp": {"reserve_length_mm": 0}}])
def test_bad_configs(raw):
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict(raw)


def test_config_file_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "nope.json")
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(ConfigError, match="JSON"):
        load_config(tmp_path / "bad.json")


def test_eps2_out_of_range_cites_r2(bundle):
    with pytest.raises(ParameterRangeError, match=r"R2 = \[0\.1, 0\.5\]"):
        load_config(bundle / "config.json", ["search.eps2=0.9"])


def test_missing_calibration_names_the_path(bundle, tmp_path):
    cfg = load_config(bundle / "config.json",
                      [f"paths.calibration={json.dumps(str(tmp_path / 'gone.json'))}"])
    with pytest.raises(ConfigError, match="gone.json"):
        run_pipeline(cfg)


def test_missing_tip_seed(bundle):
    cfg = load_config(bundle / "config.json")
    cfg.tips.pop("right")
    with pytest.raises(ConfigError, match="right"):
        cfg.check_paths()


# --------------------------------------------------------------------------
# runs


def _run(bundle, out, *overrides):
    cfg = load_config(bundle / "config.json",
                      [f"paths.output_dir={json.dumps(str(out))}", *overrides])
    return run_pipeline(cfg)


def test_pipeline_writes_every_artifact_identically(bundle, tmp_path):
    a = _run(bundle, tmp_path / "a")
    _run(bundle, tmp_path / "b")
    for name in ARTIFACTS.values():
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    rep = json.loads((tmp_path / "a" / "report.json").read_text())
    assert rep["status"] == "ok"
    names = [s["name"] for s in rep["stages"]]
    assert names == ["load", "centerline_left", "tip_left", "trace_left", "centerline_right",
                     "tip_right", "trace_right", "reconstruct", "optimize", "grasp"]
    assert all(s["ms"] >= 0 for s in rep["stages"])
    assert rep["S_left"] == len(a.traces["left"]) and rep["omega1"] == len(a.dense)
    assert rep["omega2"] == len(a.shape.indices) and math.isfinite(rep["L_min"])


def test_straight_scene_grasp_matches_ground_truth(bundle, tmp_path):
    res = _run(bundle, tmp_path / "o")
    gt = Polyline3.from_csv(bundle / "curve3d.csv")
    truth = arc_length_point(gt, 50.0)
    assert np.linalg.norm(np.asarray(res.plan.gs_camera[:3]) - truth) <= 2.3


def test_failing_stage_is_reported_and_earlier_artifacts_kept(bundle, tmp_path):
    with pytest.raises(StageError) as info:
        _run(bundle, tmp_path / "f", "grasp.reserve_length_mm=500")
    assert info.value.stage == "grasp" and info.value.exit_code == 11
    rep = json.loads((tmp_path / "f" / "report.json").read_text())
    assert rep["status"] == "failed" and rep["failed_stage"] == "grasp"
    assert "ReserveExceedsCurveError" in rep["error"]
    assert (tmp_path / "f" / "optimized.csv").exists()
    assert not (tmp_path / "f" / "grasp.json").exists()


def test_missing_tip_fails_at_the_tip_stage(bundle, tmp_path):
    with pytest.raises(StageError) as info:
        _run(bundle, tmp_path / "t", "tips.left.center=[5, 5]", "tips.left.radius=2")
    assert info.value.stage == "tip_left"
    rep = json.loads((tmp_path / "t" / "report.json").read_text())
    assert rep["failed_stage"] == "tip_left"
    assert set(os.listdir(tmp_path / "t")) == {"report.json", "skeleton_left.pgm"}


def test_untuned_run_uses_the_configured_weights(bundle, tmp_path):
    res = _run(bundle, tmp_path / "u", "tuning.enabled=false", "search.eps2=0.2")
    assert res.params["left"].eps2 == 0.2 and res.params["right"].eps2 == 0.2


# --------------------------------------------------------------------------
# benchmark


def test_suite_layout():
    suite = default_suite(per_group=2)
    assert len(suite) == 10
    assert [s.group for s in suite[::2]] == ["straight", "curved", "self-intersecting",
                                             "crossed-by-distractor", "cluttered"]
    assert [s.spec.rng_seed for s in suite[:4]] == [0, 1, 1000, 1001]
    assert suite[-1].spec.n_distractors == 1


def test_empty_suite():
    with pytest.raises(PreconditionError):
        run_benchmark([])


def test_report_has_a_row_per_group_with_ten_errors(tmp_path):
    rep = run_benchmark(default_suite(per_group=1), workers=2)
    assert len(rep.rows) == 5
    for row in rep.rows:
        assert row.failed == 0
        assert len(row.key_errors) == 10
        assert row.ave == pytest.approx(np.mean(row.key_errors))
        assert row.max >= max(row.key_errors)
    rep.save_json(tmp_path / "b.json")
    rep.save_csv(tmp_path / "b.csv")
    lines = (tmp_path / "b.csv").read_text().splitlines()
    assert len(lines) == 6 and lines[0].startswith("group,e1,")
    assert len(rep.table().splitlines()) == 6


def test_scene_failures_are_recorded():
    bad = BenchmarkScene("huge", SceneSpec(length_mm=5000))
    rep = run_benchmark([bad] + default_suite(per_group=1)[:1])
    assert rep.scenes[0].failed_stage == "generate" and not rep.scenes[0].ok
    assert rep.scenes[1].ok
    assert rep.rows[0].failed == 1 and math.isnan(rep.rows[0].ave)


def test_worker_count_does_not_change_results():
    suite = default_suite(per_group=1, groups=(("curved", "curved", 0), ("cl", "curved", 1)))
    a = run_benchmark(suite, workers=1)
    b = run_benchmark(suite, workers=3)
    assert [s.key_errors for s in a.scenes] == [s.key_errors for s in b.scenes]


@pytest.mark.parametrize("kind", ["straight", "curved"])
def test_clean_thin_scenes_stay_within_the_quantization_bound(kind):
    for seed in range(3):
        scene = BenchmarkScene(kind, SceneSpec(rng_seed=seed, curve_kind=kind, thickness_px=1.0))
        r = run_scene(0, scene, PipelineConfig())
        assert r.ok, r.error
        _, _, gt = generate_scene(scene.spec)
        zmax = float(gt.curve3d.vertices[:, 2].max())
        bound = quantization_bound(zmax, scene.spec.rig, 1.0)
        assert max(r.key_errors) <= bound


def test_key_points_are_evenly_spaced():
    c = Polyline3([[0, 0, 1], [9, 0, 1], [9, 9, 1]])
    kp = key_points(c)
    assert len(kp) == 10
    assert kp[0] == pytest.approx([0, 0, 1]) and kp[-1] == pytest.approx([9, 9, 1])
    assert kp[5] == pytest.approx([9, 1, 1])


def test_point_to_polyline_distance():
    v = np.array([[0, 0, 0], [10, 0, 0], [10, 10, 0.0]])
    d = point_polyline_distance([[5, 3, 0], [13, 5, 0], [-3, -4, 0], [10, 0, 2]], v)
    assert d == pytest.approx([3, 3, 5, 2])
