"""End-to-end orchestration: stereo masks in, grasp plan out.

``PipelineConfig`` is a JSON document with one section per stage. ``process``
runs the stages on in-memory masks and ``run_pipeline`` wraps it with file
I/O, writing every intermediate artifact plus ``report.json``. The benchmark
runs synthetic scenes through ``process`` and scores the optimised curve
against the ground truth.
"""
from __future__ import annotations

import csv
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import kernels
from .errors import ConfigError, PreconditionError, SutureGraspError
from .grasp import DEFAULT_RESERVE_MM, GraspPlan, RigidTransform, arc_length_point, plan_grasp
from .masks import (Mask, TipSeed, extract_centerline, load_mask, locate_tip,
                    preprocess_mask, save_mask)
from .sequence import SearchParams, trace_sequence, tune_parameters
from .shape import GraphParams, ShapeResult, optimize_shape
from .stereo import MAX_ROW_DISCREPANCY, Polyline3, StereoRig, reconstruct_curve
from .synthetic import SceneSpec, generate_scene

FRAMES = ("left", "right")
KEY_POINTS = 10
DEFAULT_TIP_RADIUS = 6.0

SECTIONS = ("paths", "search", "graph", "grasp", "tuning", "tips", "preprocess", "stereo")


@dataclass
class PipelineConfig:
    left_mask: str | None = None
    right_mask: str | None = None
    calibration: str | None = None
    transform: str | None = None
    output_dir: str = "out"
    search: SearchParams = field(default_factory=SearchParams)
    graph: GraphParams = field(default_factory=GraphParams)
    reserve_length: float = DEFAULT_RESERVE_MM
    tune: bool = True
    tuning_grid: tuple = (5, 5, 5)
    workers: int = 1
    tips: dict = field(default_factory=dict)
    min_component: int = 10
    closing: int = 3
    refine_stereo: bool = True
    smooth: int = 15
    median: int = 61
    average: int = 61
    max_row_discrepancy: float = MAX_ROW_DISCREPANCY

    def __post_init__(self):
        if not self.reserve_length > 0:
            raise ConfigError(f"reserve_length_mm must be positive, got {self.reserve_length}")
        grid = tuple(int(n) for n in self.tuning_grid)
        if len(grid) != 3 or min(grid) < 1:
            raise ConfigError(f"tuning grid needs three counts >= 1, got {self.tuning_grid}")
        self.tuning_grid = grid
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        for name in ("smooth", "median", "average"):
            if getattr(self, name) < 1:
                raise ConfigError(f"stereo.{name} must be >= 1")
        for frame, seed in self.tips.items():
            if frame not in FRAMES or not isinstance(seed, TipSeed):
                raise ConfigError(f"bad tip seed entry {frame!r}")

    # -- serialisation ----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "paths": {"left_mask": self.left_mask, "right_mask": self.right_mask,
                      "calibration": self.calibration, "transform": self.transform,
                      "output_dir": self.output_dir},
            "search": asdict(self.search),
            "graph": asdict(self.graph),
            "grasp": {"reserve_length_mm": self.reserve_length},
            "tuning": {"enabled": self.tune, "grid": list(self.tuning_grid),
                       "workers": self.workers},
            "tips": {f: {"center": list(s.center), "radius": s.radius}
                     for f, s in sorted(self.tips.items())},
            "preprocess": {"min_component_px": self.min_component,
                           "closing_px": self.closing},
            "stereo": {"refine": self.refine_stereo, "smooth": self.smooth,
                       "median": self.median, "average": self.average,
                       "max_row_discrepancy": self.max_row_discrepancy},
        }

    @classmethod
    def from_dict(cls, d: dict, base_dir: str | None = None) -> "PipelineConfig":
        """Build a config from its JSON form. Relative paths are resolved
        against ``base_dir`` when given."""
        unknown = set(d) - set(SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        sec = {name: dict(d.get(name) or {}) for name in SECTIONS}

        def take(section, keys):
            extra = set(sec[section]) - set(keys)
            if extra:
                raise ConfigError(f"unknown keys in [{section}]: {sorted(extra)}")
            return sec[section]

        paths = take("paths", ("left_mask", "right_mask", "calibration", "transform", "output_dir"))
        if base_dir is not None:
            paths = {k: (v if v is None or os.path.isabs(v) else os.path.join(base_dir, v))
                     for k, v in paths.items()}
        search = take("search", [f.name for f in fields(SearchParams)])
        graph = take("graph", [f.name for f in fields(GraphParams)])
        grasp = take("grasp", ("reserve_length_mm",))
        tuning = take("tuning", ("enabled", "grid", "workers"))
        pre = take("preprocess", ("min_component_px", "closing_px"))
        st = take("stereo", ("refine", "smooth", "median", "average",
                                   "max_row_discrepancy"))
        tips = {}
        for frame, t in sec["tips"].items():
            if frame not in FRAMES:
                raise ConfigError(f"tip seeds are keyed by 'left'/'right', got {frame!r}")
            try:
                tips[frame] = TipSeed(tuple(float(x) for x in t["center"]), float(t["radius"]))
            except (KeyError, TypeError, ValueError) as exc:
                raise ConfigError(f"bad tip seed for {frame}: {exc}") from None
        try:
            search_p = SearchParams(**search)
            graph_p = GraphParams(**graph)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        return cls(
            left_mask=paths.get("left_mask"), right_mask=paths.get("right_mask"),
            calibration=paths.get("calibration"), transform=paths.get("transform"),
            output_dir=paths.get("output_dir") or "out",
            search=search_p, graph=graph_p,
            reserve_length=float(grasp.get("reserve_length_mm", DEFAULT_RESERVE_MM)),
            tune=bool(tuning.get("enabled", True)),
            tuning_grid=tuple(tuning.get("grid", (5, 5, 5))),
            workers=int(tuning.get("workers", 1)),
            tips=tips,
            min_component=int(pre.get("min_component_px", 10)),
            closing=int(pre.get("closing_px", 3)),
            refine_stereo=bool(st.get("refine", True)),
            smooth=int(st.get("smooth", 15)),
            median=int(st.get("median", 61)),
            average=int(st.get("average", 61)),
            max_row_discrepancy=float(st.get("max_row_discrepancy", MAX_ROW_DISCREPANCY)),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    def check_paths(self) -> None:
        """Raise ConfigError naming the first required file that is missing."""
        required = [("paths.left_mask", self.left_mask), ("paths.right_mask", self.right_mask),
                    ("paths.calibration", self.calibration)]
        for key, p in required:
            if not p:
                raise ConfigError(f"{key} is not set")
        if self.transform:
            required.append(("paths.transform", self.transform))
        for key, p in required:
            if not os.path.isfile(p):
                raise ConfigError(f"{key}: file not found: {p}")
        missing = [f for f in FRAMES if f not in self.tips]
        if missing:
            raise ConfigError(f"no tip seed for frame(s) {missing}")


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(raw: dict, overrides) -> dict:
    """Apply ``section.key=value`` (or ``tips.left.radius=8``) overrides to a
    raw config dict. Values are parsed as JSON when possible."""
    out = json.loads(json.dumps(raw))
    for item in overrides or ():
        key, sep, value = item.partition("=")
        parts = key.strip().split(".")
        if not sep or len(parts) < 2 or parts[0] not in SECTIONS:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        node = out
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"cannot override inside non-section {key!r}")
        node[parts[-1]] = _parse_value(value.strip())
    return out


def load_config(path, overrides=()) -> PipelineConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config root must be an object")
    base = os.path.dirname(os.path.abspath(path))
    return PipelineConfig.from_dict(apply_overrides(raw, overrides), base)


# --------------------------------------------------------------------------
# running


class StageError(SutureGraspError):
    """A stage failed; ``cause`` is the original error and sets the exit code."""

    def __init__(self, stage: str, cause: Exception, result=None):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.result = result
        self.exit_code = getattr(cause, "exit_code", 1)


@dataclass
class PipelineResult:
    zones: dict = field(default_factory=dict)
    skeletons: dict = field(default_factory=dict)
    tips: dict = field(default_factory=dict)
    traces: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    dense: Polyline3 | None = None
    shape: ShapeResult | None = None
    plan: GraspPlan | None = None
    timings: list = field(default_factory=list)
    failed_stage: str | None = None
    error: str | None = None

    def report(self) -> dict:
        r = {
            "status": "failed" if self.failed_stage else "ok",
            "backend": kernels.BACKEND,
            "stages": [{"name": n, "ms": round(ms, 3)} for n, ms in self.timings],
            "total_ms": round(sum(ms for _, ms in self.timings), 3),
        }
        if self.failed_stage:
            r["failed_stage"] = self.failed_stage
            r["error"] = self.error
        for f in FRAMES:
            if f in self.traces:
                r[f"S_{f}"] = len(self.traces[f])
            if f in self.params:
                r[f"eps_{f}"] = list(self.params[f].eps)
        if self.dense is not None:
            r["omega1"] = len(self.dense)
        if self.shape is not None:
            r["omega2"] = len(self.shape.indices)
            r["L_min"] = self.shape.cost
            r["tau_L_final"] = self.shape.tau_L
            r["tau_L_retries"] = self.shape.retries
            r["optimized_length_mm"] = self.shape.length
        if self.plan is not None:
            r["grasp"] = self.plan.to_dict()
        return r


def process(mask_l: Mask, mask_r: Mask, rig: StereoRig, T: RigidTransform,
            cfg: PipelineConfig, sink=None) -> PipelineResult:
    """Run every stage on in-memory masks.

    ``sink(stage, result)`` is called after each stage, e.g. to write
    artifacts. A failing stage is recorded on the result and re-raised as
    StageError.
    """
    res = PipelineResult()
    masks = {"left": mask_l, "right": mask_r}
    missing = [f for f in FRAMES if f not in cfg.tips]
    if missing:
        raise ConfigError(f"no tip seed for frame(s) {missing}")

    def stage(name, fn):
        t0 = time.perf_counter()
        try:
            fn()
        except Exception as exc:
            res.timings.append((name, (time.perf_counter() - t0) * 1e3))
            res.failed_stage = name
            res.error = f"{type(exc).__name__}: {exc}"
            raise StageError(name, exc, res) from exc
        res.timings.append((name, (time.perf_counter() - t0) * 1e3))
        if sink is not None:
            sink(name, res)

    for f in FRAMES:
        def centerline(f=f):
            res.zones[f] = preprocess_mask(masks[f], cfg.min_component, cfg.closing)
            res.skeletons[f] = extract_centerline(res.zones[f])

        def tip(f=f):
            res.tips[f] = locate_tip(res.skeletons[f], cfg.tips[f])

        def trace(f=f):
            sk, zone = res.skeletons[f], res.zones[f]
            if cfg.tune:
                p, c = tune_parameters(sk, zone, res.tips[f], cfg.search, cfg.tuning_grid,
                                       frame=f, workers=cfg.workers)
            else:
                p, c = cfg.search, trace_sequence(sk, zone, res.tips[f], cfg.search, frame=f)
            res.params[f], res.traces[f] = p, c

        stage(f"centerline_{f}", centerline)
        stage(f"tip_{f}", tip)
        stage(f"trace_{f}", trace)

    def reconstruct():
        res.dense = reconstruct_curve(res.traces["left"], res.traces["right"], rig,
                                      cfg.max_row_discrepancy, refine=cfg.refine_stereo,
                                      smooth=cfg.smooth, median=cfg.median,
                                      average=cfg.average)

    def optimize():
        res.shape = optimize_shape(res.dense, cfg.graph)

    def grasp():
        res.plan = plan_grasp(res.shape.polyline, cfg.reserve_length, T)

    stage("reconstruct", reconstruct)
    stage("optimize", optimize)
    stage("grasp", grasp)
    return res


ARTIFACTS = {
    "centerline_left": "skeleton_left.pgm",
    "centerline_right": "skeleton_right.pgm",
    "trace_left": "trace_left.json",
    "trace_right": "trace_right.json",
    "reconstruct": "dense.csv",
    "optimize": "optimized.csv",
    "grasp": "grasp.json",
}


def _artifact_writer(out_dir):
    written = []

    def sink(stage, res: PipelineResult):
        name = ARTIFACTS.get(stage)
        if name is None:
            return
        path = os.path.join(out_dir, name)
        if stage.startswith("centerline_"):
            save_mask(res.skeletons[stage.split("_")[1]].as_mask(), path)
        elif stage.startswith("trace_"):
            res.traces[stage.split("_")[1]].save(path)
        elif stage == "reconstruct":
            res.dense.to_csv(path)
        elif stage == "optimize":
            res.shape.polyline.to_csv(path)
        elif stage == "grasp":
            res.plan.save(path)
        written.append(path)

    return sink, written


def run_pipeline(cfg: PipelineConfig) -> PipelineResult:
    """Load inputs, run every stage and write artifacts plus ``report.json``
    to ``cfg.output_dir``. Artifacts of completed stages are kept when a
    later stage fails; the report then names the failing stage."""
    cfg.check_paths()
    os.makedirs(cfg.output_dir, exist_ok=True)
    t0 = time.perf_counter()
    mask_l = load_mask(cfg.left_mask)
    mask_r = load_mask(cfg.right_mask)
    rig = StereoRig.load(cfg.calibration)
    T = RigidTransform.load(cfg.transform) if cfg.transform else RigidTransform.identity()
    load_ms = (time.perf_counter() - t0) * 1e3
    sink, _ = _artifact_writer(cfg.output_dir)
    report_path = os.path.join(cfg.output_dir, "report.json")
    try:
        res = process(mask_l, mask_r, rig, T, cfg, sink)
    except StageError as exc:
        _write_report(report_path, exc.result, load_ms)
        raise
    _write_report(report_path, res, load_ms)
    return res


def _write_report(path, res: PipelineResult, load_ms: float) -> None:
    rep = res.report()
    rep["stages"].insert(0, {"name": "load", "ms": round(load_ms, 3)})
    rep["total_ms"] = round(rep["total_ms"] + load_ms, 3)
    with open(path, "w") as fh:
        json.dump(rep, fh, indent=2)


# --------------------------------------------------------------------------
# benchmark

# (group name, curve kind, extra distractors)
BENCHMARK_GROUPS = (
    ("straight", "straight", 0),
    ("curved", "curved", 0),
    ("self-intersecting", "self-intersecting", 0),
    ("crossed-by-distractor", "crossed-by-distractor", 0),
    ("cluttered", "curved", 1),
)


@dataclass(frozen=True)
class BenchmarkScene:
    group: str
    spec: SceneSpec


def default_suite(per_group: int = 8, noise: float = 0.005, thickness: float = 3.0,
                  seed: int = 0, groups=BENCHMARK_GROUPS, **spec_kw) -> list:
    """``per_group`` scenes for each group; group ``g`` uses seeds
    ``seed + 1000 g + i``."""
    out = []
    for g, (name, kind, n_dis) in enumerate(groups):
        for i in range(per_group):
            spec = SceneSpec(rng_seed=seed + 1000 * g + i, curve_kind=kind, noise=noise,
                             thickness_px=thickness, n_distractors=n_dis, **spec_kw)
            out.append(BenchmarkScene(name, spec))
    return out


def point_polyline_distance(points, vertices) -> np.ndarray:
    """Exact Euclidean distance from each point to a 3D polyline."""
    p = np.atleast_2d(np.asarray(points, dtype=np.float64))
    v = np.asarray(vertices, dtype=np.float64)
    if len(v) == 1:
        return np.linalg.norm(p - v[0], axis=1)
    a, b = v[:-1], v[1:]
    ab = b - a
    den = np.einsum("ij,ij->i", ab, ab)
    rel = p[:, None, :] - a[None, :, :]
    with np.errstate(invalid="ignore", divide="ignore"):
        t = np.einsum("kij,ij->ki", rel, ab) / den
    t = np.clip(np.nan_to_num(t), 0.0, 1.0)
    closest = a[None] + t[..., None] * ab[None]
    return np.sqrt(((p[:, None, :] - closest) ** 2).sum(axis=2)).min(axis=1)


def key_points(curve: Polyline3, n: int = KEY_POINTS) -> np.ndarray:
    """``n`` points evenly spaced in arc length, both ends included."""
    L = curve.length
    return np.array([arc_length_point(curve, min(s, L)) for s in np.linspace(0.0, L, n)])


@dataclass
class SceneResult:
    index: int
    group: str
    seed: int
    key_errors: list = field(default_factory=list)
    grasp_error: float | None = None
    omega1: int | None = None
    omega2: int | None = None
    ms: float = 0.0
    failed_stage: str | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def run_scene(index: int, scene: BenchmarkScene, cfg: PipelineConfig) -> SceneResult:
    """Generate one scene, run the pipeline on it and score the result."""
    out = SceneResult(index, scene.group, scene.spec.rng_seed)
    t0 = time.perf_counter()
    try:
        mask_l, mask_r, gt = generate_scene(scene.spec)
        tips = {f: TipSeed(tuple(float(x) for x in tr.points[0]), DEFAULT_TIP_RADIUS)
                for f, tr in (("left", gt.trace_l), ("right", gt.trace_r))}
        run_cfg = _with_tips(cfg, tips)
        res = process(mask_l, mask_r, scene.spec.rig, RigidTransform.identity(), run_cfg)
        opt = res.shape.polyline
        out.key_errors = point_polyline_distance(key_points(opt), gt.curve3d.vertices).tolist()
        truth = arc_length_point(gt.curve3d, cfg.reserve_length)
        out.grasp_error = float(np.linalg.norm(np.asarray(res.plan.gs_camera[:3]) - truth))
        out.omega1, out.omega2 = len(res.dense), len(res.shape.indices)
    except StageError as exc:
        out.failed_stage = exc.stage
        out.error = f"{type(exc.cause).__name__}: {exc.cause}"
    except SutureGraspError as exc:
        out.failed_stage = "generate"
        out.error = f"{type(exc).__name__}: {exc}"
    out.ms = (time.perf_counter() - t0) * 1e3
    return out


def _with_tips(cfg: PipelineConfig, tips: dict) -> PipelineConfig:
    d = cfg.to_dict()
    d["tips"] = {f: {"center": list(s.center), "radius": s.radius} for f, s in tips.items()}
    return PipelineConfig.from_dict(d)


@dataclass
class GroupRow:
    group: str
    scenes: int
    failed: int
    key_errors: list
    ave: float
    max: float
    grasp_ave: float
    grasp_max: float


@dataclass
class BenchmarkReport:
    scenes: list
    rows: list
    total_ms: float

    def to_dict(self) -> dict:
        return {"backend": kernels.BACKEND, "total_ms": round(self.total_ms, 3),
                "groups": [asdict(r) for r in self.rows],
                "scenes": [asdict(s) for s in self.scenes]}

    def save_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    def save_csv(self, path) -> None:
        n = max((len(r.key_errors) for r in self.rows), default=KEY_POINTS)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["group", *[f"e{k + 1}" for k in range(n)], "ave", "max",
                        "grasp_ave", "grasp_max", "scenes", "failed"])
            for r in self.rows:
                w.writerow([r.group, *[f"{e:.4f}" for e in r.key_errors],
                            f"{r.ave:.4f}", f"{r.max:.4f}", f"{r.grasp_ave:.4f}",
                            f"{r.grasp_max:.4f}", r.scenes, r.failed])

    def table(self) -> str:
        """Plain-text table: per-key-point mean error, ave and max in mm."""
        n = max((len(r.key_errors) for r in self.rows), default=KEY_POINTS)
        head = f"{'group':<22}" + "".join(f"{k + 1:>6}" for k in range(n))
        head += f"{'ave':>7}{'max':>7}{'grasp':>7}{'gmax':>7}  fail"
        lines = [head]
        for r in self.rows:
            cells = "".join(f"{e:6.2f}" for e in r.key_errors) or " " * 6 * n
            lines.append(f"{r.group:<22}{cells}{r.ave:7.2f}{r.max:7.2f}"
                         f"{r.grasp_ave:7.2f}{r.grasp_max:7.2f}  {r.failed}/{r.scenes}")
        return "\n".join(lines)


def _summarise(group: str, results: list) -> GroupRow:
    ok = [s for s in results if s.ok]
    if not ok:
        nan = float("nan")
        return GroupRow(group, len(results), len(results), [], nan, nan, nan, nan)
    E = np.array([s.key_errors for s in ok])
    G = np.array([s.grasp_error for s in ok])
    return GroupRow(group, len(results), len(results) - len(ok), E.mean(axis=0).tolist(),
                    float(E.mean()), float(E.max()), float(G.mean()), float(G.max()))


def run_benchmark(suite, cfg: PipelineConfig | None = None, workers: int = 1) -> BenchmarkReport:
    """Run every scene and tabulate key-point and grasp errors per group.

    Scene failures are recorded and the suite continues; rows and scene
    entries keep suite order whatever the worker count.
    """
    suite = list(suite)
    if not suite:
        raise PreconditionError("benchmark suite is empty")
    cfg = cfg or PipelineConfig()
    t0 = time.perf_counter()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda a: run_scene(a[0], a[1], cfg), enumerate(suite)))
    else:
        results = [run_scene(k, s, cfg) for k, s in enumerate(suite)]
    groups = list(dict.fromkeys(s.group for s in suite))
    rows = [_summarise(g, [r for r in results if r.group == g]) for g in groups]
    return BenchmarkReport(results, rows, (time.perf_counter() - t0) * 1e3)
