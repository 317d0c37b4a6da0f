"""Synthetic stereo suture scenes with exact ground truth.

All randomness comes from a SplitMix64 stream so a (spec, seed) pair gives
the same scene on every platform.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import FrustumError, SceneSpecError, ShapeMismatchError
from .masks import Mask, load_mask, save_mask
from .sequence import PixelCurve
from .stereo import Polyline3, StereoRig

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
KINDS = ("straight", "curved", "self-intersecting", "crossed-by-distractor")


def mix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


class SplitMix64:
    """SplitMix64: ``x_i = mix64(seed + i * GAMMA)`` for i = 1, 2, ..."""

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GAMMA) & MASK64
        return mix64(self.state)

    def random(self) -> float:
        """Uniform double in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform(self, a: float, b: float) -> float:
        return a + (b - a) * self.random()

    def randint(self, n: int) -> int:
        return int(self.random() * n)

    def block(self, count: int) -> np.ndarray:
        """Next ``count`` uniforms in [0, 1), vectorised, advancing the stream."""
        k = np.arange(1, count + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + k * np.uint64(GAMMA)
            z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
            z = z ^ (z >> np.uint64(31))
        self.state = (self.state + count * GAMMA) & MASK64
        return (z >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))


def substream(seed: int, tag: int) -> SplitMix64:
    return SplitMix64(mix64(seed + tag * GAMMA))


DEFAULT_RIG = StereoRig(800.0, 800.0, 320.0, 240.0, 5.0)


@dataclass(frozen=True)
class SceneSpec:
    rng_seed: int = 0
    curve_kind: str = "curved"
    length_mm: float = 80.0
    thickness_px: float = 3.0
    noise: float = 0.0
    n_distractors: int = 0
    rig: StereoRig = DEFAULT_RIG
    workspace: tuple = ((-45.0, 45.0), (-35.0, 35.0), (80.0, 120.0))
    width: int = 640
    height: int = 480

    def __post_init__(self):
        if self.curve_kind not in KINDS:
            raise SceneSpecError(f"unknown curve kind {self.curve_kind!r}; expected one of {KINDS}")
        if not self.thickness_px >= 1:
            raise SceneSpecError("thickness_px must be >= 1")
        if not 0 <= self.noise < 1:
            raise SceneSpecError("noise must lie in [0, 1)")
        if self.n_distractors < 0:
            raise SceneSpecError("n_distractors must be >= 0")
        if not self.length_mm > 0:
            raise SceneSpecError("length_mm must be positive")
        ws = tuple(tuple(float(x) for x in ax) for ax in self.workspace)
        if len(ws) != 3 or any(len(ax) != 2 or ax[0] >= ax[1] for ax in ws):
            raise SceneSpecError("workspace must be three (min, max) intervals")
        if ws[2][0] <= 0:
            raise SceneSpecError("workspace must lie in front of the cameras (Z > 0)")
        object.__setattr__(self, "workspace", ws)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["rig"] = self.rig.to_dict()
        d["workspace"] = [list(ax) for ax in self.workspace]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        if "rig" in d and isinstance(d["rig"], dict):
            d["rig"] = StereoRig.from_dict(d["rig"])
        if "workspace" in d:
            d["workspace"] = tuple(tuple(ax) for ax in d["workspace"])
        return cls(**d)


@dataclass
class GroundTruth:
    curve3d: Polyline3
    trace_l: PixelCurve
    trace_r: PixelCurve
    label_mask_l: Mask
    label_mask_r: Mask
    tip3d: tuple
    distractors3d: list = field(default_factory=list)
    distractor_mask_l: Mask | None = None
    distractor_mask_r: Mask | None = None


# --------------------------------------------------------------------------
# curves


def catmull_rom(ctrl, samples_per_segment: int = 40) -> np.ndarray:
    """Centripetal-free (uniform) Catmull-Rom through every control point."""
    p = np.asarray(ctrl, dtype=np.float64)
    if len(p) < 3:
        return p.copy()
    ext = np.vstack([2 * p[0] - p[1], p, 2 * p[-1] - p[-2]])
    t = np.linspace(0.0, 1.0, samples_per_segment, endpoint=False)[:, None]
    t2, t3 = t * t, t * t * t
    out = []
    for i in range(1, len(ext) - 2):
        p0, p1, p2, p3 = ext[i - 1], ext[i], ext[i + 1], ext[i + 2]
        out.append(0.5 * (2 * p1 + (-p0 + p2) * t + (2 * p0 - 5 * p1 + 4 * p2 - p3) * t2
                          + (-p0 + 3 * p1 - 3 * p2 + p3) * t3))
    out.append(p[-1:])
    return np.vstack(out)


def _lift(xy, rng: SplitMix64, z0: float, tilt: float = 0.08) -> np.ndarray:
    gx = rng.uniform(-tilt, tilt)
    gy = rng.uniform(-tilt, tilt)
    z = z0 + gx * xy[:, 0] + gy * xy[:, 1]
    return np.column_stack([xy, z])


def _rotate(xy, angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return xy @ np.array([[c, s], [-s, c]])


def _scale_to_length(p: np.ndarray, length: float) -> np.ndarray:
    cur = float(np.linalg.norm(np.diff(p, axis=0), axis=1).sum())
    c = p.mean(axis=0)
    return c + (p - c) * (length / cur)


def _place(p: np.ndarray, rng: SplitMix64, spec: SceneSpec) -> np.ndarray:
    """Translate the curve to a random position whose bounding box fits the workspace."""
    lo = np.array([ax[0] for ax in spec.workspace])
    hi = np.array([ax[1] for ax in spec.workspace])
    pmin, pmax = p.min(axis=0), p.max(axis=0)
    free_lo = lo - pmin
    free_hi = hi - pmax
    if np.any(free_lo > free_hi):
        raise SceneSpecError("workspace too small for the requested curve")
    shift = np.array([rng.uniform(a, b) for a, b in zip(free_lo, free_hi)])
    return p + shift


def _polyline_fits(p: np.ndarray, spec: SceneSpec, margin: float) -> bool:
    lo = np.array([ax[0] for ax in spec.workspace])
    hi = np.array([ax[1] for ax in spec.workspace])
    if np.any(p < lo - 1e-9) or np.any(p > hi + 1e-9):
        return False
    for uv in spec.rig.project(p):
        if (uv[:, 0].min() < margin or uv[:, 1].min() < margin
                or uv[:, 0].max() > spec.width - 1 - margin
                or uv[:, 1].max() > spec.height - 1 - margin):
            return False
    return True


def _random_walk_xy(rng: SplitMix64, length: float, n_ctrl: int = 6,
                    max_turn: float = 0.7) -> np.ndarray:
    heading = rng.uniform(0.0, 2 * math.pi)
    step = length / (n_ctrl - 1)
    pts = [np.zeros(2)]
    for _ in range(n_ctrl - 1):
        heading += rng.uniform(-max_turn, max_turn)
        pts.append(pts[-1] + step * np.array([math.cos(heading), math.sin(heading)]))
    return catmull_rom(np.array(pts))


def _loop_xy(rng: SplitMix64) -> tuple[np.ndarray, float]:
    """Prolate-cycloid arc with one self-intersection; returns (xy, t_cross)."""
    ratio = rng.uniform(1.7, 2.3)
    # crossing parameter solves t = ratio * sin(t) on (0, pi)
    t1 = 2.0
    for _ in range(60):
        t1 -= (t1 - ratio * math.sin(t1)) / (1 - ratio * math.cos(t1))
    span = rng.uniform(t1 + 0.9, t1 + 1.6)
    t = np.linspace(-span, span, 17)
    xy = np.column_stack([t - ratio * np.sin(t), -ratio * np.cos(t)])
    dense = catmull_rom(xy)
    return dense, t1


def _bump_second_pass(p: np.ndarray, height: float = 1.0) -> np.ndarray:
    """Raise the later half of a loop towards the camera so the strands do not
    meet in 3D at the image crossing."""
    n = len(p)
    w = np.clip((np.arange(n) - 0.5 * n) / (0.1 * n), 0.0, 1.0)
    w = w * (1 - np.clip((np.arange(n) - 0.85 * n) / (0.1 * n), 0.0, 1.0))
    out = p.copy()
    out[:, 2] -= height * w
    return out


def _resample3(p: np.ndarray, spacing: float) -> np.ndarray:
    seg = np.linalg.norm(np.diff(p, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    n = max(2, int(math.ceil(cum[-1] / spacing)) + 1)
    s = np.linspace(0.0, cum[-1], n)
    return np.column_stack([np.interp(s, cum, p[:, k]) for k in range(3)])


def _straight(rng: SplitMix64, length: float, z0: float) -> np.ndarray:
    theta = rng.uniform(0.0, math.pi)
    phi = rng.uniform(-0.1, 0.1)
    d = np.array([math.cos(theta) * math.cos(phi), math.sin(theta) * math.cos(phi), math.sin(phi)])
    c = np.array([0.0, 0.0, z0])
    return np.vstack([c - 0.5 * length * d, c, c + 0.5 * length * d])


def _make_curve(rng: SplitMix64, kind: str, length: float, spec: SceneSpec) -> np.ndarray:
    zlo, zhi = spec.workspace[2]
    z0 = rng.uniform(zlo + 0.3 * (zhi - zlo), zhi - 0.3 * (zhi - zlo))
    if kind == "straight":
        return _straight(rng, length, z0)
    if kind == "self-intersecting":
        xy, _ = _loop_xy(rng)
        xy = _rotate(xy, rng.uniform(0.0, 2 * math.pi))
        p = _lift(xy, rng, 0.0, tilt=0.0)
        p = _scale_to_length(p, length)
        p[:, 2] += z0
        p = _bump_second_pass(p)
        tilted = _lift(p[:, :2] - p[:, :2].mean(axis=0), rng, 0.0)
        p[:, 2] += tilted[:, 2]
        return _scale_to_length(p, length)
    xy = _random_walk_xy(rng, length)
    p = _lift(xy - xy.mean(axis=0), rng, z0)
    return _scale_to_length(p, length)


def generate_curve3d(spec: SceneSpec, attempts: int = 200) -> Polyline3:
    """Suture centreline for ``spec``; identical output for identical specs."""
    rng = substream(spec.rng_seed, 1)
    margin = spec.thickness_px + 2
    for _ in range(attempts):
        kind = "curved" if spec.curve_kind == "crossed-by-distractor" else spec.curve_kind
        try:
            p = _place(_make_curve(rng, kind, spec.length_mm, spec), rng, spec)
        except SceneSpecError:
            continue
        if not _polyline_fits(p, spec, margin):
            continue
        if kind != "straight":
            if kind == "curved" and _has_crossing(spec, p):
                continue
            if kind == "self-intersecting" and not _has_crossing(spec, p, need_both=True):
                continue
            p = _resample3(p, 0.25)
        return Polyline3(p)
    raise SceneSpecError(
        f"could not fit a {spec.length_mm} mm {spec.curve_kind} curve in the workspace/image")


def _segments_cross(a, b, c, d) -> bool:
    def orient(p, q, r):
        return (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])
    o1, o2 = orient(a, b, c), orient(a, b, d)
    o3, o4 = orient(c, d, a), orient(c, d, b)
    return o1 * o2 < 0 and o3 * o4 < 0


def projected_crossings(uv: np.ndarray, min_gap: int = 2) -> list[tuple[int, int]]:
    """Brute-force proper intersections between non-adjacent segments of a 2D polyline."""
    out = []
    n = len(uv) - 1
    for i in range(n):
        for j in range(i + min_gap, n):
            if _segments_cross(uv[i], uv[i + 1], uv[j], uv[j + 1]):
                out.append((i, j))
    return out


def _has_crossing(spec: SceneSpec, p: np.ndarray, need_both: bool = False) -> bool:
    coarse = _resample3(p, 2.0)
    hits = [bool(projected_crossings(uv)) for uv in spec.rig.project(coarse)]
    return all(hits) if need_both else any(hits)


# --------------------------------------------------------------------------
# rendering


def _dense_projection(p: np.ndarray, rig: StereoRig, step_px: float = 0.25):
    """Densely resampled 3D curve so consecutive projections are <= step_px apart."""
    uvl, uvr = rig.project(p)
    seg_px = np.maximum(np.linalg.norm(np.diff(uvl, axis=0), axis=1),
                        np.linalg.norm(np.diff(uvr, axis=0), axis=1))
    reps = np.maximum(1, np.ceil(seg_px / step_px).astype(int))
    parts = []
    for i, k in enumerate(reps):
        t = np.arange(k)[:, None] / k
        parts.append(p[i] + t * (p[i + 1] - p[i]))
    parts.append(p[-1:])
    dense = np.vstack(parts)
    uvl, uvr = rig.project(dense)
    return dense, uvl, uvr


def _stamp(bits: np.ndarray, uv: np.ndarray, thickness: float) -> None:
    r = thickness / 2.0
    k = int(math.ceil(r))
    h, w = bits.shape
    offs = np.array([(du, dv) for dv in range(-k, k + 1) for du in range(-k, k + 1)])
    base = np.rint(uv).astype(np.int64)
    for du, dv in offs:
        cu = base[:, 0] + du
        cv = base[:, 1] + dv
        ok = ((cu - uv[:, 0]) ** 2 + (cv - uv[:, 1]) ** 2 <= r * r) | ((du == 0) & (dv == 0))
        ok &= (cu >= 0) & (cu < w) & (cv >= 0) & (cv < h)
        bits[cv[ok], cu[ok]] = True


def _pixel_trace(uv: np.ndarray) -> list[tuple[int, int]]:
    px = np.rint(uv).astype(np.int64)
    keep = np.ones(len(px), dtype=bool)
    keep[1:] = np.any(px[1:] != px[:-1], axis=1)
    return [tuple(q) for q in px[keep].tolist()]


def _distractor_curves(spec: SceneSpec, suture: np.ndarray) -> list[np.ndarray]:
    rng = substream(spec.rng_seed, 2)
    out = []
    margin = spec.thickness_px + 2
    n = spec.n_distractors
    if spec.curve_kind == "crossed-by-distractor":
        n = max(n, 1)
        cum = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(suture, axis=0), axis=1))])
        for _ in range(200):
            s = rng.uniform(0.3, 0.7) * cum[-1]
            i = int(np.searchsorted(cum, s))
            i = min(max(i, 1), len(suture) - 2)
            tangent = suture[i + 1, :2] - suture[i - 1, :2]
            ang = math.atan2(tangent[1], tangent[0])
            ang += (1 if rng.random() < 0.5 else -1) * rng.uniform(math.radians(60), math.radians(90))
            length = rng.uniform(0.4, 0.6) * spec.length_mm
            d = np.array([math.cos(ang), math.sin(ang), 0.0])
            off = rng.uniform(-0.3, 0.3) * length
            c = suture[i] + np.array([0.0, 0.0, -1.5])
            seg = np.vstack([c + (off - length / 2) * d, c + (off + length / 2) * d])
            seg = _resample3(seg, 0.5)
            if _polyline_fits(seg, spec, margin):
                out.append(seg)
                break
    while len(out) < n:
        for _ in range(200):
            zlo, zhi = spec.workspace[2]
            z0 = rng.uniform(zlo + 0.3 * (zhi - zlo), zhi - 0.3 * (zhi - zlo))
            length = rng.uniform(0.3, 0.6) * spec.length_mm
            xy = _random_walk_xy(rng, length, n_ctrl=4, max_turn=0.5)
            p = _lift(xy - xy.mean(axis=0), rng, z0)
            try:
                p = _place(_scale_to_length(p, length), rng, spec)
            except SceneSpecError:
                continue
            if _polyline_fits(p, spec, margin):
                out.append(_resample3(p, 0.5))
                break
        else:
            raise SceneSpecError("could not place distractor curves in the workspace")
    return out


def render_stereo(curve: Polyline3, spec: SceneSpec):
    """Rasterise the curve (and distractors) into left/right masks.

    Returns ``(mask_left, mask_right, GroundTruth)``.
    """
    p = curve.vertices
    if np.any(p[:, 2] <= 0):
        raise FrustumError("curve has vertices behind the cameras")
    rig = spec.rig
    dense, uvl, uvr = _dense_projection(p, rig)
    shape = (spec.height, spec.width)
    label_l = np.zeros(shape, dtype=bool)
    label_r = np.zeros(shape, dtype=bool)
    _stamp(label_l, uvl, spec.thickness_px)
    _stamp(label_r, uvr, spec.thickness_px)
    for uv in (uvl, uvr):
        if (uv[:, 0].min() < -0.5 or uv[:, 1].min() < -0.5
                or uv[:, 0].max() > spec.width - 0.5 or uv[:, 1].max() > spec.height - 0.5):
            raise FrustumError("curve projects outside the image")

    distractors = _distractor_curves(spec, p)
    dis_l = np.zeros(shape, dtype=bool)
    dis_r = np.zeros(shape, dtype=bool)
    for d in distractors:
        _, dl, dr = _dense_projection(d, rig)
        _stamp(dis_l, dl, spec.thickness_px)
        _stamp(dis_r, dr, spec.thickness_px)

    out_l = label_l | dis_l
    out_r = label_r | dis_r
    if spec.noise > 0:
        rng = substream(spec.rng_seed, 3)
        out_l ^= (rng.block(out_l.size) < spec.noise).reshape(shape)
        out_r ^= (rng.block(out_r.size) < spec.noise).reshape(shape)

    gt = GroundTruth(
        curve3d=curve,
        trace_l=PixelCurve(tuple(_pixel_trace(uvl)), "left"),
        trace_r=PixelCurve(tuple(_pixel_trace(uvr)), "right"),
        label_mask_l=Mask(label_l),
        label_mask_r=Mask(label_r),
        tip3d=tuple(float(x) for x in p[0]),
        distractors3d=[Polyline3(d) for d in distractors],
        distractor_mask_l=Mask(dis_l),
        distractor_mask_r=Mask(dis_r),
    )
    return Mask(out_l), Mask(out_r), gt


def generate_scene(spec: SceneSpec):
    """``generate_curve3d`` followed by ``render_stereo``."""
    return render_stereo(generate_curve3d(spec), spec)


# --------------------------------------------------------------------------
# metrics


def compare_masks(pred: Mask, truth: Mask) -> tuple[float, float, float, float]:
    """(IoU, precision, recall, F1) of ``pred`` against ``truth``.

    Both empty scores 1 everywhere; exactly one empty scores 0 everywhere.
    """
    if pred.bits.shape != truth.bits.shape:
        raise ShapeMismatchError(f"mask shapes differ: {pred.bits.shape} vs {truth.bits.shape}")
    p = int(pred.bits.sum())
    t = int(truth.bits.sum())
    if p == 0 and t == 0:
        return 1.0, 1.0, 1.0, 1.0
    if p == 0 or t == 0:
        return 0.0, 0.0, 0.0, 0.0
    inter = int(np.count_nonzero(pred.bits & truth.bits))
    iou = inter / (p + t - inter)
    pre = inter / p
    rec = inter / t
    f1 = 2 * pre * rec / (pre + rec) if pre + rec > 0 else 0.0
    return iou, pre, rec, f1


# --------------------------------------------------------------------------
# bundle I/O


def write_bundle(out_dir, spec: SceneSpec, mask_l: Mask, mask_r: Mask, gt: GroundTruth) -> None:
    os.makedirs(out_dir, exist_ok=True)
    j = os.path.join
    save_mask(mask_l, j(out_dir, "mask_left.pgm"))
    save_mask(mask_r, j(out_dir, "mask_right.pgm"))
    save_mask(gt.label_mask_l, j(out_dir, "label_left.pgm"))
    save_mask(gt.label_mask_r, j(out_dir, "label_right.pgm"))
    if gt.distractor_mask_l is not None:
        save_mask(gt.distractor_mask_l, j(out_dir, "distractor_left.pgm"))
        save_mask(gt.distractor_mask_r, j(out_dir, "distractor_right.pgm"))
    gt.trace_l.save(j(out_dir, "trace_left_gt.json"))
    gt.trace_r.save(j(out_dir, "trace_right_gt.json"))
    gt.curve3d.to_csv(j(out_dir, "curve3d.csv"))
    spec.rig.save(j(out_dir, "calibration.json"))
    with open(j(out_dir, "scene.json"), "w") as fh:
        json.dump({"spec": spec.to_dict(), "tip3d": list(gt.tip3d),
                   "n_distractors_rendered": len(gt.distractors3d)}, fh, indent=2)
    for k, d in enumerate(gt.distractors3d):
        d.to_csv(j(out_dir, f"distractor{k}.csv"))


def read_bundle(out_dir):
    """Inverse of ``write_bundle``: ``(spec, mask_l, mask_r, gt)``."""
    j = os.path.join
    with open(j(out_dir, "scene.json")) as fh:
        meta = json.load(fh)
    spec = SceneSpec.from_dict(meta["spec"])
    n_dis = meta.get("n_distractors_rendered", 0)
    has_dis = os.path.exists(j(out_dir, "distractor_left.pgm"))
    gt = GroundTruth(
        curve3d=Polyline3.from_csv(j(out_dir, "curve3d.csv")),
        trace_l=PixelCurve.load(j(out_dir, "trace_left_gt.json")),
        trace_r=PixelCurve.load(j(out_dir, "trace_right_gt.json")),
        label_mask_l=load_mask(j(out_dir, "label_left.pgm")),
        label_mask_r=load_mask(j(out_dir, "label_right.pgm")),
        tip3d=tuple(meta["tip3d"]),
        distractors3d=[Polyline3.from_csv(j(out_dir, f"distractor{k}.csv")) for k in range(n_dis)],
        distractor_mask_l=load_mask(j(out_dir, "distractor_left.pgm")) if has_dis else None,
        distractor_mask_r=load_mask(j(out_dir, "distractor_right.pgm")) if has_dis else None,
    )
    return spec, load_mask(j(out_dir, "mask_left.pgm")), load_mask(j(out_dir, "mask_right.pgm")), gt
