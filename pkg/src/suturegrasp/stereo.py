"""Rectified (parallel optical axis) stereo: rig model, curve pairing and
triangulation of dense 3D vertices."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from scipy.ndimage import median_filter, uniform_filter1d

from .errors import (ConfigError, NonPositiveDisparityError, PreconditionError,
                     ReconstructionFailedError)
from .sequence import PixelCurve

MAX_ROW_DISCREPANCY = 3.0


@dataclass(frozen=True)
class StereoRig:
    """Shared pinhole intrinsics; the right camera sits ``baseline`` mm along +x."""

    fx: float
    fy: float
    cx: float
    cy: float
    baseline: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not self.baseline > 0:
            raise ValueError("baseline must be positive")

    def project(self, points):
        """Project (N, 3) camera-frame points; returns (left_uv, right_uv) as (N, 2)."""
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        x, y, z = p[:, 0], p[:, 1], p[:, 2]
        ul = self.fx * x / z + self.cx
        ur = self.fx * (x - self.baseline) / z + self.cx
        v = self.fy * y / z + self.cy
        return np.column_stack([ul, v]), np.column_stack([ur, v])

    def depth_resolution(self, z: float) -> float:
        """Depth change per pixel of disparity at depth ``z`` (mm/px)."""
        return z * z / (self.fx * self.baseline)

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "baseline_mm": self.baseline}

    @classmethod
    def from_dict(cls, d: dict) -> "StereoRig":
        try:
            return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                       float(d["baseline_mm"]))
        except KeyError as exc:
            raise ConfigError(f"calibration is missing key {exc.args[0]!r}") from None

    @classmethod
    def load(cls, path) -> "StereoRig":
        try:
            with open(path) as fh:
                return cls.from_dict(json.load(fh))
        except FileNotFoundError:
            raise ConfigError(f"calibration file not found: {path}") from None

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)


class Polyline3:
    """Ordered 3D vertices in millimetres (camera frame unless stated)."""

    def __init__(self, vertices, check_depth: bool = True):
        v = np.array(vertices, dtype=np.float64, copy=True).reshape(-1, 3)
        if not np.all(np.isfinite(v)):
            raise ValueError("polyline vertices must be finite")
        if check_depth and np.any(v[:, 2] <= 0):
            raise ValueError("polyline vertices must have Z > 0")
        v.setflags(write=False)
        self.vertices = v

    def __len__(self):
        return len(self.vertices)

    def __getitem__(self, i):
        return self.vertices[i]

    def __eq__(self, other):
        return isinstance(other, Polyline3) and np.array_equal(self.vertices, other.vertices)

    def __repr__(self):
        return f"Polyline3(n={len(self)}, length={self.length:.3f} mm)"

    def segment_lengths(self) -> np.ndarray:
        return np.linalg.norm(np.diff(self.vertices, axis=0), axis=1)

    def cumulative_length(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.segment_lengths())])

    @property
    def length(self) -> float:
        return float(self.segment_lengths().sum())

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["X", "Y", "Z"])
            for x, y, z in self.vertices:
                w.writerow([repr(float(x)), repr(float(y)), repr(float(z))])

    @classmethod
    def from_csv(cls, path, check_depth: bool = True) -> "Polyline3":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if rows and rows[0] and not _is_number(rows[0][0]):
            rows = rows[1:]
        return cls([[float(c) for c in r[:3]] for r in rows if r], check_depth=check_depth)

    def to_ply(self, path) -> None:
        n = len(self)
        lines = ["ply", "format ascii 1.0", f"element vertex {n}",
                 "property double x", "property double y", "property double z",
                 f"element edge {max(n - 1, 0)}", "property int vertex1", "property int vertex2",
                 "end_header"]
        lines += [f"{x!r} {y!r} {z!r}" for x, y, z in self.vertices.tolist()]
        lines += [f"{i} {i + 1}" for i in range(n - 1)]
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def resample_uniform(points, n: int) -> np.ndarray:
    """``n`` points at uniform normalised arc length along a 2D polyline."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if n == 1 or len(pts) == 1:
        return np.repeat(pts[:1], n, axis=0)
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    if cum[-1] == 0:
        return np.repeat(pts[:1], n, axis=0)
    s = np.linspace(0.0, cum[-1], n)
    return np.column_stack([np.interp(s, cum, pts[:, 0]), np.interp(s, cum, pts[:, 1])])


@dataclass(frozen=True)
class StereoPair:
    left: tuple[float, float]
    right: tuple[float, float]

    @property
    def disparity(self) -> float:
        return self.left[0] - self.right[0]

    @property
    def row_discrepancy(self) -> float:
        return abs(self.left[1] - self.right[1])


def match_stereo(left: PixelCurve, right: PixelCurve) -> list[StereoPair]:
    """Pair both traces index-wise after resampling each to
    ``min(len(left), len(right))`` points at uniform normalised arc length."""
    if len(left) == 0 or len(right) == 0:
        raise PreconditionError("both traced curves must be non-empty")
    n = min(len(left), len(right))
    lp = resample_uniform(left.points, n)
    rp = resample_uniform(right.points, n)
    return [StereoPair((float(a[0]), float(a[1])), (float(b[0]), float(b[1])))
            for a, b in zip(lp, rp)]


def smooth_polyline(points, window: int) -> np.ndarray:
    """Centred moving average along the point order; the window shrinks at the ends."""
    p = np.asarray(points, dtype=np.float64)
    if window <= 1 or len(p) < 3:
        return p.copy()
    h = window // 2
    n = len(p)
    c = np.vstack([np.zeros((1, p.shape[1])), np.cumsum(p, axis=0)])
    i = np.arange(n)
    a = np.maximum(0, i - h)
    b = np.minimum(n, i + h + 1)
    return (c[b] - c[a]) / (b - a)[:, None]


def epipolar_disparity(lp: np.ndarray, rp: np.ndarray, window: int = 10,
                       min_slope: float = 0.1, max_shift: float = 4.0, edge: int = 10):
    """Refine index-paired disparities using the row constraint.

    For left sample ``i`` the right curve is searched within ``window``
    samples of ``i`` for the point on the same row; segments flatter than
    ``min_slope`` (rows carry no information there) and crossings more than
    ``max_shift`` px from the index-paired guess are ignored, and so are the
    first and last ``edge`` samples, where thinning bends the trace ends
    towards a corner of the stroke cap. Disparity is
    then interpolated along the curve across samples without a usable
    crossing. If almost nothing is usable the two curve ends, which
    correspond by construction, anchor a linear disparity profile.

    Returns ``(disparity, reliable)``.
    """
    n = len(lp)
    guess = lp[:, 0] - rp[:, 0]
    if n < 2:
        return guess, np.zeros(n, dtype=bool)
    a, b = rp[:-1], rp[1:]
    dv = b[:, 1] - a[:, 1]
    seg = np.hypot(b[:, 0] - a[:, 0], dv)
    steep = np.abs(dv) >= min_slope * np.maximum(seg, 1e-12)
    out = guess.copy()
    ok = np.zeros(n, dtype=bool)
    for i in range(n):
        lo = max(0, i - window)
        hi = min(n - 1, i + window)
        j = np.arange(lo, hi)
        j = j[steep[j]]
        if len(j) == 0:
            continue
        t = (lp[i, 1] - a[j, 1]) / dv[j]
        hit = (t >= 0) & (t <= 1)
        if not hit.any():
            continue
        j, t = j[hit], t[hit]
        ur = a[j, 0] + t * (b[j, 0] - a[j, 0])
        near = np.abs(ur - rp[i, 0]) <= max_shift
        if not near.any():
            continue
        j, t, ur = j[near], t[near], ur[near]
        k = int(np.argmin(np.abs(j + t - i)))
        out[i] = lp[i, 0] - ur[k]
        ok[i] = True
    if n > 4 * edge > 0:
        ok[:edge] = False
        ok[-edge:] = False
    idx = np.arange(n)
    if ok.sum() >= max(2, 0.05 * n):
        return np.interp(idx, idx[ok], out[ok]), ok
    anchors = ok.copy()
    anchors[0] = anchors[-1] = True
    return np.interp(idx, idx[anchors], out[anchors]), ok


def triangulate(pair, rig: StereoRig) -> tuple[float, float, float]:
    """Depth from disparity: Z = fx*b/d, X and Y back-projected through the
    left camera with the mean row."""
    if isinstance(pair, StereoPair):
        (ul, vl), (ur, vr) = pair.left, pair.right
    else:
        (ul, vl), (ur, vr) = pair
    d = ul - ur
    if not d > 0:
        raise NonPositiveDisparityError(f"disparity {d} must be positive")
    z = rig.fx * rig.baseline / d
    vbar = (vl + vr) / 2.0
    return ((ul - rig.cx) * z / rig.fx, (vbar - rig.cy) * z / rig.fy, z)


def reconstruct_curve(left: PixelCurve, right: PixelCurve, rig: StereoRig,
                      max_row_discrepancy: float = MAX_ROW_DISCREPANCY,
                      refine: bool = True, smooth: int = 15,
                      median: int = 61, average: int = 61) -> Polyline3:
    """Triangulate the matched pairs, dropping ones with non-positive
    disparity or a row discrepancy above ``max_row_discrepancy``.

    With ``refine=False`` the index-wise arc-length pairs of ``match_stereo``
    are triangulated as they are. With ``refine=True`` both resampled traces
    are first smoothed over ``smooth`` samples, the disparity is corrected
    with the row constraint (see ``epipolar_disparity``), median-filtered
    over ``median`` samples and averaged over ``average`` samples; the right
    point of each pair is then placed on the left row at that disparity.
    Depth varies slowly along a suture while one pixel of disparity is
    several mm of depth, hence the wide windows.
    """
    pairs = match_stereo(left, right)
    if refine:
        lp = smooth_polyline([p.left for p in pairs], smooth)
        rp = smooth_polyline([p.right for p in pairs], smooth)
        d, ok = epipolar_disparity(lp, rp)
        if median > 1 and len(d) > 1:
            d = median_filter(d, size=median, mode="nearest")
        if average > 1 and len(d) > 1:
            d = uniform_filter1d(d, average, mode="nearest")
        rows = np.where(ok, lp[:, 1], rp[:, 1])
        pairs = [StereoPair((float(l[0]), float(l[1])), (float(l[0] - di), float(r)))
                 for l, di, r in zip(lp, d, rows)]
    verts = []
    for pr in pairs:
        if pr.disparity <= 0 or pr.row_discrepancy > max_row_discrepancy:
            continue
        verts.append(triangulate(pr, rig))
    if len(verts) < 2:
        raise ReconstructionFailedError(
            f"only {len(verts)} of {len(pairs)} stereo pairs passed the consistency checks")
    return Polyline3(verts)


def quantization_bound(z: float, rig: StereoRig, pixels: float = 1.0) -> float:
    """Worst-case depth error for a disparity error of ``pixels`` at depth ``z``."""
    fb = rig.fx * rig.baseline
    denom = fb - pixels * z
    if denom <= 0:
        return math.inf
    return pixels * z * z / denom
