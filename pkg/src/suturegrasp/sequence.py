"""Ordering-sequence search along a skeleton, starting from the cutting tip.

Each loop scores the undetected skeleton pixels inside a circular RoI around
the last accepted pixel with::

    C = log(eps1 * O + mu) + eps2 * |A - V| * exp(eps3 * sin(delta / 2))

where ``O`` is the out-of-zone count of the straight segment V->A and
``delta`` the turning angle relative to the previous step, and accepts the
cheapest one. The walk stops when no candidate is left or the accepted
candidate would break ``O < tau_O`` / ``delta < tau_V``.

``mode="pixel"`` applies this literally, one pixel per loop. On a lattice
the distance term then dominates and crossings get misread, so the default
``mode="rim"`` only scores candidates near the RoI boundary (with ``|A - V|``
taken as the radius, leaving O and delta to decide), measures the heading
from a pixel at least one radius back, and fills the skeleton path up to
the winner. Loops with no rim candidate fall back to a single pixel step.
"""
from __future__ import annotations

import itertools
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .errors import ParameterRangeError, PreconditionError
from .masks import Mask, Skeleton

EPS1_RANGE = (1.0, 5.0)
EPS2_RANGE = (0.1, 0.5)
EPS3_RANGE = (0.02, 0.1)

Pixel = tuple[int, int]


@dataclass(frozen=True)
class SearchParams:
    roi_radius: float = 12.0
    mu: float = 1.0
    eps1: float = 1.0
    eps2: float = 0.1
    eps3: float = 0.02
    tau_o: float | None = None
    tau_v: float = 2.0 * math.pi / 3.0
    mode: str = "rim"

    def __post_init__(self):
        if self.tau_o is None:
            object.__setattr__(self, "tau_o", 2.6 * self.roi_radius)
        self.validate()

    def validate(self) -> None:
        if not self.roi_radius >= 1:
            raise ParameterRangeError(f"roi_radius must be >= 1 px, got {self.roi_radius}")
        if not self.mu > 0:
            raise ParameterRangeError(f"mu must be positive, got {self.mu}")
        for name, rng in (("eps1", EPS1_RANGE), ("eps2", EPS2_RANGE), ("eps3", EPS3_RANGE)):
            val = getattr(self, name)
            if not rng[0] <= val <= rng[1]:
                label = {"eps1": "R1", "eps2": "R2", "eps3": "R3"}[name]
                raise ParameterRangeError(
                    f"{name}={val} outside {label} = [{rng[0]}, {rng[1]}]")
        if self.mode not in ("rim", "pixel"):
            raise ParameterRangeError(f"mode must be 'rim' or 'pixel', got {self.mode!r}")
        if not self.tau_o > 0 or not self.tau_v > 0:
            raise ParameterRangeError("termination thresholds must be positive")

    @property
    def eps(self) -> tuple[float, float, float]:
        return (self.eps1, self.eps2, self.eps3)

    def with_eps(self, eps1, eps2, eps3) -> "SearchParams":
        return replace(self, eps1=eps1, eps2=eps2, eps3=eps3)


@dataclass(frozen=True)
class PixelCurve:
    points: tuple
    frame: str = "left"

    def __post_init__(self):
        pts = tuple((int(u), int(v)) for u, v in self.points)
        object.__setattr__(self, "points", pts)
        if self.frame not in ("left", "right"):
            raise ValueError(f"frame must be 'left' or 'right', got {self.frame!r}")

    def __len__(self):
        return len(self.points)

    def to_dict(self) -> dict:
        return {"frame": self.frame, "points": [list(p) for p in self.points]}

    @classmethod
    def from_dict(cls, d: dict) -> "PixelCurve":
        return cls(tuple(tuple(p) for p in d["points"]), d.get("frame", "left"))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "PixelCurve":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class SearchState:
    """Per-loop partition of skeleton pixels into detected / active / far."""

    detected: list
    active: set
    far: set
    zone: Mask = field(repr=False)


def active_nodes(state: SearchState, v_t: Pixel, radius: float) -> set:
    """Skeleton pixels within ``radius`` of ``v_t`` that lie in the zone and
    are not yet detected."""
    seen = set(state.detected)
    pool = state.active | state.far
    r2 = radius * radius
    return {p for p in pool
            if p not in seen and p in state.zone
            and (p[0] - v_t[0]) ** 2 + (p[1] - v_t[1]) ** 2 <= r2}


def bresenham(a: Pixel, b: Pixel) -> list[Pixel]:
    """Integer line pixels from ``a`` to ``b`` inclusive."""
    u0, v0 = a
    u1, v1 = b
    du, dv = abs(u1 - u0), -abs(v1 - v0)
    su = 1 if u0 < u1 else -1
    sv = 1 if v0 < v1 else -1
    err = du + dv
    out = [(u0, v0)]
    while (u0, v0) != (u1, v1):
        e2 = 2 * err
        if e2 >= dv:
            err += dv
            u0 += su
        if e2 <= du:
            err += du
            v0 += sv
        out.append((u0, v0))
    return out


def out_of_zone_count(a: Pixel, v: Pixel, zone: Mask) -> int:
    """Number of rasterised pixels strictly between ``v`` and ``a`` that are
    not in ``zone``."""
    if tuple(a) == tuple(v):
        raise PreconditionError("candidate coincides with the current pixel")
    return kernels.out_of_zone(zone.bits.view(np.uint8), v[0], v[1], a[0], a[1])


def turning_angle(a: Pixel, v_t: Pixel, v_prev: Pixel | None) -> float:
    if v_prev is None:
        return 0.0
    au, av = a[0] - v_t[0], a[1] - v_t[1]
    hu, hv = v_t[0] - v_prev[0], v_t[1] - v_prev[1]
    c = (au * hu + av * hv) / (math.sqrt(au * au + av * av) * math.sqrt(hu * hu + hv * hv))
    return math.acos(min(1.0, max(-1.0, c)))


def candidate_cost(a: Pixel, v_t: Pixel, v_prev: Pixel | None, o: int,
                   p: SearchParams) -> float:
    if tuple(a) == tuple(v_t):
        raise PreconditionError("candidate coincides with the current pixel")
    if v_prev is not None and tuple(v_prev) == tuple(v_t):
        raise PreconditionError("previous pixel coincides with the current pixel")
    delta = turning_angle(a, v_t, v_prev)
    d = math.hypot(a[0] - v_t[0], a[1] - v_t[1])
    return math.log(p.eps1 * o + p.mu) + p.eps2 * d * math.exp(p.eps3 * math.sin(delta / 2.0))


def iter_search(skeleton: Skeleton, zone: Mask, tip: Pixel, p: SearchParams):
    """Reference search, one loop at a time.

    Yields ``(state, chosen)`` before each acceptance, where ``chosen`` is the
    argmin candidate or None when the search stops. Slow; meant for checking
    the kernel path and the per-loop invariants.
    """
    tip = tuple(tip)
    if tip not in skeleton.pixels:
        raise PreconditionError(f"tip {tip} is not a skeleton pixel")
    state = SearchState([tip], set(), set(skeleton.pixels) - {tip}, zone)
    while True:
        v_t = state.detected[-1]
        v_prev = state.detected[-2] if len(state.detected) > 1 else None
        act = active_nodes(state, v_t, p.roi_radius)
        state.far |= state.active - act
        state.far -= act
        state.active = act
        best = None
        for a in sorted(act, key=lambda q: (q[1], q[0])):
            o = out_of_zone_count(a, v_t, zone)
            c = candidate_cost(a, v_t, v_prev, o, p)
            if best is None or c < best[0]:
                best = (c, a, o, turning_angle(a, v_t, v_prev))
        if best is None or not (best[2] < p.tau_o and best[3] < p.tau_v):
            yield state, None
            return
        yield state, best[1]
        state.active.discard(best[1])
        state.detected.append(best[1])


def _index(skeleton: Skeleton):
    pts = skeleton.sorted_pixels()
    src = skeleton.source
    label = np.full((src.height, src.width), -1, dtype=np.int32)
    us = np.fromiter((q[0] for q in pts), dtype=np.int64, count=len(pts))
    vs = np.fromiter((q[1] for q in pts), dtype=np.int64, count=len(pts))
    label[vs, us] = np.arange(len(pts), dtype=np.int32)
    return pts, label, us, vs


def _run(index, zone_u8, tip_idx, p: SearchParams) -> np.ndarray:
    _, label, us, vs = index
    if p.mode == "rim":
        return kernels.trace_rim(label, us, vs, zone_u8, tip_idx, p.roi_radius, p.mu,
                                 p.eps1, p.eps2, p.eps3, p.tau_o, p.tau_v)
    return kernels.trace(label, us, vs, zone_u8, tip_idx, p.roi_radius, p.mu,
                         p.eps1, p.eps2, p.eps3, p.tau_o, p.tau_v)


def _prepare(skeleton: Skeleton, zone: Mask, tip):
    tip = (int(tip[0]), int(tip[1]))
    if tip not in skeleton.pixels:
        raise PreconditionError(f"tip {tip} is not a skeleton pixel")
    if (zone.width, zone.height) != (skeleton.source.width, skeleton.source.height):
        raise PreconditionError("zone mask and skeleton differ in size")
    index = _index(skeleton)
    tip_idx = index[0].index(tip)
    return index, np.ascontiguousarray(zone.bits.view(np.uint8)), tip_idx


def trace_sequence(skeleton: Skeleton, zone: Mask, tip, p: SearchParams,
                   frame: str = "left") -> PixelCurve:
    index, zone_u8, tip_idx = _prepare(skeleton, zone, tip)
    seq = _run(index, zone_u8, tip_idx, p)
    pts = index[0]
    return PixelCurve(tuple(pts[i] for i in seq), frame)


def parameter_grid(base: SearchParams, grid=(5, 5, 5)):
    """Uniform samples over R1 x R2 x R3; a 1-point axis keeps the base value."""
    axes = []
    for n, rng, val in zip(grid, (EPS1_RANGE, EPS2_RANGE, EPS3_RANGE), base.eps):
        n = int(n)
        if n < 1:
            raise PreconditionError(f"grid counts must be >= 1, got {grid}")
        axes.append([val] if n == 1 else np.linspace(rng[0], rng[1], n).tolist())
    return list(itertools.product(*axes))


def tune_parameters(skeleton: Skeleton, zone: Mask, tip, base: SearchParams,
                    grid=(5, 5, 5), frame: str = "left", workers: int = 1):
    """Pick the (eps1, eps2, eps3) grid triple giving the longest trace.

    Ties go to the lexicographically smallest triple. Returns
    ``(params, curve)``.
    """
    index, zone_u8, tip_idx = _prepare(skeleton, zone, tip)
    triples = parameter_grid(base, grid)

    def run(triple):
        return _run(index, zone_u8, tip_idx, base.with_eps(*triple))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            seqs = list(pool.map(run, triples))
    else:
        seqs = [run(t) for t in triples]
    best = min(range(len(triples)), key=lambda k: (-len(seqs[k]), triples[k]))
    pts = index[0]
    params = base.with_eps(*triples[best])
    return params, PixelCurve(tuple(pts[i] for i in seqs[best]), frame)
