"""Reduce a dense 3D polyline to a representative vertex subsequence.

Vertices become graph nodes joined by every edge no longer than ``tau_L``.
Each edge length is scaled by a composite weight made of a per-vertex density
penalty and a penalty on the index gap, and the shortest path from the first
to the last vertex is kept. Unreachable ends grow ``tau_L`` step by step.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import NoPathError, ParameterRangeError, PreconditionError
from .stereo import Polyline3

PENALTY_FLOOR = 1e-6
INDEX_SCALE = 20.0
INDEX_OFFSET = 2.0


@dataclass(frozen=True)
class GraphParams:
    tau_L: float = 8.0
    tau_L_step: float = 0.5
    sphere_radius: float = 2.0
    scale: float = 1.0
    sigma1: float = 10.0
    nu1: float = 1.0

    def __post_init__(self):
        for name in ("tau_L", "tau_L_step", "sphere_radius", "scale", "sigma1", "nu1"):
            val = getattr(self, name)
            if not (isinstance(val, (int, float)) and math.isfinite(val) and val > 0):
                raise ParameterRangeError(f"{name} must be a positive finite number, got {val!r}")


@dataclass
class WeightedGraph:
    D: np.ndarray
    W: np.ndarray
    G: np.ndarray = field(init=False)

    def __post_init__(self):
        with np.errstate(invalid="ignore"):
            self.G = self.D * self.W

    @property
    def n(self) -> int:
        return self.D.shape[0]


@dataclass(frozen=True)
class ShapeResult:
    polyline: Polyline3
    indices: tuple
    cost: float
    tau_L: float
    retries: int

    @property
    def length(self) -> float:
        """Physical length of the optimised polyline in mm."""
        return self.polyline.length

    @property
    def iterations(self) -> int:
        return self.retries + 1


def _vertices(V) -> np.ndarray:
    return V.vertices if isinstance(V, Polyline3) else np.asarray(V, dtype=np.float64).reshape(-1, 3)


def pairwise_distances(V) -> np.ndarray:
    v = _vertices(V)
    diff = v[:, None, :] - v[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def build_distance_matrix(V, tau_L: float, dist: np.ndarray | None = None) -> np.ndarray:
    """Edge lengths up to ``tau_L``; pruned edges and the diagonal are inf."""
    v = _vertices(V)
    if len(v) < 2:
        raise PreconditionError("need at least two vertices")
    d = pairwise_distances(v) if dist is None else dist
    out = np.where(d <= tau_L, d, np.inf)
    np.fill_diagonal(out, np.inf)
    return out


def vertex_penalties(V, p: GraphParams, dist: np.ndarray | None = None) -> np.ndarray:
    """Density penalty of every vertex from its neighbours within the sphere.

    ``(S_f / N) * exp(-N / (2 sigma1)) * sum(log(d + nu1))``; vertices with no
    neighbour, or whose penalty would not be positive, get ``PENALTY_FLOOR``.
    """
    v = _vertices(V)
    d = pairwise_distances(v) if dist is None else dist
    near = d <= p.sphere_radius
    np.fill_diagonal(near, False)
    n = near.sum(axis=1)
    logs = np.where(near, np.log(d + p.nu1), 0.0).sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        pen = p.scale / n * np.exp(-n / (2.0 * p.sigma1)) * logs
    pen = np.where((n > 0) & (pen > PENALTY_FLOOR), pen, PENALTY_FLOOR)
    return pen


def vertex_penalty(V, t: int, p: GraphParams) -> float:
    v = _vertices(V)
    if not 0 <= t < len(v):
        raise PreconditionError(f"vertex index {t} out of range for {len(v)} vertices")
    d = np.linalg.norm(v - v[t], axis=1)
    d[t] = np.inf
    nb = d[d <= p.sphere_radius]
    if len(nb) == 0:
        return PENALTY_FLOOR
    n = len(nb)
    pen = p.scale / n * math.exp(-n / (2.0 * p.sigma1)) * float(np.log(nb + p.nu1).sum())
    return pen if pen > PENALTY_FLOOR else PENALTY_FLOOR


def index_penalty(gap) -> np.ndarray | float:
    """Penalty on the sequence gap between two vertices: 1 + exp(gap/20 - 2)."""
    return 1.0 + np.exp(np.abs(gap) / INDEX_SCALE - INDEX_OFFSET)


def edge_weight(i: int, t: int, P1) -> float:
    if i == t:
        raise PreconditionError("edge endpoints must differ")
    return float(P1[i] * P1[t] * index_penalty(i - t))


def weight_matrix(P1) -> np.ndarray:
    P1 = np.asarray(P1, dtype=np.float64)
    idx = np.arange(len(P1))
    with np.errstate(over="ignore"):  # an inf weight just makes the edge unusable
        W = np.outer(P1, P1) * index_penalty(idx[:, None] - idx[None, :])
    np.fill_diagonal(W, 1.0)
    return W


def dijkstra(G, s: int, e: int) -> tuple[list[int], float]:
    """Shortest path on a dense non-negative matrix (inf = no edge).

    Returns ``([], inf)`` when ``e`` is unreachable from ``s``.
    """
    g = np.ascontiguousarray(G, dtype=np.float64)
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise PreconditionError("weight matrix must be square")
    n = g.shape[0]
    if not (0 <= s < n and 0 <= e < n):
        raise PreconditionError(f"endpoints ({s}, {e}) out of range for {n} vertices")
    if np.any(g < 0) or np.any(np.isnan(g)):
        raise PreconditionError("weights must be non-negative")
    path, length = kernels.dijkstra(g, int(s), int(e))
    return [int(k) for k in path], float(length)


def build_graph(V, tau_L: float, p: GraphParams) -> WeightedGraph:
    d = pairwise_distances(V)
    return WeightedGraph(build_distance_matrix(V, tau_L, d), weight_matrix(vertex_penalties(V, p, d)))


def bounding_diagonal(V) -> float:
    v = _vertices(V)
    return float(np.linalg.norm(v.max(axis=0) - v.min(axis=0)))


def optimize_shape(V, p: GraphParams = GraphParams()) -> ShapeResult:
    """Shortest composite-weight path from the first to the last vertex.

    While the ends are disconnected ``tau_L`` grows by ``tau_L_step``; once it
    passes the bounding-box diagonal the graph is complete and NoPathError is
    raised.
    """
    v = _vertices(V)
    if len(v) < 2:
        raise PreconditionError("need at least two vertices")
    d = pairwise_distances(v)
    W = weight_matrix(vertex_penalties(v, p, d))
    cap = bounding_diagonal(v)
    retries = 0
    while True:
        tau = p.tau_L + retries * p.tau_L_step
        D = build_distance_matrix(v, tau, d)
        path, cost = dijkstra(D * W, 0, len(v) - 1)
        if math.isfinite(cost):
            break
        if tau > cap:
            raise NoPathError(
                f"no path between the curve ends after {retries + 1} iterations "
                f"(tau_L reached {tau:g} mm, bounding diagonal {cap:.3f} mm)")
        retries += 1
    return ShapeResult(Polyline3(v[path], check_depth=False), tuple(path), cost, tau, retries)


def save_matrix(path, M: np.ndarray) -> None:
    np.savetxt(path, M, delimiter=",", fmt="%.17g")
