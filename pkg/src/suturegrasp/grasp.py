"""Grasp point at a reserved arc length from the cutting tip, mapped from the
camera frame into the robot frame by a rigid hand-eye transform."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InvalidTransformError, PreconditionError, ReserveExceedsCurveError
from .stereo import Polyline3

DEFAULT_RESERVE_MM = 50.0
SE3_TOL = 1e-9
LENGTH_TOL = 1e-12  # summation-order slack on the total length


class RigidTransform:
    """Element of SE(3): ``x -> R x + t`` with lengths in mm."""

    def __init__(self, rotation, translation=(0.0, 0.0, 0.0)):
        R = np.array(rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(translation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise InvalidTransformError("transform entries must be finite")
        if np.max(np.abs(R.T @ R - np.eye(3))) > SE3_TOL:
            raise InvalidTransformError("rotation is not orthonormal (|R^T R - I| > 1e-9)")
        if abs(np.linalg.det(R) - 1.0) > SE3_TOL:
            raise InvalidTransformError("rotation determinant is not +1")
        R.setflags(write=False)
        t.setflags(write=False)
        self.rotation = R
        self.translation = t

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3))

    @classmethod
    def from_matrix(cls, M) -> "RigidTransform":
        M = np.asarray(M, dtype=np.float64)
        if M.shape != (4, 4):
            raise InvalidTransformError(f"expected a 4x4 matrix, got shape {M.shape}")
        if np.max(np.abs(M[3] - [0.0, 0.0, 0.0, 1.0])) > SE3_TOL:
            raise InvalidTransformError("bottom row must be [0, 0, 0, 1]")
        return cls(M[:3, :3], M[:3, 3])

    @property
    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.rotation
        M[:3, 3] = self.translation
        return M

    def inverse(self) -> "RigidTransform":
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation)

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def to_dict(self) -> dict:
        return {"matrix": self.matrix.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "RigidTransform":
        try:
            M = np.asarray(d["matrix"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"transform needs a 'matrix' entry with 16 numbers: {exc}") from None
        if M.size != 16:
            raise InvalidTransformError(f"expected 16 matrix entries, got {M.size}")
        return cls.from_matrix(M.reshape(4, 4))

    @classmethod
    def load(cls, path) -> "RigidTransform":
        """Read a row-major 4x4 matrix from JSON (``{"matrix": ...}`` or a bare
        nested list) or from whitespace-separated text."""
        try:
            with open(path) as fh:
                text = fh.read()
        except FileNotFoundError:
            raise ConfigError(f"transform file not found: {path}") from None
        try:
            data = json.loads(text)
        except json.JSONDecodeError:
            try:
                data = {"matrix": [float(x) for x in text.replace(",", " ").split()]}
            except ValueError:
                raise ConfigError(f"cannot parse transform file {path}") from None
        if isinstance(data, list):
            data = {"matrix": data}
        return cls.from_dict(data)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    def __repr__(self):
        return f"RigidTransform(t={self.translation.tolist()})"


def _homogeneous(p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64).reshape(-1)
    if p.shape == (3,):
        return np.append(p, 1.0)
    if p.shape != (4,) or p[3] != 1.0:
        raise PreconditionError("expected a 3-vector or a homogeneous 4-vector with w = 1")
    return p


def arc_length_point(curve: Polyline3, L: float) -> np.ndarray:
    """Point at arc length ``L`` mm from the first vertex, interpolated linearly."""
    cum = curve.cumulative_length()
    if not L >= 0:
        raise PreconditionError(f"reserve length must be non-negative, got {L}")
    if L > cum[-1] + LENGTH_TOL * max(1.0, cum[-1]):
        raise ReserveExceedsCurveError(
            f"reserve {L:g} mm exceeds the curve length {cum[-1]:.3f} mm")
    v = curve.vertices
    k = int(np.searchsorted(cum, L, side="right")) - 1
    if k >= len(v) - 1:
        return v[-1].copy()
    seg = cum[k + 1] - cum[k]
    s = 0.0 if seg == 0 else (L - cum[k]) / seg
    return v[k] + s * (v[k + 1] - v[k])


def to_robot_frame(gs_c, T: RigidTransform) -> np.ndarray:
    """Homogeneous GS_R = T * GS_C."""
    if not isinstance(T, RigidTransform):
        T = RigidTransform.from_matrix(T)
    return T.matrix @ _homogeneous(gs_c)


@dataclass(frozen=True)
class GraspPlan:
    gs_camera: tuple
    gs_robot: tuple
    reserve_length: float
    curve_length: float

    def to_dict(self) -> dict:
        return {"gs_camera": list(self.gs_camera), "gs_robot": list(self.gs_robot),
                "reserve_length_mm": self.reserve_length,
                "curve_length_mm": self.curve_length}

    @classmethod
    def from_dict(cls, d: dict) -> "GraspPlan":
        return cls(tuple(d["gs_camera"]), tuple(d["gs_robot"]),
                   float(d["reserve_length_mm"]), float(d["curve_length_mm"]))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def load(cls, path) -> "GraspPlan":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def plan_grasp(curve: Polyline3, L: float, T: RigidTransform) -> GraspPlan:
    if not L > 0:
        raise PreconditionError(f"reserve length must be positive, got {L}")
    gs_c = _homogeneous(arc_length_point(curve, L))
    if L >= curve.length:
        raise ReserveExceedsCurveError(
            f"reserve {L:g} mm leaves nothing of the {curve.length:.3f} mm curve")
    gs_r = to_robot_frame(gs_c, T)
    return GraspPlan(tuple(float(x) for x in gs_c), tuple(float(x) for x in gs_r),
                     float(L), float(curve.length))
