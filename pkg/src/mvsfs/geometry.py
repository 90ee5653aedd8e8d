"""Camera models, normals from depth gradients and backprojection.

Pixel coordinates put the centre of the top-left pixel at ``(0, 0)``; ``x``
indexes columns (rightward) and ``y`` indexes rows (downward).  The camera
frame is right-handed with ``X`` right, ``Y`` down and ``Z`` pointing away
from the camera, so a visible surface has normals with negative ``Z``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import OrthographicUnsupported

#: Lower clamp applied to the normalization coefficient before dividing.
EPS_D = 1e-9


class Projection(enum.Enum):
    ORTHOGRAPHIC = "orthographic"
    PERSPECTIVE = "perspective"


@dataclass(frozen=True)
class Intrinsics:
    """Projection model.

    Under orthographic projection the focal length is 1 and the principal
    point is the origin, so every per-pixel offset vanishes.  Use
    :meth:`orthographic` and :meth:`perspective` rather than the raw
    constructor.
    """

    mode: Projection = Projection.ORTHOGRAPHIC
    f: float = 1.0
    x0: float = 0.0
    y0: float = 0.0

    def __post_init__(self):
        mode = Projection(self.mode)
        object.__setattr__(self, "mode", mode)
        if not np.isfinite(self.f) or self.f <= 0:
            raise ValueError(f"focal length must be positive, got {self.f}")
        if mode is Projection.ORTHOGRAPHIC and (self.f, self.x0, self.y0) != (1.0, 0.0, 0.0):
            raise ValueError("orthographic intrinsics must have f=1 and principal point (0, 0)")

    @classmethod
    def orthographic(cls) -> "Intrinsics":
        return cls(Projection.ORTHOGRAPHIC, 1.0, 0.0, 0.0)

    @classmethod
    def perspective(cls, f: float, x0: float, y0: float) -> "Intrinsics":
        return cls(Projection.PERSPECTIVE, float(f), float(x0), float(y0))

    @property
    def is_perspective(self) -> bool:
        return self.mode is Projection.PERSPECTIVE

    def offsets(self, x, y):
        """Pixel coordinates relative to the principal point (zero if orthographic)."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if not self.is_perspective:
            return np.zeros_like(x), np.zeros_like(y)
        return x - self.x0, y - self.y0

    def to_dict(self) -> dict:
        if self.is_perspective:
            return {"mode": "perspective", "f": self.f, "x0": self.x0, "y0": self.y0}
        return {"mode": "orthographic"}

    @classmethod
    def from_dict(cls, d: dict) -> "Intrinsics":
        if d.get("mode", "orthographic") == "orthographic":
            return cls.orthographic()
        return cls.perspective(d["f"], d["x0"], d["y0"])


@dataclass(frozen=True)
class Pose:
    """World-from-camera rigid transform: ``x_world = R @ x_cam + t``."""

    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.array(self.R, dtype=float).reshape(3, 3)
        t = np.array(self.t, dtype=float).reshape(3)
        if np.abs(R.T @ R - np.eye(3)).max() > 1e-10:
            raise ValueError("rotation matrix is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > 1e-10:
            raise ValueError("rotation matrix must have determinant +1")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @property
    def center(self) -> np.ndarray:
        return self.t

    def to_dict(self) -> dict:
        return {"R": self.R.tolist(), "t": self.t.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Pose":
        return cls(np.array(d["R"]), np.array(d["t"]))


def look_at(center, target, up=(0.0, -1.0, 0.0)) -> Pose:
    """Pose of a camera at ``center`` whose optical axis passes through ``target``.

    ``up`` is the world direction that should appear upward in the image;
    since image rows grow downward, the camera ``Y`` axis is ``-up``.
    """
    center = np.asarray(center, dtype=float)
    zc = np.asarray(target, dtype=float) - center
    zc /= np.linalg.norm(zc)
    yc = -np.asarray(up, dtype=float)
    yc = yc - zc * (yc @ zc)
    yc /= np.linalg.norm(yc)
    xc = np.cross(yc, zc)
    return Pose(np.column_stack([xc, yc, zc]), center)


def normalization_coefficient(zx, zy, intr: Intrinsics, x=0.0, y=0.0):
    """Length of the unnormalized normal ``[f zx, f zy, -1 - x~ zx - y~ zy]``.

    Vectorized over broadcastable inputs; clamped below by :data:`EPS_D`.
    """
    xt, yt = intr.offsets(x, y)
    f = intr.f
    zx = np.asarray(zx, dtype=float)
    zy = np.asarray(zy, dtype=float)
    w = 1.0 + xt * zx + yt * zy
    d = np.sqrt((f * zx) ** 2 + (f * zy) ** 2 + w**2)
    return np.maximum(d, EPS_D)


def normal_from_gradient(zx, zy, intr: Intrinsics, x=0.0, y=0.0) -> np.ndarray:
    """Unit normals from depth (or log-depth) gradients; stacked on the last axis."""
    xt, yt = intr.offsets(x, y)
    f = intr.f
    zx = np.asarray(zx, dtype=float)
    zy = np.asarray(zy, dtype=float)
    d = normalization_coefficient(zx, zy, intr, x, y)
    n = np.stack(np.broadcast_arrays(f * zx, f * zy, -1.0 - xt * zx - yt * zy), axis=-1)
    return n / d[..., None]


def camera_rays(x, y, intr: Intrinsics) -> np.ndarray:
    """Camera-frame directions ``[x~/f, y~/f, 1]`` for perspective pixels."""
    if not intr.is_perspective:
        raise OrthographicUnsupported("backprojection needs a perspective camera")
    xt, yt = intr.offsets(x, y)
    xt, yt = np.broadcast_arrays(xt, yt)
    return np.stack([xt / intr.f, yt / intr.f, np.ones_like(xt)], axis=-1)


def backproject(x, y, z, intr: Intrinsics, pose: Pose) -> np.ndarray:
    """World points for pixels ``(x, y)`` with log-depth ``z``."""
    rays = camera_rays(x, y, intr)
    depth = np.exp(np.asarray(z, dtype=float))
    return depth[..., None] * (rays @ pose.R.T) + pose.t


def project(points, intr: Intrinsics, pose: Pose):
    """Project world points; returns pixel ``(x, y)`` and camera-frame depth."""
    if not intr.is_perspective:
        raise OrthographicUnsupported("projection needs a perspective camera")
    pc = (np.asarray(points, dtype=float) - pose.t) @ pose.R
    depth = pc[..., 2]
    x = intr.f * pc[..., 0] / depth + intr.x0
    y = intr.f * pc[..., 1] / depth + intr.y0
    return x, y, depth


def pixel_grid(shape):
    """Column and row coordinate arrays for an image of ``shape = (H, W)``."""
    ys, xs = np.mgrid[0 : shape[0], 0 : shape[1]]
    return xs.astype(float), ys.astype(float)
