"""Pinhole cameras, ray generation and look-at pose sampling.

Convention: the camera looks along its local +z axis, image rows grow along
local +y and columns along local +x, pixel ``(u, v)`` is sampled at its center
``(u + 0.5, v + 0.5)`` with the origin at the top-left corner.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_RADIUS = 2.5


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    @classmethod
    def for_resolution(cls, width: int, height: int | None = None, focal_scale: float = 1.25) -> "Intrinsics":
        """Square-pixel intrinsics whose field of view is independent of resolution."""
        height = width if height is None else height
        f = focal_scale * width
        return cls(f, f, width / 2.0, height / 2.0)

    def scaled(self, factor: float) -> "Intrinsics":
        return Intrinsics(self.fx * factor, self.fy * factor, self.cx * factor, self.cy * factor)


class Pose:
    """Camera-to-world rigid transform stored as a 4x4 matrix."""

    __slots__ = ("matrix",)

    def __init__(self, matrix, check: bool = True):
        m = np.array(matrix, dtype=np.float64).reshape(4, 4)
        if check:
            validate_pose(m)
        self.matrix = m

    @property
    def rotation(self) -> np.ndarray:
        return self.matrix[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.matrix[:3, 3]

    def inverse(self) -> "Pose":
        r, t = self.rotation, self.translation
        inv = np.eye(4)
        inv[:3, :3] = r.T
        inv[:3, 3] = -r.T @ t
        return Pose(inv)

    def compose(self, other: "Pose") -> "Pose":
        return Pose(self.matrix @ other.matrix)

    def to_text(self) -> str:
        return " ".join(repr(float(x)) for x in self.matrix.reshape(-1))

    @classmethod
    def from_text(cls, text: str) -> "Pose":
        vals = [float(tok) for tok in text.split()]
        if len(vals) != 16:
            raise ValueError(f"pose needs 16 numbers, got {len(vals)}")
        return cls(np.array(vals).reshape(4, 4))

    def __eq__(self, other) -> bool:
        return isinstance(other, Pose) and np.array_equal(self.matrix, other.matrix)

    def __repr__(self) -> str:
        return f"Pose(t={self.translation.tolist()})"


def validate_pose(m: np.ndarray, tol: float = 1e-9) -> None:
    r = m[:3, :3]
    if not np.allclose(r.T @ r, np.eye(3), atol=tol, rtol=0):
        raise ValueError("pose rotation is not orthonormal")
    if abs(np.linalg.det(r) - 1.0) > tol:
        raise ValueError("pose rotation has determinant != +1")
    if not np.array_equal(m[3], [0.0, 0.0, 0.0, 1.0]):
        raise ValueError("pose last row must be [0, 0, 0, 1]")


@dataclass(frozen=True)
class CameraView:
    intrinsics: Intrinsics
    pose: Pose
    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image size must be positive, got {self.width}x{self.height}")


def rays_for_view(view: CameraView) -> tuple[np.ndarray, np.ndarray]:
    """World-space ray origins and unit directions, each shaped ``[H, W, 3]``."""
    k = view.intrinsics
    u = (np.arange(view.width) + 0.5 - k.cx) / k.fx
    v = (np.arange(view.height) + 0.5 - k.cy) / k.fy
    cam = np.empty((view.height, view.width, 3))
    cam[..., 0] = u[None, :]
    cam[..., 1] = v[:, None]
    cam[..., 2] = 1.0
    cam /= np.linalg.norm(cam, axis=-1, keepdims=True)
    dirs = cam @ view.pose.rotation.T
    # rotation can leave ~1e-16 drift in the norm
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    origins = np.broadcast_to(view.pose.translation, dirs.shape).copy()
    return origins, dirs


def look_at(center, target=(0.0, 0.0, 0.0), up=(0.0, 1.0, 0.0)) -> Pose:
    """Pose at ``center`` whose +z axis points at ``target``.

    The image "down" axis (+y) is aligned with ``-up`` as far as possible, so the
    world up direction appears at the top of the image.  Falls back to +x as the
    up vector when the viewing direction is parallel to ``up``.
    """
    c = np.asarray(center, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - c
    fwd /= np.linalg.norm(fwd)
    up = np.asarray(up, dtype=np.float64)
    if np.linalg.norm(np.cross(fwd, up)) < 1e-6:
        up = np.array([1.0, 0.0, 0.0])
    down = -up
    x_axis = np.cross(down, fwd)
    x_axis /= np.linalg.norm(x_axis)
    y_axis = np.cross(fwd, x_axis)
    m = np.eye(4)
    m[:3, 0] = x_axis
    m[:3, 1] = y_axis
    m[:3, 2] = fwd
    m[:3, 3] = c
    return Pose(m)


def sample_sphere_poses(n: int, radius: float = DEFAULT_RADIUS, seed: int = 0) -> list[Pose]:
    """``n`` look-at-origin poses with centers area-uniform on a sphere."""
    if n < 1:
        raise ValueError("need at least one pose")
    if radius <= 0:
        raise ValueError("radius must be positive")
    rng = np.random.default_rng(seed)
    phi = rng.uniform(0.0, 2.0 * np.pi, size=n)
    cos_t = rng.uniform(-1.0, 1.0, size=n)
    sin_t = np.sqrt(1.0 - cos_t**2)
    centers = radius * np.stack([sin_t * np.cos(phi), cos_t, sin_t * np.sin(phi)], axis=1)
    return [look_at(c) for c in centers]


def orbit_poses(n: int, radius: float = DEFAULT_RADIUS, elevation_deg: float = 25.0) -> list[Pose]:
    """Evenly spaced poses on a horizontal circle, looking at the origin."""
    el = np.deg2rad(elevation_deg)
    out = []
    for i in range(n):
        az = 2.0 * np.pi * i / max(n, 1)
        c = radius * np.array([np.cos(el) * np.cos(az), np.sin(el), np.cos(el) * np.sin(az)])
        out.append(look_at(c))
    return out


def project(points: np.ndarray, view: CameraView) -> tuple[np.ndarray, np.ndarray]:
    """Continuous pixel coordinates ``(u, v)`` and camera-frame depth ``z`` of world points."""
    inv = view.pose.inverse().matrix
    p = np.asarray(points, dtype=np.float64) @ inv[:3, :3].T + inv[:3, 3]
    k = view.intrinsics
    z = p[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = k.fx * p[..., 0] / z + k.cx
        v = k.fy * p[..., 1] / z + k.cy
    return np.stack([u, v], axis=-1), z
