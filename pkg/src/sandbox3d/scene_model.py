"""Core scene types and pinhole camera math.

Conventions used everywhere in the package:

  camera frame   x right, y down, z forward (pinhole, square pixels, no skew)
  pose           camera-to-world: p_world = R @ p_cam + t
  depth          camera-frame Z in meters; invalid samples are non-finite
  world frame    the frame the poses are expressed in; when poses come from a
                 relative-pose estimator this is the input view's camera frame

Projection of a camera-frame point (X, Y, Z), Z > 0:

  u = fx * X / Z + cx
  v = fy * Y / Z + cy

and backprojection of pixel (u, v) at depth d inverts it exactly:

  p_cam = d * ((u - cx) / fx, (v - cy) / fy, 1)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BehindCameraError

ORTHO_TOL = 1e-6  # orthonormality tolerance for rotations and box axes


def _freeze(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=np.float64, copy=True)
    out.flags.writeable = False
    return out


def rotation_about_axis(axis, angle_deg: float) -> np.ndarray:
    """Rodrigues rotation matrix about a unit axis by angle_deg (right-hand rule)."""
    u = np.asarray(axis, dtype=np.float64)
    u = u / np.linalg.norm(u)
    th = math.radians(angle_deg)
    c, s = math.cos(th), math.sin(th)
    ux, uy, uz = u
    k = np.array([[0.0, -uz, uy], [uz, 0.0, -ux], [-uy, ux, 0.0]])
    return c * np.eye(3) + s * k + (1.0 - c) * np.outer(u, u)


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics in pixels; width/height give the raster size."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    @staticmethod
    def from_hfov(width: int, height: int, hfov_deg: float) -> "CameraIntrinsics":
        """Square-pixel intrinsics with the given horizontal field of view."""
        fx = (width / 2.0) / math.tan(math.radians(hfov_deg) / 2.0)
        return CameraIntrinsics(fx, fx, width / 2.0, height / 2.0, width, height)


@dataclass(frozen=True)
class CameraPose:
    """Camera-to-world rigid transform: p_world = rotation @ p_cam + translation."""

    rotation: np.ndarray  # (3, 3), orthonormal, det +1
    translation: np.ndarray  # (3,)

    def __post_init__(self):
        r = _freeze(self.rotation)
        t = _freeze(self.translation)
        if r.shape != (3, 3) or t.shape != (3,):
            raise ValueError("pose needs a (3,3) rotation and a (3,) translation")
        if not np.all(np.isfinite(r)) or not np.all(np.isfinite(t)):
            raise ValueError("pose entries must be finite")
        if np.max(np.abs(r.T @ r - np.eye(3))) > ORTHO_TOL:
            raise ValueError("rotation is not orthonormal")
        if np.linalg.det(r) < 0:
            raise ValueError("rotation must be proper (det +1)")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "CameraPose":
        return CameraPose(np.eye(3), np.zeros(3))

    def forward(self) -> np.ndarray:
        """World-frame viewing direction (camera +z)."""
        return self.rotation @ np.array([0.0, 0.0, 1.0])

    def compose(self, rel: "CameraPose") -> "CameraPose":
        """Apply `rel` in this pose's camera frame: world <- self <- rel."""
        return CameraPose(
            self.rotation @ rel.rotation,
            self.rotation @ rel.translation + self.translation,
        )

    def inverse(self) -> "CameraPose":
        return CameraPose(self.rotation.T, -(self.rotation.T @ self.translation))

    def transform(self, pts: np.ndarray) -> np.ndarray:
        """Camera-frame points (..., 3) to world frame."""
        return np.asarray(pts, dtype=np.float64) @ self.rotation.T + self.translation

    def inverse_transform(self, pts: np.ndarray) -> np.ndarray:
        """World-frame points (..., 3) to camera frame."""
        return (np.asarray(pts, dtype=np.float64) - self.translation) @ self.rotation


@dataclass(frozen=True)
class DepthGrid:
    """Per-pixel camera-frame depth; non-finite entries mark invalid samples."""

    values: np.ndarray  # (height, width), row-major

    def __post_init__(self):
        v = np.array(self.values, copy=True)
        if v.ndim != 2:
            raise ValueError("depth grid must be 2-D")
        finite = v[np.isfinite(v)]
        if finite.size and not np.all(finite > 0):
            raise ValueError("valid depth entries must be positive")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    def at(self, x: int, y: int) -> float:
        return float(self.values[y, x])


@dataclass(frozen=True)
class ViewId:
    """Identity of a frame: (trajectory, step), or (-1, -1) for the input view."""

    trajectory: int
    step: int

    @property
    def is_input(self) -> bool:
        return self.trajectory < 0

    def tag(self) -> str:
        return "input" if self.is_input else f"m{self.trajectory}t{self.step}"


INPUT_VIEW = ViewId(-1, -1)


@dataclass(frozen=True)
class ViewFrame:
    """One observed or synthesized view: image, depth, and its camera."""

    image: np.ndarray  # (h, w, 3) uint8
    depth: DepthGrid
    intrinsics: CameraIntrinsics
    pose: CameraPose
    view_id: ViewId = INPUT_VIEW

    def __post_init__(self):
        img = np.asarray(self.image)
        if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
            raise ValueError("image must be (h, w, 3) uint8")
        if img.shape[:2] != (self.intrinsics.height, self.intrinsics.width):
            raise ValueError("image size disagrees with intrinsics")
        if (self.depth.height, self.depth.width) != img.shape[:2]:
            raise ValueError("depth size disagrees with image size")


@dataclass(frozen=True)
class InstanceMask:
    """Binary instance mask for one object in one view."""

    bits: np.ndarray  # (h, w) bool
    object_id: int
    label: str

    def __post_init__(self):
        b = np.array(self.bits, dtype=bool, copy=True)
        if b.ndim != 2:
            raise ValueError("mask must be 2-D")
        b.flags.writeable = False
        object.__setattr__(self, "bits", b)

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def count(self) -> int:
        return int(self.bits.sum())

    @property
    def is_empty(self) -> bool:
        return not bool(self.bits.any())


@dataclass(frozen=True)
class ProxyCloud:
    """3D proxy points with their source object and view identities."""

    xyz: np.ndarray  # (n, 3) float64, world frame
    object_ids: np.ndarray  # (n,) int64
    view_ids: tuple[ViewId, ...]  # length n

    def __post_init__(self):
        p = np.array(self.xyz, dtype=np.float64, copy=True).reshape(-1, 3)
        ids = np.array(self.object_ids, dtype=np.int64, copy=True).reshape(-1)
        if len(p) != len(ids) or len(p) != len(self.view_ids):
            raise ValueError("xyz, object_ids and view_ids must have equal length")
        if p.size and not np.all(np.isfinite(p)):
            raise ValueError("proxy points must be finite")
        p.flags.writeable = False
        ids.flags.writeable = False
        object.__setattr__(self, "xyz", p)
        object.__setattr__(self, "object_ids", ids)
        object.__setattr__(self, "view_ids", tuple(self.view_ids))

    def __len__(self) -> int:
        return len(self.xyz)

    @staticmethod
    def empty() -> "ProxyCloud":
        return ProxyCloud(np.zeros((0, 3)), np.zeros(0, dtype=np.int64), ())

    @staticmethod
    def single_view(xyz: np.ndarray, object_id: int, view_id: ViewId) -> "ProxyCloud":
        n = len(xyz)
        return ProxyCloud(xyz, np.full(n, object_id, dtype=np.int64), (view_id,) * n)


def merge_clouds(clouds) -> ProxyCloud:
    """Concatenate proxy clouds, preserving point order."""
    clouds = [c for c in clouds if len(c)]
    if not clouds:
        return ProxyCloud.empty()
    return ProxyCloud(
        np.concatenate([c.xyz for c in clouds]),
        np.concatenate([c.object_ids for c in clouds]),
        tuple(v for c in clouds for v in c.view_ids),
    )


@dataclass(frozen=True)
class OrientedBox3:
    """Oriented box: center, principal axes as matrix columns, half extents."""

    center: np.ndarray  # (3,)
    axes: np.ndarray  # (3, 3), orthonormal columns, det +1
    half_extents: np.ndarray  # (3,), positive
    label: str
    instance_id: int

    def __post_init__(self):
        c = _freeze(self.center)
        a = _freeze(self.axes)
        h = _freeze(self.half_extents)
        if c.shape != (3,) or a.shape != (3, 3) or h.shape != (3,):
            raise ValueError("bad box shapes")
        if np.max(np.abs(a.T @ a - np.eye(3))) > ORTHO_TOL:
            raise ValueError("box axes are not orthonormal")
        if np.linalg.det(a) < 0:
            raise ValueError("box axes must be right-handed")
        if not np.all(h > 0):
            raise ValueError("half extents must be positive")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "axes", a)
        object.__setattr__(self, "half_extents", h)


@dataclass(frozen=True)
class SandboxScene:
    """The recovered abstraction: boxes plus the originating camera."""

    boxes: tuple[OrientedBox3, ...]
    origin_pose: CameraPose
    origin_intrinsics: CameraIntrinsics
    up_axis: np.ndarray = field(default_factory=lambda: np.array([0.0, -1.0, 0.0]))

    def __post_init__(self):
        u = _freeze(self.up_axis)
        if u.shape != (3,) or abs(np.linalg.norm(u) - 1.0) > 1e-9:
            raise ValueError("up_axis must be a unit 3-vector")
        ids = [b.instance_id for b in self.boxes]
        if len(ids) != len(set(ids)):
            raise ValueError("instance ids must be unique")
        object.__setattr__(self, "boxes", tuple(self.boxes))
        object.__setattr__(self, "up_axis", u)


# ── Operations ─────────────────────────────────────────────────────────────


def backproject(u, depth: float, intrinsics: CameraIntrinsics, pose: CameraPose) -> np.ndarray:
    """Lift pixel (x, y) at the given depth to a world-frame point."""
    if not np.isfinite(depth) or depth <= 0:
        raise ValueError("depth must be finite and positive")
    x, y = float(u[0]), float(u[1])
    p_cam = np.array(
        [
            depth * (x - intrinsics.cx) / intrinsics.fx,
            depth * (y - intrinsics.cy) / intrinsics.fy,
            depth,
        ]
    )
    return pose.rotation @ p_cam + pose.translation


def backproject_pixels(
    xs: np.ndarray,
    ys: np.ndarray,
    depths: np.ndarray,
    intrinsics: CameraIntrinsics,
    pose: CameraPose,
) -> np.ndarray:
    """Vectorized backprojection of many pixels; returns (n, 3) world points."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    d = np.asarray(depths, dtype=np.float64)
    p_cam = np.stack(
        [
            d * (xs - intrinsics.cx) / intrinsics.fx,
            d * (ys - intrinsics.cy) / intrinsics.fy,
            d,
        ],
        axis=-1,
    )
    return pose.transform(p_cam)


def project(p, intrinsics: CameraIntrinsics, pose: CameraPose):
    """World point to pixel; returns ((u, v), camera-frame depth).

    Raises BehindCameraError when the point has non-positive camera depth.
    """
    p_cam = pose.inverse_transform(np.asarray(p, dtype=np.float64))
    z = float(p_cam[2])
    if z <= 0:
        raise BehindCameraError(f"point has camera depth {z:.6g}")
    u = intrinsics.fx * float(p_cam[0]) / z + intrinsics.cx
    v = intrinsics.fy * float(p_cam[1]) / z + intrinsics.cy
    return (u, v), z


def box_corners(box: OrientedBox3) -> np.ndarray:
    """The 8 corners, signs enumerated in binary order, axis 0 least significant.

    Corner i uses sign -1 on axis a when bit a of i is 0, +1 when it is 1.
    """
    signs = np.array(
        [[1.0 if (i >> a) & 1 else -1.0 for a in range(3)] for i in range(8)]
    )
    return box.center + (signs * box.half_extents) @ box.axes.T


BOX_EDGES: tuple[tuple[int, int], ...] = tuple(
    (i, j) for i in range(8) for j in range(i + 1, 8) if bin(i ^ j).count("1") == 1
)
