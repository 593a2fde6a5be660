"""Deterministic software rendering of the box abstraction.

Everything here is integer rasterization on top of the scene_model projection
math: no GPU, no external renderer, same bytes for the same inputs. Boxes are
drawn as 12-edge wireframes, far to near by center depth so closer boxes
overdraw farther ones. Segments are clipped against the near plane (0.05 m)
parametrically before projection. Box labels are conveyed by the legend that
accompanies each render, never by glyphs in the raster.

Two camera kinds are supported and carry their own projection model:
PerspectiveCamera (pose + intrinsics) and OrthoCamera (pose + metric footprint
half sizes). The top-down constructor returns an OrthoCamera whose image `up`
is the origin camera's forward direction projected to the ground plane, so
"up in the image" reads as "ahead of the camera".
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import EmptySandboxError
from .scene_model import (
    BOX_EDGES,
    CameraIntrinsics,
    CameraPose,
    ProxyCloud,
    SandboxScene,
    box_corners,
)

NEAR_PLANE_M = 0.05
DEFAULT_STEPBACK_M = 2.0

# Fixed 12-color palette; instance i uses PALETTE[i % 12] forever, so adding
# boxes never recolors existing ones.
PALETTE: tuple[tuple[str, tuple[int, int, int]], ...] = (
    ("red", (220, 50, 47)),
    ("blue", (38, 89, 235)),
    ("green", (64, 160, 43)),
    ("orange", (241, 143, 1)),
    ("purple", (136, 23, 152)),
    ("cyan", (42, 161, 152)),
    ("magenta", (211, 54, 130)),
    ("olive", (133, 153, 0)),
    ("brown", (124, 81, 61)),
    ("navy", (32, 42, 120)),
    ("teal", (0, 128, 128)),
    ("maroon", (128, 32, 64)),
)

MARKER_COLOR = (40, 40, 40)
GRID_COLOR = (210, 210, 210)


def instance_color(instance_id: int) -> tuple[str, tuple[int, int, int]]:
    return PALETTE[instance_id % len(PALETTE)]


@dataclass(frozen=True)
class RenderStyle:
    width: int = 512
    height: int = 512
    background: tuple[int, int, int] = (255, 255, 255)
    line_width: int = 2
    point_size: int = 2
    draw_axes: bool = False  # 1 m ground grid


@dataclass(frozen=True)
class PerspectiveCamera:
    pose: CameraPose
    intrinsics: CameraIntrinsics


@dataclass(frozen=True)
class OrthoCamera:
    pose: CameraPose
    half_width: float  # metric half extent mapped to the image half width
    half_height: float


RenderCamera = Union[PerspectiveCamera, OrthoCamera]


@dataclass(frozen=True)
class RenderedView:
    """A raster plus everything needed to interpret it."""

    image: np.ndarray  # (h, w, 3) uint8
    camera: RenderCamera
    legend: tuple[tuple[str, str, int], ...]  # (color name, label, instance_id)
    meters_per_px: float | None = None  # orthographic renders only
    marker_px: tuple[float, float] | None = None  # camera marker pixel, if drawn


# ── Camera constructors ────────────────────────────────────────────────────


def stepback_camera(origin: CameraPose, distance: float = DEFAULT_STEPBACK_M) -> CameraPose:
    """Same orientation, translated `distance` meters against the view axis."""
    return CameraPose(origin.rotation, origin.translation - distance * origin.forward())


def _ground_basis(origin: CameraPose, up: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(right, forward) directions in the ground plane for a top-down image."""
    fwd = origin.forward()
    proj = fwd - np.dot(fwd, up) * up
    norm = np.linalg.norm(proj)
    if norm < 1e-9:  # camera looks along the up axis; fall back to world +x
        proj = np.array([1.0, 0.0, 0.0])
        proj = proj - np.dot(proj, up) * up
        norm = np.linalg.norm(proj)
    img_up = proj / norm
    y_cam = -img_up  # image down
    z_cam = -up  # looking straight down
    x_cam = np.cross(y_cam, z_cam)
    return x_cam, img_up


def _topdown_from_points(
    pts: np.ndarray,
    origin: CameraPose,
    up: np.ndarray,
    margin: float,
) -> OrthoCamera:
    x_cam, img_up = _ground_basis(origin, up)
    u = pts @ x_cam
    v = pts @ img_up
    cu = (u.min() + u.max()) / 2.0
    cv = (v.min() + v.max()) / 2.0
    top = float((pts @ up).max())
    position = cu * x_cam + cv * img_up + (top + margin) * up

    # Footprint must cover the content and the origin camera marker, padded 10%.
    mu = float(origin.translation @ x_cam)
    mv = float(origin.translation @ img_up)
    half_w = max(np.max(np.abs(u - cu)), abs(mu - cu))
    half_h = max(np.max(np.abs(v - cv)), abs(mv - cv))
    half = max(half_w, half_h, 0.5) * 1.1
    rot = np.stack([x_cam, -img_up, -up], axis=1)
    return OrthoCamera(CameraPose(rot, position), half, half)


def topdown_camera(scene: SandboxScene, margin: float = 0.5) -> OrthoCamera:
    """Orthographic straight-down camera over the scene's boxes."""
    if not scene.boxes:
        raise EmptySandboxError("cannot place a top-down camera over zero boxes")
    pts = np.concatenate([box_corners(b) for b in scene.boxes])
    return _topdown_from_points(pts, scene.origin_pose, scene.up_axis, margin)


def topdown_camera_for_points(
    points: np.ndarray, origin: CameraPose, up_axis, margin: float = 0.5
) -> OrthoCamera:
    """Top-down camera over a raw point set (used by point-cloud renders)."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise EmptySandboxError("cannot place a top-down camera over zero points")
    return _topdown_from_points(pts, origin, np.asarray(up_axis, dtype=np.float64), margin)


# ── Projection and rasterization ───────────────────────────────────────────


def _camera_frame(camera: RenderCamera, pts: np.ndarray) -> np.ndarray:
    return camera.pose.inverse_transform(pts)


def _project_cam(camera: RenderCamera, p_cam: np.ndarray, w: int, h: int):
    """Camera-frame point to continuous pixel coordinates."""
    if isinstance(camera, PerspectiveCamera):
        k = camera.intrinsics
        z = p_cam[2]
        return k.fx * p_cam[0] / z + k.cx, k.fy * p_cam[1] / z + k.cy
    u = (p_cam[0] + camera.half_width) / (2.0 * camera.half_width) * w - 0.5
    v = (p_cam[1] + camera.half_height) / (2.0 * camera.half_height) * h - 0.5
    return u, v


def _clip_near(p0: np.ndarray, p1: np.ndarray, near: float):
    """Clip a camera-frame segment against z = near; None when fully behind."""
    z0, z1 = p0[2], p1[2]
    if z0 < near and z1 < near:
        return None
    if z0 >= near and z1 >= near:
        return p0, p1
    t = (near - z0) / (z1 - z0)
    cut = p0 + t * (p1 - p0)
    return (cut, p1) if z0 < near else (p0, cut)


def _stamp(img: np.ndarray, x: int, y: int, color, width: int) -> None:
    h, w = img.shape[:2]
    r0 = width // 2
    x0, x1 = x - r0, x - r0 + width
    y0, y1 = y - r0, y - r0 + width
    if x1 <= 0 or y1 <= 0 or x0 >= w or y0 >= h:
        return
    img[max(y0, 0) : min(y1, h), max(x0, 0) : min(x1, w)] = color


def _draw_line(img: np.ndarray, u0: float, v0: float, u1: float, v1: float, color, width: int) -> None:
    """Integer Bresenham with a square pen; off-raster pixels are skipped."""
    x0, y0 = int(round(u0)), int(round(v0))
    x1, y1 = int(round(u1)), int(round(v1))
    dx, dy = abs(x1 - x0), -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    while True:
        _stamp(img, x0, y0, color, width)
        if x0 == x1 and y0 == y1:
            break
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x0 += sx
        if e2 <= dx:
            err += dx
            y0 += sy


def _clip2d(u0, v0, u1, v1, xmin, ymin, xmax, ymax):
    """Liang-Barsky clip of a 2D segment to a rectangle; None when outside."""
    t0, t1 = 0.0, 1.0
    du, dv = u1 - u0, v1 - v0
    for p, q in ((-du, u0 - xmin), (du, xmax - u0), (-dv, v0 - ymin), (dv, ymax - v0)):
        if p == 0:
            if q < 0:
                return None
            continue
        r = q / p
        if p < 0:
            if r > t1:
                return None
            if r > t0:
                t0 = r
        else:
            if r < t0:
                return None
            if r < t1:
                t1 = r
    return u0 + t0 * du, v0 + t0 * dv, u0 + t1 * du, v0 + t1 * dv


def _draw_segment_world(
    img: np.ndarray, camera: RenderCamera, a: np.ndarray, b: np.ndarray, color, width: int
) -> None:
    p = _camera_frame(camera, np.stack([a, b]))
    clipped = _clip_near(p[0], p[1], NEAR_PLANE_M)
    if clipped is None:
        return
    h, w = img.shape[:2]
    u0, v0 = _project_cam(camera, clipped[0], w, h)
    u1, v1 = _project_cam(camera, clipped[1], w, h)
    if not all(np.isfinite([u0, v0, u1, v1])):
        return
    pad = float(width + 1)
    seg = _clip2d(u0, v0, u1, v1, -pad, -pad, w - 1 + pad, h - 1 + pad)
    if seg is None:
        return
    _draw_line(img, *seg, color, width)


def _draw_grid(img, camera, style, floor: float, up, origin: CameraPose, extent: float) -> None:
    x_dir, fwd_dir = _ground_basis(origin, up)
    base = origin.translation - (origin.translation @ up - floor) * up
    n = int(np.ceil(extent))
    for i in range(-n, n + 1):
        a = base + i * x_dir - n * fwd_dir
        b = base + i * x_dir + n * fwd_dir
        _draw_segment_world(img, camera, a, b, GRID_COLOR, 1)
        a = base + i * fwd_dir - n * x_dir
        b = base + i * fwd_dir + n * x_dir
        _draw_segment_world(img, camera, a, b, GRID_COLOR, 1)


def _draw_marker(img, camera: OrthoCamera, style, origin: CameraPose, up, floor: float):
    """Small triangle at the origin camera's ground position, nose forward."""
    x_dir, fwd_dir = _ground_basis(origin, up)
    ground = origin.translation - (origin.translation @ up - floor) * up
    size = 0.12 * max(camera.half_width, camera.half_height)
    tip = ground + size * fwd_dir
    left = ground - 0.5 * size * fwd_dir - 0.45 * size * x_dir
    right = ground - 0.5 * size * fwd_dir + 0.45 * size * x_dir
    for a, b in ((tip, left), (left, right), (right, tip)):
        _draw_segment_world(img, camera, a, b, MARKER_COLOR, style.line_width)
    h, w = img.shape[:2]
    g_cam = _camera_frame(camera, ground[None, :])[0]
    return _project_cam(camera, g_cam, w, h)


def _scene_floor(scene: SandboxScene) -> float:
    if not scene.boxes:
        return float(scene.origin_pose.translation @ scene.up_axis)
    pts = np.concatenate([box_corners(b) for b in scene.boxes])
    return float((pts @ scene.up_axis).min())


def render_boxes(
    scene: SandboxScene, camera: RenderCamera, style: RenderStyle = RenderStyle()
) -> RenderedView:
    """Wireframe render of every box, far to near, with a color legend."""
    img = np.empty((style.height, style.width, 3), dtype=np.uint8)
    img[:] = style.background

    floor = _scene_floor(scene)
    if style.draw_axes and scene.boxes:
        extent = max(camera.half_width, camera.half_height) if isinstance(camera, OrthoCamera) else 8.0
        _draw_grid(img, camera, style, floor, scene.up_axis, scene.origin_pose, extent)

    def center_depth(box):
        return float(_camera_frame(camera, box.center[None, :])[0, 2])

    legend = []
    for box in sorted(scene.boxes, key=center_depth, reverse=True):
        _, rgb = instance_color(box.instance_id)
        corners = box_corners(box)
        for i, j in BOX_EDGES:
            _draw_segment_world(img, camera, corners[i], corners[j], rgb, style.line_width)
    for box in scene.boxes:
        name, _ = instance_color(box.instance_id)
        legend.append((name, box.label, box.instance_id))

    meters_per_px = None
    marker_px = None
    if isinstance(camera, OrthoCamera):
        marker_px = _draw_marker(img, camera, style, scene.origin_pose, scene.up_axis, floor)
        meters_per_px = 2.0 * camera.half_width / style.width
    return RenderedView(img, camera, tuple(legend), meters_per_px, marker_px)


def render_points(
    cloud: ProxyCloud,
    camera: RenderCamera,
    style: RenderStyle = RenderStyle(),
    labels: dict[int, str] | None = None,
    origin: CameraPose | None = None,
    up_axis=None,
) -> RenderedView:
    """Splat proxy points (far to near) colored by their object category."""
    img = np.empty((style.height, style.width, 3), dtype=np.uint8)
    img[:] = style.background
    h, w = style.height, style.width

    p_cam = _camera_frame(camera, cloud.xyz) if len(cloud) else np.zeros((0, 3))
    order = np.argsort(-p_cam[:, 2], kind="stable")
    for i in order:
        z = p_cam[i, 2]
        if z < NEAR_PLANE_M:
            continue
        u, v = _project_cam(camera, p_cam[i], w, h)
        if not (np.isfinite(u) and np.isfinite(v)):
            continue
        _, rgb = instance_color(int(cloud.object_ids[i]))
        x, y = int(round(u)), int(round(v))
        if -style.point_size < x < w and -style.point_size < y < h:
            img[max(y, 0) : y + style.point_size, max(x, 0) : x + style.point_size] = rgb

    legend = []
    for oid in sorted(set(int(o) for o in cloud.object_ids)):
        name, _ = instance_color(oid)
        legend.append((name, (labels or {}).get(oid, f"object {oid}"), oid))

    meters_per_px = None
    marker_px = None
    if isinstance(camera, OrthoCamera):
        meters_per_px = 2.0 * camera.half_width / style.width
        if origin is not None and up_axis is not None:
            up = np.asarray(up_axis, dtype=np.float64)
            floor = float((cloud.xyz @ up).min()) if len(cloud) else 0.0
            marker_px = _draw_marker(img, camera, style, origin, up, floor)
    return RenderedView(img, camera, tuple(legend), meters_per_px, marker_px)


def legend_lines(view: RenderedView) -> list[str]:
    """The textual key for a render, in the exact form prompts embed.

    Downstream consumers parse these lines verbatim, so the format is a
    contract: one `- <color>: <label> (instance <id>)` line per entry, then
    scale and camera-marker lines for orthographic maps.
    """
    lines = [f"- {name}: {label} (instance {iid})" for name, label, iid in view.legend]
    if view.meters_per_px is not None:
        lines.append(f"Scale: 1 px = {view.meters_per_px:.6f} m.")
    if view.marker_px is not None:
        lines.append(
            "Camera marker at pixel "
            f"({view.marker_px[0]:.1f}, {view.marker_px[1]:.1f}); it looks toward image-up."
        )
    return lines
