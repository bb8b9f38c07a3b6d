"""Geometric primitives: oriented boxes, cameras, membership, projection, IoU and NMS.

Conventions
-----------
* LiDAR (ego) frame, meters, yaw about +z in radians normalized to [-pi, pi).
* Box-local frame: +x is the heading axis and carries the length ``l``,
  +y is lateral and carries the width ``w``, +z carries the height ``h``.
* Camera frame: x right, y down, z forward (depth).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .errors import BoxBehindCamera, NonPositiveDepth

MIN_DEPTH = 1e-6


def wrap_angle(theta):
    """Map an angle (or array of angles) into [-pi, pi); in-range values pass through untouched."""
    t = np.asarray(theta, dtype=np.float64)
    wrapped = np.where((t >= -np.pi) & (t < np.pi), t, (t + np.pi) % (2.0 * np.pi) - np.pi)
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped


def yaw_diff_mod_pi(a: float, b: float) -> float:
    """Smallest absolute difference between two headings, ignoring direction."""
    d = (a - b) % math.pi
    return min(d, math.pi - d)


@dataclass(frozen=True)
class Box3D:
    cx: float
    cy: float
    cz: float
    w: float
    l: float
    h: float
    yaw: float
    class_id: int = 0
    score: float = 1.0

    def __post_init__(self):
        for name in ("cx", "cy", "cz", "w", "l", "h", "yaw", "score"):
            object.__setattr__(self, name, float(getattr(self, name)))
        vals = (self.cx, self.cy, self.cz, self.w, self.l, self.h, self.yaw, self.score)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite box field: {self}")
        if self.w <= 0 or self.l <= 0 or self.h <= 0:
            raise ValueError(f"box extents must be positive, got w={self.w} l={self.l} h={self.h}")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"box score must lie in [0, 1], got {self.score}")
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))
        object.__setattr__(self, "class_id", int(self.class_id))

    @property
    def center(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.cz])

    @property
    def size(self) -> tuple[float, float, float]:
        return (self.w, self.l, self.h)

    def replace(self, **changes) -> "Box3D":
        return replace(self, **changes)

    def as_array(self) -> np.ndarray:
        """(cx, cy, cz, w, l, h, yaw)"""
        return np.array([self.cx, self.cy, self.cz, self.w, self.l, self.h, self.yaw])

    def corners(self) -> np.ndarray:
        return box_corners(self.as_array()[None])[0]


@dataclass(frozen=True)
class Box2D:
    u_min: float
    v_min: float
    u_max: float
    v_max: float

    def __post_init__(self):
        if not (self.u_min <= self.u_max and self.v_min <= self.v_max):
            raise ValueError(f"invalid 2D box {self}")

    @property
    def area(self) -> float:
        return (self.u_max - self.u_min) * (self.v_max - self.v_min)

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.u_min + self.u_max), 0.5 * (self.v_min + self.v_max))

    def as_list(self) -> list[float]:
        return [self.u_min, self.v_min, self.u_max, self.v_max]


@dataclass(frozen=True, eq=False)
class CameraModel:
    camera_id: str
    intrinsics: np.ndarray
    extrinsic: np.ndarray
    image_w: int
    image_h: int

    def __post_init__(self):
        K = np.asarray(self.intrinsics, dtype=np.float64).reshape(3, 3)
        T = np.asarray(self.extrinsic, dtype=np.float64).reshape(4, 4)
        if not np.all(np.isfinite(K)) or not np.all(np.isfinite(T)):
            raise ValueError("camera matrices must be finite")
        if K[1, 0] != 0 or K[2, 0] != 0 or K[2, 1] != 0 or K[0, 0] <= 0 or K[1, 1] <= 0:
            raise ValueError("intrinsics must be upper-triangular with positive focal terms")
        R = T[:3, :3]
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-9) or abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise ValueError("extrinsic rotation block is not a proper rotation")
        if self.image_w <= 0 or self.image_h <= 0:
            raise ValueError("image size must be positive")
        object.__setattr__(self, "intrinsics", K)
        object.__setattr__(self, "extrinsic", T)

    def __eq__(self, other):
        if not isinstance(other, CameraModel):
            return NotImplemented
        return (self.camera_id == other.camera_id
                and np.array_equal(self.intrinsics, other.intrinsics)
                and np.array_equal(self.extrinsic, other.extrinsic)
                and self.image_w == other.image_w and self.image_h == other.image_h)

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        """LiDAR-frame (N, 3) -> camera-frame (N, 3)."""
        R = self.extrinsic[:3, :3]
        t = self.extrinsic[:3, 3]
        return np.asarray(points, dtype=np.float64) @ R.T + t

    def ray_point(self, u: float, v: float, depth: float) -> np.ndarray:
        """LiDAR-frame point on the back-projected ray through pixel (u, v) at camera depth."""
        p_cam = np.linalg.solve(self.intrinsics, np.array([u, v, 1.0])) * depth
        R = self.extrinsic[:3, :3]
        t = self.extrinsic[:3, 3]
        return R.T @ (p_cam - t)


@dataclass(eq=False)
class PointCloud:
    """Index-stable float32 point storage (x, y, z) with a per-point intensity channel."""

    points: np.ndarray
    intensity: np.ndarray = field(default=None)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float32).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        if self.intensity is None:
            inten = np.zeros(len(pts), dtype=np.float32)
        else:
            inten = np.asarray(self.intensity, dtype=np.float32).reshape(-1)
        if len(inten) != len(pts):
            raise ValueError("intensity length differs from point count")
        self.points = pts
        self.intensity = inten

    def __len__(self):
        return len(self.points)

    def __eq__(self, other):
        if not isinstance(other, PointCloud):
            return NotImplemented
        return np.array_equal(self.points, other.points) and np.array_equal(self.intensity, other.intensity)

    @classmethod
    def empty(cls) -> "PointCloud":
        return cls(np.zeros((0, 3), dtype=np.float32))

    def subset(self, mask_or_idx) -> "PointCloud":
        return PointCloud(self.points[mask_or_idx], self.intensity[mask_or_idx])

    def concat(self, other: "PointCloud") -> "PointCloud":
        return PointCloud(np.concatenate([self.points, other.points]),
                          np.concatenate([self.intensity, other.intensity]))


def boxes_to_array(boxes: Iterable[Box3D]) -> np.ndarray:
    arr = [b.as_array() for b in boxes]
    if not arr:
        return np.zeros((0, 7))
    return np.stack(arr)


# --------------------------------------------------------------------------
# rigid transforms and membership
# --------------------------------------------------------------------------

def to_local(p, box: Box3D) -> np.ndarray:
    """Express a LiDAR-frame point in the box frame: R(-yaw) (p - center)."""
    dx = float(p[0]) - box.cx
    dy = float(p[1]) - box.cy
    dz = float(p[2]) - box.cz
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    return np.array([c * dx + s * dy, -s * dx + c * dy, dz])


def to_global(p_local, box: Box3D) -> np.ndarray:
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    x, y, z = float(p_local[0]), float(p_local[1]), float(p_local[2])
    return np.array([c * x - s * y + box.cx, s * x + c * y + box.cy, z + box.cz])


def points_to_local(points: np.ndarray, box: Box3D) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    d = pts - np.array([box.cx, box.cy, box.cz])
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    out = np.empty_like(d)
    out[:, 0] = c * d[:, 0] + s * d[:, 1]
    out[:, 1] = -s * d[:, 0] + c * d[:, 1]
    out[:, 2] = d[:, 2]
    return out


def points_to_global(local: np.ndarray, box: Box3D) -> np.ndarray:
    loc = np.asarray(local, dtype=np.float64).reshape(-1, 3)
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    out = np.empty_like(loc)
    out[:, 0] = c * loc[:, 0] - s * loc[:, 1] + box.cx
    out[:, 1] = s * loc[:, 0] + c * loc[:, 1] + box.cy
    out[:, 2] = loc[:, 2] + box.cz
    return out


def _inside_local(local: np.ndarray, w, l, h) -> np.ndarray:
    return ((np.abs(local[..., 0]) <= 0.5 * l)
            & (np.abs(local[..., 1]) <= 0.5 * w)
            & (np.abs(local[..., 2]) <= 0.5 * h))


def in_box(p, box: Box3D) -> bool:
    x, y, z = to_local(p, box)
    return abs(x) <= 0.5 * box.l and abs(y) <= 0.5 * box.w and abs(z) <= 0.5 * box.h


def points_in_box(points: np.ndarray, box: Box3D) -> np.ndarray:
    return _inside_local(points_to_local(points, box), box.w, box.l, box.h)


def count_in_box(cloud: PointCloud, box: Box3D) -> int:
    if len(cloud) == 0:
        return 0
    return int(points_in_box(cloud.points, box).sum())


def count_in_boxes(points: np.ndarray, boxes: np.ndarray, chunk: int = 64) -> np.ndarray:
    """Vectorized point tally for an (K, 7) box array; same predicate as :func:`in_box`."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 7)
    counts = np.zeros(len(boxes), dtype=np.int64)
    if len(pts) == 0 or len(boxes) == 0:
        return counts
    for start in range(0, len(boxes), chunk):
        b = boxes[start:start + chunk]
        c = np.cos(b[:, 6])[:, None]
        s = np.sin(b[:, 6])[:, None]
        dx = pts[None, :, 0] - b[:, 0:1]
        dy = pts[None, :, 1] - b[:, 1:2]
        dz = pts[None, :, 2] - b[:, 2:3]
        lx = c * dx + s * dy
        ly = -s * dx + c * dy
        inside = ((np.abs(lx) <= 0.5 * b[:, 4:5])
                  & (np.abs(ly) <= 0.5 * b[:, 3:4])
                  & (np.abs(dz) <= 0.5 * b[:, 5:6]))
        counts[start:start + chunk] = inside.sum(axis=1)
    return counts


# --------------------------------------------------------------------------
# projection
# --------------------------------------------------------------------------

def project_point(p, cam: CameraModel) -> tuple[float, float, float]:
    pc = cam.to_camera(np.asarray(p, dtype=np.float64).reshape(1, 3))[0]
    depth = pc[2]
    if depth <= MIN_DEPTH:
        raise NonPositiveDepth(f"point {tuple(p)} has camera depth {depth:.3g} in {cam.camera_id}")
    uvw = cam.intrinsics @ pc
    return float(uvw[0] / uvw[2]), float(uvw[1] / uvw[2]), float(depth)


def project_points(points: np.ndarray, cam: CameraModel):
    """Returns (uv (N, 2), depth (N,)); uv is NaN where depth <= MIN_DEPTH."""
    pc = cam.to_camera(points)
    depth = pc[:, 2]
    uvw = pc @ cam.intrinsics.T
    with np.errstate(divide="ignore", invalid="ignore"):
        uv = uvw[:, :2] / uvw[:, 2:3]
    uv[depth <= MIN_DEPTH] = np.nan
    return uv, depth


_CORNER_SIGNS = np.array([
    [1, 1, -1], [1, -1, -1], [-1, -1, -1], [-1, 1, -1],
    [1, 1, 1], [1, -1, 1], [-1, -1, 1], [-1, 1, 1],
], dtype=np.float64)


def box_corners(boxes: np.ndarray) -> np.ndarray:
    """(K, 7) boxes -> (K, 8, 3) LiDAR-frame corners."""
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 7)
    half = 0.5 * boxes[:, [4, 3, 5]]  # l along local x, w along local y, h along z
    local = _CORNER_SIGNS[None] * half[:, None, :]
    c = np.cos(boxes[:, 6])[:, None]
    s = np.sin(boxes[:, 6])[:, None]
    out = np.empty_like(local)
    out[..., 0] = c * local[..., 0] - s * local[..., 1] + boxes[:, 0:1]
    out[..., 1] = s * local[..., 0] + c * local[..., 1] + boxes[:, 1:2]
    out[..., 2] = local[..., 2] + boxes[:, 2:3]
    return out


def project_boxes(boxes: np.ndarray, cam: CameraModel, clamp: bool = True):
    """Vectorized :func:`project_box`.

    Returns ``(rects, valid)`` where rects is (K, 4) ``[u_min, v_min, u_max, v_max]``
    and ``valid[k]`` is False when every corner of box k is behind the camera.
    """
    corners = box_corners(boxes)
    K = len(corners)
    pc = cam.to_camera(corners.reshape(-1, 3)).reshape(K, 8, 3)
    depth = pc[..., 2]
    front = depth > MIN_DEPTH
    uvw = pc @ cam.intrinsics.T
    with np.errstate(divide="ignore", invalid="ignore"):
        u = uvw[..., 0] / uvw[..., 2]
        v = uvw[..., 1] / uvw[..., 2]
    u_lo = np.where(front, u, np.inf).min(axis=1)
    u_hi = np.where(front, u, -np.inf).max(axis=1)
    v_lo = np.where(front, v, np.inf).min(axis=1)
    v_hi = np.where(front, v, -np.inf).max(axis=1)
    rects = np.stack([u_lo, v_lo, u_hi, v_hi], axis=1)
    valid = front.any(axis=1)
    if clamp:
        rects[:, [0, 2]] = np.clip(rects[:, [0, 2]], 0.0, cam.image_w)
        rects[:, [1, 3]] = np.clip(rects[:, [1, 3]], 0.0, cam.image_h)
    rects[~valid] = 0.0
    return rects, valid


def project_box(box: Box3D, cam: CameraModel, clamp: bool = True) -> Box2D:
    rects, valid = project_boxes(box.as_array()[None], cam, clamp=clamp)
    if not valid[0]:
        raise BoxBehindCamera(f"all corners of {box} are behind camera {cam.camera_id}")
    return Box2D(*map(float, rects[0]))


# --------------------------------------------------------------------------
# IoU
# --------------------------------------------------------------------------

def iou_2d(a: Box2D, b: Box2D) -> float:
    iw = min(a.u_max, b.u_max) - max(a.u_min, b.u_min)
    ih = min(a.v_max, b.v_max) - max(a.v_min, b.v_min)
    inter = max(iw, 0.0) * max(ih, 0.0)
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return inter / union


def iou_2d_many(rects: np.ndarray, b: Box2D) -> np.ndarray:
    iw = np.minimum(rects[:, 2], b.u_max) - np.maximum(rects[:, 0], b.u_min)
    ih = np.minimum(rects[:, 3], b.v_max) - np.maximum(rects[:, 1], b.v_min)
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    area = (rects[:, 2] - rects[:, 0]) * (rects[:, 3] - rects[:, 1])
    union = area + b.area - inter
    out = np.zeros(len(rects))
    ok = union > 0
    out[ok] = inter[ok] / union[ok]
    return out


def bev_corners(box: Box3D) -> list[tuple[float, float]]:
    """Counter-clockwise BEV rectangle vertices."""
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    hl, hw = 0.5 * box.l, 0.5 * box.w
    out = []
    for sx, sy in ((1, 1), (-1, 1), (-1, -1), (1, -1)):
        x, y = sx * hl, sy * hw
        out.append((c * x - s * y + box.cx, s * x + c * y + box.cy))
    return out


def _polygon_area(poly) -> float:
    n = len(poly)
    acc = 0.0
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        acc += x1 * y2 - x2 * y1
    return 0.5 * acc


def _clip_convex(subject, clip, eps):
    """Sutherland-Hodgman clipping of ``subject`` by the CCW convex polygon ``clip``."""
    output = subject
    n = len(clip)
    for i in range(n):
        if not output:
            break
        ax, ay = clip[i]
        bx, by = clip[(i + 1) % n]
        ex, ey = bx - ax, by - ay

        def side(p):
            return ex * (p[1] - ay) - ey * (p[0] - ax)

        inp = output
        output = []
        prev = inp[-1]
        sp = side(prev)
        for cur in inp:
            sc = side(cur)
            if sc >= -eps:
                if sp < -eps:
                    t = sp / (sp - sc)
                    output.append((prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])))
                output.append(cur)
            elif sp >= -eps:
                t = sp / (sp - sc)
                output.append((prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])))
            prev, sp = cur, sc
    return output


def _canonical_key(b: Box3D):
    return (b.cx, b.cy, b.w, b.l, b.yaw)


def bev_intersection_area(a: Box3D, b: Box3D) -> float:
    dx, dy = a.cx - b.cx, a.cy - b.cy
    ra = 0.5 * math.hypot(a.w, a.l)
    rb = 0.5 * math.hypot(b.w, b.l)
    if dx * dx + dy * dy >= (ra + rb) ** 2:
        return 0.0
    # evaluate in a fixed argument order so the result is exactly symmetric
    if _canonical_key(b) < _canonical_key(a):
        a, b = b, a
    scale = max(a.w, a.l, b.w, b.l)
    eps = 1e-12 * scale * scale
    poly = _clip_convex(bev_corners(a), bev_corners(b), eps)
    if len(poly) < 3:
        return 0.0
    return max(_polygon_area(poly), 0.0)


def iou_bev(a: Box3D, b: Box3D) -> float:
    inter = bev_intersection_area(a, b)
    if inter <= 0.0:
        return 0.0
    union = a.w * a.l + b.w * b.l - inter
    return min(max(inter / union, 0.0), 1.0)


def iou_bev_matrix(a: Sequence[Box3D], b: Sequence[Box3D]) -> np.ndarray:
    out = np.zeros((len(a), len(b)))
    for i, bi in enumerate(a):
        for j, bj in enumerate(b):
            out[i, j] = iou_bev(bi, bj)
    return out


def nms(boxes: Sequence[Box3D], iou_threshold: float) -> list[Box3D]:
    """Greedy BEV non-max suppression; kept boxes are returned by descending score."""
    order = sorted(range(len(boxes)), key=lambda i: (-boxes[i].score, i))
    kept: list[Box3D] = []
    for i in order:
        cand = boxes[i]
        if all(iou_bev(cand, k) <= iou_threshold for k in kept):
            kept.append(cand)
    return kept
