"""Greedy box seeker: lift 2D detections to frustums and enumerate 3D candidate boxes."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .config import SearchSpec
from .errors import EmptyFrustum, MissingAnchor
from .geometry import Box3D, CameraModel, PointCloud, project_points
from .ingest import Detection2D, Scene

log = logging.getLogger(__name__)


@dataclass(eq=False)
class Frustum:
    camera_id: str
    detection: Detection2D
    member_indices: np.ndarray
    d_min: float
    d_max: float


@dataclass(eq=False)
class CandidateSet:
    frustum: Frustum
    candidates: list[Box3D]

    def __len__(self):
        return len(self.candidates)

    def as_array(self) -> np.ndarray:
        return np.array([b.as_array() for b in self.candidates]).reshape(-1, 7)


def frustum_members(uv: np.ndarray, depth: np.ndarray, det: Detection2D) -> np.ndarray:
    b = det.box
    with np.errstate(invalid="ignore"):
        inside = ((depth > 1e-6)
                  & (uv[:, 0] >= b.u_min) & (uv[:, 0] <= b.u_max)
                  & (uv[:, 1] >= b.v_min) & (uv[:, 1] <= b.v_max))
    return np.flatnonzero(inside)


def build_frustum(cloud: PointCloud, cam: CameraModel, det: Detection2D, spec: SearchSpec,
                  projection=None) -> Frustum:
    """Collect the points projecting into ``det.box`` and bound their depth by quantiles.

    ``projection`` may carry a precomputed ``project_points(cloud.points, cam)``
    result when many detections share a camera.
    """
    if det.camera_id != cam.camera_id:
        raise ValueError(f"detection is for camera {det.camera_id}, got {cam.camera_id}")
    uv, depth = projection if projection is not None else project_points(cloud.points, cam)
    idx = frustum_members(uv, depth, det)
    if len(idx) < spec.min_frustum_points:
        raise EmptyFrustum(f"{len(idx)} points in frustum (need {spec.min_frustum_points})")
    d = depth[idx]
    d_min, d_max = np.quantile(d, [spec.q_lo, spec.q_hi])
    return Frustum(cam.camera_id, det, idx, float(d_min), float(d_max))


def _midpoints(lo: float, hi: float, k: int) -> np.ndarray:
    return lo + (np.arange(k) + 0.5) * (hi - lo) / k


def enumerate_candidates(frustum: Frustum, cam: CameraModel, anchor, spec: SearchSpec,
                         cloud: PointCloud) -> CandidateSet:
    """Cartesian grid of depth x yaw x scale placements of the class anchor.

    Centers sit on the ray through the 2D box center; the vertical center is the
    median height of the frustum points (the ray height if fewer than 3 points).
    """
    n_members = len(frustum.member_indices)
    if n_members == 0:
        raise EmptyFrustum("cannot enumerate candidates of an empty frustum")
    w, l, h = (float(a) for a in anchor)
    det = frustum.detection
    uc, vc = det.box.center

    depths = _midpoints(frustum.d_min, frustum.d_max, spec.k_d)
    yaws = _midpoints(0.0, math.pi, spec.k_o)
    scales = _midpoints(spec.scale_lo, spec.scale_hi, spec.k_s)

    z_med = None
    if n_members >= 3:
        z_med = float(np.median(cloud.points[frustum.member_indices, 2].astype(np.float64)))

    out = []
    for d in depths:
        center = cam.ray_point(uc, vc, float(d))
        cz = center[2] if z_med is None else z_med
        for yaw in yaws:
            for g in scales:
                out.append(Box3D(float(center[0]), float(center[1]), float(cz),
                                 w * g, l * g, h * g, float(yaw), det.class_id, det.score))
    return CandidateSet(frustum, out)


def seek_scene(scene: Scene, detections, anchors, spec: SearchSpec) -> list[CandidateSet]:
    """One candidate set per non-empty frustum, in detection order."""
    missing = sorted({d.class_id for d in detections if d.class_id not in anchors})
    if missing:
        raise MissingAnchor(f"no anchor for detection classes {missing}")
    projections = {}
    out = []
    dropped = 0
    for det in detections:
        cam = scene.camera(det.camera_id)
        if cam.camera_id not in projections:
            projections[cam.camera_id] = project_points(scene.cloud.points, cam)
        try:
            fr = build_frustum(scene.cloud, cam, det, spec, projections[cam.camera_id])
        except EmptyFrustum:
            dropped += 1
            continue
        out.append(enumerate_candidates(fr, cam, anchors[det.class_id], spec, scene.cloud))
    if dropped:
        log.info("scene %s: dropped %d empty frustums of %d", scene.scene_id, dropped, len(detections))
    return out
