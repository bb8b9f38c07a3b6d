"""Greedy box oracle: rank frustum candidates by point density and 2D alignment."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .config import OracleConfig
from .geometry import (Box2D, Box3D, CameraModel, PointCloud, box_corners,
                       count_in_boxes, iou_2d_many, project_boxes)
from .ingest import Scene
from .seeker import CandidateSet

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ScoredCandidate:
    box: Box3D
    c1: float
    c2: float
    composite: float
    index: int = 0


@dataclass(frozen=True)
class Rejected:
    reason: str


def _as_array(candidates) -> np.ndarray:
    if isinstance(candidates, np.ndarray):
        return candidates.reshape(-1, 7)
    return np.array([b.as_array() for b in candidates]).reshape(-1, 7)


def candidate_counts(points: np.ndarray, boxes: np.ndarray) -> np.ndarray:
    """Per-candidate in-box counts over the whole cloud.

    Points outside the axis-aligned hull of all candidate corners cannot be in
    any candidate, so they are culled before the exact test.
    """
    if len(boxes) == 0 or len(points) == 0:
        return np.zeros(len(boxes), dtype=np.int64)
    corners = box_corners(boxes).reshape(-1, 3)
    lo, hi = corners.min(axis=0) - 1e-6, corners.max(axis=0) + 1e-6
    keep = np.all((points >= lo) & (points <= hi), axis=1)
    return count_in_boxes(points[keep], boxes)


def density_scores(cloud: PointCloud, candidates) -> np.ndarray:
    """count_i / max_j count_j; all zeros when no candidate contains a point."""
    boxes = _as_array(candidates)
    if len(boxes) == 0:
        raise ValueError("density_scores needs at least one candidate")
    counts = candidate_counts(cloud.points, boxes)
    top = counts.max()
    if top == 0:
        return np.zeros(len(boxes))
    return counts / top


def alignment_scores(candidates, cam: CameraModel, det_box: Box2D) -> np.ndarray:
    boxes = _as_array(candidates)
    rects, valid = project_boxes(boxes, cam)
    scores = iou_2d_many(rects, det_box)
    if not valid.all():
        log.warning("%d candidates entirely behind camera %s; alignment set to 0",
                    int((~valid).sum()), cam.camera_id)
        scores[~valid] = 0.0
    return scores


def alignment_score(candidate: Box3D, cam: CameraModel, det_box: Box2D) -> float:
    return float(alignment_scores([candidate], cam, det_box)[0])


def select_best(cloud: PointCloud, cand_set: CandidateSet, cam: CameraModel, cfg: OracleConfig,
                use_density: bool = True, use_alignment: bool = True):
    """argmax of c1 + alpha_iou * c2 over one frustum's candidates (first index wins ties).

    ``use_density`` / ``use_alignment`` switch single-criterion variants for ablations.
    """
    if len(cand_set) == 0:
        raise ValueError("empty candidate set")
    boxes = cand_set.as_array()
    c1 = density_scores(cloud, boxes)
    if use_density and not c1.any():
        return Rejected("no candidate contains a point")
    c2 = alignment_scores(boxes, cam, cand_set.frustum.detection.box)
    composite = np.zeros(len(boxes))
    if use_density:
        composite = composite + c1
    if use_alignment:
        composite = composite + cfg.alpha_iou * c2
    best = int(np.argmax(composite))
    if composite[best] < cfg.min_composite:
        return Rejected(f"best composite {composite[best]:.3f} < {cfg.min_composite}")
    winner = cand_set.candidates[best].replace(score=cand_set.frustum.detection.score)
    return ScoredCandidate(winner, float(c1[best]), float(c2[best]), float(composite[best]), best)


def rank_scene(scene: Scene, cand_sets: Sequence[CandidateSet], cfg: OracleConfig, **kw):
    """Best candidate of every frustum; returns (proposals, n_rejected)."""
    proposals, rejected = [], 0
    for cs in cand_sets:
        res = select_best(scene.cloud, cs, scene.camera(cs.frustum.camera_id), cfg, **kw)
        if isinstance(res, Rejected):
            rejected += 1
        else:
            proposals.append(res.box)
    return proposals, rejected
