"""Top-down baselines: 3D/VLM label fusion and density-clustering proposals."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull, QhullError
from sklearn.cluster import DBSCAN

from .config import FusionConfig
from .errors import DegenerateCluster
from .geometry import Box3D, PointCloud


@dataclass(frozen=True)
class FusionInput:
    label_3d: int
    label_vlm: int
    p_vlm: float
    gamma_fuse: float = 0.2

    def __post_init__(self):
        if not (0.0 <= self.p_vlm <= 1.0 and 0.0 <= self.gamma_fuse <= 1.0):
            raise ValueError("p_vlm and gamma_fuse must lie in [0, 1]")


def logit_fuse(inp: FusionInput) -> int:
    # a VLM label needs confidence strictly above gamma to override
    return inp.label_3d if inp.p_vlm <= inp.gamma_fuse else inp.label_vlm


def fuse_predictions(preds3d, vlm, gamma: float) -> list[Box3D]:
    """Relabel 3D predictions from aligned ``(label, score)`` VLM records."""
    if len(preds3d) != len(vlm):
        raise ValueError(f"{len(preds3d)} 3D predictions but {len(vlm)} VLM records")
    return [b.replace(class_id=logit_fuse(FusionInput(b.class_id, lab, p, gamma)))
            for b, (lab, p) in zip(preds3d, vlm)]


def dbscan(items, eps: float, min_pts: int) -> np.ndarray:
    """Cluster ids per item (-1 noise).

    Neighborhoods are closed Euclidean balls that include the point itself, so
    ``min_pts=1`` makes every point core.  Cluster ids follow scan order.
    """
    X = np.asarray(items, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if len(X) == 0:
        return np.zeros(0, dtype=np.int64)
    labels = DBSCAN(eps=eps, min_samples=min_pts, metric="euclidean", algorithm="auto").fit_predict(X)
    return labels.astype(np.int64)


def _min_area_rect(xy: np.ndarray):
    """Edge-aligned minimum-area rectangle of the hull: (cx, cy, l, w, yaw), l >= w."""
    try:
        hull = ConvexHull(xy)
    except (QhullError, ValueError) as exc:
        raise DegenerateCluster(f"cannot hull cluster: {exc}") from exc
    pts = xy[hull.vertices]
    best = None
    for i in range(len(pts)):
        e = pts[(i + 1) % len(pts)] - pts[i]
        norm = math.hypot(*e)
        if norm == 0:
            continue
        theta = math.atan2(e[1], e[0])
        c, s = math.cos(theta), math.sin(theta)
        u = pts @ np.array([c, s])
        v = pts @ np.array([-s, c])
        area = (u.max() - u.min()) * (v.max() - v.min())
        if best is None or area < best[0]:
            best = (area, theta, u.min(), u.max(), v.min(), v.max())
    if best is None or best[0] <= 1e-12:
        raise DegenerateCluster("cluster has no BEV area")
    _, theta, u0, u1, v0, v1 = best
    c, s = math.cos(theta), math.sin(theta)
    uc, vc = (u0 + u1) / 2, (v0 + v1) / 2
    cx, cy = uc * c - vc * s, uc * s + vc * c
    du, dv = u1 - u0, v1 - v0
    if du >= dv:
        return cx, cy, du, dv, theta
    return cx, cy, dv, du, theta + math.pi / 2


def fit_box_from_cluster(points, class_id: int, score: float = 1.0) -> Box3D:
    """Min-area rotated BEV rectangle; z extent from the point range. Heading follows the long side."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) < 3:
        raise DegenerateCluster(f"need >= 3 points, got {len(pts)}")
    cx, cy, l, w, yaw = _min_area_rect(pts[:, :2])
    z0, z1 = float(pts[:, 2].min()), float(pts[:, 2].max())
    # tiny pad keeps boundary points inside under rounding; flat clusters get a sliver of height
    pad = 1e-9 * max(1.0, abs(cx), abs(cy), l)
    h = max(z1 - z0, 1e-6)
    return Box3D(cx, cy, (z0 + z1) / 2, w + 2 * pad, l + 2 * pad, h + 2 * pad, yaw, class_id, score)


def cluster_proposals(cloud: PointCloud, labels, cfg: FusionConfig = FusionConfig()) -> list[Box3D]:
    """DBSCAN over (x, y, z, label_weight * label); one fitted box per cluster.

    Points labeled -1 are unlabeled and ignored.  Each box takes its cluster's
    majority label (smallest id on ties) and the label purity as score.
    """
    lab = np.asarray(labels, dtype=np.int64).reshape(-1)
    if len(lab) != len(cloud):
        raise ValueError(f"{len(lab)} labels for {len(cloud)} points")
    keep = lab >= 0
    if not keep.any():
        return []
    pts = cloud.points[keep].astype(np.float64)
    lab = lab[keep]
    feats = np.concatenate([pts, cfg.label_weight * lab[:, None].astype(np.float64)], axis=1)
    ids = dbscan(feats, cfg.cluster_eps, cfg.cluster_min_pts)
    out = []
    for k in range(ids.max() + 1 if len(ids) else 0):
        m = ids == k
        counts = Counter(lab[m].tolist())
        top = max(counts.values())
        cid = min(c for c, n in counts.items() if n == top)
        try:
            out.append(fit_box_from_cluster(pts[m], cid, top / int(m.sum())))
        except DegenerateCluster:
            continue
    return out
