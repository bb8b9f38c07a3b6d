"""Synthetic urban scenes: non-overlapping boxes, range-dependent LiDAR returns,
a surround camera rig and (optionally corrupted) projected 2D detections."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .errors import BoxBehindCamera, ConfigError, PlacementExhausted
from .geometry import Box3D, CameraModel, PointCloud, iou_bev, project_box
from .ingest import Detection2D, Scene, Vocabulary

# (w, l, h) in meters, following common nuScenes anchor tables
DEFAULT_ANCHORS = {
    0: (1.97, 4.63, 1.74),   # car
    1: (2.51, 6.93, 2.84),   # truck
    2: (0.60, 1.70, 1.28),   # bicycle
    3: (0.77, 2.11, 1.47),   # motorcycle
    4: (2.53, 0.50, 0.98),   # barrier
}
DEFAULT_VOCAB = Vocabulary(base_classes=((0, "car"), (1, "truck")),
                           novel_classes=((2, "bicycle"), (3, "motorcycle"), (4, "barrier")))


@dataclass(frozen=True)
class SynthSpec:
    n_objects: dict = field(default_factory=lambda: {0: (2, 3), 1: (1, 2), 2: (2, 2), 3: (2, 2), 4: (1, 2)})
    anchors: dict = field(default_factory=lambda: dict(DEFAULT_ANCHORS))
    base_classes: tuple = (0, 1)
    r_min: float = 6.0
    r_max: float = 40.0
    size_jitter: float = 0.04
    point_density: float = 2500.0   # returns per m^2 of visible face at 1 m
    falloff: float = 2.0
    ground_points: int = 6000
    clutter_points: int = 600
    sensor_height: float = 1.9
    camera_height: float = 1.6
    n_cameras: int = 6
    image_w: int = 1600
    image_h: int = 900
    focal: float = 1266.0
    box_jitter_px: float = 0.0
    miss_prob: float = 0.0
    misclass_prob: float = 0.0
    score_range: tuple = (0.5, 1.0)
    max_place_attempts: int = 200
    seed: int = 0

    def validate(self):
        for p in (self.miss_prob, self.misclass_prob):
            if not 0.0 <= p <= 1.0:
                raise ConfigError("probabilities must lie in [0, 1]")
        if not 0 <= self.r_min < self.r_max:
            raise ConfigError("need 0 <= r_min < r_max")
        lo, hi = self.score_range
        if not 0.0 <= lo <= hi <= 1.0:
            raise ConfigError("score_range must be an ordered pair in [0, 1]")
        for cid, (a, b) in self.n_objects.items():
            if not 0 <= a <= b:
                raise ConfigError(f"bad object count range for class {cid}")
            if cid not in self.anchors:
                raise ConfigError(f"no size prior for class {cid}")
        if self.n_cameras < 1 or self.focal <= 0:
            raise ConfigError("camera rig needs >= 1 camera and a positive focal length")
        return self

    @classmethod
    def from_record(cls, rec: dict) -> "SynthSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(rec) - known
        if unknown:
            raise ConfigError(f"unknown synth spec keys {sorted(unknown)}")
        rec = dict(rec)
        if "n_objects" in rec:
            rec["n_objects"] = {int(k): tuple(v) for k, v in rec["n_objects"].items()}
        if "anchors" in rec:
            rec["anchors"] = {int(k): tuple(v) for k, v in rec["anchors"].items()}
        for key in ("base_classes", "score_range"):
            if key in rec:
                rec[key] = tuple(rec[key])
        try:
            return replace(cls(), **rec).validate()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def vocabulary(self) -> Vocabulary:
        names = dict(DEFAULT_VOCAB.base_classes + DEFAULT_VOCAB.novel_classes)
        ids = sorted(set(self.n_objects) | set(self.anchors))
        base = tuple((i, names.get(i, f"class{i}")) for i in ids if i in self.base_classes)
        novel = tuple((i, names.get(i, f"class{i}")) for i in ids if i not in self.base_classes)
        return Vocabulary(base, novel)


def camera_rig(spec: SynthSpec) -> list[CameraModel]:
    """``n_cameras`` pinhole cameras evenly spaced in azimuth, looking horizontally."""
    K = np.array([[spec.focal, 0.0, spec.image_w / 2],
                  [0.0, spec.focal, spec.image_h / 2],
                  [0.0, 0.0, 1.0]])
    rig = []
    for i in range(spec.n_cameras):
        phi = 2 * math.pi * i / spec.n_cameras
        c, s = math.cos(phi), math.sin(phi)
        R = np.array([[s, -c, 0.0],     # x right
                      [0.0, 0.0, -1.0],  # y down
                      [c, s, 0.0]])     # z forward
        pos = np.array([0.0, 0.0, spec.camera_height])
        T = np.eye(4)
        T[:3, :3] = R
        T[:3, 3] = -R @ pos
        rig.append(CameraModel(f"cam{i}", K, T, spec.image_w, spec.image_h))
    return rig


def visibility(scene: Scene, box: Box3D) -> set[str]:
    """Cameras in which the box projects onto a positive-area part of the image."""
    out = set()
    for cam in scene.cameras:
        try:
            r = project_box(box, cam)
        except BoxBehindCamera:
            continue
        if r.u_max > r.u_min and r.v_max > r.v_min:
            out.add(cam.camera_id)
    return out


def _place_boxes(spec: SynthSpec, rng: np.random.Generator) -> list[Box3D]:
    boxes: list[Box3D] = []
    for cid in sorted(spec.n_objects):
        lo, hi = spec.n_objects[cid]
        n = int(rng.integers(lo, hi + 1))
        w0, l0, h0 = spec.anchors[cid]
        for _ in range(n):
            for _attempt in range(spec.max_place_attempts):
                scale = np.clip(1.0 + spec.size_jitter * rng.standard_normal(3), 0.85, 1.15)
                r = math.sqrt(rng.uniform(spec.r_min ** 2, spec.r_max ** 2))
                phi = rng.uniform(-math.pi, math.pi)
                yaw = rng.uniform(-math.pi, math.pi)
                w, l, h = w0 * scale[0], l0 * scale[1], h0 * scale[2]
                cand = Box3D(r * math.cos(phi), r * math.sin(phi), h / 2, w, l, h, yaw, cid, 1.0)
                if all(iou_bev(cand, b) == 0.0 for b in boxes):
                    boxes.append(cand)
                    break
            else:
                raise PlacementExhausted(f"could not place object of class {cid} after "
                                         f"{spec.max_place_attempts} attempts")
    return boxes


# face id -> (local normal, (u-axis, v-axis) spanned, extents picked from (l, w, h))
_FACES = (
    ((1, 0, 0), (1, 2)), ((-1, 0, 0), (1, 2)),
    ((0, 1, 0), (0, 2)), ((0, -1, 0), (0, 2)),
    ((0, 0, 1), (0, 1)),
)


def sample_box_surface(box: Box3D, sensor: np.ndarray, spec: SynthSpec, rng) -> np.ndarray:
    """LiDAR returns on the sensor-facing faces; count ~ area / range^falloff."""
    ext = np.array([box.l, box.w, box.h])
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    rng_dist = max(float(np.linalg.norm(box.center - sensor)), 1.0)
    # sensor position in the box frame
    d = sensor - box.center
    sl = np.array([c * d[0] + s * d[1], -s * d[0] + c * d[1], d[2]])
    chunks = []
    for normal, (a, b) in _FACES:
        n = np.array(normal, dtype=np.float64)
        axis = int(np.flatnonzero(n)[0])
        face_center = n * ext / 2
        if np.dot(n, sl - face_center) <= 0:
            continue
        area = ext[a] * ext[b]
        k = rng.poisson(spec.point_density * area / rng_dist ** spec.falloff)
        if k == 0:
            continue
        loc = np.zeros((k, 3))
        loc[:, axis] = face_center[axis]
        loc[:, a] = rng.uniform(-0.5, 0.5, k) * ext[a]
        loc[:, b] = rng.uniform(-0.5, 0.5, k) * ext[b]
        chunks.append(loc)
    if not chunks:
        return np.zeros((0, 3))
    loc = np.concatenate(chunks)
    out = np.empty_like(loc)
    out[:, 0] = c * loc[:, 0] - s * loc[:, 1] + box.cx
    out[:, 1] = s * loc[:, 0] + c * loc[:, 1] + box.cy
    out[:, 2] = loc[:, 2] + box.cz
    return out


def _outside_footprints(pts: np.ndarray, boxes: list[Box3D], margin: float = 0.0) -> np.ndarray:
    keep = np.ones(len(pts), dtype=bool)
    for b in boxes:
        c, s = math.cos(b.yaw), math.sin(b.yaw)
        dx, dy = pts[:, 0] - b.cx, pts[:, 1] - b.cy
        lx = c * dx + s * dy
        ly = -s * dx + c * dy
        keep &= ~((np.abs(lx) <= b.l / 2 + margin) & (np.abs(ly) <= b.w / 2 + margin))
    return keep


def _background(spec: SynthSpec, boxes, rng) -> np.ndarray:
    # ground returns thin out like range^-2: log-uniform radius
    r_hi = spec.r_max + 15.0
    r = np.exp(rng.uniform(math.log(2.0), math.log(r_hi), spec.ground_points))
    phi = rng.uniform(-math.pi, math.pi, spec.ground_points)
    ground = np.stack([r * np.cos(phi), r * np.sin(phi), rng.normal(0.0, 0.02, spec.ground_points)], 1)
    rc = np.sqrt(rng.uniform(spec.r_min ** 2, r_hi ** 2, spec.clutter_points))
    pc = rng.uniform(-math.pi, math.pi, spec.clutter_points)
    clutter = np.stack([rc * np.cos(pc), rc * np.sin(pc), rng.uniform(0.0, 3.0, spec.clutter_points)], 1)
    bg = np.concatenate([ground, clutter])
    return bg[_outside_footprints(bg, boxes, margin=0.05)]


def _corrupt(det_box, spec: SynthSpec, rng, cam: CameraModel):
    from .geometry import Box2D
    if spec.box_jitter_px <= 0:
        return det_box
    v = np.array(det_box.as_list()) + rng.normal(0.0, spec.box_jitter_px, 4)
    u0, u1 = np.clip(sorted(v[[0, 2]]), 0, cam.image_w)
    v0, v1 = np.clip(sorted(v[[1, 3]]), 0, cam.image_h)
    return Box2D(float(u0), float(v0), float(u1), float(v1))


def gen_scene(spec: SynthSpec, scene_id: str | None = None):
    """Returns ``(scene, detections)``; fully determined by ``spec.seed``."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    boxes = _place_boxes(spec, rng)
    sensor = np.array([0.0, 0.0, spec.sensor_height])
    obj_pts = [sample_box_surface(b, sensor, spec, rng) for b in boxes]
    bg = _background(spec, boxes, rng)
    pts = np.concatenate(obj_pts + [bg]) if obj_pts else bg
    cloud = PointCloud(pts.astype(np.float32), rng.uniform(0.0, 1.0, len(pts)).astype(np.float32))
    base = [b for b in boxes if b.class_id in spec.base_classes]
    novel = [b for b in boxes if b.class_id not in spec.base_classes]
    scene = Scene(scene_id or f"synth_{spec.seed:06d}", cloud, camera_rig(spec), base, novel)

    class_ids = sorted(spec.n_objects)
    dets = []
    for b in boxes:
        for cam in scene.cameras:
            if cam.camera_id not in visibility(Scene("_", cloud, [cam]), b):
                continue
            if rng.uniform() < spec.miss_prob:
                continue
            cid = b.class_id
            if len(class_ids) > 1 and rng.uniform() < spec.misclass_prob:
                cid = int(rng.choice([c for c in class_ids if c != b.class_id]))
            det_box = _corrupt(project_box(b, cam), spec, rng, cam)
            score = float(rng.uniform(*spec.score_range))
            dets.append(Detection2D(cam.camera_id, cid, score, det_box))
    return scene, dets


def gen_dataset(spec: SynthSpec, n: int):
    """``n`` scenes with consecutive seeds starting at ``spec.seed``."""
    return [gen_scene(replace(spec, seed=spec.seed + i)) for i in range(n)]
