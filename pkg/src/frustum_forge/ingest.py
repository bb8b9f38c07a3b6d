"""File formats: scene manifests + binary points, detections, vocab/anchors, proposals.

The point payload is dense little-endian float32, four values per point
(x, y, z, intensity), no header.  Everything else is JSON.  Writers go
through :func:`atomic_write_bytes` so a failed run never leaves a partial file.
"""
from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import FormatError, IoError, UnknownCameraError
from .geometry import Box2D, Box3D, CameraModel, PointCloud

POINT_DTYPE = np.dtype("<f4")


@dataclass
class Scene:
    scene_id: str
    cloud: PointCloud
    cameras: list[CameraModel] = field(default_factory=list)
    base_gt: list[Box3D] = field(default_factory=list)
    novel_gt: list[Box3D] = field(default_factory=list)

    def __post_init__(self):
        ids = [c.camera_id for c in self.cameras]
        if len(set(ids)) != len(ids):
            raise FormatError(f"duplicate camera ids in scene {self.scene_id}: {ids}")

    def camera(self, camera_id: str) -> CameraModel:
        for cam in self.cameras:
            if cam.camera_id == camera_id:
                return cam
        raise UnknownCameraError(f"scene {self.scene_id} has no camera {camera_id!r}")

    @property
    def all_gt(self) -> list[Box3D]:
        return list(self.base_gt) + list(self.novel_gt)


@dataclass(frozen=True)
class Detection2D:
    camera_id: str
    class_id: int
    score: float
    box: Box2D

    def __post_init__(self):
        if not (isinstance(self.score, (int, float)) and 0.0 <= self.score <= 1.0):
            raise FormatError(f"detection score must lie in [0, 1], got {self.score}")


@dataclass(frozen=True)
class Vocabulary:
    base_classes: tuple = ()
    novel_classes: tuple = ()

    def __post_init__(self):
        base = tuple((int(i), str(n)) for i, n in self.base_classes)
        novel = tuple((int(i), str(n)) for i, n in self.novel_classes)
        object.__setattr__(self, "base_classes", base)
        object.__setattr__(self, "novel_classes", novel)
        b, n = {i for i, _ in base}, {i for i, _ in novel}
        if b & n:
            raise FormatError(f"base and novel class ids overlap: {sorted(b & n)}")

    @property
    def base_ids(self) -> list[int]:
        return [i for i, _ in self.base_classes]

    @property
    def novel_ids(self) -> list[int]:
        return [i for i, _ in self.novel_classes]

    @property
    def all_ids(self) -> list[int]:
        return self.base_ids + self.novel_ids

    def name(self, class_id: int) -> str:
        return dict(self.base_classes + self.novel_classes).get(class_id, str(class_id))


AnchorTable = dict  # class_id -> (w, l, h)


# --------------------------------------------------------------------------
# low-level helpers
# --------------------------------------------------------------------------

def atomic_write_bytes(path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=False, allow_nan=False) + "\n"


def write_json(path, obj):
    try:
        atomic_write_bytes(path, dumps_json(obj).encode())
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_json(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from exc


def _finite(x, what):
    if isinstance(x, bool) or not isinstance(x, (int, float)) or not math.isfinite(x):
        raise FormatError(f"{what} must be a finite number, got {x!r}")
    return float(x)


def _vec(x, n, what):
    if not isinstance(x, list) or len(x) != n:
        raise FormatError(f"{what} must be a list of {n} numbers")
    return [_finite(v, what) for v in x]


def box_to_record(b: Box3D) -> dict:
    return {"class_id": b.class_id, "score": b.score, "center": [b.cx, b.cy, b.cz],
            "size": [b.w, b.l, b.h], "yaw": b.yaw}


def box_from_record(rec) -> Box3D:
    if not isinstance(rec, dict):
        raise FormatError("box record must be an object")
    try:
        cx, cy, cz = _vec(rec["center"], 3, "center")
        w, l, h = _vec(rec["size"], 3, "size")
        yaw = _finite(rec["yaw"], "yaw")
        score = _finite(rec.get("score", 1.0), "score")
        cid = rec["class_id"]
    except KeyError as exc:
        raise FormatError(f"box record missing {exc}") from exc
    if isinstance(cid, bool) or not isinstance(cid, int):
        raise FormatError("class_id must be an integer")
    try:
        return Box3D(cx, cy, cz, w, l, h, yaw, cid, score)
    except ValueError as exc:
        raise FormatError(str(exc)) from exc


def camera_to_record(cam: CameraModel) -> dict:
    return {"camera_id": cam.camera_id,
            "intrinsics": [float(v) for v in cam.intrinsics.ravel()],
            "extrinsic": [float(v) for v in cam.extrinsic.ravel()],
            "image_w": cam.image_w, "image_h": cam.image_h}


def camera_from_record(rec) -> CameraModel:
    try:
        K = _vec(rec["intrinsics"], 9, "intrinsics")
        T = _vec(rec["extrinsic"], 16, "extrinsic")
        return CameraModel(str(rec["camera_id"]), np.array(K), np.array(T),
                           int(rec["image_w"]), int(rec["image_h"]))
    except KeyError as exc:
        raise FormatError(f"camera record missing {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise FormatError(f"bad camera record: {exc}") from exc


# --------------------------------------------------------------------------
# scenes
# --------------------------------------------------------------------------

def save_scene(path, scene: Scene, points_file: str | None = None) -> Path:
    """Write ``scene.json``-style manifest plus its ``.bin`` point payload beside it."""
    path = Path(path)
    points_file = points_file or (path.stem + ".bin")
    payload = np.empty((len(scene.cloud), 4), dtype=POINT_DTYPE)
    payload[:, :3] = scene.cloud.points
    payload[:, 3] = scene.cloud.intensity
    manifest = {
        "scene_id": scene.scene_id,
        "points_file": points_file,
        "point_count": len(scene.cloud),
        "cameras": [camera_to_record(c) for c in scene.cameras],
        "base_gt": [box_to_record(b) for b in scene.base_gt],
        "novel_gt": [box_to_record(b) for b in scene.novel_gt],
    }
    try:
        atomic_write_bytes(path.parent / points_file, payload.tobytes())
    except OSError as exc:
        raise IoError(f"cannot write {path.parent / points_file}: {exc}") from exc
    write_json(path, manifest)
    return path


def load_scene(path) -> Scene:
    path = Path(path)
    man = read_json(path)
    if not isinstance(man, dict):
        raise FormatError(f"{path}: manifest must be an object")
    try:
        scene_id = str(man["scene_id"])
        points_file = man["points_file"]
        count = man["point_count"]
    except KeyError as exc:
        raise FormatError(f"{path}: manifest missing {exc}") from exc
    if isinstance(count, bool) or not isinstance(count, int) or count < 0:
        raise FormatError(f"{path}: point_count must be a nonnegative integer")
    try:
        raw = (path.parent / points_file).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read point file for {path}: {exc}") from exc
    expected = count * 4 * POINT_DTYPE.itemsize
    if len(raw) != expected:
        raise FormatError(f"{path}: point payload has {len(raw)} bytes, manifest implies {expected}")
    payload = np.frombuffer(raw, dtype=POINT_DTYPE).reshape(count, 4)
    if not np.all(np.isfinite(payload)):
        raise FormatError(f"{path}: point payload contains non-finite values")
    cloud = PointCloud(payload[:, :3].copy(), payload[:, 3].copy())
    cameras = [camera_from_record(c) for c in man.get("cameras", [])]
    base = [box_from_record(b) for b in man.get("base_gt", [])]
    novel = [box_from_record(b) for b in man.get("novel_gt", [])]
    return Scene(scene_id, cloud, cameras, base, novel)


# --------------------------------------------------------------------------
# detections
# --------------------------------------------------------------------------

def detection_to_record(d: Detection2D) -> dict:
    return {"camera_id": d.camera_id, "class_id": d.class_id, "score": d.score, "box": d.box.as_list()}


def detection_from_record(rec) -> Detection2D:
    if not isinstance(rec, dict):
        raise FormatError("detection record must be an object")
    try:
        box = _vec(rec["box"], 4, "box")
        cid = rec["class_id"]
        score = _finite(rec["score"], "score")
        cam = str(rec["camera_id"])
    except KeyError as exc:
        raise FormatError(f"detection record missing {exc}") from exc
    if isinstance(cid, bool) or not isinstance(cid, int):
        raise FormatError("class_id must be an integer")
    try:
        return Detection2D(cam, cid, score, Box2D(*box))
    except ValueError as exc:
        raise FormatError(str(exc)) from exc


def save_detections(path, detections: Iterable[Detection2D]):
    write_json(path, [detection_to_record(d) for d in detections])


def load_detections(path, scene: Scene | None = None) -> list[Detection2D]:
    """Parse a detections array; with ``scene`` given, camera ids are checked against its rig."""
    raw = read_json(path)
    if not isinstance(raw, list):
        raise FormatError(f"{path}: detections must be a JSON array")
    dets = [detection_from_record(r) for r in raw]
    if scene is not None:
        known = {c.camera_id for c in scene.cameras}
        for d in dets:
            if d.camera_id not in known:
                raise UnknownCameraError(f"{path}: unknown camera_id {d.camera_id!r}")
    return dets


# --------------------------------------------------------------------------
# proposals, vocab, anchors
# --------------------------------------------------------------------------

def save_proposals(path, proposals: Sequence[Box3D]):
    write_json(path, [box_to_record(b) for b in proposals])


def load_proposals(path) -> list[Box3D]:
    raw = read_json(path)
    if not isinstance(raw, list):
        raise FormatError(f"{path}: proposals must be a JSON array")
    return [box_from_record(r) for r in raw]


def vocab_to_record(v: Vocabulary) -> dict:
    return {"base": {str(i): n for i, n in v.base_classes},
            "novel": {str(i): n for i, n in v.novel_classes}}


def load_vocab(path) -> Vocabulary:
    raw = read_json(path)
    if not isinstance(raw, dict) or set(raw) - {"base", "novel"}:
        raise FormatError(f"{path}: vocab must be an object with 'base' and 'novel' maps")
    try:
        base = [(int(k), n) for k, n in raw.get("base", {}).items()]
        novel = [(int(k), n) for k, n in raw.get("novel", {}).items()]
    except (ValueError, AttributeError) as exc:
        raise FormatError(f"{path}: bad vocab ({exc})") from exc
    return Vocabulary(tuple(base), tuple(novel))


def save_vocab(path, vocab: Vocabulary):
    write_json(path, vocab_to_record(vocab))


def anchors_to_record(anchors: AnchorTable) -> dict:
    return {str(k): [float(x) for x in v] for k, v in sorted(anchors.items())}


def load_anchors(path, vocab: Vocabulary | None = None) -> AnchorTable:
    """``{"class_id": [w, l, h], ...}``"""
    raw = read_json(path)
    if not isinstance(raw, dict):
        raise FormatError(f"{path}: anchors must be a JSON object")
    table = {}
    for k, v in raw.items():
        try:
            cid = int(k)
        except ValueError as exc:
            raise FormatError(f"{path}: anchor key {k!r} is not a class id") from exc
        wlh = _vec(v, 3, f"anchor {k}")
        if min(wlh) <= 0:
            raise FormatError(f"{path}: anchor {k} extents must be positive")
        table[cid] = tuple(wlh)
    if vocab is not None:
        missing = [c for c in vocab.novel_ids if c not in table]
        if missing:
            raise FormatError(f"{path}: no anchor for novel classes {missing}")
    return table


def save_anchors(path, anchors: AnchorTable):
    write_json(path, anchors_to_record(anchors))
