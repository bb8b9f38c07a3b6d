"""Remote propagation: a class-wise memory bank of harvested instances, the
geometry / density simulators that re-place them, and the source filters."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .config import FilterConfig, SimulatorConfig
from .errors import FormatError, PlacementExhausted
from .geometry import (Box3D, PointCloud, count_in_box, iou_bev, nms, points_in_box,
                       points_to_global, points_to_local)
from .ingest import Scene, box_from_record, box_to_record, read_json, write_json

log = logging.getLogger(__name__)


@dataclass(eq=False)
class BankEntry:
    box: Box3D
    local_points: np.ndarray
    confidence: float
    scene_id: str | None = None   # provenance; entries from one scene dedupe by overlap

    def __post_init__(self):
        self.local_points = np.asarray(self.local_points, dtype=np.float64).reshape(-1, 3)
        self.confidence = float(self.confidence)
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must lie in [0, 1], got {self.confidence}")
        half = np.array([self.box.l, self.box.w, self.box.h]) / 2
        if len(self.local_points) and np.any(np.abs(self.local_points) > half + 1e-9):
            raise ValueError("bank entry points must lie inside the box")

    @property
    def class_id(self) -> int:
        return self.box.class_id

    def to_record(self) -> dict:
        return {"box": box_to_record(self.box), "confidence": self.confidence,
                "scene_id": self.scene_id, "local_points": self.local_points.tolist()}

    @classmethod
    def from_record(cls, rec) -> "BankEntry":
        try:
            return cls(box_from_record(rec["box"]), np.array(rec["local_points"], dtype=np.float64),
                       rec["confidence"], rec.get("scene_id"))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"bad bank entry: {exc}") from exc


@dataclass(eq=False)
class MemoryBank:
    capacity: int = 60
    queues: dict = field(default_factory=dict)   # class_id -> list[BankEntry], best first

    def __len__(self):
        return sum(len(q) for q in self.queues.values())

    def entries(self) -> list[BankEntry]:
        return [e for cid in sorted(self.queues) for e in self.queues[cid]]

    def mean_confidence(self) -> float:
        es = self.entries()
        return float(np.mean([e.confidence for e in es])) if es else 0.0

    def to_record(self) -> dict:
        return {"capacity": self.capacity,
                "queues": {str(c): [e.to_record() for e in self.queues[c]] for c in sorted(self.queues)}}

    @classmethod
    def from_record(cls, rec) -> "MemoryBank":
        if not isinstance(rec, dict) or "queues" not in rec:
            raise FormatError("bank must be an object with 'queues'")
        try:
            bank = cls(int(rec.get("capacity", 60)))
            for k, lst in rec["queues"].items():
                bank.queues[int(k)] = [BankEntry.from_record(r) for r in lst]
        except (TypeError, ValueError) as exc:
            raise FormatError(f"bad bank: {exc}") from exc
        return bank


def save_bank(path, bank: MemoryBank):
    write_json(path, bank.to_record())


def load_bank(path) -> MemoryBank:
    return MemoryBank.from_record(read_json(path))


# --------------------------------------------------------------------------
# filters
# --------------------------------------------------------------------------

def filter_overlap_with_base(novels, base_gt, beta: float) -> list[Box3D]:
    """Drop novels whose max BEV IoU with any base box is strictly above ``beta``."""
    return [n for n in novels if all(iou_bev(n, b) <= beta for b in base_gt)]


def filter_quality(boxes, cloud: PointCloud, cfg: FilterConfig) -> list[Box3D]:
    """Drop boxes with too few points or centers too close to the ego origin."""
    return [b for b in boxes
            if math.hypot(b.cx, b.cy) >= cfg.min_ego_distance and count_in_box(cloud, b) >= cfg.min_points]


def combine_sources(seeker_props, pseudo_boxes, base_gt, cloud: PointCloud, cfg: FilterConfig) -> list[Box3D]:
    """Concatenate, reject base overlaps, NMS by score, then quality-filter.

    Seeker proposals carry their VLM score, so a pseudo label only displaces an
    overlapping proposal when it is more confident.
    """
    boxes = list(seeker_props) + list(pseudo_boxes)
    boxes = filter_overlap_with_base(boxes, base_gt, cfg.beta_overlap)
    boxes = nms(boxes, cfg.nms_iou)
    return filter_quality(boxes, cloud, cfg)


# --------------------------------------------------------------------------
# bank maintenance
# --------------------------------------------------------------------------

def harvest(scene: Scene, proposals) -> list[BankEntry]:
    out = []
    for b in proposals:
        if len(scene.cloud):
            mask = points_in_box(scene.cloud.points, b)
            local = points_to_local(scene.cloud.points[mask], b)
        else:
            local = np.zeros((0, 3))
        out.append(BankEntry(b, local, b.score, scene.scene_id))
    return out


@dataclass
class EvictionReport:
    inserted: int = 0
    rejected: int = 0      # failed the quality filter
    replaced: int = 0      # superseded a same-object entry of lower confidence
    evicted: int = 0       # pushed out by capacity

    def as_dict(self):
        return dict(self.__dict__)


def _entry_ok(e: BankEntry, cfg: FilterConfig) -> bool:
    return len(e.local_points) >= cfg.min_points and math.hypot(e.box.cx, e.box.cy) >= cfg.min_ego_distance


def bank_update(bank: MemoryBank, entries, cfg: FilterConfig) -> tuple[MemoryBank, EvictionReport]:
    """Insert quality-filtered entries and keep the top ``capacity`` per class.

    Ordering is by descending confidence, ties by arrival.  Two entries with the
    same ``scene_id`` whose boxes overlap in BEV are the same object; only the
    more confident one is kept.
    """
    rep = EvictionReport()
    queues = {c: list(q) for c, q in bank.queues.items()}
    for e in entries:
        if not _entry_ok(e, cfg):
            rep.rejected += 1
            continue
        q = queues.setdefault(e.class_id, [])
        if e.scene_id is not None:
            dup = next((i for i, o in enumerate(q)
                        if o.scene_id == e.scene_id and iou_bev(o.box, e.box) > 0.0), None)
            if dup is not None:
                if q[dup].confidence >= e.confidence:
                    rep.rejected += 1
                    continue
                del q[dup]
                rep.replaced += 1
        # insert after all entries of equal or higher confidence (stable)
        pos = len(q)
        for i, o in enumerate(q):
            if o.confidence < e.confidence:
                pos = i
                break
        q.insert(pos, e)
        rep.inserted += 1
        if len(q) > bank.capacity:
            q.pop()
            rep.evicted += 1
    return MemoryBank(bank.capacity, {c: q for c, q in queues.items() if q}), rep


# --------------------------------------------------------------------------
# simulators
# --------------------------------------------------------------------------

def density_simulate(points: np.ndarray, p_drop: float, rng: np.random.Generator) -> np.ndarray:
    """With probability ``p_drop`` remove N_drop ~ U{0..N//2} points, chosen without replacement."""
    pts = np.asarray(points)
    n = len(pts)
    if n == 0 or rng.random() >= p_drop:
        return pts
    n_drop = int(rng.integers(0, n // 2 + 1))
    if n_drop == 0:
        return pts
    keep = np.ones(n, dtype=bool)
    keep[rng.choice(n, size=n_drop, replace=False)] = False
    return pts[keep]


def _sample_pose(entry: BankEntry, cfg: SimulatorConfig, rng) -> Box3D:
    b = entry.box
    dx, dy = rng.normal(0.0, cfg.sigma_xyz, 2) if cfg.sigma_xyz > 0 else (0.0, 0.0)
    dt = rng.normal(0.0, cfg.sigma_theta) if cfg.sigma_theta > 0 else 0.0
    # z untouched: the pasted box keeps the entry's bottom height
    return b.replace(cx=b.cx + dx, cy=b.cy + dy, yaw=b.yaw + dt, score=entry.confidence)


def geometry_simulate(bank: MemoryBank, scene: Scene, cfg: SimulatorConfig, rng_seed,
                      density: bool = True) -> tuple[Scene, list[Box3D]]:
    """Paste ``n_paste`` perturbed bank instances into ``scene`` without any BEV overlap.

    Scene points falling inside a pasted box are replaced by the instance's own
    points.  Pasted boxes are appended to the scene's novel ground truth.
    """
    rng = np.random.default_rng(rng_seed)
    classes = sorted(c for c, q in bank.queues.items() if q)
    if not classes:
        log.warning("memory bank is empty; scene %s left unchanged", scene.scene_id)
        return scene, []
    occupied = list(scene.all_gt)
    pasted: list[Box3D] = []
    chunks: list[np.ndarray] = []
    for _ in range(cfg.n_paste):
        cid = classes[int(rng.integers(len(classes)))]
        queue = bank.queues[cid]
        entry = queue[int(rng.integers(len(queue)))]
        try:
            box = None
            for _attempt in range(cfg.max_place_attempts):
                cand = _sample_pose(entry, cfg, rng)
                if all(iou_bev(cand, o) <= 0.0 for o in occupied):
                    box = cand
                    break
            if box is None:
                raise PlacementExhausted(f"no free pose for a class {cid} instance after "
                                         f"{cfg.max_place_attempts} attempts")
        except PlacementExhausted as exc:
            log.info("%s; paste skipped", exc)
            continue
        local = density_simulate(entry.local_points, cfg.p_drop, rng) if density else entry.local_points
        occupied.append(box)
        pasted.append(box)
        chunks.append(points_to_global(local, box))

    if not pasted:
        return scene, []
    keep = np.ones(len(scene.cloud), dtype=bool)
    for b in pasted:
        if len(scene.cloud):
            keep &= ~points_in_box(scene.cloud.points, b)
    cloud = scene.cloud.subset(keep).concat(PointCloud(np.concatenate(chunks)))
    out = Scene(scene.scene_id, cloud, list(scene.cameras), list(scene.base_gt),
                list(scene.novel_gt) + pasted)
    return out, pasted
