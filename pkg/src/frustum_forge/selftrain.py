"""Near-to-far self-training driver around a pluggable detector."""
from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from .config import FilterConfig, RoundConfig, SimulatorConfig
from .errors import DegenerateEma
from .geometry import Box3D, nms
from .ingest import Scene
from .propagator import (MemoryBank, bank_update, combine_sources, filter_overlap_with_base,
                         filter_quality, geometry_simulate, harvest)

log = logging.getLogger(__name__)


@dataclass
class EmaLossNormalizer:
    alpha: float = 0.5
    momentum: float = 0.99
    ema_base: float | None = None
    ema_novel: float | None = None

    @property
    def warm(self) -> bool:
        return self.ema_base is not None and self.ema_novel is not None


def normalize_loss(L_B: float, L_N: float, state: EmaLossNormalizer) -> tuple[float, EmaLossNormalizer]:
    """Balanced loss (L_B + a * (ema_B / ema_N) * L_N) / (1 + a) using pre-update EMAs.

    The first call seeds both EMAs with the observed losses.
    """
    if L_B < 0 or L_N < 0:
        raise ValueError("losses must be nonnegative")
    eb = state.ema_base if state.ema_base is not None else float(L_B)
    en = state.ema_novel if state.ema_novel is not None else float(L_N)
    a = state.alpha
    if a == 0:
        loss = float(L_B)
    else:
        if en < 1e-12:
            raise DegenerateEma(f"novel-loss EMA is {en:.3g}; cannot rescale")
        loss = (L_B + a * (eb / en) * L_N) / (1.0 + a)
    m = state.momentum
    new = EmaLossNormalizer(a, m, m * eb + (1 - m) * L_B, m * en + (1 - m) * L_N)
    return loss, new


# --------------------------------------------------------------------------
# detector port
# --------------------------------------------------------------------------

class DetectorPort(Protocol):
    def fit(self, scenes: Sequence[Scene]) -> dict: ...

    def predict(self, scene: Scene) -> list[Box3D]: ...


def _scene_key(scene_id: str) -> int:
    return zlib.crc32(scene_id.encode())


class NoisyOracleDetector:
    """Test double: returns ground truth with Gaussian BEV position noise.

    Score is ``1 - |noise| / 2`` clipped to [0, 1], so better-placed boxes are
    more confident.  ``fit`` trains nothing; it emits a decaying synthetic
    (L_B, L_N) stream so the loss bookkeeping has something to chew on.
    """

    def __init__(self, gt_access: Callable[[Scene], list] | None = None, noise_sigma: float = 0.3,
                 miss_rate: float = 0.0, seed: int = 0, steps_per_fit: int = 20):
        if noise_sigma < 0 or not 0.0 <= miss_rate <= 1.0:
            raise ValueError("need noise_sigma >= 0 and miss_rate in [0, 1]")
        self.gt_access = gt_access or (lambda s: s.all_gt)
        self.noise_sigma = noise_sigma
        self.miss_rate = miss_rate
        self.seed = seed
        self.steps_per_fit = steps_per_fit
        self.n_fits = 0

    def fit(self, scenes: Sequence[Scene]) -> dict:
        rng = np.random.default_rng([self.seed, 1, self.n_fits])
        self.n_fits += 1
        steps = np.arange(self.steps_per_fit)
        base = 1.0 / (1.0 + 0.1 * (steps + self.n_fits * self.steps_per_fit))
        novel = 3.0 * base
        losses = [(float(b * (1 + 0.1 * rng.random())), float(n * (1 + 0.1 * rng.random())))
                  for b, n in zip(base, novel)]
        n_boxes = sum(len(s.all_gt) for s in scenes)
        return {"steps": len(losses), "losses": losses, "n_scenes": len(scenes), "n_boxes": n_boxes}

    def predict(self, scene: Scene) -> list[Box3D]:
        rng = np.random.default_rng([self.seed, 2, self.n_fits, _scene_key(scene.scene_id)])
        out = []
        for b in self.gt_access(scene):
            if rng.random() < self.miss_rate:
                continue
            n = rng.normal(0.0, self.noise_sigma, 2) if self.noise_sigma > 0 else np.zeros(2)
            score = min(max(1.0 - float(np.hypot(*n)) / 2.0, 0.0), 1.0)
            out.append(b.replace(cx=b.cx + float(n[0]), cy=b.cy + float(n[1]), score=score))
        return out


def noisy_oracle_detector(gt_access=None, noise_sigma: float = 0.3, miss_rate: float = 0.0,
                          seed: int = 0) -> NoisyOracleDetector:
    return NoisyOracleDetector(gt_access, noise_sigma, miss_rate, seed)


# --------------------------------------------------------------------------
# rounds
# --------------------------------------------------------------------------

@dataclass
class RoundReport:
    round_index: int
    n_training_boxes: int = 0
    n_pastes: int = 0
    n_predictions: int = 0
    n_new_pseudos: int = 0
    n_pseudos: int = 0
    pseudo_recall: float | None = None
    pseudo_precision: float | None = None
    mean_loss: float | None = None
    bank_size: int = 0
    bank_mean_confidence: float = 0.0
    bank_update: dict = field(default_factory=dict)

    def as_dict(self):
        return dict(self.__dict__)


def _recall_precision(pseudos: dict, scenes: Sequence[Scene], dist: float):
    from .evaluation import match

    tp = n_gt = n_pred = 0
    for s in scenes:
        preds = pseudos.get(s.scene_id, [])
        n_pred += len(preds)
        n_gt += len(s.novel_gt)
        for cid in {b.class_id for b in s.novel_gt}:
            m = match([p for p in preds if p.class_id == cid], [g for g in s.novel_gt if g.class_id == cid], dist)
            tp += m.n_tp
    recall = tp / n_gt if n_gt else None
    precision = tp / n_pred if n_pred else None
    return recall, precision


def run_round(dataset: Sequence[Scene], detector: DetectorPort, bank: MemoryBank, seeker_props: dict,
              cfg: RoundConfig, sim_cfg: SimulatorConfig, filt_cfg: FilterConfig, *,
              novel_ids, pseudos: dict | None = None, normalizer: EmaLossNormalizer | None = None,
              round_index: int = 0, match_dist: float = 2.0):
    """One self-training round.

    Returns ``(bank, report, pseudos, normalizer)``.  ``pseudos`` maps scene_id
    to the accumulated pseudo-label set; new confident predictions are merged
    into it by NMS so a better-placed copy replaces a worse one.
    """
    pseudos = {k: list(v) for k, v in (pseudos or {}).items()}
    novel_ids = set(novel_ids)
    rep = RoundReport(round_index)

    # training set: base GT + combined novel labels + pasted instances
    training = []
    for i, s in enumerate(dataset):
        labels = combine_sources(seeker_props.get(s.scene_id, []), pseudos.get(s.scene_id, []),
                                 s.base_gt, s.cloud, filt_cfg)
        labeled = Scene(s.scene_id, s.cloud, s.cameras, s.base_gt, labels)
        if len(bank):
            labeled, pasted = geometry_simulate(bank, labeled, sim_cfg, [cfg.seed, round_index, i])
            rep.n_pastes += len(pasted)
        rep.n_training_boxes += len(labeled.all_gt)
        training.append(labeled)

    fit_report = detector.fit(training) or {}
    if cfg.enable_loss_norm and fit_report.get("losses"):
        norm = normalizer or EmaLossNormalizer(cfg.loss_alpha, cfg.ema_momentum)
        total = 0.0
        for lb, ln in fit_report["losses"]:
            loss, norm = normalize_loss(lb, ln, norm)
            total += loss
        rep.mean_loss = total / len(fit_report["losses"])
        normalizer = norm

    new_entries = []
    for s in dataset:
        preds = detector.predict(s)
        rep.n_predictions += len(preds)
        fresh = [p for p in preds if p.class_id in novel_ids and p.score >= cfg.pseudo_score_threshold]
        fresh = filter_overlap_with_base(fresh, s.base_gt, filt_cfg.beta_overlap)
        fresh = filter_quality(fresh, s.cloud, filt_cfg)
        rep.n_new_pseudos += len(fresh)
        merged = nms(pseudos.get(s.scene_id, []) + fresh, filt_cfg.nms_iou)
        pseudos[s.scene_id] = sorted(merged, key=lambda b: (b.class_id, b.cx, b.cy))
        new_entries.extend(harvest(s, fresh))
    if rep.n_predictions == 0:
        log.warning("round %d: detector returned no predictions", round_index)

    bank, ev = bank_update(bank, new_entries, filt_cfg)
    rep.bank_update = ev.as_dict()
    rep.n_pseudos = sum(len(v) for v in pseudos.values())
    if any(s.novel_gt for s in dataset):
        rep.pseudo_recall, rep.pseudo_precision = _recall_precision(pseudos, dataset, match_dist)
    rep.bank_size = len(bank)
    rep.bank_mean_confidence = bank.mean_confidence()
    return bank, rep, pseudos, normalizer


def seed_bank(dataset: Sequence[Scene], seeker_props: dict, filt_cfg: FilterConfig, capacity: int):
    """Initial bank from the frustum search's proposals."""
    entries = []
    for s in dataset:
        props = combine_sources(seeker_props.get(s.scene_id, []), [], s.base_gt, s.cloud, filt_cfg)
        entries.extend(harvest(s, props))
    return bank_update(MemoryBank(capacity), entries, filt_cfg)


def run_selftrain(dataset: Sequence[Scene], detector: DetectorPort, seeker_props: dict,
                  cfg: RoundConfig, sim_cfg: SimulatorConfig, filt_cfg: FilterConfig, *, novel_ids,
                  bank: MemoryBank | None = None):
    """Seed the bank (unless given) and run ``cfg.n_rounds`` rounds.

    Returns ``(bank, reports, pseudos)``.
    """
    if bank is None:
        bank, _ = seed_bank(dataset, seeker_props, filt_cfg, cfg.bank_capacity)
    if not len(bank):
        log.warning("memory bank is empty after seeding; no pastes until pseudo labels arrive")
    pseudos, norm, reports = {}, None, []
    for r in range(cfg.n_rounds):
        bank, rep, pseudos, norm = run_round(dataset, detector, bank, seeker_props, cfg, sim_cfg, filt_cfg,
                                             novel_ids=novel_ids, pseudos=pseudos, normalizer=norm,
                                             round_index=r)
        log.info("round %d: %d pseudos, bank %d (mean conf %.3f)", r, rep.n_pseudos, rep.bank_size,
                 rep.bank_mean_confidence)
        reports.append(rep)
    return bank, reports, pseudos
