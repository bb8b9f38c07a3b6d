"""Pipeline configuration with defaults taken from the method's published settings.

``config.json`` is a flat JSON object; every key belongs to exactly one
section below.  Missing keys keep their defaults, unknown keys are rejected.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigError, IoError


@dataclass(frozen=True)
class SearchSpec:
    k_d: int = 4
    k_o: int = 10
    k_s: int = 4
    scale_lo: float = 0.95
    scale_hi: float = 1.2
    q_lo: float = 0.0
    q_hi: float = 0.25
    min_frustum_points: int = 5

    def validate(self):
        for name in ("k_d", "k_o", "k_s"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not 0 < self.scale_lo <= self.scale_hi:
            raise ConfigError("need 0 < scale_lo <= scale_hi")
        if not 0.0 <= self.q_lo <= self.q_hi <= 1.0:
            raise ConfigError("need 0 <= q_lo <= q_hi <= 1")
        if self.min_frustum_points < 1:
            raise ConfigError("min_frustum_points must be >= 1")

    @property
    def n_candidates(self) -> int:
        return self.k_d * self.k_o * self.k_s


@dataclass(frozen=True)
class OracleConfig:
    alpha_iou: float = 2.0
    min_composite: float = 0.0

    def validate(self):
        if self.alpha_iou < 0:
            raise ConfigError("alpha_iou must be >= 0")


@dataclass(frozen=True)
class SimulatorConfig:
    n_paste: int = 4
    sigma_xyz: float = 1.0
    sigma_theta: float = math.pi / 4
    p_drop: float = 0.2
    max_place_attempts: int = 20

    def validate(self):
        if self.n_paste < 0 or self.sigma_xyz < 0 or self.sigma_theta < 0 or self.max_place_attempts < 0:
            raise ConfigError("simulator parameters must be nonnegative")
        if not 0.0 <= self.p_drop <= 1.0:
            raise ConfigError("p_drop must lie in [0, 1]")


@dataclass(frozen=True)
class FilterConfig:
    beta_overlap: float = 0.1
    min_points: int = 5
    min_ego_distance: float = 2.0
    nms_iou: float = 0.2

    def validate(self):
        if not 0.0 <= self.beta_overlap <= 1.0 or not 0.0 <= self.nms_iou <= 1.0:
            raise ConfigError("IoU thresholds must lie in [0, 1]")
        if self.min_points < 0 or self.min_ego_distance < 0:
            raise ConfigError("min_points and min_ego_distance must be nonnegative")


@dataclass(frozen=True)
class RoundConfig:
    n_rounds: int = 3
    pseudo_score_threshold: float = 0.6
    enable_loss_norm: bool = True
    loss_alpha: float = 0.5
    ema_momentum: float = 0.99
    bank_capacity: int = 60
    seed: int = 0

    def validate(self):
        if self.n_rounds < 1:
            raise ConfigError("n_rounds must be >= 1")
        if not 0.0 <= self.pseudo_score_threshold <= 1.0:
            raise ConfigError("pseudo_score_threshold must lie in [0, 1]")
        if self.loss_alpha < 0:
            raise ConfigError("loss_alpha must be >= 0")
        if not 0.0 < self.ema_momentum < 1.0:
            raise ConfigError("ema_momentum must lie in (0, 1)")
        if self.bank_capacity < 1:
            raise ConfigError("bank_capacity must be >= 1")


@dataclass(frozen=True)
class EvalConfig:
    dist_thresholds: tuple = (0.5, 1.0, 2.0, 4.0)
    min_recall: float = 0.1
    min_precision: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "dist_thresholds", tuple(float(d) for d in self.dist_thresholds))

    def validate(self):
        d = self.dist_thresholds
        if not d or any(x <= 0 for x in d) or any(b <= a for a, b in zip(d, d[1:])):
            raise ConfigError("dist_thresholds must be positive and strictly ascending")
        if not (0.0 <= self.min_recall < 1.0 and 0.0 <= self.min_precision < 1.0):
            raise ConfigError("PR floors must lie in [0, 1)")


@dataclass(frozen=True)
class FusionConfig:
    gamma_fuse: float = 0.2
    cluster_eps: float = 1.5
    cluster_min_pts: int = 15
    label_weight: float = 1000.0

    def validate(self):
        if not 0.0 <= self.gamma_fuse <= 1.0:
            raise ConfigError("gamma_fuse must lie in [0, 1]")
        if self.cluster_eps <= 0 or self.cluster_min_pts < 1:
            raise ConfigError("need cluster_eps > 0 and cluster_min_pts >= 1")


@dataclass(frozen=True)
class PipelineConfig:
    search: SearchSpec = field(default_factory=SearchSpec)
    oracle: OracleConfig = field(default_factory=OracleConfig)
    simulator: SimulatorConfig = field(default_factory=SimulatorConfig)
    filters: FilterConfig = field(default_factory=FilterConfig)
    rounds: RoundConfig = field(default_factory=RoundConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)

    def validate(self) -> "PipelineConfig":
        for f in fields(self):
            getattr(self, f.name).validate()
        return self

    def to_flat(self) -> dict:
        flat = {}
        for f in fields(self):
            for k, v in asdict(getattr(self, f.name)).items():
                flat[k] = list(v) if isinstance(v, tuple) else v
        return flat

    def with_overrides(self, overrides: dict) -> "PipelineConfig":
        """Apply flat ``{key: value}`` overrides; ``None`` values are ignored."""
        sections = {f.name: {} for f in fields(self)}
        for key, value in overrides.items():
            if value is None:
                continue
            if key not in _KEY_SECTION:
                raise ConfigError(f"unknown config key {key!r}")
            sections[_KEY_SECTION[key]][key] = _coerce(key, value)
        try:
            cfg = PipelineConfig(**{name: replace(getattr(self, name), **vals)
                                    for name, vals in sections.items()})
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        return cfg.validate()


_KEY_SECTION = {}
_KEY_TYPE = {}
for _f in fields(PipelineConfig):
    for _sub in fields(_f.default_factory):
        _KEY_SECTION[_sub.name] = _f.name
        _KEY_TYPE[_sub.name] = type(_sub.default)


def _coerce(key, value):
    want = _KEY_TYPE[key]
    if want is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be a boolean")
        return value
    if want is int:
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise ConfigError(f"{key} must be an integer")
        return value
    if want is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number")
        if not math.isfinite(value):
            raise ConfigError(f"{key} must be finite")
        return float(value)
    if want is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{key} must be a list")
        return tuple(float(v) for v in value)
    return value


def load_config(path=None) -> PipelineConfig:
    """Read a flat ``config.json``; ``None`` yields the defaults."""
    base = PipelineConfig()
    if path is None:
        return base.validate()
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise IoError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    return base.with_overrides(raw)
