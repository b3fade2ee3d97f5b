"""Declarative experiment configuration.

One YAML file describes a whole experiment: scenario template, behavior
spaces, safety parameters, planner settings, ego action set, and the
sweep axes.  Scenario kinds come with sensible defaults that single
keys can override.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import yaml

from .behavior import (IdmParameters, LikelihoodConfig, default_hypothesized_space,
                       default_true_space, reference_params)
from .planner import PlannerConfig
from .safety import CollisionConfig, EnvelopeConfig

FREEWAY = "freeway_enter"
LEFT_TURN = "left_turn"

KMH_30 = 30.0 / 3.6
KMH_50 = 50.0 / 3.6


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


@dataclass(slots=True)
class ScenarioConfig:
    kind: str = FREEWAY
    trials: int = 100
    master_seed: int = 0
    gap_interval: tuple = (15.0, 30.0)
    speed_interval: tuple = (KMH_30, KMH_50)
    max_episode_time: float = 6.0
    n_other_vehicles: int = 4          # freeway platoon size
    n_per_crossing_lane: int = 2       # left turn, per main-road lane
    lead_offset_interval: tuple = (8.0, 25.0)
    vehicle_length: float = 5.0
    vehicle_width: float = 2.0
    lane_width: float = 3.5
    spawn_retry_cap: int = 20
    execute_mode: str = "sample"       # or "mode"

    def validate(self):
        if self.kind not in (FREEWAY, LEFT_TURN):
            raise ConfigError(f"unknown scenario kind {self.kind!r}")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        for name in ("gap_interval", "speed_interval", "lead_offset_interval"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ConfigError(f"{name} must be a nonempty interval")
        if self.execute_mode not in ("sample", "mode"):
            raise ConfigError("execute_mode must be 'sample' or 'mode'")


@dataclass(slots=True)
class BehaviorConfig:
    true_bounds: dict = field(default_factory=dict)   # overrides per dimension
    headway_bounds: tuple = (0.5, 3.0)
    k_hypotheses: int = 16
    delta_min_frac: float = 0.1
    delta_max_frac: float = 0.4
    likelihood: LikelihoodConfig = field(default_factory=LikelihoodConfig)

    def validate(self):
        if self.k_hypotheses < 1:
            raise ConfigError("k_hypotheses must be >= 1")
        if not 0.0 <= self.delta_min_frac <= self.delta_max_frac <= 1.0:
            raise ConfigError("delta fractions must satisfy 0 <= min <= max <= 1")

    def true_space(self):
        return default_true_space(self.true_bounds or None)

    def reference(self) -> IdmParameters:
        return reference_params(self.true_space())

    def hypothesized_space(self):
        return default_hypothesized_space(self.headway_bounds, self.reference())


@dataclass(slots=True)
class SafetyConfig:
    response_time_ego: float = 0.5
    response_time_other: float = 1.0
    decel_limit: float = 5.0
    collision_margin: float = 0.5

    def envelope(self) -> EnvelopeConfig:
        return EnvelopeConfig(self.response_time_ego, self.response_time_other,
                              self.decel_limit)

    def collision(self) -> CollisionConfig:
        return CollisionConfig(self.collision_margin)


@dataclass(slots=True)
class ActionSetConfig:
    accel_values: tuple = (-5.0, -2.0, -1.0, 0.0, 1.0, 2.0)
    lane_changes: bool = True
    gap_keep: bool = True


@dataclass(slots=True)
class SweepConfig:
    betas: tuple = (0.2, 0.4, 0.6)
    planners: tuple = ("rcrsbg",)


@dataclass(slots=True)
class ExperimentConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    behavior: BehaviorConfig = field(default_factory=BehaviorConfig)
    safety: SafetyConfig = field(default_factory=SafetyConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    actions: ActionSetConfig = field(default_factory=ActionSetConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)

    def validate(self):
        self.scenario.validate()
        self.behavior.validate()
        if not 0.0 <= self.planner.beta <= 1.0:
            raise ConfigError("planner.beta must lie in [0, 1]")
        if self.planner.iterations < 1:
            raise ConfigError("planner.iterations must be >= 1")
        for b in self.sweep.betas:
            if not 0.0 <= b <= 1.0:
                raise ConfigError("sweep.betas entries must lie in [0, 1]")
        if self.planner.k_hypotheses != self.behavior.k_hypotheses:
            self.planner.k_hypotheses = self.behavior.k_hypotheses
        return self


def default_config(kind: str = FREEWAY) -> ExperimentConfig:
    cfg = ExperimentConfig()
    cfg.scenario.kind = kind
    if kind == LEFT_TURN:
        cfg.safety.response_time_ego = 1.0
        cfg.actions = ActionSetConfig(accel_values=(-5.0, -1.0, 0.0, 1.0, 2.0),
                                      lane_changes=False, gap_keep=False)
    else:
        cfg.safety.response_time_ego = 0.5
    return cfg.validate()


_SECTION_TYPES = {
    "scenario": ScenarioConfig,
    "behavior": BehaviorConfig,
    "safety": SafetyConfig,
    "planner": PlannerConfig,
    "actions": ActionSetConfig,
    "sweep": SweepConfig,
}

_TUPLE_KEYS = {"gap_interval", "speed_interval", "lead_offset_interval",
               "headway_bounds", "accel_values", "betas", "planners"}


def config_from_dict(data: dict) -> ExperimentConfig:
    data = dict(data or {})
    kind = (data.get("scenario") or {}).get("kind", FREEWAY)
    cfg = default_config(kind)
    for section, payload in data.items():
        if section not in _SECTION_TYPES:
            raise ConfigError(f"unknown config section {section!r}")
        if payload is None:
            continue
        current = getattr(cfg, section)
        for key, value in payload.items():
            if not hasattr(current, key):
                raise ConfigError(f"unknown key {section}.{key}")
            if key == "likelihood":
                value = LikelihoodConfig(**value)
            elif key in _TUPLE_KEYS and isinstance(value, (list, tuple)):
                value = tuple(value)
            try:
                setattr(current, key, value)
            except AttributeError as exc:
                raise ConfigError(str(exc)) from exc
    return cfg.validate()


def config_to_dict(cfg: ExperimentConfig) -> dict:
    out = {}
    for section in _SECTION_TYPES:
        out[section] = asdict(getattr(cfg, section))
    return out


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse config: {exc}") from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    return config_from_dict(data)
