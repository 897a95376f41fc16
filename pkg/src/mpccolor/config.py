"""Pipeline configuration: one flat table of every tunable constant."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .partition import PartitionConfig
from .procedures import CoinLayout


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    # machine space S = ceil(n^delta_exp); seed-failure exponent alpha
    delta_exp: float = 0.5
    alpha: float = 1 / 16
    mode: str = "standard"

    # degree reduction
    zeta: float = 0.125
    chunk_cap: int = 256
    slack_factor: float = 3.0
    independence: int = 4
    part_enum_bits: int = 6
    part_chunk_bits: int = 4
    depth_offset: int = 4
    part_salt: int = 0x5EED
    medium_c: float = 4.0

    # routing: low-degree iff Delta <= floor_const * log2(n)^floor_exp
    floor_const: float = 1.0
    floor_exp: float = 1.0
    linial_radius: int = 1

    # density hierarchy
    eps_cap: float = 0.19
    eps1_exponent: float = 2 / 3

    # slack generation
    p_one_shot: float = 1 / 8
    p_one_shot_relaxed: float = 1 / 16
    c_slack: float = 0.1
    z_mult: float = 1.0
    slack_enum_bits: int = 8
    slack_chunk_bits: int = 4

    # dense stages
    sm_phases: int = 6
    c9: float = 1.0
    beta: float = 4.0
    delta_min: float = 0.25
    delta_max: float = 0.9
    layer2_iterations: int = 7
    layer1_iterations: int = 12
    # constants of the three late layer-1 overrides (q = 10, 11, 12)
    theta_d19: float = 1.0
    theta_l19: float = 1.0
    theta_u19: float = 1.0
    theta_d20: float = 1.0
    theta_l20: float = 1.0
    theta_u20: float = 1.0
    theta_d22: float = 1.0
    theta_l22: float = 1.0
    theta_u22: float = 1.0
    theta_d24: float = 1.0
    log_power_c: float = 1.0

    # sparse coloring
    lam: float = 0.1
    final_reps: int = 0  # 0 means ceil(1/alpha)
    safety_net: bool = True

    # seed voting and budgets
    vote_seed_bits: int = 4
    vote_escalation: int = 4
    round_cap: int = 500
    coin_w: int = 16
    coin_extra: int = 8
    check_boundaries: bool = True

    notes: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if not 0 < self.delta_exp < 1:
            raise ConfigError("delta_exp must lie in (0, 1)")
        if not 0 < self.alpha < self.delta_exp:
            raise ConfigError("need 0 < alpha < delta_exp")
        if not 0 < self.eps_cap < 0.2:
            raise ConfigError("eps_cap must lie in (0, 1/5)")
        if not 0 < self.zeta < 1:
            raise ConfigError("zeta must lie in (0, 1)")
        if self.mode not in ("standard", "relaxed"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if not 0 < self.delta_min <= self.delta_max <= 1:
            raise ConfigError("need 0 < delta_min <= delta_max <= 1")
        if self.vote_seed_bits < 1 or self.vote_escalation < 1:
            raise ConfigError("seed bits and escalation step must be positive")
        if self.round_cap < 1:
            raise ConfigError("round_cap must be positive")

    # derived ------------------------------------------------------------
    @property
    def C(self) -> int:
        return math.ceil(1 / self.alpha - 1e-12)

    @property
    def gamma(self) -> float:
        return 2 / self.alpha

    @property
    def reps(self) -> int:
        return self.final_reps or self.C

    @property
    def p_slack(self) -> float:
        return self.p_one_shot_relaxed if self.mode == "relaxed" else self.p_one_shot

    @property
    def layout(self) -> CoinLayout:
        return CoinLayout(w=self.coin_w, extra=self.coin_extra)

    def low_degree_floor(self, n: int) -> float:
        return self.floor_const * math.log2(max(n, 2)) ** self.floor_exp

    def seed_bits_cap(self, n: int) -> int:
        return max(self.vote_seed_bits, math.floor(self.delta_exp * math.log2(max(n, 2))))

    def required_fraction(self, n: int) -> float:
        return 1 - max(n, 2) ** (-self.alpha)

    def medium_ceiling(self, n: int) -> float:
        return max(n, 2) ** (self.delta_exp / self.medium_c)

    def partition(self) -> PartitionConfig:
        return PartitionConfig(
            zeta=self.zeta, chunk_cap=self.chunk_cap, slack_factor=self.slack_factor,
            independence=self.independence, enum_bits=self.part_enum_bits,
            chunk_bits=self.part_chunk_bits, depth_offset=self.depth_offset, salt=self.part_salt,
        )

    # io -----------------------------------------------------------------
    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("notes")
        return d

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_mapping(cls, data: dict) -> "PipelineConfig":
        known = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, value in data.items():
            if key not in known or key == "notes":
                raise ConfigError(f"unknown config key {key!r}")
            default = getattr(cls(), key)
            kwargs[key] = type(default)(value) if not isinstance(default, bool) else _as_bool(value)
        return cls(**kwargs)

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        path = Path(path)
        text = path.read_text()
        if path.suffix == ".toml":
            try:
                import tomllib
            except ModuleNotFoundError:  # python < 3.11
                import tomli as tomllib
            data = tomllib.loads(text)
        else:
            data = json.loads(text)
        if not isinstance(data, dict) or any(isinstance(v, (dict, list)) for v in data.values()):
            raise ConfigError("config must be a flat key-value table")
        return cls.from_mapping(data)

    @classmethod
    def asymptotic(cls) -> "PipelineConfig":
        """Constants as stated for the large-n regime; routes every desk-size
        graph to the low-degree path."""
        return cls(eps_cap=1 / 20, eps1_exponent=0.1, floor_exp=3.0)


def _as_bool(value) -> bool:
    if isinstance(value, str):
        return value.strip().lower() in ("1", "true", "yes", "on")
    return bool(value)
