"""Run configuration: one flat INI section holding every tunable, with range
validation on load and strict unknown-key rejection. Command-line flags
override file values; file values override defaults."""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .kg import GeneratorConfig
from .train import Schedules, TrainConfig, VARIANTS


class ConfigError(ValueError):
    pass


SECTION = "activekg"


def _parse_hop_distribution(raw: str) -> dict[int, float]:
    """'1:0.35,2:0.4,3:0.25' -> {1: 0.35, 2: 0.4, 3: 0.25}"""
    out: dict[int, float] = {}
    for part in raw.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            h, p = part.split(":")
            out[int(h)] = float(p)
        except ValueError:
            raise ConfigError(f"hop_distribution: cannot parse {part!r}") from None
    if not out:
        raise ConfigError("hop_distribution: empty")
    return out


def _format_hop_distribution(dist: dict[int, float]) -> str:
    return ",".join(f"{h}:{p}" for h, p in sorted(dist.items()))


@dataclass
class Config:
    # benchmark generator
    n_entities: int = 300
    n_relations: int = 12
    n_items: int = 200
    distractor_ratio: float = 0.15
    max_fanout: int = 2
    inverse_relations: bool = True
    hop_distribution: dict[int, float] = field(default_factory=lambda: {1: 0.35, 2: 0.4, 3: 0.25})

    # model + optimization
    d: int = 16
    steps: int = 50
    batch_size: int = 4
    lr: float = 0.05
    lr_mode: str = "cosine"
    lr_floor: float = 0.05
    momentum: float = 0.9
    lambda_explore: float = 0.3
    lambda_symbolic: float = 0.5
    lambda_active: float = 0.2
    n_rules: int = 8
    variant: str = "full"
    descent: str = "sample"
    full_batch: bool = False
    aux_lr: float = 0.02
    aux_batch: int = 16
    oracle_noise: float = 0.05

    # search + budgets
    rollouts: int = 16
    n_inner: int = 4
    max_depth: int = 4
    a_max: int = 8
    k: float = 2.5
    alpha: float = 0.5
    c_explore: float = 1.0
    human_queries: int = 2

    # acquisition
    tau_hop: float = 0.55
    tau_human: float = 0.65
    beta: float = 0.3
    c_human: float = 0.3
    lambda_cost: float = 0.1

    # annealing endpoints
    tau_gumbel_start: float = 1.0
    tau_gumbel_end: float = 0.1
    tau_search_start: float = 1.0
    tau_search_end: float = 0.1

    # run bookkeeping
    seed: int = 0

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        checks = [
            ("n_entities", self.n_entities >= 4, ">= 4"),
            ("n_relations", self.n_relations >= 1, ">= 1"),
            ("n_items", self.n_items >= 0, ">= 0"),
            ("distractor_ratio", 0.0 <= self.distractor_ratio <= 1.0, "in [0, 1]"),
            ("max_fanout", self.max_fanout >= 1, ">= 1"),
            ("d", self.d >= 2, ">= 2"),
            ("steps", self.steps >= 0, ">= 0"),
            ("batch_size", self.batch_size >= 1, ">= 1"),
            ("lr", self.lr > 0, "> 0"),
            ("lr_mode", self.lr_mode in ("cosine", "rm"), "one of cosine|rm"),
            ("lr_floor", 0 < self.lr_floor <= 1, "in (0, 1]"),
            ("momentum", 0 <= self.momentum < 1, "in [0, 1)"),
            ("lambda_explore", self.lambda_explore >= 0, ">= 0"),
            ("lambda_symbolic", self.lambda_symbolic >= 0, ">= 0"),
            ("lambda_active", self.lambda_active >= 0, ">= 0"),
            ("n_rules", self.n_rules >= 0, ">= 0"),
            ("variant", self.variant in VARIANTS, f"one of {'|'.join(VARIANTS)}"),
            ("descent", self.descent in ("sample", "soft"), "one of sample|soft"),
            ("aux_lr", self.aux_lr >= 0, ">= 0"),
            ("aux_batch", self.aux_batch >= 1, ">= 1"),
            ("oracle_noise", 0.0 <= self.oracle_noise <= 1.0, "in [0, 1]"),
            ("rollouts", self.rollouts >= 0, ">= 0"),
            ("n_inner", self.n_inner >= 1, ">= 1"),
            ("max_depth", 1 <= self.max_depth <= 8, "in [1, 8]"),
            ("a_max", self.a_max >= 1, ">= 1"),
            ("k", self.k > 0, "> 0"),
            ("alpha", 0 < self.alpha < 1, "in (0, 1)"),
            ("c_explore", self.c_explore > 0, "> 0"),
            ("human_queries", self.human_queries >= 0, ">= 0"),
            ("tau_hop", 0 < self.tau_hop < 1, "in (0, 1)"),
            ("tau_human", 0 < self.tau_human < 2, "in (0, 2)"),
            ("beta", self.beta >= 0, ">= 0"),
            ("c_human", self.c_human > 0, "> 0"),
            ("lambda_cost", self.lambda_cost >= 0, ">= 0"),
            ("tau_gumbel_start", self.tau_gumbel_start > 0, "> 0"),
            ("tau_gumbel_end", self.tau_gumbel_end > 0, "> 0"),
            ("tau_search_start", self.tau_search_start > 0, "> 0"),
            ("tau_search_end", self.tau_search_end > 0, "> 0"),
            ("seed", self.seed >= 0, ">= 0"),
        ]
        for name, ok, want in checks:
            if not ok:
                raise ConfigError(f"{name} must be {want}, got {getattr(self, name)!r}")
        for h, p in self.hop_distribution.items():
            if not (1 <= h <= self.max_depth):
                raise ConfigError(
                    f"hop_distribution requests {h} hops, outside 1..{self.max_depth}"
                )
            if p < 0:
                raise ConfigError("hop_distribution has negative mass")
        if sum(self.hop_distribution.values()) <= 0:
            raise ConfigError("hop_distribution has zero total mass")

    # ------------------------------------------------ per-module projections

    def generator_config(self) -> GeneratorConfig:
        return GeneratorConfig(
            n_entities=self.n_entities,
            n_relations=self.n_relations,
            n_items=self.n_items,
            distractor_ratio=self.distractor_ratio,
            max_fanout=self.max_fanout,
            inverse_relations=self.inverse_relations,
            hop_distribution=dict(self.hop_distribution),
            max_hops=self.max_depth,
            seed=self.seed,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            d=self.d,
            steps=self.steps,
            batch_size=self.batch_size,
            seed=self.seed,
            lr=self.lr,
            lr_mode=self.lr_mode,
            momentum=self.momentum,
            lambdas=(self.lambda_explore, self.lambda_symbolic, self.lambda_active),
            n_rules=self.n_rules,
            rollouts=self.rollouts,
            human_queries=self.human_queries,
            n_inner=self.n_inner,
            max_depth=self.max_depth,
            a_max=self.a_max,
            oracle_noise=self.oracle_noise,
            aux_lr=self.aux_lr,
            aux_batch=self.aux_batch,
            variant=self.variant,
            full_batch=self.full_batch,
            descent=self.descent,
            tau_hop=self.tau_hop,
            tau_human=self.tau_human,
            beta=self.beta,
            c_human=self.c_human,
            lambda_cost=self.lambda_cost,
        )

    def schedules(self) -> Schedules:
        return Schedules(
            total_steps=self.steps,
            gumbel_tau=(self.tau_gumbel_start, self.tau_gumbel_end),
            search_tau=(self.tau_search_start, self.tau_search_end),
            lr0=self.lr,
            lr_mode=self.lr_mode,
            lr_floor=self.lr_floor,
        )


_FIELD_TYPES = {f.name: f.type for f in fields(Config)}


def _coerce(name: str, raw: str):
    if name == "hop_distribution":
        return _parse_hop_distribution(raw)
    typ = _FIELD_TYPES[name]
    raw = raw.strip()
    if typ == "int":
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{name}: expected integer, got {raw!r}") from None
    if typ == "float":
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{name}: expected number, got {raw!r}") from None
    if typ == "bool":
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{name}: expected boolean, got {raw!r}")
    return raw


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> Config:
    """Defaults <- INI file <- overrides, validated once assembled. Unknown
    keys anywhere are fatal."""
    values: dict = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        parser = configparser.ConfigParser()
        try:
            parser.read_string(p.read_text(), source=str(p))
        except configparser.Error as exc:
            raise ConfigError(f"config file {p}: {exc}") from None
        for section in parser.sections():
            if section != SECTION:
                raise ConfigError(f"unknown section [{section}]; only [{SECTION}] is recognized")
        if parser.defaults():
            raise ConfigError("keys outside the [activekg] section are not recognized")
        if parser.has_section(SECTION):
            for key, raw in parser.items(SECTION):
                if key not in _FIELD_TYPES:
                    raise ConfigError(f"unknown config key {key!r}")
                values[key] = _coerce(key, raw)
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _coerce(key, val) if isinstance(val, str) else val
    try:
        return Config(**values)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def save_config(cfg: Config, path: str | Path) -> None:
    parser = configparser.ConfigParser()
    parser.add_section(SECTION)
    for f in fields(Config):
        val = getattr(cfg, f.name)
        if f.name == "hop_distribution":
            parser.set(SECTION, f.name, _format_hop_distribution(val))
        else:
            parser.set(SECTION, f.name, str(val))
    with Path(path).open("w", encoding="utf-8") as fh:
        parser.write(fh)
