"""Experiment configuration: one flat ``key = value`` text file.

Lines starting with ``#`` and blank lines are ignored.  Every key must be a
field of :class:`ExperimentConfig`; unknown or repeated keys are errors.  Lists
are comma separated.  Cell lists use DAG keys such as ``3:01-12``.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError, InvalidGraphError
from .graphs import MAX_ENUMERATION_VERTICES, Dag
from .search import SIGNS
from .training import SCHEDULE_MODES, TrainConfig

TASKS = ("planted-cell-quality", "xor-patterns", "cifar10")
ORACLE_SOURCES = ("generated", "points")

# Desk-scale default row members: an isolated vertex, a one-edge chain and a
# two-edge chain, ordered by depth on the planted task.
DEFAULT_MEMBERS = ("1:", "2:01", "3:01-12")


@dataclass
class ExperimentConfig:
    seed: int = 0
    # data
    task: str = "planted-cell-quality"
    samples: int = 3000
    image_size: int = 8
    image_width: int = 24  # planted task only; images are image_size x image_width
    boundary: int = 16  # planted task: largest positive marker separation
    noise: float = 0.1
    data_dir: str = ""
    cifar_classes: tuple[int, ...] = (0, 1)
    split_ratios: tuple[int, ...] = (1, 1, 4)
    # graph space
    max_vertices: int = 5
    bins: int = 8
    # hyper-architecture
    depth: int = 2
    deepest_channels: int = 16
    max_cell_vertices: int = 5
    members: tuple[str, ...] = DEFAULT_MEMBERS
    validation_paths: str = "all"
    # inner training
    epochs: int = 50
    batch_size: int = 128
    tau: float = 10.0
    clip_value: float = 10.0
    beta1: float = 0.1
    beta2: float = 1e-3
    lr: float = 1e-3
    eps: float = 1e-8
    weight_decay: float = 1e-4
    alpha_lr: float = 0.01
    alpha_init_std: float = 0.5
    weight_steps_per_epoch: int = 0
    alpha_steps_per_epoch: int = 0
    schedule: str = "cell-independent"
    r_start: float = 1.0
    r_end: float = -1.0
    beta_last_k: int = 1
    discrete_epochs: int = 30
    # outer search
    outer_epochs: int = 10
    gamma: float = 0.125
    lam: float = 0.25
    sign: str = "ascent"
    carry_weights: bool = True
    eval_every: int = 5
    eval_repeats: int = 5
    eval_epochs: int = 30
    workers: int = 1
    # baselines
    budget: int = 50
    kappa: float = 2.5
    xi: float = 0.0
    gp_length_scale: float = 0.2
    gp_signal_var: float = 1.0
    gp_noise_var: float = 1e-3
    lattice_per_dim: int = 9
    # oracle mode
    oracle_optimum: tuple[float, ...] = (0.5, 0.5, 0.5)
    oracle_temperature: float = 0.05
    oracle_source: str = "points"
    start_point: tuple[float, ...] = field(default_factory=tuple)

    def validate(self) -> "ExperimentConfig":
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.task in TASKS, f"task must be one of {TASKS}")
        need(self.samples >= 1 and self.image_size >= 2, "need samples >= 1 and image_size >= 2")
        if self.task == "planted-cell-quality":
            need(1 <= self.boundary < self.image_width - 1, "need 1 <= boundary < image_width - 1")
        need(len(self.split_ratios) == 3 and all(r > 0 for r in self.split_ratios),
             "split_ratios needs three positive parts")
        need(1 <= self.max_vertices <= MAX_ENUMERATION_VERTICES,
             f"max_vertices must be in [1, {MAX_ENUMERATION_VERTICES}]")
        need(self.bins >= 1, "bins must be >= 1")
        need(self.depth >= 1 and self.deepest_channels >= 1, "need depth >= 1 and deepest_channels >= 1")
        need(self.max_cell_vertices >= 1, "max_cell_vertices must be >= 1")
        need(len(self.members) >= 1, "members must not be empty")
        for key in self.members:
            try:
                dag = Dag.from_key(key)
            except InvalidGraphError as e:
                raise ConfigError(str(e)) from None
            need(dag.vertex_count <= self.max_cell_vertices,
                 f"member {key} exceeds max_cell_vertices={self.max_cell_vertices}")
        self.paths()
        need(self.epochs >= 0 and self.discrete_epochs >= 1, "need epochs >= 0 and discrete_epochs >= 1")
        need(self.batch_size >= 1, "batch_size must be >= 1")
        need(self.tau > 0, "tau must be positive")
        need(self.clip_value > 0, "clip_value must be positive")
        need(0 <= self.beta1 < 1 and 0 <= self.beta2 < 1, "Adam betas must be in [0, 1)")
        need(self.lr > 0 and self.alpha_lr > 0 and self.eps > 0, "learning rates and eps must be positive")
        need(self.alpha_init_std >= 0 and self.weight_decay >= 0, "need alpha_init_std, weight_decay >= 0")
        need(self.weight_steps_per_epoch >= 0 and self.alpha_steps_per_epoch >= 0, "steps per epoch must be >= 0")
        need(self.schedule in SCHEDULE_MODES, f"schedule must be one of {SCHEDULE_MODES}")
        need(self.beta_last_k >= 1, "beta_last_k must be >= 1")
        need(self.outer_epochs >= 0, "outer_epochs must be >= 0")
        need(self.gamma >= 0 and self.lam > 0, "need gamma >= 0 and lam > 0")
        need(self.sign in SIGNS, f"sign must be one of {SIGNS}")
        need(self.eval_every >= 1 and self.eval_repeats >= 1 and self.eval_epochs >= 1,
             "eval_every, eval_repeats and eval_epochs must be >= 1")
        need(self.workers >= 1, "workers must be >= 1")
        need(self.budget >= 1, "budget must be >= 1")
        need(self.gp_length_scale > 0 and self.gp_signal_var > 0 and self.gp_noise_var > 0,
             "GP hyper-parameters must be positive")
        need(self.lattice_per_dim >= 2, "lattice_per_dim must be >= 2")
        need(len(self.oracle_optimum) == 3 and all(0 <= v <= 1 for v in self.oracle_optimum),
             "oracle_optimum must be a point in the unit cube")
        need(self.oracle_temperature > 0, "oracle_temperature must be positive")
        need(self.oracle_source in ORACLE_SOURCES, f"oracle_source must be one of {ORACLE_SOURCES}")
        need(len(self.start_point) in (0, 3) and all(0 <= v <= 1 for v in self.start_point),
             "start_point must be empty or a point in the unit cube")
        return self

    def member_dags(self) -> list[Dag]:
        return [Dag.from_key(k) for k in self.members]

    def paths(self) -> list[tuple[int, ...]] | None:
        """Configured validation paths; ``None`` means every path."""
        if self.validation_paths.strip() == "all":
            return None
        w = len(self.members)
        out = []
        for item in self.validation_paths.split(","):
            try:
                path = tuple(int(k) for k in item.strip().split("-"))
            except ValueError:
                raise ConfigError(f"malformed path {item!r}") from None
            if len(path) != self.depth or any(not 0 <= k < w for k in path):
                raise ConfigError(f"path {item!r} invalid for depth {self.depth} and {w} members")
            out.append(path)
        return out

    def train_config(self, epochs: int | None = None) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size, epochs=self.epochs if epochs is None else epochs, tau=self.tau,
            clip_value=self.clip_value, beta1=self.beta1, beta2=self.beta2, lr=self.lr, eps=self.eps,
            weight_decay=self.weight_decay, alpha_lr=self.alpha_lr, alpha_init_std=self.alpha_init_std,
            weight_steps_per_epoch=self.weight_steps_per_epoch or None,
            alpha_steps_per_epoch=self.alpha_steps_per_epoch or None)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dumps(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            elif isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"


def _convert(name: str, raw: str, default):
    try:
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError
            return raw.lower() in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [s.strip() for s in raw.split(",") if s.strip()]
            kind = type(default[0]) if default else float
            return tuple(kind(s) for s in items)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None


def parse_config(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Parse ``key = value`` lines on top of ``base`` (defaults if omitted)."""
    cfg = dataclasses.replace(base) if base is not None else ExperimentConfig()
    known = {f.name for f in fields(cfg)}
    seen = set()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        seen.add(key)
        setattr(cfg, key, _convert(key, raw.strip(), getattr(cfg, key)))
    return cfg.validate()


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())
