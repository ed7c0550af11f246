"""Pseudo-gradient outer search over per-cell anchors in feature space.

Each of the ``d`` cells keeps an anchor point in [0, 1]^3.  Per outer epoch a
row of seven candidate cells is generated around every anchor (the anchor and
its +-gamma offsets along each axis), a hyper-architecture over those rows is
trained, and each anchor moves along the finite differences of its row's
final softmaxed alpha.  Anchors evolve independently of each other.
"""
from __future__ import annotations

import csv
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

from .data import DatasetSplits
from .errors import ConfigError
from .graphs import FEATURE_DIM, Dag, FeatureGrid
from .hyperarch import DiscreteNetwork, HyperArchitecture
from .training import RegSchedule, TrainConfig, train_discrete, train_hyperarch

ROW_WIDTH = 2 * FEATURE_DIM + 1
SIGNS = ("ascent", "descent-as-written")


def row_points(anchor, gamma: float) -> np.ndarray:
    """(7, 3) source points: anchor, +e1, -e1, +e2, -e2, +e3, -e3; clamped to the unit cube."""
    anchor = np.asarray(anchor, dtype=np.float64)
    pts = [anchor]
    for k in range(FEATURE_DIM):
        e = np.zeros(FEATURE_DIM)
        e[k] = gamma
        pts.extend([anchor + e, anchor - e])
    return np.clip(np.array(pts), 0.0, 1.0)


def propose_row(anchor, gamma: float, grid: FeatureGrid, rng: np.random.Generator) -> tuple[list[Dag], np.ndarray]:
    if gamma < 0:
        raise ConfigError("gamma must be non-negative")
    pts = row_points(anchor, gamma)
    return [grid.generate(p, rng) for p in pts], pts


def update_anchor(anchor, beta, lam: float, sign: str = "ascent") -> np.ndarray:
    """Finite-difference step from the seven row betas (ordered as in :func:`row_points`).

    ``ascent`` moves towards the offset with the larger beta; ``descent-as-written``
    subtracts the same step.  The result is clamped to the unit cube.
    """
    beta = np.asarray(beta, dtype=np.float64)
    if beta.shape != (ROW_WIDTH,):
        raise ConfigError(f"need {ROW_WIDTH} betas, got shape {beta.shape}")
    if sign not in SIGNS:
        raise ConfigError(f"unknown sign convention {sign!r}")
    diff = beta[1::2] - beta[2::2]
    step = lam * diff if sign == "ascent" else -lam * diff
    return np.clip(np.asarray(anchor, dtype=np.float64) + step, 0.0, 1.0)


@dataclass
class AnchorState:
    anchors: np.ndarray  # (d, 3)
    gamma: float = 0.125
    lam: float = 0.25
    outer_epoch: int = 1

    def __post_init__(self):
        self.anchors = np.clip(np.asarray(self.anchors, dtype=np.float64), 0.0, 1.0)
        if self.gamma < 0 or self.lam <= 0:
            raise ConfigError("need gamma >= 0 and lambda > 0")


@dataclass
class TrajectoryStep:
    outer_epoch: int
    anchors: np.ndarray  # anchors used to propose this epoch's rows
    rows: list[list[str]]  # dag keys per cell
    points: np.ndarray  # (d, 7, 3) source points
    alpha: np.ndarray  # (d, 7) final softmaxed alpha
    beta: np.ndarray  # (d, 7) values used for the anchor update


@dataclass
class Trajectory:
    steps: list[TrajectoryStep] = field(default_factory=list)

    def __len__(self):
        return len(self.steps)

    def anchors(self) -> np.ndarray:
        """(T, d, 3) anchor history."""
        return np.array([s.anchors for s in self.steps])

    def csv_rows(self):
        for s in self.steps:
            for i, a in enumerate(s.anchors):
                yield [s.outer_epoch, i, *(repr(float(v)) for v in a)]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["outer_epoch", "cell", "dim0", "dim1", "dim2"])
            writer.writerows(self.csv_rows())


class BetaSource(Protocol):
    def __call__(self, rows: list[list[Dag]], points: np.ndarray, epoch: int,
                 rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        """Return (alpha, beta), both (d, 7)."""


class OracleBeta:
    """Replaces training: beta is a tempered softmax of oracle values over each row.

    ``source="generated"`` scores the embedding of each generated DAG,
    ``source="points"`` scores the row's source points directly.
    """

    def __init__(self, oracle: Callable, grid: FeatureGrid, temperature: float = 0.05,
                 source: str = "points"):
        if source not in ("generated", "points"):
            raise ConfigError(f"unknown oracle source {source!r}")
        self.oracle, self.grid, self.temperature, self.source = oracle, grid, temperature, source

    def __call__(self, rows, points, epoch, rng):
        if self.source == "generated":
            feats = np.array([[self.grid.embed(g) for g in row] for row in rows])
        else:
            feats = np.asarray(points)
        z = self.oracle(feats) / self.temperature
        z = np.exp(z - z.max(axis=1, keepdims=True))
        beta = z / z.sum(axis=1, keepdims=True)
        return beta, beta


class HyperArchBeta:
    """Trains a hyper-architecture over the proposed rows and reads beta off its alpha."""

    def __init__(self, splits: DatasetSplits, train_config: TrainConfig, *, deepest_channels: int,
                 max_cell_vertices: int = 5, schedule_mode: str = "cell-independent",
                 r_start: float = 1.0, r_end: float = -1.0, carry_weights: bool = True, beta_last_k: int = 1,
                 on_epoch=None):
        self.splits = splits
        self.config = train_config
        self.deepest_channels = deepest_channels
        self.max_cell_vertices = max_cell_vertices
        self.schedule_args = dict(mode=schedule_mode, r_start=r_start, r_end=r_end,
                                  total_epochs=train_config.epochs)
        self.carry_weights = carry_weights
        self.beta_last_k = beta_last_k
        self.on_epoch = on_epoch
        self.previous: HyperArchitecture | None = None

    def __call__(self, rows, points, epoch, rng):
        h = HyperArchitecture(
            rows, deepest_channels=self.deepest_channels, in_channels=self.splits.image_shape[0],
            num_classes=self.splits.class_count, max_cell_vertices=self.max_cell_vertices,
            tau=self.config.tau, alpha_init_std=self.config.alpha_init_std, rng=rng)
        if self.carry_weights and self.previous is not None:
            h.carry_weights_from(self.previous)
        schedule = RegSchedule(depth=h.depth, **self.schedule_args)
        hook = None if self.on_epoch is None else (lambda e, rows_: self.on_epoch(epoch, e, rows_))
        result = train_hyperarch(h, self.splits, self.config, schedule, rng, on_epoch=hook)
        self.previous = h
        alpha = result.alpha_history[-1]
        return alpha, result.final_alpha(self.beta_last_k)


def run_search(grid: FeatureGrid, depth: int, outer_epochs: int, beta_source: BetaSource,
               rng: np.random.Generator, *, gamma: float = 0.125, lam: float = 0.25,
               sign: str = "ascent", initial_anchors=None,
               on_step: Callable[[TrajectoryStep], None] | None = None) -> Trajectory:
    """Run ``outer_epochs`` propose / train / update rounds and return the trajectory."""
    if depth < 1 or outer_epochs < 0:
        raise ConfigError("need depth >= 1 and outer_epochs >= 0")
    anchors = rng.random((depth, FEATURE_DIM)) if initial_anchors is None else initial_anchors
    state = AnchorState(anchors, gamma, lam)
    trajectory = Trajectory()
    for t in range(1, outer_epochs + 1):
        proposals = [propose_row(a, gamma, grid, rng) for a in state.anchors]
        rows = [p[0] for p in proposals]
        points = np.array([p[1] for p in proposals])
        alpha, beta = beta_source(rows, points, t, rng)
        step = TrajectoryStep(t, state.anchors.copy(), [[g.key for g in r] for r in rows], points,
                              np.asarray(alpha), np.asarray(beta))
        trajectory.steps.append(step)
        state.anchors = np.array([update_anchor(a, b, lam, sign) for a, b in zip(state.anchors, step.beta)])
        state.outer_epoch = t + 1
        if on_step is not None:
            on_step(step)
    trajectory.final_anchors = state.anchors
    return trajectory


# --- evaluation of feature points ---------------------------------------------


def _train_one(args) -> float:
    cells, splits, config, epochs, deepest_channels, seed = args
    rng = np.random.default_rng(seed)
    net = DiscreteNetwork.fresh(cells, deepest_channels=deepest_channels, in_channels=splits.image_shape[0],
                                num_classes=splits.class_count, rng=rng)
    return train_discrete(net, splits, epochs, config, rng)


def evaluate_cells(cell_lists: list[list[Dag]], splits: DatasetSplits, config: TrainConfig, epochs: int,
                   deepest_channels: int, seeds: list[int], workers: int = 1) -> list[float]:
    """From-scratch test accuracy per architecture; task ``i`` always uses ``seeds[i]``."""
    tasks = [(cells, splits, config, epochs, deepest_channels, s) for cells, s in zip(cell_lists, seeds)]
    if workers <= 1:
        return [_train_one(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_train_one, tasks))


def evaluate_point(points, grid: FeatureGrid, splits: DatasetSplits, config: TrainConfig, *,
                   repeats: int = 5, epochs: int = 30, deepest_channels: int = 16,
                   rng: np.random.Generator, workers: int = 1) -> tuple[float, list[float]]:
    """Median accuracy over ``repeats`` architectures generated from one point per cell."""
    if repeats < 1:
        raise ConfigError("repeats must be >= 1")
    cell_lists = [[grid.generate(p, rng) for p in points] for _ in range(repeats)]
    seeds = [int(s) for s in rng.integers(0, 2**31 - 1, size=repeats)]
    accs = evaluate_cells(cell_lists, splits, config, epochs, deepest_channels, seeds, workers)
    return float(statistics.median(accs)), accs
