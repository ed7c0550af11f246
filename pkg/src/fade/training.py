"""First-order bi-level training of hyper-architectures and from-scratch training of discrete networks."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from .data import DatasetSplits, LabeledSet
from .errors import ConfigError
from .hyperarch import DiscreteNetwork, HyperArchitecture

SCHEDULE_MODES = ("cell-independent", "cell-dependent")


@dataclass
class RegSchedule:
    """Linearly decreasing regularisation factor ``r``.

    In cell-dependent mode cell ``i`` (1-based, of ``depth``) ramps over a
    horizon of ``2 * T * i / (depth + 1)`` epochs, so with ``r_start = -r_end``
    it crosses zero at ``T * i / (depth + 1)``; shallow cells get there first.
    The deepest cell's ramp extends past ``T`` and never reaches ``r_end``.
    """

    mode: str = "cell-independent"
    r_start: float = 1.0
    r_end: float = -1.0
    total_epochs: int = 50
    depth: int = 1

    def __post_init__(self):
        if self.mode not in SCHEDULE_MODES:
            raise ConfigError(f"unknown schedule mode {self.mode!r}")
        if self.total_epochs < 1 or self.depth < 1:
            raise ConfigError("schedule needs total_epochs >= 1 and depth >= 1")
        if self.r_end > self.r_start:
            raise ConfigError("r must not increase: r_end > r_start")

    def horizon(self, cell: int) -> float:
        if self.mode == "cell-independent":
            return float(self.total_epochs)
        return 2.0 * self.total_epochs * cell / (self.depth + 1)

    def zero_crossing(self, cell: int) -> float:
        """Epoch at which the cell's ramp passes zero (inf if it never does)."""
        if self.r_start == self.r_end or self.r_start * self.r_end > 0:
            return float("inf")
        return self.horizon(cell) * self.r_start / (self.r_start - self.r_end)


def reg_factor(epoch: int, cell: int, schedule: RegSchedule) -> float:
    if not 0 <= epoch < schedule.total_epochs:
        raise IndexError(f"epoch {epoch} outside [0, {schedule.total_epochs})")
    if not 1 <= cell <= schedule.depth:
        raise IndexError(f"cell {cell} outside [1, {schedule.depth}]")
    frac = min(1.0, epoch / schedule.horizon(cell))
    return schedule.r_start + (schedule.r_end - schedule.r_start) * frac


@dataclass
class TrainConfig:
    batch_size: int = 128
    epochs: int = 50
    tau: float = 10.0
    clip_value: float = 10.0
    beta1: float = 0.1
    beta2: float = 1e-3
    lr: float = 1e-3
    eps: float = 1e-8
    weight_decay: float = 1e-4
    alpha_lr: float = 0.01
    alpha_init_std: float = 0.5
    # None means one full pass over the split per epoch
    weight_steps_per_epoch: int | None = None
    alpha_steps_per_epoch: int | None = None
    # alpha steps run every row member so all straight-through gates get gradients
    dense_alpha_gradient: bool = True

    def __post_init__(self):
        for name in ("batch_size", "epochs", "tau", "clip_value", "lr", "alpha_lr"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")

    def optimizer(self) -> ad.Adam:
        return ad.Adam(self.beta1, self.beta2, self.lr, self.eps, self.weight_decay)


def batches(data: LabeledSet, batch_size: int, rng: np.random.Generator, limit: int | None = None):
    if len(data) == 0:
        raise ConfigError("empty split")
    order = rng.permutation(len(data))
    starts = range(0, len(data), batch_size)
    for count, s in enumerate(starts):
        if limit is not None and count >= limit:
            return
        idx = order[s:s + batch_size]
        yield data.images[idx], data.labels[idx]


def weight_step(h: HyperArchitecture, batch, optimizer: ad.Adam, clip_value: float,
                rng: np.random.Generator) -> float:
    """One Adam step on the network weights; alpha is left untouched."""
    params = h.weight_params()
    ad.zero_grads(params.values())
    ad.zero_grads(h.alpha)
    x, y = batch
    loss = ad.cross_entropy(h.forward(x, "gumbel-hard", rng), y)
    loss.backward()
    ad.zero_grads(h.alpha)
    ad.clip_gradients(params.values(), clip_value)
    optimizer.step(params)
    return loss.item()


def alpha_step(h: HyperArchitecture, batch, r, lr: float, clip_value: float,
               rng: np.random.Generator, dense: bool = True) -> dict:
    """One constant-rate gradient step on the raw architecture parameters.

    Objective: network loss (skipped when ``batch`` is None) plus, per row,
    ``r_i`` times the max norm of the Gumbel-Softmax gated alpha.  Network
    weights receive no update.  ``dense`` selects the gated-sum forward, in
    which the unselected members' outputs enter the gate gradients.
    """
    r = np.broadcast_to(np.asarray(r, dtype=np.float64), (h.depth,))
    params = h.weight_params()
    ad.zero_grads(h.alpha)
    gates = h.sample_gates(rng, hard=True)
    terms = [ad.mul(ad.max_norm(g), float(ri)) for g, ri in zip(gates, r) if ri != 0.0]
    if batch is not None:
        x, y = batch
        terms.append(ad.cross_entropy(h.forward(x, "gumbel-hard", gates=gates, dense=dense), y))
    selected = [int(np.argmax(g.data)) for g in gates]
    if not terms:
        return {"loss": 0.0, "selected": selected}
    objective = ad.add_all(terms)
    objective.backward()
    ad.zero_grads(params.values())
    ad.clip_gradients(h.alpha, clip_value)
    for a in h.alpha:
        if a.grad is not None:
            a.data = a.data - lr * a.grad
            a.grad = None
    return {"loss": objective.item(), "selected": selected}


@dataclass
class TrainResult:
    alpha_history: list[np.ndarray] = field(default_factory=list)
    log: list[dict] = field(default_factory=list)

    def final_alpha(self, last_k: int = 1) -> np.ndarray:
        return np.mean(self.alpha_history[-last_k:], axis=0)


def train_hyperarch(h: HyperArchitecture, splits: DatasetSplits, config: TrainConfig,
                    schedule: RegSchedule, rng: np.random.Generator,
                    optimizer: ad.Adam | None = None,
                    on_epoch: Callable[[int, list[dict]], None] | None = None) -> TrainResult:
    """Alternate a weight phase and an alpha phase per epoch; record softmax(alpha) after each epoch."""
    if len(splits.weight_train) == 0 or len(splits.arch_train) == 0:
        raise ConfigError("weight-train and arch-train splits must be non-empty")
    if schedule.depth != h.depth:
        raise ConfigError(f"schedule depth {schedule.depth} != hyper-architecture depth {h.depth}")
    optimizer = optimizer or config.optimizer()
    result = TrainResult()
    for epoch in range(config.epochs):
        r = [reg_factor(min(epoch, schedule.total_epochs - 1), i + 1, schedule) for i in range(h.depth)]
        w_losses = [weight_step(h, b, optimizer, config.clip_value, rng)
                    for b in batches(splits.weight_train, config.batch_size, rng, config.weight_steps_per_epoch)]
        a_losses = [alpha_step(h, b, r, config.alpha_lr, config.clip_value, rng, config.dense_alpha_gradient)["loss"]
                    for b in batches(splits.arch_train, config.batch_size, rng, config.alpha_steps_per_epoch)]
        alpha = h.alpha_softmax()
        result.alpha_history.append(alpha)
        rows = [
            {"epoch": epoch, "phase": phase, "loss": float(np.mean(losses)), "r": r, "alpha": alpha.tolist()}
            for phase, losses in (("weights", w_losses), ("alpha", a_losses))
        ]
        result.log.extend(rows)
        if on_epoch is not None:
            on_epoch(epoch, rows)
    return result


def accuracy(forward, data: LabeledSet, batch_size: int = 256) -> float:
    correct = 0
    for s in range(0, len(data), batch_size):
        logits = forward(data.images[s:s + batch_size]).data
        correct += int((logits.argmax(axis=1) == data.labels[s:s + batch_size]).sum())
    return correct / len(data)


def train_discrete(net: DiscreteNetwork, splits: DatasetSplits, epochs: int, config: TrainConfig,
                   rng: np.random.Generator) -> float:
    """Train ``net`` from its current weights on both training parts; return test accuracy."""
    if epochs < 0:
        raise ConfigError("epochs must be >= 0")
    data = splits.training()
    params = net.weight_params()
    optimizer = config.optimizer()
    for _ in range(epochs):
        for x, y in batches(data, config.batch_size, rng):
            ad.zero_grads(params.values())
            ad.cross_entropy(net.forward(x), y).backward()
            ad.clip_gradients(params.values(), config.clip_value)
            optimizer.step(params)
    return accuracy(net.forward, splits.test)
