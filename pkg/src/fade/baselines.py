"""Random search and per-cell GP-UCB baselines over the joint feature space."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import ConfigError, NumericError
from .graphs import FEATURE_DIM

# objective(points of shape (d, 3)) -> (value, individual values)
Objective = Callable[[np.ndarray], tuple[float, list[float]]]


@dataclass
class GaussianProcess:
    """Zero-mean GP with a squared-exponential kernel on mean-centred targets."""

    length_scale: float = 0.2
    signal_var: float = 1.0
    noise_var: float = 1e-3
    max_jitter_tries: int = 6
    X: np.ndarray = field(default_factory=lambda: np.zeros((0, FEATURE_DIM)))
    y: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def kernel(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(-1)
        return self.signal_var * np.exp(-0.5 * d2 / self.length_scale ** 2)

    def fit(self, X, y) -> "GaussianProcess":
        self.X = np.asarray(X, dtype=np.float64).reshape(-1, FEATURE_DIM)
        self.y = np.asarray(y, dtype=np.float64)
        self._offset = self.y.mean() if len(self.y) else 0.0
        if not len(self.y):
            return self
        K = self.kernel(self.X, self.X) + self.noise_var * np.eye(len(self.y))
        jitter = 0.0
        for attempt in range(self.max_jitter_tries):
            try:
                self._chol = cho_factor(K + jitter * np.eye(len(K)), lower=True)
                break
            except np.linalg.LinAlgError:
                jitter = 1e-8 * 10 ** attempt
        else:
            raise NumericError("GP kernel matrix is not positive definite even with jitter")
        self._weights = cho_solve(self._chol, self.y - self._offset)
        return self

    def predict(self, Xs) -> tuple[np.ndarray, np.ndarray]:
        Xs = np.asarray(Xs, dtype=np.float64)
        if not len(self.y):
            return np.zeros(len(Xs)), np.full(len(Xs), np.sqrt(self.signal_var))
        Ks = self.kernel(Xs, self.X)
        mu = self._offset + Ks @ self._weights
        v = cho_solve(self._chol, Ks.T)
        var = np.maximum(self.signal_var - np.einsum("ij,ji->i", Ks, v), 0.0)
        return mu, np.sqrt(var)


def candidate_lattice(per_dim: int = 9) -> np.ndarray:
    """Regular lattice on [0, 1]^3 in lexicographic order."""
    axis = np.linspace(0.0, 1.0, per_dim)
    return np.array(list(itertools.product(axis, repeat=FEATURE_DIM)))


@dataclass
class HistoryEntry:
    epoch: int
    method: str
    points: np.ndarray  # (d, 3)
    value: float
    values: list[float]


def random_search(objective: Objective, depth: int, budget: int, rng: np.random.Generator,
                  on_entry=None) -> list[HistoryEntry]:
    if budget < 1:
        raise ConfigError("budget must be >= 1")
    history = []
    for t in range(1, budget + 1):
        pts = rng.random((depth, FEATURE_DIM))
        value, values = objective(pts)
        history.append(HistoryEntry(t, "rs", pts, value, values))
        if on_entry:
            on_entry(history[-1])
    return history


def ucb_proposal(gp: GaussianProcess, candidates: np.ndarray, kappa: float) -> np.ndarray:
    mu, sigma = gp.predict(candidates)
    return candidates[int(np.argmax(mu + kappa * sigma))]


def bo_ucb(objective: Objective, depth: int, budget: int, rng: np.random.Generator, *,
           kappa: float = 2.5, xi: float = 0.0, length_scale: float = 0.2, signal_var: float = 1.0,
           noise_var: float = 1e-3, lattice_per_dim: int = 9, on_entry=None) -> list[HistoryEntry]:
    """One independent GP per cell; each observes the joint objective value.

    ``xi`` is recorded for parity with other acquisition functions; UCB does not use it.
    """
    if budget < 1:
        raise ConfigError("budget must be >= 1")
    candidates = candidate_lattice(lattice_per_dim)
    gps = [GaussianProcess(length_scale, signal_var, noise_var) for _ in range(depth)]
    observed: list[list[np.ndarray]] = [[] for _ in range(depth)]
    values_seen: list[float] = []
    history = []
    for t in range(1, budget + 1):
        pts = np.array([ucb_proposal(gp, candidates, kappa) for gp in gps])
        value, values = objective(pts)
        values_seen.append(value)
        for i in range(depth):
            observed[i].append(pts[i])
            gps[i].fit(np.array(observed[i]), np.array(values_seen))
        history.append(HistoryEntry(t, "bo", pts, value, values))
        if on_entry:
            on_entry(history[-1])
    return history


def oracle_objective(oracle) -> Objective:
    """Mean of a per-cell oracle over the cells of a joint point."""

    def objective(points):
        vals = np.atleast_1d(oracle(np.asarray(points)))
        return float(vals.mean()), [float(v) for v in vals]

    return objective
