"""FaDE-ranks over hyper-architecture paths and rank-correlation checks."""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import ShapeError

SIMPLEX_TOL = 1e-9


class UndefinedCorrelationError(ValueError):
    """Correlation of a constant sequence."""


def _check_alpha(alpha) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.ndim != 2:
        raise ShapeError(f"alpha must be a d x w matrix, got shape {alpha.shape}")
    return alpha


def fade_rank(alpha, path) -> float:
    """Product of the alpha entries selected by ``path`` (one 0-based index per row)."""
    alpha = _check_alpha(alpha)
    path = tuple(int(k) for k in path)
    d, w = alpha.shape
    if len(path) != d or any(not 0 <= k < w for k in path):
        raise IndexError(f"path {path} invalid for a {d}x{w} alpha")
    return float(np.prod(alpha[np.arange(d), path]))


@dataclass
class RankTable:
    paths: list[tuple[int, ...]]
    scores: list[float]
    provenance: str = ""

    @classmethod
    def from_alpha(cls, alpha, paths=None, provenance: str = "") -> "RankTable":
        alpha = _check_alpha(alpha)
        d, w = alpha.shape
        paths = list(itertools.product(range(w), repeat=d)) if paths is None else [tuple(p) for p in paths]
        return cls(paths, [fade_rank(alpha, p) for p in paths], provenance)

    def top(self) -> tuple[int, ...]:
        return self.paths[int(np.argmax(self.scores))]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["path", "score", "provenance"])
            for p, s in zip(self.paths, self.scores):
                writer.writerow(["-".join(map(str, p)), repr(s), self.provenance])

    @classmethod
    def read_csv(cls, path) -> "RankTable":
        with open(path, newline="") as f:
            rows = list(csv.DictReader(f))
        return cls(
            [tuple(int(k) for k in r["path"].split("-")) for r in rows],
            [float(r["score"]) for r in rows],
            rows[0]["provenance"] if rows else "",
        )


def top_path(alpha) -> tuple[int, ...]:
    """Highest-scoring path; the product is maximised row by row."""
    return tuple(int(k) for k in np.argmax(_check_alpha(alpha), axis=1))


def marginals(alpha_snapshots) -> np.ndarray:
    """Mean of softmaxed alpha matrices over repetitions."""
    snaps = [np.asarray(a, dtype=np.float64) for a in alpha_snapshots]
    if not snaps:
        raise ValueError("need at least one alpha snapshot")
    if any(s.shape != snaps[0].shape or s.ndim != 2 for s in snaps):
        raise ShapeError("alpha snapshots differ in shape")
    return np.mean(snaps, axis=0)


def _paired(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ShapeError(f"need two equal-length sequences, got {x.shape} and {y.shape}")
    if len(x) < 2:
        raise ValueError("need at least two observations")
    return x, y


def pearson(x, y) -> float:
    x, y = _paired(x, y)
    xc, yc = x - x.mean(), y - y.mean()
    denom = np.sqrt((xc * xc).sum() * (yc * yc).sum())
    if denom == 0:
        raise UndefinedCorrelationError("correlation undefined for constant input")
    return float(np.clip((xc * yc).sum() / denom, -1.0, 1.0))


def spearman(x, y) -> float:
    """Spearman's rho with average ranks for ties."""
    x, y = _paired(x, y)
    return pearson(rankdata(x), rankdata(y))
