"""Cell graph space: DAG enumeration, graph features and the bucket generator.

Cells are small DAGs.  Every DAG is stored in a canonical labeling where all
edges point from a lower to a higher vertex index, and isomorphic graphs share
one canonical form.  Each graph is embedded into a three-dimensional feature
space (eccentricity variance, degree variance, vertex count), min-max normed
over the enumerated space.  The feature cube is cut into equal buckets and the
generator maps a feature point to a uniformly drawn graph of its bucket.
"""
from __future__ import annotations

import itertools
import json
from collections import deque
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ConfigError, InvalidGraphError

MAX_ENUMERATION_VERTICES = 6
FEATURE_DIM = 3


@dataclass(frozen=True, order=True)
class Dag:
    vertex_count: int
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if self.vertex_count < 1:
            raise InvalidGraphError("a DAG needs at least one vertex")
        for u, v in self.edges:
            if not (0 <= u < self.vertex_count and 0 <= v < self.vertex_count) or u == v:
                raise InvalidGraphError(f"bad edge ({u}, {v}) for {self.vertex_count} vertices")

    @classmethod
    def from_edges(cls, vertex_count: int, edges) -> "Dag":
        return cls(vertex_count, tuple(sorted({(int(u), int(v)) for u, v in edges})))

    @property
    def key(self) -> str:
        """Short stable identifier, e.g. ``3:01-12``."""
        return f"{self.vertex_count}:" + "-".join(f"{u}{v}" for u, v in self.edges)

    @classmethod
    def from_key(cls, key: str) -> "Dag":
        """Inverse of :attr:`key`; vertex labels are single digits."""
        try:
            n, _, body = key.strip().partition(":")
            edges = [(int(e[0]), int(e[1])) for e in body.split("-") if e]
            if any(len(e) != 2 for e in body.split("-") if e):
                raise ValueError
            return cls.from_edges(int(n), edges)
        except (ValueError, IndexError):
            raise InvalidGraphError(f"malformed dag key {key!r}") from None

    def sources(self) -> list[int]:
        has_in = {v for _, v in self.edges}
        return [v for v in range(self.vertex_count) if v not in has_in]

    def sinks(self) -> list[int]:
        has_out = {u for u, _ in self.edges}
        return [v for v in range(self.vertex_count) if v not in has_out]

    def predecessors(self, v: int) -> list[int]:
        return [a for a, b in self.edges if b == v]

    def is_topologically_labeled(self) -> bool:
        return all(u < v for u, v in self.edges)


def _topological_orders(n: int, edges) -> list[tuple[int, ...]]:
    succ = [[] for _ in range(n)]
    indeg = [0] * n
    for u, v in edges:
        succ[u].append(v)
        indeg[v] += 1

    # Kahn check first, so cyclic input fails fast
    deg = indeg[:]
    queue = [v for v in range(n) if deg[v] == 0]
    seen = 0
    while queue:
        u = queue.pop()
        seen += 1
        for v in succ[u]:
            deg[v] -= 1
            if deg[v] == 0:
                queue.append(v)
    if seen != n:
        raise InvalidGraphError("graph contains a cycle")

    orders = []
    order: list[int] = []
    placed = [False] * n

    def extend():
        if len(order) == n:
            orders.append(tuple(order))
            return
        for v in range(n):
            if not placed[v] and indeg[v] == 0:
                placed[v] = True
                order.append(v)
                for w in succ[v]:
                    indeg[w] -= 1
                extend()
                for w in succ[v]:
                    indeg[w] += 1
                order.pop()
                placed[v] = False

    extend()
    return orders


def _pairs(n: int) -> list[tuple[int, int]]:
    return [(i, j) for i in range(n) for j in range(i + 1, n)]


def canonical_code(dag: Dag) -> int:
    """Integer whose bits (first pair most significant) give the canonical upper triangle."""
    return _canonical(dag.vertex_count, dag.edges)[0]


def _canonical(n: int, edges) -> tuple[int, tuple[int, ...]]:
    edge_set = set(edges)
    pairs = _pairs(n)
    best_code, best_order = None, None
    for order in _topological_orders(n, edges):
        code = 0
        for i, j in pairs:
            code = (code << 1) | ((order[i], order[j]) in edge_set)
        if best_code is None or code < best_code:
            best_code, best_order = code, order
    return best_code, best_order


def canonicalize(dag: Dag) -> Dag:
    """Relabel ``dag`` to the minimal upper-triangular adjacency bit-string.

    Only relabelings that are topological orders are considered, so the result
    always satisfies ``u < v`` for every edge.
    """
    _, order = _canonical(dag.vertex_count, dag.edges)
    new_label = {old: new for new, old in enumerate(order)}
    return Dag.from_edges(dag.vertex_count, [(new_label[u], new_label[v]) for u, v in dag.edges])


def enumerate_dags(max_vertices: int) -> list[Dag]:
    """All non-isomorphic DAGs on 1..max_vertices vertices, in canonical form."""
    if not 1 <= max_vertices <= MAX_ENUMERATION_VERTICES:
        raise ConfigError(f"max_vertices must lie in [1, {MAX_ENUMERATION_VERTICES}], got {max_vertices}")
    result = []
    for n in range(1, max_vertices + 1):
        pairs = _pairs(n)
        found: dict[int, Dag] = {}
        # every DAG has a topological labeling, so upper-triangular edge sets cover all classes
        for mask in range(1 << len(pairs)):
            edges = [p for b, p in enumerate(pairs) if mask >> b & 1]
            code, order = _canonical(n, edges)
            if code not in found:
                new_label = {old: new for new, old in enumerate(order)}
                found[code] = Dag.from_edges(n, [(new_label[u], new_label[v]) for u, v in edges])
        result.extend(found[c] for c in sorted(found))
    return result


# --- features -------------------------------------------------------------


class FeaturePoint(NamedTuple):
    ecc_var: float
    deg_var: float
    n_vertices: float


def eccentricities(dag: Dag) -> list[int]:
    """Eccentricity of each vertex on the undirected closure.

    Distances only range over vertices in the same connected component, so an
    isolated vertex has eccentricity 0.
    """
    n = dag.vertex_count
    adj = [[] for _ in range(n)]
    for u, v in dag.edges:
        adj[u].append(v)
        adj[v].append(u)
    ecc = []
    for s in range(n):
        dist = {s: 0}
        q = deque([s])
        while q:
            u = q.popleft()
            for v in adj[u]:
                if v not in dist:
                    dist[v] = dist[u] + 1
                    q.append(v)
        ecc.append(max(dist.values()))
    return ecc


def degrees(dag: Dag) -> list[int]:
    deg = [0] * dag.vertex_count
    for u, v in dag.edges:
        deg[u] += 1
        deg[v] += 1
    return deg


def raw_features(dag: Dag) -> np.ndarray:
    return np.array(
        [np.var(eccentricities(dag)), np.var(degrees(dag)), float(dag.vertex_count)],
        dtype=np.float64,
    )


@dataclass(frozen=True)
class FeatureNorm:
    minimum: tuple[float, float, float]
    maximum: tuple[float, float, float]

    @classmethod
    def fit(cls, dags: Sequence[Dag]) -> "FeatureNorm":
        raw = np.array([raw_features(g) for g in dags])
        return cls(tuple(raw.min(axis=0).tolist()), tuple(raw.max(axis=0).tolist()))

    def apply(self, raw: np.ndarray) -> np.ndarray:
        lo = np.asarray(self.minimum)
        span = np.asarray(self.maximum) - lo
        safe = np.where(span > 0, span, 1.0)
        return np.clip(np.where(span > 0, (raw - lo) / safe, 0.0), 0.0, 1.0)


def embed(dag: Dag, norm: FeatureNorm) -> FeaturePoint:
    return FeaturePoint(*norm.apply(raw_features(dag)).tolist())


# --- bucket grid and generator -----------------------------------------------


def interval(point, bins_per_dim: int) -> tuple[int, ...]:
    """Index of the bucket containing ``point``; points are clamped into [0, 1]^3 first."""
    x = np.clip(np.asarray(point, dtype=np.float64), 0.0, 1.0)
    idx = np.minimum(np.floor(x * bins_per_dim).astype(int), bins_per_dim - 1)
    return tuple(int(i) for i in idx)


@dataclass
class FeatureGrid:
    bins_per_dim: int
    norm: FeatureNorm
    buckets: dict[tuple[int, ...], list[Dag]]

    def __post_init__(self):
        self._keys = sorted(self.buckets)
        self._key_array = np.array(self._keys, dtype=np.int64).reshape(-1, FEATURE_DIM)

    @property
    def dags(self) -> list[Dag]:
        return [g for k in self._keys for g in self.buckets[k]]

    def embed(self, dag: Dag) -> FeaturePoint:
        return embed(dag, self.norm)

    def interval(self, point) -> tuple[int, ...]:
        return interval(point, self.bins_per_dim)

    def bucket_for(self, point) -> tuple[int, ...]:
        """The point's own bucket if non-empty, else the nearest non-empty one.

        Distance is measured between bucket centers; ties go to the
        lexicographically smallest bucket index.
        """
        if not self.buckets:
            raise ConfigError("feature grid is empty")
        idx = self.interval(point)
        if idx in self.buckets:
            return idx
        d2 = ((self._key_array - np.asarray(idx)) ** 2).sum(axis=1)
        return self._keys[int(np.argmin(d2))]

    def generate(self, point, rng: np.random.Generator) -> Dag:
        members = self.buckets[self.bucket_for(point)]
        return members[int(rng.integers(len(members)))]

    def to_json(self) -> dict:
        return {
            "bins_per_dim": self.bins_per_dim,
            "norm": {"min": list(self.norm.minimum), "max": list(self.norm.maximum)},
            "features": ["ecc_var", "deg_var", "n_vertices"],
            "buckets": {
                ",".join(map(str, k)): [
                    {"vertex_count": g.vertex_count, "edges": [list(e) for e in g.edges]}
                    for g in self.buckets[k]
                ]
                for k in self._keys
            },
        }

    @classmethod
    def from_json(cls, doc: dict) -> "FeatureGrid":
        buckets = {
            tuple(int(i) for i in key.split(",")): [
                Dag.from_edges(g["vertex_count"], g["edges"]) for g in members
            ]
            for key, members in doc["buckets"].items()
        }
        norm = FeatureNorm(tuple(doc["norm"]["min"]), tuple(doc["norm"]["max"]))
        return cls(int(doc["bins_per_dim"]), norm, buckets)

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_json(), f, indent=1)

    @classmethod
    def load(cls, path) -> "FeatureGrid":
        with open(path) as f:
            return cls.from_json(json.load(f))


def build_grid(dags: Sequence[Dag], bins_per_dim: int = 8, norm: FeatureNorm | None = None) -> FeatureGrid:
    if bins_per_dim < 1:
        raise ConfigError("bins_per_dim must be >= 1")
    if not dags:
        raise ConfigError("cannot build a grid from an empty graph list")
    norm = norm or FeatureNorm.fit(dags)
    buckets: dict[tuple[int, ...], list[Dag]] = {}
    for g in dags:
        buckets.setdefault(interval(embed(g, norm), bins_per_dim), []).append(g)
    return FeatureGrid(bins_per_dim, norm, buckets)


def default_grid(max_vertices: int = 5, bins_per_dim: int = 8) -> FeatureGrid:
    return build_grid(enumerate_dags(max_vertices), bins_per_dim)


def complete_dag(n: int) -> Dag:
    """Fully connected DAG on ``n`` vertices (every pair ``u < v`` is an edge)."""
    return Dag.from_edges(n, itertools.combinations(range(n), 2))
