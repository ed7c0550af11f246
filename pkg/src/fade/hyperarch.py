"""Cell embodiment and the weight-shared hyper-architecture.

A hyper-architecture has ``d`` rows of ``w`` candidate cells.  Each row is a
single hyper-cell: the fully connected DAG on ``max_cell_vertices`` vertices
with one 5x5 convolution per edge.  Row members are canonical DAGs and use the
hyper-cell convolutions of their own edges, so members of one row share
weights.  Rows are chained by 2x2 max pooling followed by a parameter-free
channel doubling (the pooled map is concatenated with itself).

Path indices are 0-based throughout.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError
from .graphs import Dag, complete_dag

KERNEL = 5
MODES = ("gumbel-hard", "softmax-mix", "fixed-path")

Edge = tuple[int, int]
EdgeWeights = dict[Edge, tuple[Tensor, Tensor]]


@dataclass(frozen=True)
class CellSpec:
    """A DAG embodied as a cell: implicit input/output vertices plus one conv per DAG edge."""

    dag: Dag
    channels: int
    edge_ops: dict[Edge, tuple[int, int, int, int]]  # conv kernel shape per edge

    @property
    def input_targets(self) -> list[int]:
        return self.dag.sources()

    @property
    def output_sources(self) -> list[int]:
        return self.dag.sinks()

    @property
    def conv_count(self) -> int:
        return len(self.edge_ops)

    def weight_count(self) -> int:
        return sum(int(np.prod(shape)) + shape[0] for shape in self.edge_ops.values())


def embody(dag: Dag, channels: int) -> CellSpec:
    if not dag.is_topologically_labeled():
        raise ConfigError("embody expects a canonically labeled DAG")
    shape = (channels, channels, KERNEL, KERNEL)
    return CellSpec(dag, channels, {e: shape for e in dag.edges})


def cell_forward(x: Tensor, dag: Dag, weights: EdgeWeights) -> Tensor:
    """Evaluate a cell.

    Source vertices receive ``x`` unchanged.  Every other vertex sums the
    convolutions on its incoming edges and applies ReLU; the output vertex
    does the same over the sinks, without convolutions.
    """
    values: list[Tensor] = []
    for v in range(dag.vertex_count):
        preds = dag.predecessors(v)
        if not preds:
            values.append(x)
            continue
        terms = [ad.conv2d(values[u], *weights[(u, v)]) for u in preds]
        values.append(ad.relu(ad.add_all(terms)))
    return ad.relu(ad.add_all(values[s] for s in dag.sinks()))


def row_channels(depth: int, deepest_channels: int) -> list[int]:
    """Channel count per row, halving from the deepest row towards the input."""
    return [max(1, deepest_channels >> (depth - 1 - i)) for i in range(depth)]


def _transition(h: Tensor, c_from: int, c_to: int) -> Tensor:
    h = ad.max_pool2d(h)
    if c_to == c_from:
        return h
    if c_to % c_from:
        raise ConfigError(f"channel step {c_from} -> {c_to} is not an integer multiple")
    return ad.channel_repeat(h, c_to // c_from)


def _conv_params(c_out: int, c_in: int, rng, name: str) -> tuple[Tensor, Tensor]:
    w = ad.kaiming_init((c_out, c_in, KERNEL, KERNEL), c_in * KERNEL * KERNEL, rng)
    return ad.parameter(w, name + ".w"), ad.parameter(np.zeros(c_out), name + ".b")


def _chain(x: Tensor, stem, rows, channels: list[int], classifier) -> Tensor:
    h = ad.relu(ad.conv2d(x, *stem))
    for i, row_fn in enumerate(rows):
        if i > 0:
            h = _transition(h, channels[i - 1], channels[i])
        h = row_fn(h)
    return ad.linear(ad.global_avg_pool(h), *classifier)


def gumbel_softmax(x: Tensor, tau: float, rng: np.random.Generator, hard: bool = True,
                   noise: np.ndarray | None = None) -> Tensor:
    """``Softmax((x + G) / tau)`` with standard Gumbel noise ``G``.

    With ``hard`` the forward value is the one-hot of the argmax and the
    gradient is that of the soft value (straight-through).
    """
    if tau <= 0:
        raise ConfigError("temperature must be positive")
    g = ad.gumbel_sample(x.shape, rng) if noise is None else noise
    soft = ad.softmax(ad.mul(ad.add(x, Tensor(g)), 1.0 / tau))
    if not hard:
        return soft
    onehot = np.zeros_like(soft.data)
    onehot[int(np.argmax(soft.data))] = 1.0
    return ad.straight_through(onehot, soft)


class HyperCellRow:
    """One row: the shared hyper-cell weights and the row's member DAGs."""

    def __init__(self, members: list[Dag], channels: int, max_cell_vertices: int,
                 rng: np.random.Generator, prefix: str = "row"):
        self.g_max = complete_dag(max_cell_vertices)
        for m in members:
            if m.vertex_count > max_cell_vertices or not m.is_topologically_labeled():
                raise ConfigError(f"member {m.key} is not a subgraph of the {max_cell_vertices}-vertex hyper-cell")
        self.members = list(members)
        self.channels = channels
        self.weights: EdgeWeights = {
            e: _conv_params(channels, channels, rng, f"{prefix}.e{e[0]}{e[1]}")
            for e in self.g_max.edges
        }

    @property
    def masks(self) -> list[frozenset[Edge]]:
        return [frozenset(m.edges) for m in self.members]

    def member_forward(self, x: Tensor, j: int) -> Tensor:
        return cell_forward(x, self.members[j], self.weights)

    def weight_count(self) -> int:
        return embody(self.g_max, self.channels).weight_count()


class HyperArchitecture:
    def __init__(self, members: list[list[Dag]], *, deepest_channels: int = 16, in_channels: int = 3,
                 num_classes: int = 10, max_cell_vertices: int = 5, tau: float = 10.0,
                 alpha_init_std: float = 0.5, rng: np.random.Generator):
        if not members or any(len(r) != len(members[0]) or not r for r in members):
            raise ConfigError("hyper-architecture rows must be non-empty and of equal width")
        if tau <= 0:
            raise ConfigError("temperature must be positive")
        self.depth = len(members)
        self.width = len(members[0])
        self.tau = tau
        self.in_channels = in_channels
        self.num_classes = num_classes
        self.max_cell_vertices = max_cell_vertices
        self.channels = row_channels(self.depth, deepest_channels)
        self.stem = _conv_params(self.channels[0], in_channels, rng, "stem")
        self.rows = [
            HyperCellRow(r, c, max_cell_vertices, rng, prefix=f"row{i}")
            for i, (r, c) in enumerate(zip(members, self.channels))
        ]
        cw = ad.kaiming_init((self.channels[-1], num_classes), self.channels[-1], rng)
        self.classifier = (ad.parameter(cw, "cls.w"), ad.parameter(np.zeros(num_classes), "cls.b"))
        self.alpha = [
            ad.parameter(rng.normal(0.0, alpha_init_std, size=self.width), f"alpha{i}")
            for i in range(self.depth)
        ]

    # -- parameters --

    def weight_params(self) -> dict[str, Tensor]:
        params = {"stem.w": self.stem[0], "stem.b": self.stem[1]}
        for i, row in enumerate(self.rows):
            for (u, v), (w, b) in row.weights.items():
                params[f"row{i}.e{u}{v}.w"] = w
                params[f"row{i}.e{u}{v}.b"] = b
        params["cls.w"], params["cls.b"] = self.classifier
        return params

    def alpha_raw(self) -> np.ndarray:
        return np.stack([a.data for a in self.alpha])

    def alpha_softmax(self) -> np.ndarray:
        raw = self.alpha_raw()
        e = np.exp(raw - raw.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)

    def weight_count(self) -> int:
        return sum(p.data.size for p in self.weight_params().values())

    def carry_weights_from(self, other: "HyperArchitecture") -> None:
        """Copy stem, classifier and per-row hyper-cell weights where shapes agree."""
        mine, theirs = self.weight_params(), other.weight_params()
        for name, p in mine.items():
            q = theirs.get(name)
            if q is not None and q.shape == p.shape:
                p.data = q.data.copy()

    # -- forward --

    def sample_gates(self, rng: np.random.Generator, hard: bool = True) -> list[Tensor]:
        return [gumbel_softmax(a, self.tau, rng, hard=hard) for a in self.alpha]

    def check_path(self, path) -> tuple[int, ...]:
        path = tuple(int(k) for k in path)
        if len(path) != self.depth or any(not 0 <= k < self.width for k in path):
            raise IndexError(f"path {path} outside the {self.depth}x{self.width} grid")
        return path

    def forward(self, x, mode: str = "gumbel-hard", rng: np.random.Generator | None = None,
                path=None, gates: list[Tensor] | None = None, dense: bool = False) -> Tensor:
        """Logits for a batch ``x`` of shape (N, C, H, W).

        ``gumbel-hard`` runs exactly one member per row, scaled by its
        straight-through gate (``gates`` if given, else sampled with ``rng``).
        With ``dense`` every member runs and the row output is the gated sum;
        the forward value is unchanged, since all but one gate are zero, but
        every gate then receives its gradient.
        ``softmax-mix`` sums all members weighted by ``softmax(alpha)``.
        ``fixed-path`` runs the members in ``path`` and ignores alpha.
        """
        x = x if isinstance(x, Tensor) else Tensor(x)
        if mode == "gumbel-hard":
            if gates is None:
                gates = self.sample_gates(rng)
            picks = [int(np.argmax(g.data)) for g in gates]
            if dense:
                fns = [
                    (lambda h, row=row, g=g: ad.add_all(
                        ad.mul(row.member_forward(h, j), ad.select(g, j)) for j in range(self.width)))
                    for row, g in zip(self.rows, gates)
                ]
            else:
                fns = [
                    (lambda h, row=row, k=k, g=g: ad.mul(row.member_forward(h, k), ad.select(g, k)))
                    for row, k, g in zip(self.rows, picks, gates)
                ]
        elif mode == "softmax-mix":
            fns = []
            for row, a in zip(self.rows, self.alpha):
                s = ad.softmax(a)
                fns.append(lambda h, row=row, s=s: ad.add_all(
                    ad.mul(row.member_forward(h, j), ad.select(s, j)) for j in range(self.width)))
        elif mode == "fixed-path":
            path = self.check_path(path)
            fns = [(lambda h, row=row, k=k: row.member_forward(h, k)) for row, k in zip(self.rows, path)]
        else:
            raise ConfigError(f"unknown forward mode {mode!r}")
        return _chain(x, self.stem, fns, self.channels, self.classifier)

    def paths(self):
        return itertools.product(range(self.width), repeat=self.depth)

    def to_json(self) -> dict:
        return {
            "depth": self.depth,
            "width": self.width,
            "channels": self.channels,
            "tau": self.tau,
            "max_cell_vertices": self.max_cell_vertices,
            "rows": [
                [{"vertex_count": m.vertex_count, "edges": [list(e) for e in m.edges]} for m in row.members]
                for row in self.rows
            ],
            "alpha_raw": self.alpha_raw().tolist(),
            "alpha_softmax": self.alpha_softmax().tolist(),
        }


class DiscreteNetwork:
    """A standalone chain of ``d`` cells, each with its own convolution weights."""

    def __init__(self, cells: list[Dag], channels: list[int], stem, cell_weights: list[EdgeWeights], classifier):
        self.cells = list(cells)
        self.channels = list(channels)
        self.stem = stem
        self.cell_weights = cell_weights
        self.classifier = classifier

    @classmethod
    def fresh(cls, cells: list[Dag], *, deepest_channels: int = 16, in_channels: int = 3,
              num_classes: int = 10, rng: np.random.Generator) -> "DiscreteNetwork":
        channels = row_channels(len(cells), deepest_channels)
        stem = _conv_params(channels[0], in_channels, rng, "stem")
        weights = [
            {e: _conv_params(c, c, rng, f"cell{i}.e{e[0]}{e[1]}") for e in dag.edges}
            for i, (dag, c) in enumerate(zip(cells, channels))
        ]
        cw = ad.kaiming_init((channels[-1], num_classes), channels[-1], rng)
        classifier = (ad.parameter(cw, "cls.w"), ad.parameter(np.zeros(num_classes), "cls.b"))
        return cls(cells, channels, stem, weights, classifier)

    def forward(self, x) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(x)
        fns = [(lambda h, dag=dag, w=w: cell_forward(h, dag, w)) for dag, w in zip(self.cells, self.cell_weights)]
        return _chain(x, self.stem, fns, self.channels, self.classifier)

    def weight_params(self) -> dict[str, Tensor]:
        params = {"stem.w": self.stem[0], "stem.b": self.stem[1]}
        for i, weights in enumerate(self.cell_weights):
            for (u, v), (w, b) in weights.items():
                params[f"cell{i}.e{u}{v}.w"] = w
                params[f"cell{i}.e{u}{v}.b"] = b
        params["cls.w"], params["cls.b"] = self.classifier
        return params

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.weight_params().values())


def _copy(pair, name):
    return tuple(ad.parameter(t.data.copy(), f"{name}.{s}") for t, s in zip(pair, "wb"))


def extract_discrete(h: HyperArchitecture, path) -> DiscreteNetwork:
    """Standalone network for ``path`` with weights copied out of the hyper-cells."""
    path = h.check_path(path)
    cells, weights = [], []
    for i, (row, k) in enumerate(zip(h.rows, path)):
        dag = row.members[k]
        cells.append(dag)
        weights.append({e: _copy(row.weights[e], f"cell{i}.e{e[0]}{e[1]}") for e in dag.edges})
    return DiscreteNetwork(cells, h.channels, _copy(h.stem, "stem"), weights, _copy(h.classifier, "cls"))
