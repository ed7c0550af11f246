"""Experiment drivers behind the CLI; every run writes a manifest and its result files.

Result rows are appended and flushed as soon as an epoch completes, so an
interrupted run leaves every finished epoch on disk and nothing partial.
"""
from __future__ import annotations

import csv
import json
import platform
import sys
import time
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .baselines import HistoryEntry, bo_ucb, oracle_objective, random_search
from .config import ExperimentConfig
from .data import (DatasetSplits, LabeledSet, cifar_subset, concave_oracle, load_cifar10,
                   make_synthetic, split)
from .graphs import FEATURE_DIM, FeatureGrid, default_grid
from .hyperarch import DiscreteNetwork, HyperArchitecture
from .ranks import RankTable, UndefinedCorrelationError, marginals, pearson, spearman
from .search import HyperArchBeta, OracleBeta, TrajectoryStep, evaluate_point, run_search
from .training import RegSchedule, train_discrete, train_hyperarch


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _versions() -> dict:
    return {"fade": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


class RunWriter:
    """Single writer for one run directory: manifest, CSV appends and JSON documents."""

    def __init__(self, out_dir, command: str, config: ExperimentConfig, argv=None):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.manifest = {
            "command": command, "argv": list(sys.argv[1:] if argv is None else argv),
            "config": config.to_dict(), "seeds": [config.seed], "start": _now(), "end": None,
            "status": "running", "versions": _versions(), "artifacts": [],
        }
        self._csv = {}
        self.write_manifest()

    def path(self, name: str) -> Path:
        if name not in self.manifest["artifacts"]:
            self.manifest["artifacts"].append(name)
        return self.dir / name

    def write_manifest(self) -> None:
        (self.dir / "manifest.json").write_text(json.dumps(self.manifest, indent=2) + "\n")

    def csv_header(self, name: str, header) -> None:
        f = open(self.path(name), "w", newline="")
        self._csv[name] = (f, csv.writer(f))
        self._csv[name][1].writerow(header)
        f.flush()

    def append(self, name: str, rows) -> None:
        f, writer = self._csv[name]
        writer.writerows(rows)
        f.flush()

    def json(self, name: str, doc) -> None:
        self.path(name).write_text(json.dumps(doc, indent=2) + "\n")

    def close(self, status: str = "complete", **extra) -> None:
        for f, _ in self._csv.values():
            f.close()
        self._csv.clear()
        self.manifest.update(end=_now(), status=status, **extra)
        self.write_manifest()


def _fmt(x: float) -> str:
    return repr(float(x))


# --- data -----------------------------------------------------------------------


def load_dataset(cfg: ExperimentConfig, rng: np.random.Generator) -> LabeledSet:
    if cfg.task == "cifar10":
        data = cifar_subset(load_cifar10(cfg.data_dir or None), classes=cfg.cifar_classes, size=cfg.image_size)
        if cfg.samples < len(data):
            data = data.subset(np.sort(rng.choice(len(data), cfg.samples, replace=False)))
        return data
    params = {"n": cfg.samples, "size": cfg.image_size, "noise": cfg.noise}
    if cfg.task == "planted-cell-quality":
        params.update(width=cfg.image_width, boundary=cfg.boundary)
    return make_synthetic(cfg.task, params, rng)


def make_splits(cfg: ExperimentConfig, rng: np.random.Generator) -> DatasetSplits:
    return split(load_dataset(cfg, rng), cfg.split_ratios, rng)


def grid_for(cfg: ExperimentConfig) -> FeatureGrid:
    return default_grid(cfg.max_vertices, cfg.bins)


def _run(command: str, cfg: ExperimentConfig, out_dir, body, argv=None):
    writer = RunWriter(out_dir, command, cfg, argv)
    try:
        result = body(writer)
    except KeyboardInterrupt:
        writer.close("interrupted")
        raise
    except Exception as e:
        writer.close("failed", error=f"{type(e).__name__}: {e}")
        raise
    writer.close("complete")
    return result


# --- commands -------------------------------------------------------------------


def enumerate_grid(max_vertices: int, bins: int, out) -> FeatureGrid:
    grid = default_grid(max_vertices, bins)
    grid.save(out)
    return grid


def _log_writer(writer: RunWriter, name: str, extra_cols=()):
    writer.csv_header(name, [*extra_cols, "epoch", "phase", "loss", "r", "alpha"])

    def on_epoch(*args):
        *prefix, epoch, rows = args
        writer.append(name, [[*prefix, r["epoch"], r["phase"], _fmt(r["loss"]),
                              ";".join(_fmt(v) for v in np.atleast_1d(r["r"])),
                              json.dumps(np.asarray(r["alpha"]).round(12).tolist())] for r in rows])

    return on_epoch


def validate_ranks(cfg: ExperimentConfig, out_dir, argv=None) -> dict:
    """Train one hyper-architecture, then the validation paths from scratch; report rank agreement."""

    def body(writer):
        rng = np.random.default_rng(cfg.seed)
        splits = make_splits(cfg, rng)
        members = cfg.member_dags()
        h = HyperArchitecture([members] * cfg.depth, deepest_channels=cfg.deepest_channels,
                              in_channels=splits.image_shape[0], num_classes=splits.class_count,
                              max_cell_vertices=cfg.max_cell_vertices, tau=cfg.tau,
                              alpha_init_std=cfg.alpha_init_std, rng=rng)
        schedule = RegSchedule(cfg.schedule, cfg.r_start, cfg.r_end, cfg.epochs, cfg.depth)
        result = train_hyperarch(h, splits, cfg.train_config(), schedule, rng,
                                 on_epoch=_log_writer(writer, "training_log.csv"))
        writer.json("alpha_history.json", [a.tolist() for a in result.alpha_history])
        alpha = result.final_alpha(cfg.beta_last_k)
        table = RankTable.from_alpha(alpha, cfg.paths(), provenance=f"seed={cfg.seed}")
        table.write_csv(writer.path("ranks.csv"))
        seeds = [int(s) for s in rng.integers(0, 2**31 - 1, size=len(table.paths))]
        writer.csv_header("accuracies.csv", ["path", "psi", "accuracy"])
        accuracies = []
        for path, psi, seed in zip(table.paths, table.scores, seeds):
            sub = np.random.default_rng(seed)
            net = DiscreteNetwork.fresh([members[k] for k in path], deepest_channels=cfg.deepest_channels,
                                        in_channels=splits.image_shape[0], num_classes=splits.class_count,
                                        rng=sub)
            acc = train_discrete(net, splits, cfg.discrete_epochs, cfg.train_config(), sub)
            accuracies.append(acc)
            writer.append("accuracies.csv", [["-".join(map(str, path)), _fmt(psi), _fmt(acc)]])
        report = {
            "paths": ["-".join(map(str, p)) for p in table.paths], "psi": table.scores,
            "accuracies": accuracies, "n": len(table.paths), "alpha": np.asarray(alpha).tolist(),
            "marginals": marginals([alpha]).tolist(), "members": list(cfg.members),
        }
        for name, fn in (("spearman", spearman), ("pearson", pearson)):
            try:
                report[name] = fn(table.scores, accuracies)
            except UndefinedCorrelationError:
                report[name] = None
        writer.json("report.json", report)
        return report

    return _run("validate-ranks", cfg, out_dir, body, argv)


def _history_header(depth: int) -> list[str]:
    coords = [f"cell{i}_dim{k}" for i in range(depth) for k in range(FEATURE_DIM)]
    return ["epoch", "method", *coords, "median_accuracy", "accuracies"]


def _history_row(entry: HistoryEntry) -> list:
    return [entry.epoch, entry.method, *(_fmt(v) for v in np.ravel(entry.points)), _fmt(entry.value),
            ";".join(_fmt(v) for v in entry.values)]


def _start(cfg: ExperimentConfig, rng: np.random.Generator):
    if cfg.start_point:
        return np.tile(np.asarray(cfg.start_point, dtype=np.float64), (cfg.depth, 1))
    return rng.random((cfg.depth, FEATURE_DIM))


def search(cfg: ExperimentConfig, out_dir, argv=None) -> dict:
    """Pseudo-gradient search with hyper-architecture betas; anchors evaluated every ``eval_every`` epochs."""

    def body(writer):
        rng = np.random.default_rng(cfg.seed)
        grid = grid_for(cfg)
        splits = make_splits(cfg, rng)
        eval_rng = np.random.default_rng(rng.integers(0, 2**63 - 1))
        writer.csv_header("trajectory.csv", ["outer_epoch", "cell", "dim0", "dim1", "dim2"])
        writer.csv_header("history.csv", _history_header(cfg.depth))
        writer.csv_header("rows.csv", ["outer_epoch", "cell", "member", "dag", "alpha", "beta"])
        log = _log_writer(writer, "training_log.csv", ["outer_epoch"])
        alphas = []
        history = []

        def on_step(step: TrajectoryStep):
            writer.append("trajectory.csv", [[step.outer_epoch, i, *(_fmt(v) for v in a)]
                                             for i, a in enumerate(step.anchors)])
            writer.append("rows.csv", [[step.outer_epoch, i, k, key, _fmt(step.alpha[i, k]), _fmt(step.beta[i, k])]
                                       for i, keys in enumerate(step.rows) for k, key in enumerate(keys)])
            alphas.append(np.asarray(step.alpha).tolist())
            writer.json("alpha_history.json", alphas)
            t = step.outer_epoch
            if t == 1 or t % cfg.eval_every == 0 or t == cfg.outer_epochs:
                value, values = evaluate_point(step.anchors, grid, splits, cfg.train_config(),
                                               repeats=cfg.eval_repeats, epochs=cfg.eval_epochs,
                                               deepest_channels=cfg.deepest_channels, rng=eval_rng,
                                               workers=cfg.workers)
                entry = HistoryEntry(t, "fade", step.anchors.copy(), value, values)
                history.append(entry)
                writer.append("history.csv", [_history_row(entry)])

        beta = HyperArchBeta(splits, cfg.train_config(), deepest_channels=cfg.deepest_channels,
                             max_cell_vertices=cfg.max_cell_vertices, schedule_mode=cfg.schedule,
                             r_start=cfg.r_start, r_end=cfg.r_end, carry_weights=cfg.carry_weights,
                             beta_last_k=cfg.beta_last_k, on_epoch=log)
        trajectory = run_search(grid, cfg.depth, cfg.outer_epochs, beta, rng, gamma=cfg.gamma, lam=cfg.lam,
                                sign=cfg.sign, initial_anchors=_start(cfg, rng), on_step=on_step)
        return {"trajectory": trajectory, "history": history}

    return _run("search", cfg, out_dir, body, argv)


def point_objective(cfg: ExperimentConfig, grid: FeatureGrid, splits: DatasetSplits, rng: np.random.Generator):
    def objective(points):
        return evaluate_point(points, grid, splits, cfg.train_config(), repeats=cfg.eval_repeats,
                              epochs=cfg.eval_epochs, deepest_channels=cfg.deepest_channels, rng=rng,
                              workers=cfg.workers)

    return objective


def baseline(cfg: ExperimentConfig, method: str, out_dir, argv=None, objective=None) -> list[HistoryEntry]:
    """Random search (``rs``) or per-cell GP-UCB (``bo``) with ``budget`` proposals.

    ``objective`` defaults to from-scratch evaluation of generated architectures.
    """

    def body(writer):
        rng = np.random.default_rng(cfg.seed)
        obj = objective
        if obj is None:
            obj = point_objective(cfg, grid_for(cfg), make_splits(cfg, rng), np.random.default_rng(rng.integers(2**63 - 1)))
        writer.manifest["method"] = method
        if method == "bo":
            writer.manifest["acquisition"] = {"kind": "ucb", "kappa": cfg.kappa, "xi": cfg.xi}
        writer.write_manifest()
        writer.csv_header("history.csv", _history_header(cfg.depth))
        on_entry = lambda e: writer.append("history.csv", [_history_row(e)])
        if method == "rs":
            return random_search(obj, cfg.depth, cfg.budget, rng, on_entry=on_entry)
        return bo_ucb(obj, cfg.depth, cfg.budget, rng, kappa=cfg.kappa, xi=cfg.xi,
                      length_scale=cfg.gp_length_scale, signal_var=cfg.gp_signal_var,
                      noise_var=cfg.gp_noise_var, lattice_per_dim=cfg.lattice_per_dim, on_entry=on_entry)

    if method not in ("rs", "bo"):
        raise ValueError(f"unknown baseline method {method!r}")
    return _run(f"baseline-{method}", cfg, out_dir, body, argv)


def evaluate(cfg: ExperimentConfig, points, out_dir, argv=None) -> dict:
    """Generate and train architectures from one feature point per cell."""

    def body(writer):
        rng = np.random.default_rng(cfg.seed)
        grid = grid_for(cfg)
        splits = make_splits(cfg, rng)
        pts = np.asarray(points, dtype=np.float64).reshape(cfg.depth, FEATURE_DIM)
        value, values = evaluate_point(pts, grid, splits, cfg.train_config(), repeats=cfg.eval_repeats,
                                       epochs=cfg.eval_epochs, deepest_channels=cfg.deepest_channels,
                                       rng=rng, workers=cfg.workers)
        doc = {"points": pts.tolist(), "median_accuracy": value, "accuracies": values}
        writer.json("eval.json", doc)
        return doc

    return _run("eval", cfg, out_dir, body, argv)


def oracle_search(cfg: ExperimentConfig, out_dir, argv=None) -> dict:
    """Outer search with betas from the concave oracle instead of training."""

    def body(writer):
        rng = np.random.default_rng(cfg.seed)
        grid = grid_for(cfg)
        oracle = concave_oracle(cfg.oracle_optimum)
        beta = OracleBeta(oracle, grid, cfg.oracle_temperature, cfg.oracle_source)
        writer.csv_header("trajectory.csv", ["outer_epoch", "cell", "dim0", "dim1", "dim2"])

        def on_step(step):
            writer.append("trajectory.csv", [[step.outer_epoch, i, *(_fmt(v) for v in a)]
                                             for i, a in enumerate(step.anchors)])

        t0 = time.perf_counter()
        trajectory = run_search(grid, cfg.depth, cfg.outer_epochs, beta, rng, gamma=cfg.gamma, lam=cfg.lam,
                                sign=cfg.sign, initial_anchors=_start(cfg, rng), on_step=on_step)
        final = trajectory.final_anchors
        doc = {"final_anchors": final.tolist(), "optimum": list(cfg.oracle_optimum),
               "max_abs_error": float(np.abs(final - oracle.optimum).max()),
               "seconds": time.perf_counter() - t0}
        writer.json("summary.json", doc)
        return {"trajectory": trajectory, **doc}

    return _run("oracle-search", cfg, out_dir, body, argv)


def oracle_baseline(cfg: ExperimentConfig, method: str, out_dir, argv=None) -> list[HistoryEntry]:
    """RS/BO against the concave oracle (mean over cells)."""
    return baseline(cfg, method, out_dir, argv, objective=oracle_objective(concave_oracle(cfg.oracle_optimum)))
