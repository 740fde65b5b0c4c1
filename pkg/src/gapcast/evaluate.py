"""Metrics, observable/missing reporting splits, and the impute-then-predict
two-step baselines.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .data import DataError, SpeedSeries, SplitSpec, split
from .graph import RoadGraph
from .model import nig_nll_values
from .training import TrainConfig, TrainedModel, predict_full, train

__all__ = [
    "MetricReport",
    "WindowPredictions",
    "ImputationError",
    "rmse",
    "mae",
    "r2",
    "mean_impute",
    "knn_impute",
    "collect_predictions",
    "make_report",
    "two_step_pipeline",
]


class ImputationError(ValueError):
    """A missing location cannot be imputed (e.g. no reachable neighbor)."""


def _check_pair(pred, truth) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=np.float64).reshape(-1)
    t = np.asarray(truth, dtype=np.float64).reshape(-1)
    if p.size == 0 or p.size != t.size:
        raise DataError(f"need equal nonempty arrays, got {p.size} and {t.size}")
    return p, t


def rmse(pred, truth) -> float:
    p, t = _check_pair(pred, truth)
    return float(np.sqrt(np.mean((p - t) ** 2)))


def mae(pred, truth) -> float:
    p, t = _check_pair(pred, truth)
    return float(np.mean(np.abs(p - t)))


def r2(pred, truth) -> float:
    """1 - SSE/SST about the truth mean; NaN when the truth has no variance."""
    p, t = _check_pair(pred, truth)
    sst = float(np.sum((t - t.mean()) ** 2))
    if sst == 0.0:
        return float("nan")
    return 1.0 - float(np.sum((p - t) ** 2)) / sst


def mean_impute(series: SpeedSeries, graph: RoadGraph) -> SpeedSeries:
    """Fill missing-location columns with the per-step cross-sectional mean
    of the observable columns."""
    if graph.observable.size == 0:
        raise ImputationError("no observable locations to average")
    values = series.values.copy()
    obs = values[:, graph.observable]
    fill = np.nanmean(obs, axis=1)
    values[:, graph.missing] = fill[:, None]
    return replace(series, values=values)


def knn_impute(series: SpeedSeries, graph: RoadGraph, k: int = 3) -> SpeedSeries:
    """Fill each missing column with the unweighted mean of its k nearest
    observable columns by road distance (ties broken by node index)."""
    if k < 1:
        raise DataError(f"k must be >= 1, got {k}")
    values = series.values.copy()
    for node in graph.missing:
        dists = graph.distances[node, graph.observable]
        finite = np.isfinite(dists)
        if not finite.any():
            raise ImputationError(f"missing node {node} has no reachable observable node")
        cand = graph.observable[finite]
        cand_d = dists[finite]
        order = np.lexsort((cand, cand_d))
        chosen = cand[order[: min(k, cand.size)]]
        values[:, node] = series.values[:, chosen].mean(axis=1)
    return replace(series, values=values)


@dataclass
class WindowPredictions:
    """Stacked per-window, per-node predictions in speed units.

    ``beta`` is already rescaled, so epistemic/aleatoric derived here are
    speed-variance units.
    """

    target_steps: np.ndarray  # (W,) target time indices into the series
    gamma: np.ndarray  # (W, N)
    nu: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    truth: np.ndarray  # (W, N)

    @property
    def epistemic(self) -> np.ndarray:
        return self.beta / (self.nu * (self.alpha - 1.0))

    def nll(self) -> np.ndarray:
        return nig_nll_values(self.gamma, self.nu, self.alpha, self.beta, self.truth)

    def group_rmse(self, nodes: np.ndarray) -> float:
        if nodes.size == 0:
            return float("nan")
        return rmse(self.gamma[:, nodes], self.truth[:, nodes])

    def per_node_epistemic(self) -> np.ndarray:
        return self.epistemic.mean(axis=0)

    def per_node_rmse(self) -> np.ndarray:
        return np.sqrt(np.mean((self.gamma - self.truth) ** 2, axis=0))


def collect_predictions(
    model: TrainedModel,
    eval_graph: RoadGraph,
    input_series: SpeedSeries,
    truth_series: SpeedSeries,
    stride: int = 1,
) -> WindowPredictions:
    """Run the model over every gap-free window of the input series.

    ``eval_graph``'s partition controls the input mask (missing rows are
    zeroed), while the truth may cover all nodes; window t predicts
    t + horizon.
    """
    t_hist, dt = model.history, model.horizon
    values = input_series.values
    steps = values.shape[0]
    if steps < t_hist + dt:
        raise DataError(f"evaluation series too short: {steps} < {t_hist + dt}")
    finite_in = np.isfinite(values[:, eval_graph.observable]).all(axis=1)
    finite_truth = np.isfinite(truth_series.values).all(axis=1)
    rows = []
    for t in range(t_hist - 1, steps - dt, stride):
        if not (finite_in[t - t_hist + 1 : t + 1].all() and finite_truth[t + dt]):
            continue
        fp = predict_full(eval_graph, values[t - t_hist + 1 : t + 1], model)
        ev = fp.evidential
        rows.append((t + dt, ev.gamma, ev.nu, ev.alpha_nig, ev.beta))
    if not rows:
        raise DataError("no evaluable windows in the series")
    target_steps = np.array([r[0] for r in rows], dtype=np.int64)
    return WindowPredictions(
        target_steps=target_steps,
        gamma=np.stack([r[1] for r in rows]),
        nu=np.stack([r[2] for r in rows]),
        alpha=np.stack([r[3] for r in rows]),
        beta=np.stack([r[4] for r in rows]),
        truth=truth_series.values[target_steps],
    )


GROUP_METRICS = ("rmse", "mae", "r2", "nll")


@dataclass
class MetricReport:
    """Grouped and per-node accuracy/uncertainty summary for one horizon."""

    horizon: int
    groups: dict[str, dict[str, float]]
    per_node: list[dict]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["group", *GROUP_METRICS])
            for group in ("observable", "missing"):
                row = self.groups[group]
                writer.writerow([group, *(repr(row[m]) for m in GROUP_METRICS)])

    def per_node_csv(self, path) -> None:
        cols = ["node_id", "node_index", "group", "rmse", "mae", "r2", "nll", "epistemic"]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(cols)
            for row in self.per_node:
                writer.writerow(
                    [row["node_id"], row["node_index"], row["group"]]
                    + [repr(row[c]) for c in cols[3:]]
                )

    def format_table(self) -> str:
        lines = [f"{'group':<12}" + "".join(f"{m:>10}" for m in GROUP_METRICS)]
        for group in ("observable", "missing"):
            row = self.groups[group]
            lines.append(
                f"{group:<12}" + "".join(f"{row[m]:>10.4f}" for m in GROUP_METRICS)
            )
        return "\n".join(lines)


def make_report(
    wp: WindowPredictions, graph: RoadGraph, horizon: int
) -> MetricReport:
    """Per-group and per-node metrics. R^2 uses each group's (or node's)
    own truth mean."""
    nll = wp.nll()
    epi = wp.epistemic
    groups = {}
    for name, nodes in (("observable", graph.observable), ("missing", graph.missing)):
        if nodes.size == 0:
            groups[name] = {m: float("nan") for m in GROUP_METRICS}
            continue
        pred = wp.gamma[:, nodes].reshape(-1)
        truth = wp.truth[:, nodes].reshape(-1)
        groups[name] = {
            "rmse": rmse(pred, truth),
            "mae": mae(pred, truth),
            "r2": r2(pred, truth),
            "nll": float(nll[:, nodes].mean()),
        }
    missing_set = set(graph.missing.tolist())
    per_node = []
    for i in range(graph.n):
        node_id = graph.node_ids[i] if graph.node_ids else f"n{i}"
        per_node.append(
            {
                "node_id": node_id,
                "node_index": i,
                "group": "missing" if i in missing_set else "observable",
                "rmse": rmse(wp.gamma[:, i], wp.truth[:, i]),
                "mae": mae(wp.gamma[:, i], wp.truth[:, i]),
                "r2": r2(wp.gamma[:, i], wp.truth[:, i]),
                "nll": float(nll[:, i].mean()),
                "epistemic": float(epi[:, i].mean()),
            }
        )
    return MetricReport(horizon=horizon, groups=groups, per_node=per_node)


IMPUTERS = {"mean": mean_impute, "knn": knn_impute}


def two_step_pipeline(
    imputer: str,
    graph: RoadGraph,
    series: SpeedSeries,
    split_spec: SplitSpec,
    cfg: TrainConfig,
    rng: np.random.Generator,
    *,
    k: int = 3,
    stride: int = 1,
) -> MetricReport:
    """Impute missing-location history, train the same diffusion forecaster
    on the completed matrix with no masking, evaluate against the truth.

    Imputation only reads observable columns, so applying it to the full
    series (train and test alike) leaks nothing. The baseline drops the
    recovery term (it has no masked rows to recover).
    """
    if imputer not in IMPUTERS:
        raise DataError(f"imputer must be one of {sorted(IMPUTERS)}, got {imputer!r}")
    imputed = (
        knn_impute(series, graph, k=k) if imputer == "knn" else mean_impute(series, graph)
    )
    min_steps = cfg.history + cfg.horizon
    imp_train, _, imp_test = split(imputed, split_spec, min_steps=min_steps)
    _, _, truth_test = split(series, split_spec, min_steps=min_steps)

    graph_all = graph.with_partition(np.arange(graph.n), np.empty(0, dtype=np.int64))
    base_cfg = replace(cfg, mask_training=False, loss_alpha=0.0)
    result = train(graph_all, imp_train, base_cfg, rng)
    wp = collect_predictions(result.model, graph_all, imp_test, truth_test, stride=stride)
    return make_report(wp, graph, horizon=cfg.horizon)
