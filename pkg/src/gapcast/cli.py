"""Command-line entry point: generate / train / eval / sense.

Every run is seed-reproducible: identical arguments (including --seed)
produce byte-identical output files. Option precedence is CLI flag >
--config JSON file > built-in default, and the resolved configuration is
echoed to <out>/run_config.json.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .data import (
    SplitSpec,
    generate_synthetic,
    hide_locations,
    load_distances_csv,
    load_speed_csv,
    save_distances_csv,
    save_speed_csv,
    split,
)
from .evaluate import collect_predictions, make_report
from .graph import build_adjacency
from .model import ModelConfig
from .sensing import SensingConfig, run_episode
from .training import TrainConfig, load_model, save_model, train

GENERATE_DEFAULTS = {
    "nodes": 20,
    "steps": 2000,
    "seed": 0,
    "noise": 2.0,
    "diurnal_amp": 12.0,
    "wave_amp": 8.0,
    "kappa_hops": 2.5,
}

TRAIN_DEFAULTS = {
    "hide_count": 0,
    "seed": 0,
    "epochs": 750,
    "samples": 8,
    "batch": 4,
    "lr": 1e-4,
    "alpha": 1.0,
    "k_order": 2,
    "layers": 3,
    "hidden": 100,
    "history": 24,
    "horizon": "30min",
    "kappa": float("inf"),
    "sigma": None,
}

EVAL_DEFAULTS = {"stride": 1}

SENSE_DEFAULTS = {
    "seed": 0,
    "policy": ["uncertainty", "random"],
    "budget": 10,
    "init_sensors": 50,
    "steps": 5,
    "train_iters": 200,
    "lr": 1e-4,
    "alpha": 1.0,
    "history": 24,
    "horizon": "30min",
    "hidden": 100,
    "kappa": float("inf"),
    "eval_stride": 4,
}


def parse_horizon(value, resolution: float) -> int:
    """'30min' -> steps at the series resolution; bare integers are steps."""
    if isinstance(value, int):
        steps = value
    else:
        text = str(value).strip().lower()
        if text.endswith("min"):
            seconds = float(text[:-3]) * 60.0
            steps_f = seconds / resolution
            if abs(steps_f - round(steps_f)) > 1e-9:
                raise ValueError(
                    f"horizon {value!r} is not a whole number of {resolution:.0f}s steps"
                )
            steps = int(round(steps_f))
        else:
            steps = int(text)
    if steps < 1:
        raise ValueError(f"horizon must be at least one step, got {value!r}")
    return steps


def _resolve(ns: argparse.Namespace, defaults: dict) -> dict:
    """CLI flag > config file > default, for every known option."""
    config = {}
    config_path = getattr(ns, "config", None)
    if config_path:
        with open(config_path) as fh:
            config = json.load(fh)
        unknown = set(config) - set(defaults)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
    resolved = {}
    for key, default in defaults.items():
        value = getattr(ns, key, None)
        if value is None:
            value = config.get(key, default)
        resolved[key] = value
    return resolved


def _write_run_config(out: Path, command: str, resolved: dict) -> None:
    payload = {"command": command, **resolved}
    (out / "run_config.json").write_text(
        json.dumps(payload, sort_keys=True, indent=2, default=str) + "\n"
    )


def _load_graph(ns_data, ns_distances, sigma, kappa):
    series = load_speed_csv(ns_data)
    distances = load_distances_csv(ns_distances, series.node_ids)
    graph = build_adjacency(distances, sigma=sigma, kappa=kappa, node_ids=series.node_ids)
    return graph, series


def cmd_generate(ns: argparse.Namespace) -> int:
    cfg = _resolve(ns, GENERATE_DEFAULTS)
    out = Path(ns.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg["seed"])
    graph, series = generate_synthetic(
        cfg["nodes"],
        cfg["steps"],
        rng,
        diurnal_amp=cfg["diurnal_amp"],
        wave_amp=cfg["wave_amp"],
        noise_amp=cfg["noise"],
        kappa_hops=cfg["kappa_hops"],
    )
    save_speed_csv(series, out / "speed.csv")
    save_distances_csv(graph.distances, graph.node_ids, out / "distances.csv")
    manifest = {
        "nodes": graph.n,
        "steps": series.steps,
        "node_ids": list(graph.node_ids),
        "kernel_sigma": graph.kernel_sigma,
        "kernel_kappa": graph.kernel_kappa,
        "resolution_seconds": series.resolution,
    }
    (out / "graph.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    _write_run_config(out, "generate", cfg)
    print(f"wrote {series.steps}x{graph.n} series to {out}")
    return 0


def cmd_train(ns: argparse.Namespace) -> int:
    cfg = _resolve(ns, TRAIN_DEFAULTS)
    out = Path(ns.out)
    out.mkdir(parents=True, exist_ok=True)
    graph, series = _load_graph(ns.data, ns.distances, cfg["sigma"], cfg["kappa"])
    horizon = parse_horizon(cfg["horizon"], series.resolution)
    rng = np.random.default_rng(cfg["seed"])
    graph = hide_locations(graph, cfg["hide_count"], rng)
    train_cfg = TrainConfig(
        iterations=cfg["epochs"],
        samples_per_iter=cfg["samples"],
        batch_size=cfg["batch"],
        history=cfg["history"],
        horizon=horizon,
        loss_alpha=cfg["alpha"],
        lr=cfg["lr"],
        model=ModelConfig(
            hidden_dim=cfg["hidden"], layers=cfg["layers"], cheb_order=cfg["k_order"]
        ),
    )
    min_steps = train_cfg.history + train_cfg.horizon
    train_series, _, _ = split(series, SplitSpec(), min_steps=min_steps)
    result = train(graph, train_series, train_cfg, rng)
    save_model(
        out / "checkpoint.bin",
        result.model,
        extra_meta={
            "node_ids": list(series.node_ids),
            "observable": graph.observable.tolist(),
            "missing": graph.missing.tolist(),
            "seed": cfg["seed"],
            "kappa": cfg["kappa"],
            "sigma": graph.kernel_sigma,
        },
    )
    with open(out / "loss_trace.csv", "w") as fh:
        fh.write("iteration,j_pre,j_rec,j_total\n")
        for row in result.trace:
            fh.write(
                f"{row['iteration']},{row['j_pre']!r},{row['j_rec']!r},{row['j_total']!r}\n"
            )
    _write_run_config(out, "train", cfg)
    final = result.trace[-1]
    print(f"trained {cfg['epochs']} epochs; final j_total {final['j_total']:.4f}")
    return 0


def cmd_eval(ns: argparse.Namespace) -> int:
    cfg = _resolve(ns, EVAL_DEFAULTS)
    out = Path(ns.out)
    out.mkdir(parents=True, exist_ok=True)
    model, extra = load_model(ns.checkpoint)
    series = load_speed_csv(ns.data)
    distances = load_distances_csv(ns.distances, series.node_ids)
    graph = build_adjacency(
        distances,
        sigma=extra.get("sigma"),
        kappa=extra.get("kappa", float("inf")),
        node_ids=series.node_ids,
    )
    graph = graph.with_partition(
        np.asarray(extra["observable"], dtype=np.int64),
        np.asarray(extra["missing"], dtype=np.int64),
    )
    min_steps = model.history + model.horizon
    _, _, test_series = split(series, SplitSpec(), min_steps=min_steps)
    wp = collect_predictions(model, graph, test_series, test_series, stride=cfg["stride"])
    report = make_report(wp, graph, horizon=model.horizon)
    report.to_csv(out / "metrics.csv")
    report.per_node_csv(out / "per_node_metrics.csv")
    _write_run_config(out, "eval", cfg)
    print(report.format_table())
    return 0


def cmd_sense(ns: argparse.Namespace) -> int:
    cfg = _resolve(ns, SENSE_DEFAULTS)
    out = Path(ns.out)
    out.mkdir(parents=True, exist_ok=True)
    graph, series = _load_graph(ns.data, ns.distances, None, cfg["kappa"])
    horizon = parse_horizon(cfg["horizon"], series.resolution)
    sense_cfg = SensingConfig(
        initial_count=cfg["init_sensors"],
        budget_per_step=cfg["budget"],
        steps=cfg["steps"],
        train=TrainConfig(
            iterations=cfg["train_iters"],
            history=cfg["history"],
            horizon=horizon,
            loss_alpha=cfg["alpha"],
            lr=cfg["lr"],
            model=ModelConfig(hidden_dim=cfg["hidden"]),
        ),
        eval_stride=cfg["eval_stride"],
    )
    policies = cfg["policy"]
    if isinstance(policies, str):
        policies = [policies]
    for policy in policies:
        rng = np.random.default_rng(cfg["seed"])
        episode = run_episode(graph, series, sense_cfg, policy, rng)
        episode.to_csv(out / f"episode_{policy}.csv")
        last = episode.records[-1]
        print(
            f"{policy}: final coverage {last.n_observable}, "
            f"rmse obs {last.rmse_observable:.3f}, missing {last.rmse_missing:.3f}"
        )
    _write_run_config(out, "sense", cfg)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gapcast",
        description="Traffic forecasting with uncertainty at sensed and unsensed locations.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="write a synthetic corridor dataset")
    gen.add_argument("--nodes", type=int, help="number of sensor locations")
    gen.add_argument("--steps", type=int, help="number of 5-minute steps")
    gen.add_argument("--seed", type=int, help="generator seed")
    gen.add_argument("--noise", type=float, help="uniform noise amplitude (mph)")
    gen.add_argument("--diurnal-amp", type=float, dest="diurnal_amp", help="diurnal dip amplitude")
    gen.add_argument("--wave-amp", type=float, dest="wave_amp", help="traveling wave amplitude")
    gen.add_argument("--kappa-hops", type=float, dest="kappa_hops", help="adjacency cutoff in hops")
    gen.add_argument("--config", help="JSON file with defaults for these flags")
    gen.add_argument("--out", required=True, help="output directory")
    gen.set_defaults(func=cmd_generate)

    tr = sub.add_parser("train", help="train a forecaster on a speed CSV")
    tr.add_argument("--data", required=True, help="speed CSV path")
    tr.add_argument("--distances", required=True, help="distance CSV path")
    tr.add_argument("--hide-count", type=int, dest="hide_count", help="locations to hide")
    tr.add_argument("--seed", type=int, help="run seed")
    tr.add_argument("--epochs", type=int, help="training iterations")
    tr.add_argument("--samples", type=int, help="subgraph samples per iteration")
    tr.add_argument("--batch", type=int, help="gradient batch size")
    tr.add_argument("--lr", type=float, help="Adam learning rate")
    tr.add_argument("--alpha", type=float, help="recovery loss weight")
    tr.add_argument("--k-order", type=int, dest="k_order", help="Chebyshev order")
    tr.add_argument("--layers", type=int, help="diffusion layer count")
    tr.add_argument("--hidden", type=int, help="hidden width")
    tr.add_argument("--history", type=int, help="input window length in steps")
    tr.add_argument("--horizon", help="prediction horizon ('30min' or steps)")
    tr.add_argument("--kappa", type=float, help="adjacency distance cutoff")
    tr.add_argument("--sigma", type=float, help="kernel width (default: distance std)")
    tr.add_argument("--config", help="JSON file with defaults for these flags")
    tr.add_argument("--out", required=True, help="output directory")
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    ev.add_argument("--checkpoint", required=True, help="checkpoint path")
    ev.add_argument("--data", required=True, help="speed CSV path")
    ev.add_argument("--distances", required=True, help="distance CSV path")
    ev.add_argument("--stride", type=int, help="evaluate every k-th window")
    ev.add_argument("--config", help="JSON file with defaults for these flags")
    ev.add_argument("--out", required=True, help="output directory")
    ev.set_defaults(func=cmd_eval)

    se = sub.add_parser("sense", help="run active-sensing deployment episodes")
    se.add_argument("--data", required=True, help="speed CSV path")
    se.add_argument("--distances", required=True, help="distance CSV path")
    se.add_argument(
        "--policy",
        action="append",
        choices=["uncertainty", "random"],
        help="deployment policy (repeatable; default: both)",
    )
    se.add_argument("--budget", type=int, help="sensors deployed per step")
    se.add_argument("--init-sensors", type=int, dest="init_sensors", help="starting coverage")
    se.add_argument("--steps", type=int, help="deployment steps")
    se.add_argument("--train-iters", type=int, dest="train_iters", help="retraining iterations per step")
    se.add_argument("--seed", type=int, help="episode seed")
    se.add_argument("--lr", type=float, help="Adam learning rate")
    se.add_argument("--alpha", type=float, help="recovery loss weight")
    se.add_argument("--history", type=int, help="input window length in steps")
    se.add_argument("--horizon", help="prediction horizon ('30min' or steps)")
    se.add_argument("--hidden", type=int, help="hidden width")
    se.add_argument("--kappa", type=float, help="adjacency distance cutoff")
    se.add_argument("--eval-stride", type=int, dest="eval_stride", help="evaluate every k-th window")
    se.add_argument("--config", help="JSON file with defaults for these flags")
    se.add_argument("--out", required=True, help="output directory")
    se.set_defaults(func=cmd_sense)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        return ns.func(ns)
    except (OSError, ValueError, RuntimeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
