"""Command-line experiment runner: train, plot, and calibrate subcommands."""

from __future__ import annotations

import argparse
import datetime
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import save_checkpoint
from .config import (
    ConfigError,
    apply_overrides,
    build_train_config,
    config_hash,
    load_config_file,
    render_config,
)
from .policy import NumericalError
from .substrate import CalibrationError, build_substrate, calibrate_efficacy, dump_substrate
from .trainer import CSV_COLUMNS, CSV_SCHEMA_ID, MetricsWriter, TrainConfig, train_run

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_CALIBRATION = 2
EXIT_NUMERICAL = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="neurodream",
        description="Train spiking readout agents on Pong, awake or dreaming, and plot the results.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="run training per the config and write metrics")
    train.add_argument("--config", type=Path, default=None, help="key = value config file")
    train.add_argument("--mode", choices=("baseline", "dreaming"), default=None)
    train.add_argument("--games", type=int, default=None)
    train.add_argument("--runs", type=int, default=None)
    train.add_argument("--seed", type=int, default=None)
    train.add_argument("--out", type=Path, default=None, help="output directory")
    train.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override any config key (repeatable)",
    )
    train.add_argument(
        "--dump-substrates",
        action="store_true",
        help="also write binary connectivity/mismatch dumps per run",
    )

    plot = sub.add_parser("plot", help="render SVG training-curve and entropy plots from metrics CSVs")
    plot.add_argument("metrics", nargs="+", type=Path, help="metrics.csv files to overlay")
    plot.add_argument("--out", type=Path, default=None, help="output directory for SVGs")

    calibrate = sub.add_parser("calibrate", help="find the core efficacy for the integration-factor band")
    calibrate.add_argument("--config", type=Path, default=None)
    calibrate.add_argument("--seed", type=int, default=None)
    calibrate.add_argument("--variant", choices=("agent", "model"), default="agent")
    calibrate.add_argument("--out", type=Path, default=None, help="directory for the config overlay")
    calibrate.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    return parser


def _effective_config(args) -> TrainConfig:
    mapping: dict[str, str] = {}
    if args.config is not None:
        mapping.update(load_config_file(args.config))
    for flag, key in (("mode", "mode"), ("games", "games"), ("runs", "runs"), ("seed", "seed")):
        value = getattr(args, flag, None)
        if value is not None:
            mapping[key] = str(value)
    mapping = apply_overrides(mapping, args.overrides)
    return build_train_config(mapping)


def _out_root() -> Path:
    return Path(os.environ.get("NEURODREAM_OUT", "runs"))


def _train_out_dir(args, cfg: TrainConfig, digest: str) -> Path:
    if args.out is not None:
        return args.out
    return _out_root() / f"{cfg.mode}-seed{cfg.master_seed}-{digest[:8]}"


def _now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def cmd_train(args) -> int:
    cfg = _effective_config(args)
    config_text = render_config(cfg)
    digest = config_hash(config_text)
    out_dir = _train_out_dir(args, cfg, digest)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.txt").write_text(config_text, encoding="utf-8")

    manifest = {
        "schema": CSV_SCHEMA_ID,
        "version": __version__,
        "config_sha256": digest,
        "master_seed": cfg.master_seed,
        "mode": cfg.mode,
        "games": cfg.games,
        "runs": cfg.runs,
        "started": _now(),
        "run_files": [],
        "run_summaries": [],
    }

    run_paths = []
    for run_index in range(cfg.runs):
        run_path = out_dir / f"run{run_index:02d}.csv"
        run_paths.append(run_path)
        artifacts: dict = {}
        with open(run_path, "w", encoding="utf-8", newline="") as fh:
            writer = MetricsWriter(fh)

            def on_game(run_id, game, ret, ent, state_loss, reward_loss):
                writer.write_game(run_id, game, ret, ent, state_loss, reward_loss)

            metrics = train_run(cfg, run_index, on_game=on_game, artifacts=artifacts)
        save_checkpoint(
            out_dir / f"checkpoint-run{run_index:02d}.npz",
            artifacts["policy"],
            artifacts.get("model"),
            meta={"run_index": run_index, "mode": cfg.mode, "master_seed": cfg.master_seed},
        )
        if args.dump_substrates:
            dump_substrate(artifacts["agent_substrate"], out_dir / f"substrate-agent-run{run_index:02d}.bin")
            if artifacts.get("model_substrate") is not None:
                dump_substrate(
                    artifacts["model_substrate"], out_dir / f"substrate-model-run{run_index:02d}.bin"
                )
        final_sliding = metrics.sliding[-1] if metrics.games >= 50 else float("nan")
        summary = {
            "run_index": run_index,
            "mean_return": float(np.mean(metrics.returns)),
            "final_sliding_return": None if np.isnan(final_sliding) else float(final_sliding),
            "final_entropy": float(metrics.entropies[-1]),
            "agent_calibration_factor": (
                metrics.agent_calibration.factor if metrics.agent_calibration else None
            ),
            "model_calibration_factor": (
                metrics.model_calibration.factor if metrics.model_calibration else None
            ),
            "awake_frames": metrics.awake_frames,
            "dream_frames": metrics.dream_frames,
            "virtual_total_ms": metrics.virtual_total_ms,
            "wall_seconds": metrics.wall_seconds,
        }
        manifest["run_files"].append(run_path.name)
        manifest["run_summaries"].append(summary)
        print(
            f"run {run_index}: mean return {summary['mean_return']:+.3f}, "
            f"final entropy {summary['final_entropy']:.3f}",
            flush=True,
        )

    # Merge per-run files into one metrics.csv with a single header.
    merged = out_dir / "metrics.csv"
    with open(merged, "w", encoding="utf-8", newline="") as out_fh:
        out_fh.write(f"# {CSV_SCHEMA_ID}\n")
        out_fh.write(",".join(CSV_COLUMNS) + "\n")
        for run_path in run_paths:
            with open(run_path, "r", encoding="utf-8") as in_fh:
                for line in in_fh:
                    if line.startswith("#") or line.startswith(CSV_COLUMNS[0] + ","):
                        continue
                    out_fh.write(line)

    manifest["finished"] = _now()
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    print(f"wrote {merged}", flush=True)
    return EXIT_OK


def _parse_metrics_csv(path: Path) -> dict[int, dict[str, list[float]]]:
    """Read a metrics CSV into per-run ordered series; row numbers on errors."""
    runs: dict[int, dict[str, list[float]]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        header: list[str] | None = None
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if header is None:
                header = parts
                if tuple(header) != CSV_COLUMNS:
                    raise ConfigError(f"{path}:{lineno}: unexpected CSV header {header!r}")
                continue
            if len(parts) != len(CSV_COLUMNS):
                raise ConfigError(
                    f"{path}:{lineno}: expected {len(CSV_COLUMNS)} columns, got {len(parts)}"
                )
            try:
                run_id = int(parts[0])
                game = int(parts[1])
                ret = float(parts[2])
                ent = float(parts[4])
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: {exc}") from exc
            series = runs.setdefault(run_id, {"game": [], "return": [], "entropy": []})
            if series["game"] and game != series["game"][-1] + 1:
                raise ConfigError(f"{path}:{lineno}: games of run {run_id} are not consecutive")
            series["game"].append(game)
            series["return"].append(ret)
            series["entropy"].append(ent)
    if header is None:
        raise ConfigError(f"{path}:1: no header row found")
    if not runs:
        raise ConfigError(f"{path}: no data rows")
    lengths = {len(s["game"]) for s in runs.values()}
    if len(lengths) != 1:
        raise ConfigError(f"{path}: runs have unequal game counts {sorted(lengths)}")
    return runs


def cmd_plot(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    from .trainer import SLIDING_WINDOW, aggregate_series, sliding_return

    out_dir = args.out if args.out is not None else _out_root()
    out_dir.mkdir(parents=True, exist_ok=True)

    fig_ret, ax_ret = plt.subplots(figsize=(7, 4.5))
    fig_ent, ax_ent = plt.subplots(figsize=(7, 4.5))
    colors = plt.rcParams["axes.prop_cycle"].by_key()["color"]

    for i, path in enumerate(args.metrics):
        runs = _parse_metrics_csv(path)
        color = colors[i % len(colors)]
        label = path.stem if path.stem != "metrics" else path.parent.name or path.stem
        games = np.asarray(next(iter(runs.values()))["game"])
        returns = np.stack([np.asarray(runs[r]["return"]) for r in sorted(runs)])
        entropies = np.stack([np.asarray(runs[r]["entropy"]) for r in sorted(runs)])

        if returns.shape[1] >= SLIDING_WINDOW:
            series = np.stack([sliding_return(row) for row in returns])
            x = games[SLIDING_WINDOW - 1 :]
            series = series[:, SLIDING_WINDOW - 1 :]
            ylabel = f"sliding {SLIDING_WINDOW}-game return"
        else:
            series = returns
            x = games
            ylabel = "per-game return"
        agg = aggregate_series(series)
        ax_ret.fill_between(x, agg.mean - agg.std, agg.mean + agg.std, alpha=0.2, color=color)
        ax_ret.plot(x, agg.mean, linestyle="--", color=color, label=f"{label} mean")
        ax_ret.plot(x, agg.p80, linestyle="-", color=color, label=f"{label} 80th pct")

        ent_agg = aggregate_series(entropies)
        ax_ent.fill_between(
            games, ent_agg.mean - ent_agg.std, ent_agg.mean + ent_agg.std, alpha=0.2, color=color
        )
        ax_ent.plot(games, ent_agg.mean, color=color, label=f"{label} mean")

    ax_ret.set_xlabel("game")
    ax_ret.set_ylabel(ylabel)
    ax_ret.legend()
    ax_ret.grid(True, alpha=0.3)
    fig_ret.tight_layout()
    return_path = out_dir / "returns.svg"
    fig_ret.savefig(return_path, format="svg")

    ax_ent.set_xlabel("game")
    ax_ent.set_ylabel("mean policy entropy (nats)")
    ax_ent.legend()
    ax_ent.grid(True, alpha=0.3)
    fig_ent.tight_layout()
    entropy_path = out_dir / "entropy.svg"
    fig_ent.savefig(entropy_path, format="svg")
    plt.close(fig_ret)
    plt.close(fig_ent)
    print(f"wrote {return_path} and {entropy_path}", flush=True)
    return EXIT_OK


def cmd_calibrate(args) -> int:
    cfg = _effective_config(args)
    rngs_seed = cfg.master_seed
    sub_cfg = cfg.substrate_config(args.variant)
    # Dedicated deterministic streams, separate for build and probe.
    root = np.random.SeedSequence(rngs_seed, spawn_key=(0,))
    build_ss, probe_ss = root.spawn(2)
    substrate = build_substrate(sub_cfg, np.random.default_rng(build_ss))
    result = calibrate_efficacy(
        substrate, cfg.encoding, cfg.physics, np.random.default_rng(probe_ss), cfg.calibration
    )
    print(
        f"calibrated {args.variant} substrate: core_efficacy={result.core_efficacy:.6g} "
        f"integration_factor={result.factor:.4f} probes={result.probes}"
    )
    out_dir = args.out if args.out is not None else _out_root()
    out_dir.mkdir(parents=True, exist_ok=True)
    overlay = out_dir / "calibration.txt"
    overlay.write_text(
        f"# achieved integration factor {result.factor:.6f} after {result.probes} probes\n"
        f"substrate.core_efficacy = {result.core_efficacy!r}\n",
        encoding="utf-8",
    )
    print(f"wrote {overlay}", flush=True)
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "train":
            return cmd_train(args)
        if args.command == "plot":
            return cmd_plot(args)
        return cmd_calibrate(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CalibrationError as exc:
        print(f"calibration failed: {exc}\nbisection trace:\n{exc.trace()}", file=sys.stderr)
        return EXIT_CALIBRATION
    except NumericalError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
