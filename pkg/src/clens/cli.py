"""Command-line benchmark harness.

Subcommands:
  run      one continual-learning run, outputs to a fresh directory
  sweep    seed x mode x alpha grid of runs plus a summary table
  probe    offline per-subspace accuracy map for a configuration
  inspect  print the metrics of a finished run directory

Output directories are created under $CLENS_OUT (default ./runs). A failed
run leaves no partial output directory behind and exits non-zero.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .classifiers import HeadHyper
from .config import ExperimentConfig, config_to_text, load_config, parse_config_text
from .numeric import rng_stream
from .report import (
    discard_run_dir,
    fresh_run_dir,
    output_root,
    publish_run_dir,
    read_matrix_csv,
    read_metrics_csv,
    write_matrix_csv,
    write_metrics_csv,
    write_run_meta,
    write_run_outputs,
    write_sweep_summary,
)
from .runner import expertise_analysis, run_experiment, subspace_probe

__all__ = ["main", "build_parser"]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="clens",
        description="Continual-learning benchmark: per-task feature subspaces "
        "with Gaussian replay and adaptive score fusion.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", type=Path, default=None, help="key = value config file")
        p.add_argument("--seed", type=int, default=None, help="override run.seed")
        p.add_argument("--out", type=Path, default=None, help="output directory")
        p.add_argument(
            "--set",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override any config key (repeatable)",
        )

    p_run = sub.add_parser("run", help="one continual-learning run")
    add_common(p_run)
    p_run.add_argument(
        "--mode",
        choices=["aee", "se", "noe", "naive_base", "misaligned"],
        default=None,
        help="override ensemble.mode",
    )
    p_run.add_argument(
        "--no-figures", action="store_true", help="skip figure rendering"
    )

    p_sweep = sub.add_parser("sweep", help="grid of runs over seeds/modes/alphas")
    add_common(p_sweep)
    p_sweep.add_argument(
        "--seeds", type=int, nargs="+", default=[1993, 1994, 1995], help="seeds to run"
    )
    p_sweep.add_argument(
        "--modes",
        nargs="+",
        default=["aee"],
        choices=["aee", "se", "noe", "naive_base", "misaligned"],
        help="evaluation modes to score",
    )
    p_sweep.add_argument(
        "--alphas", type=float, nargs="+", default=None, help="rotation-loss weights"
    )
    p_sweep.add_argument("--no-figures", action="store_true")

    p_probe = sub.add_parser("probe", help="offline per-subspace accuracy map")
    add_common(p_probe)

    p_inspect = sub.add_parser("inspect", help="print metrics of a run directory")
    p_inspect.add_argument("run_dir", type=Path)

    return parser


def _cli_overrides(args) -> dict[str, str]:
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ValueError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    if getattr(args, "seed", None) is not None:
        overrides["run.seed"] = str(args.seed)
    if getattr(args, "mode", None) is not None:
        overrides["ensemble.mode"] = args.mode
    return overrides


def _build_config(args, extra: dict[str, str] | None = None) -> ExperimentConfig:
    overrides = {**_cli_overrides(args), **(extra or {})}
    if args.config is not None:
        return load_config(args.config, overrides)
    return parse_config_text("", overrides)


def _load(args) -> ExperimentConfig:
    return _build_config(args)


def _default_out(args, config: ExperimentConfig, suffix: str = "") -> Path:
    if args.out is not None:
        return args.out
    stem = args.config.stem if args.config is not None else config.stream.kind
    name = f"{stem}_{config.ensemble.mode}_s{config.run.seed}{suffix}"
    return output_root() / name


def _cmd_run(args) -> int:
    config = _load(args)
    out_dir = _default_out(args, config)
    report, state = run_experiment(config, return_state=True)
    report.config_text = config_to_text(config)
    grids = {}
    if state.final_stack is not None:
        grids["expertise"] = (expertise_analysis(state), "num_subspaces")
    final = write_run_outputs(
        out_dir,
        report,
        grids=grids,
        figures=config.run.figures and not args.no_figures,
    )
    print(f"run complete: mode={report.mode} seed={report.seed}")
    print(f"final accuracy       {report.laa:.4f}")
    print(f"incremental average  {report.iaa:.4f}")
    print(f"output: {final}")
    return 0


def _cmd_sweep(args) -> int:
    base = _load(args)
    out_dir = args.out if args.out is not None else _default_out(args, base, "_sweep")
    alphas = args.alphas if args.alphas is not None else [base.peft.alpha]
    records = []
    final_dir, staging = fresh_run_dir(Path(out_dir))
    try:
        for alpha in alphas:
            for seed in args.seeds:
                config = _build_config(
                    args,
                    {
                        "run.seed": str(seed),
                        "peft.alpha": str(alpha),
                        "ensemble.mode": args.modes[0],
                    },
                )
                reports = run_experiment(config, extra_modes=tuple(args.modes))
                if not isinstance(reports, dict):
                    reports = {config.ensemble.mode: reports}
                cell_dir = staging / f"alpha{alpha:g}_seed{seed}"
                cell_dir.mkdir()
                for mode, report in reports.items():
                    report.config_text = config_to_text(config)
                    mode_dir = cell_dir / mode
                    mode_dir.mkdir()
                    write_metrics_csv(mode_dir / "metrics.csv", report)
                    write_matrix_csv(mode_dir / "matrix.csv", report)
                    write_run_meta(mode_dir / "run_meta.txt", report)
                    records.append(
                        {
                            "mode": mode,
                            "alpha": alpha,
                            "seed": seed,
                            "final": report.laa,
                            "incremental_avg": report.iaa,
                        }
                    )
        write_sweep_summary(staging / "summary.csv", records)
    except BaseException:
        discard_run_dir(staging)
        raise
    publish_run_dir(final_dir, staging)
    print(f"sweep complete: {len(records)} scored cells")
    for rec in records:
        print(
            f"  mode={rec['mode']:<11} alpha={rec['alpha']:g} seed={rec['seed']} "
            f"final={rec['final']:.4f} inc_avg={rec['incremental_avg']:.4f}"
        )
    print(f"output: {final_dir}")
    return 0


def _cmd_probe(args) -> int:
    config = _load(args)
    out_dir = _default_out(args, config, "_probe")
    reports, state = run_experiment(config, return_state=True)
    report = reports if not isinstance(reports, dict) else reports[config.ensemble.mode]
    report.config_text = config_to_text(config)
    hyper = HeadHyper(
        lr=config.head.lr,
        epochs=config.run.probe_epochs,
        batch_size=config.head.batch_size,
    )
    probe_grid = subspace_probe(state, hyper, rng_stream(config.run.seed, "probe"))
    grids = {"probe": (probe_grid, "subspace")}
    if state.final_stack is not None:
        grids["expertise"] = (expertise_analysis(state), "num_subspaces")
    final = write_run_outputs(out_dir, report, grids=grids, figures=config.run.figures)
    print("per-subspace accuracy map (rows: subspace, cols: test task):")
    for k in range(probe_grid.shape[0]):
        cells = " ".join(f"{v:.3f}" for v in probe_grid[k])
        print(f"  subspace {k + 1}: {cells}  | avg {np.mean(probe_grid[k]):.3f}")
    print(f"output: {final}")
    return 0


def _cmd_inspect(args) -> int:
    run_dir = Path(args.run_dir)
    metrics_path = run_dir / "metrics.csv"
    if not metrics_path.exists():
        raise FileNotFoundError(f"{metrics_path} not found")
    metrics = read_metrics_csv(metrics_path)
    print(f"run directory: {run_dir}")
    meta_path = run_dir / "run_meta.txt"
    if meta_path.exists():
        for line in meta_path.read_text().splitlines():
            if line.startswith("[config]"):
                break
            if line.strip():
                print(f"  {line}")
    for t, v in enumerate(metrics["a_t"], 1):
        print(f"  after task {t:>2}: {v:.4f}")
    print(f"  final accuracy      {metrics['final']:.4f}")
    print(f"  incremental average {metrics['incremental_avg']:.4f}")
    matrix_path = run_dir / "matrix.csv"
    if matrix_path.exists():
        grid = read_matrix_csv(matrix_path)
        print(f"  accuracy matrix: {grid.shape[0]} x {grid.shape[1]} (see matrix.csv)")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "sweep":
            return _cmd_sweep(args)
        if args.command == "probe":
            return _cmd_probe(args)
        if args.command == "inspect":
            return _cmd_inspect(args)
        parser.error(f"unknown command {args.command!r}")
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
