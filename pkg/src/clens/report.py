"""Run output: delimited files, metadata, and round-trip readers.

All numeric cells are written with ``repr`` so float64 values survive a
read-back bit-exactly, and two runs of the same configuration and seed
produce byte-identical files. Wall-clock time goes to the metadata file
only, never into the delimited output. Task indices in files are 1-based.
"""

from __future__ import annotations

import csv
import io
import os
import shutil
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .runner import RunReport

__all__ = [
    "output_root",
    "format_float",
    "write_metrics_csv",
    "write_matrix_csv",
    "write_grid_csv",
    "write_run_meta",
    "write_run_outputs",
    "read_metrics_csv",
    "read_matrix_csv",
    "read_grid_csv",
    "write_sweep_summary",
    "fresh_run_dir",
]

_OUT_ENV = "CLENS_OUT"


def output_root() -> Path:
    """Directory new run directories are created under."""
    return Path(os.environ.get(_OUT_ENV, "runs"))


def format_float(x: float) -> str:
    return repr(float(x))


def _write_rows(path: Path, header: list[str], rows: list[list]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    path.write_text(buf.getvalue())


def write_metrics_csv(path, report: RunReport) -> None:
    """Per-step pooled accuracy plus the two summary rows.

    Columns: metric, task, value. ``accuracy`` rows carry the 1-based task
    step; the ``final`` and ``incremental_avg`` summaries leave it blank.
    """
    rows = [
        ["accuracy", str(t + 1), format_float(report.a_t[t])]
        for t in range(len(report.a_t))
    ]
    rows.append(["final", "", format_float(report.laa)])
    rows.append(["incremental_avg", "", format_float(report.iaa)])
    _write_rows(Path(path), ["metric", "task", "value"], rows)


def write_matrix_csv(path, report: RunReport) -> None:
    """Lower-triangular accuracy matrix in long form (1-based tasks)."""
    rows = []
    T = report.acc_matrix.shape[0]
    for i in range(T):
        for j in range(i + 1):
            rows.append([str(i + 1), str(j + 1), format_float(report.acc_matrix[i, j])])
    _write_rows(Path(path), ["after_task", "test_task", "accuracy"], rows)


def write_grid_csv(path, grid: np.ndarray, row_name: str, col_name: str,
                   row_offset: int = 1, with_row_avg: bool = True) -> None:
    """Long-form (rows x tasks) accuracy grid, optionally with row means."""
    rows = []
    for i in range(grid.shape[0]):
        for j in range(grid.shape[1]):
            rows.append([str(i + row_offset), str(j + 1), format_float(grid[i, j])])
        if with_row_avg:
            rows.append([str(i + row_offset), "avg", format_float(np.mean(grid[i]))])
    _write_rows(Path(path), [row_name, col_name, "accuracy"], rows)


def write_run_meta(path, report: RunReport, extra: dict | None = None) -> None:
    lines = [
        f"version = {__version__}",
        f"mode = {report.mode}",
        f"seed = {report.seed}",
        f"wall_clock_sec = {report.wall_clock:.3f}",
    ]
    for k, v in (extra or {}).items():
        lines.append(f"{k} = {v}")
    if report.config_text:
        lines.append("")
        lines.append("[config]")
        lines.append(report.config_text.rstrip())
    Path(path).write_text("\n".join(lines) + "\n")


def fresh_run_dir(out_dir: Path) -> tuple[Path, Path]:
    """Staging directory for atomic output: write there, then publish.

    Returns (final_dir, staging_dir). Callers fill the staging directory
    and hand it to ``publish_run_dir``; a failure before that leaves no
    partial final directory behind.
    """
    out_dir = Path(out_dir)
    if out_dir.exists():
        raise FileExistsError(f"output directory {out_dir} already exists")
    out_dir.parent.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=f".{out_dir.name}.", dir=out_dir.parent))
    return out_dir, staging


def publish_run_dir(final_dir: Path, staging: Path) -> None:
    os.replace(staging, final_dir)


def discard_run_dir(staging: Path) -> None:
    shutil.rmtree(staging, ignore_errors=True)


def write_run_outputs(
    out_dir: Path,
    report: RunReport,
    grids: dict[str, tuple[np.ndarray, str]] | None = None,
    figures: bool = True,
    meta_extra: dict | None = None,
) -> Path:
    """Write one run's full output set atomically into ``out_dir``.

    Emits metrics.csv, matrix.csv, run_meta.txt, any extra grids (probe,
    expertise), and figure files when requested. The directory appears only
    after every file has been written.
    """
    final_dir, staging = fresh_run_dir(Path(out_dir))
    try:
        write_metrics_csv(staging / "metrics.csv", report)
        write_matrix_csv(staging / "matrix.csv", report)
        write_run_meta(staging / "run_meta.txt", report, meta_extra)
        for name, (grid, row_name) in (grids or {}).items():
            write_grid_csv(staging / f"{name}.csv", grid, row_name, "test_task")
        if figures:
            from . import plots

            plots.plot_accuracy_curve(report.a_t, staging / "accuracy.png")
            plots.plot_heatmap(
                report.acc_matrix,
                staging / "matrix.png",
                xlabel="test task",
                ylabel="after task",
                title=f"per-task accuracy ({report.mode})",
            )
            for name, (grid, row_name) in (grids or {}).items():
                plots.plot_heatmap(
                    grid,
                    staging / f"{name}.png",
                    xlabel="test task",
                    ylabel=row_name.replace("_", " "),
                    title=name,
                )
    except BaseException:
        discard_run_dir(staging)
        raise
    publish_run_dir(final_dir, staging)
    return final_dir


def read_metrics_csv(path) -> dict:
    """Read back metrics.csv into {"a_t": array, "final": x, "incremental_avg": y}."""
    a_t = {}
    out = {}
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        for row in reader:
            if row["metric"] == "accuracy":
                a_t[int(row["task"])] = float(row["value"])
            else:
                out[row["metric"]] = float(row["value"])
    out["a_t"] = np.array([a_t[t] for t in sorted(a_t)])
    return out


def read_matrix_csv(path) -> np.ndarray:
    entries = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        for row in reader:
            entries.append(
                (int(row["after_task"]), int(row["test_task"]), float(row["accuracy"]))
            )
    T = max(i for i, _, _ in entries)
    grid = np.full((T, T), np.nan)
    for i, j, v in entries:
        grid[i - 1, j - 1] = v
    return grid


def read_grid_csv(path, row_name: str) -> np.ndarray:
    entries = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        for row in reader:
            if row["test_task"] == "avg":
                continue
            entries.append(
                (int(row[row_name]), int(row["test_task"]), float(row["accuracy"]))
            )
    r0 = min(i for i, _, _ in entries)
    rows = max(i for i, _, _ in entries) - r0 + 1
    cols = max(j for _, j, _ in entries)
    grid = np.full((rows, cols), np.nan)
    for i, j, v in entries:
        grid[i - r0, j - 1] = v
    return grid


def write_sweep_summary(path, records: list[dict]) -> None:
    """Aggregate per-run rows into mean and sample-spread summary lines.

    ``records``: dicts with mode, alpha, seed, final, incremental_avg. One
    output row per (mode, alpha) cell; spread is the n-1 standard deviation,
    zero for a single seed.
    """
    cells: dict[tuple, list[dict]] = {}
    for rec in records:
        cells.setdefault((rec["mode"], rec["alpha"]), []).append(rec)
    rows = []
    for (mode, alpha), group in sorted(cells.items()):
        finals = np.array([g["final"] for g in group])
        incs = np.array([g["incremental_avg"] for g in group])
        spread_f = float(np.std(finals, ddof=1)) if len(finals) > 1 else 0.0
        spread_i = float(np.std(incs, ddof=1)) if len(incs) > 1 else 0.0
        rows.append(
            [
                mode,
                format_float(alpha),
                str(len(group)),
                format_float(float(np.mean(finals))),
                format_float(spread_f),
                format_float(float(np.mean(incs))),
                format_float(spread_i),
            ]
        )
    _write_rows(
        Path(path),
        ["mode", "alpha", "seeds", "final_mean", "final_std", "inc_avg_mean", "inc_avg_std"],
        rows,
    )
