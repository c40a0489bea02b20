"""
그림 생성
보상/성공률 곡선, p 히스토그램 능선 그림, β 대비 정확도/오류 곡선
"""
from pathlib import Path
from typing import List, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from drop_bottleneck.core.exceptions import MissingMetricsError  # noqa: E402
from drop_bottleneck.core.logging import CustomLogger  # noqa: E402
from drop_bottleneck.services.monitoring import read_metrics  # noqa: E402

logger = CustomLogger(__name__)

CI_Z = 1.96
DPI = 120


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=DPI, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_curves(frame: pd.DataFrame, path: Path) -> Path:
    """방법별 성공률/리턴 평균과 시드 간 95% 구간"""
    fig, axes = plt.subplots(1, 2, figsize=(12, 4))
    for method, group in frame.groupby("method", sort=True):
        for ax, column in zip(axes, ("success_rate", "mean_return")):
            stats = group.groupby("step")[column].agg(["mean", "std", "count"]).reset_index()
            half = CI_Z * stats["std"].fillna(0.0) / np.sqrt(stats["count"])
            ax.plot(stats["step"], stats["mean"], label=method)
            ax.fill_between(stats["step"], stats["mean"] - half, stats["mean"] + half, alpha=0.2)
    for ax, title in zip(axes, ("success rate", "episode return")):
        ax.set_xlabel("environment steps")
        ax.set_title(title)
        ax.legend()
    return _save(fig, path)


def plot_histogram_ridges(frame: pd.DataFrame, path: Path) -> Path:
    """기록 시점마다 p 히스토그램을 세로로 쌓은 능선 그림"""
    bins = [column for column in frame.columns if column.startswith("bin_")]
    centers = (np.arange(len(bins)) + 0.5) / len(bins)
    fig, ax = plt.subplots(figsize=(6, 1 + 0.4 * len(frame)))
    peak = max(float(frame[bins].to_numpy().max()), 1.0)
    for offset, (_, row) in enumerate(frame.iloc[::-1].iterrows()):
        heights = row[bins].to_numpy(dtype=float) / peak
        ax.fill_between(centers, offset, offset + heights, alpha=0.6)
        ax.text(1.01, offset, f"round {int(row['step'])}", fontsize=7, va="bottom")
    ax.set_xlim(0.0, 1.0)
    ax.set_yticks([])
    ax.set_xlabel("drop probability p")
    return _save(fig, path)


def plot_accuracy_vs_beta(frame: pd.DataFrame, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(frame["beta"], frame["stochastic_accuracy"], marker="o", label="stochastic")
    ax.plot(frame["beta"], frame["deterministic_accuracy"], marker="s", label="deterministic")
    ax.set_xscale("log")
    ax.set_xlabel("β")
    ax.set_ylabel("test accuracy")
    twin = ax.twinx()
    twin.plot(frame["beta"], frame["retained_dims"], color="gray", linestyle="--", label="retained dims")
    twin.set_ylabel("retained dims")
    ax.legend(loc="lower left")
    return _save(fig, path)


def plot_nuisance(frame: pd.DataFrame, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    for method, group in frame.groupby("method", sort=True):
        ax.plot(group["beta"], group["primary_error"], marker="o", label=f"{method} primary")
        ax.plot(group["beta"], group["nuisance_error"], marker="^", label=f"{method} nuisance")
        ax.plot(group["beta"], group["nuisance_error_deterministic"], marker="v", linestyle=":",
                label=f"{method} nuisance (determ.)")
    ax.set_xscale("log")
    ax.set_xlabel("β")
    ax.set_ylabel("test error")
    ax.legend(fontsize=7)
    return _save(fig, path)


def plot_selection(frame: pd.DataFrame, path: Path) -> Path:
    frame = frame.sort_values("m")
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(frame["m"], frame["db_deterministic_accuracy"], marker="o", label="DB (determ.)")
    ax.plot(frame["m"], frame["mi_selection_accuracy"], marker="s", label="kNN MI selection")
    ax.set_xlabel("retained feature dims")
    ax.set_ylabel("test accuracy")
    ax.legend()
    return _save(fig, path)


def plot_sweep_summary(frame: pd.DataFrame, path: Path) -> Path:
    """스윕 하위 실행 요약: 지표별 시드 평균 대 β"""
    metrics = [column for column in frame.select_dtypes("number").columns if column not in ("beta", "seed")]
    fig, axes = plt.subplots(1, max(len(metrics), 1), figsize=(4 * max(len(metrics), 1), 3.5), squeeze=False)
    grouped = frame.groupby("beta")
    for ax, column in zip(axes[0], metrics):
        stats = grouped[column].agg(["mean", "std", "count"]).reset_index()
        half = CI_Z * stats["std"].fillna(0.0) / np.sqrt(stats["count"])
        ax.errorbar(stats["beta"], stats["mean"], yerr=half, marker="o", capsize=3)
        ax.set_xscale("log")
        ax.set_xlabel("β")
        ax.set_title(column, fontsize=9)
    return _save(fig, path)


PLOTTERS = {
    "curves.csv": ("curves.png", plot_curves, ["method", "step", "success_rate", "mean_return"]),
    "p_histogram.csv": ("p_histogram.png", plot_histogram_ridges, ["step"]),
    "sweep.csv": ("accuracy_vs_beta.png", plot_accuracy_vs_beta,
                  ["beta", "stochastic_accuracy", "deterministic_accuracy", "retained_dims"]),
    "nuisance.csv": ("nuisance.png", plot_nuisance,
                     ["method", "beta", "primary_error", "nuisance_error", "nuisance_error_deterministic"]),
    "selection.csv": ("selection.png", plot_selection, ["m", "db_deterministic_accuracy", "mi_selection_accuracy"]),
    "sweep_summary.csv": ("sweep_summary.png", plot_sweep_summary, ["beta", "seed"]),
}


def emit_plots(run_dir: Union[str, Path]) -> List[Path]:
    """실행 디렉터리의 메트릭 CSV마다 그림 저장"""
    run_dir = Path(run_dir)
    written = []
    for csv_name, (image_name, plotter, required) in PLOTTERS.items():
        if not (run_dir / csv_name).exists():
            continue
        frame = read_metrics(run_dir / csv_name, required)
        if frame.empty:
            logger.warning("Skipping empty metrics file", path=str(run_dir / csv_name))
            continue
        written.append(plotter(frame, run_dir / image_name))
    if not written:
        raise MissingMetricsError(f"no plottable metrics CSVs in {run_dir}")
    logger.info("Plots written", run_dir=str(run_dir), files=[path.name for path in written])
    return written
