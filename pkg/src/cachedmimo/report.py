"""CSV and figure emission for experiment results.

Every number lands in plain decimal with 12 significant digits so emitted
files diff cleanly across runs; the manifest carries the one line that may
differ (the wall-clock stamp).  Figures render through the Agg backend into
PNG files next to the tables.
"""

from __future__ import annotations

import csv
import datetime
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

from . import __version__  # noqa: E402
from .sim import ExperimentResult  # noqa: E402

SUMMARY_COLUMNS = ("scheme", "horizon_slots", "avg_sum_power_w",
                   "avg_sum_power_db", "avg_backhaul_bps",
                   "avg_backhaul_mbps", "interruption_count", "seed")


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, float) or isinstance(x, np.floating):
        return "%.12g" % float(x)
    return str(x)


def write_metrics_csv(result: ExperimentResult, path: str) -> str:
    """Per-slot table, one row per simulated slot."""
    cols = list(result.slot_log.keys())
    rows = result.horizon_slots
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for t in range(rows):
            w.writerow([_fmt(result.slot_log[c][t]) for c in cols])
    return path


def write_lc_trace_csv(result: ExperimentResult, path: str) -> str:
    """Per-interval controller table; headers only when no trace exists."""
    L = len(result.lc_trace[0]["q"]) if result.lc_trace else 0
    cols = (["interval", "sigma"] + [f"q_{l}" for l in range(L)]
            + ["q_min", "moved_file", "subgradient", "P_mean",
               "P_tilde_mean", "interval_avg_power"])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in result.lc_trace:
            w.writerow([_fmt(row["interval"]), _fmt(row["sigma"])]
                       + [_fmt(v) for v in row["q"]]
                       + [_fmt(row["q_min"]), _fmt(row["moved_file"]),
                          _fmt(row["subgradient"]), _fmt(row["P_mean"]),
                          _fmt(row["P_tilde_mean"]),
                          _fmt(row["interval_avg_power"])])
    return path


def write_summary_csv(results, path: str) -> str:
    """One row per scheme: power, backhaul, interruptions."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_COLUMNS)
        for r in results:
            w.writerow([r.scheme, _fmt(r.horizon_slots),
                        _fmt(r.avg_sum_power_w), _fmt(r.avg_sum_power_db),
                        _fmt(r.avg_backhaul_bps),
                        _fmt(r.avg_backhaul_bps / 1e6),
                        _fmt(r.interruption_count), _fmt(r.seed)])
    return path


def write_manifest(results, path: str, extra: dict | None = None) -> str:
    """Run provenance: package version, config snapshot, wall-clock stamp.

    The generated_at line is the only nondeterministic content; comparisons
    between runs should drop it.
    """
    results = list(results)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"package_version = {__version__}\n")
        fh.write("generated_at = %s\n"
                 % datetime.datetime.now(datetime.timezone.utc).isoformat())
        fh.write("schemes = %s\n" % ",".join(r.scheme for r in results))
        for key, val in (extra or {}).items():
            fh.write(f"{key} = {val}\n")
        if results:
            fh.write("seed = %s\n" % _fmt(results[0].seed))
            fh.write("horizon_slots = %s\n" % _fmt(results[0].horizon_slots))
            for key, val in results[0].config.items():
                fh.write(f"config.{key} = {val}\n")
    return path


# ---------------------------------------------------------------------------
# figures
# ---------------------------------------------------------------------------

def render_power_trace(result: ExperimentResult, path: str) -> str:
    """Per-slot transmit power on a dB axis, colored by operating mode."""
    fig, ax = plt.subplots(figsize=(8, 4))
    t = result.slot_log["slot"]
    p_db = 10.0 * np.log10(result.slot_log["sum_power_w"])
    S = result.slot_log["S"]
    ax.plot(t, p_db, lw=0.6, color="0.6", zorder=1)
    for val, color, label in ((0, "tab:blue", "per-cell"),
                              (1, "tab:red", "joint")):
        mask = S == val
        if mask.any():
            ax.scatter(t[mask], p_db[mask], s=6, color=color, label=label,
                       zorder=2)
    ax.set_xlabel("slot")
    ax.set_ylabel("sum transmit power [dB]")
    ax.set_title(f"{result.scheme}: per-slot transmit power")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_lc_convergence(result: ExperimentResult, path: str) -> str:
    """Controller trajectory: interval powers above, cached fractions below."""
    rows = result.lc_trace
    fig, (ax0, ax1) = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
    it = [row["interval"] for row in rows]
    ax0.plot(it, [row["interval_avg_power"] for row in rows],
             marker="o", ms=3, label="interval avg power")
    ax0.plot(it, [row["P_mean"] for row in rows], lw=0.8, alpha=0.7,
             label="per-cell sample mean")
    ax0.plot(it, [row["P_tilde_mean"] for row in rows], lw=0.8, alpha=0.7,
             label="joint sample mean")
    ax0.set_yscale("log")
    ax0.set_ylabel("power [W]")
    ax0.legend(fontsize=8)
    L = len(rows[0]["q"])
    for l in range(L):
        ax1.plot(it, [row["q"][l] for row in rows], marker=".",
                 label=f"q_{l}")
    ax1.set_ylim(-0.05, 1.05)
    ax1.set_xlabel("request interval")
    ax1.set_ylabel("cached fraction")
    ax1.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_sweep(points, results_by_point, key: str, path: str) -> str:
    """Sweep curves: average power and backhaul against the swept value.

    points: sequence of swept values; results_by_point: matching sequence of
    per-scheme ExperimentResult lists.  Non-numeric sweep values land on
    index positions with tick labels.
    """
    fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(10, 4))
    schemes = [r.scheme for r in results_by_point[0]]
    try:
        x = [float(p) for p in points]
    except (TypeError, ValueError):
        x = list(range(len(points)))
        for ax in (ax0, ax1):
            ax.set_xticks(x, [str(p) for p in points])
    for j, scheme in enumerate(schemes):
        ax0.plot(x, [10.0 * np.log10(res[j].avg_sum_power_w)
                     for res in results_by_point], marker="o", label=scheme)
        ax1.plot(x, [res[j].avg_backhaul_bps / 1e6
                     for res in results_by_point], marker="o", label=scheme)
    ax0.set_xlabel(key)
    ax0.set_ylabel("avg sum power [dB]")
    ax1.set_xlabel(key)
    ax1.set_ylabel("avg backhaul [Mbps]")
    ax0.legend(fontsize=8)
    ax1.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def emit_results(results, output_dir: str, extra: dict | None = None) -> list:
    """Write the CSV bundle and figures for one run's result set.

    results may be a single ExperimentResult or a sequence (the first entry
    drives the per-slot and controller tables).  Returns the written paths.
    """
    if isinstance(results, ExperimentResult):
        results = [results]
    results = list(results)
    os.makedirs(output_dir, exist_ok=True)
    paths = [
        write_metrics_csv(results[0], os.path.join(output_dir, "metrics.csv")),
        write_lc_trace_csv(results[0],
                           os.path.join(output_dir, "lc_trace.csv")),
        write_summary_csv(results, os.path.join(output_dir, "summary.csv")),
        write_manifest(results, os.path.join(output_dir, "manifest.txt"),
                       extra),
        render_power_trace(results[0],
                           os.path.join(output_dir, "power_trace.png")),
    ]
    if results[0].lc_trace:
        paths.append(render_lc_convergence(
            results[0], os.path.join(output_dir, "lc_convergence.png")))
    return paths
