"""CSV output and RMSE-vs-bandwidth figures for sweep results."""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Iterable, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .bench import METRICS, RmseRecord  # noqa: E402

COLUMNS = ("method", "bandwidth_hz", "metric", "value", "trials_used", "failures", "seed")
THRESHOLD_KEYS = ("nb_threshold_prop_hz", "nb_threshold_ref_hz")

METRIC_LABELS = {
    "aoa_rad": "AOA RMSE [rad]",
    "aod_rad": "AOD RMSE [rad]",
    "delay_ns": "Delay RMSE [ns]",
    "position_m": "Localization RMSE [m]",
}
METHOD_STYLES = {
    "proposed": dict(color="tab:blue", marker="o", label="Proposed (with pairing)"),
    "esprit3d": dict(color="tab:red", marker="^", label="3D ESPRIT"),
    "proposed_no_pairing": dict(color="tab:green", marker="D", label="Proposed (no pairing)"),
}

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
RC = {
    "figure.figsize": (6.0, 6.0 * GOLDEN),
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 7,
    "lines.linewidth": 1.4,
    "lines.markersize": 4,
    "savefig.bbox": "tight",
    "svg.hashsalt": "wideband-esprit",
}


def emit_csv(records: Sequence[RmseRecord], path: str | Path,
             thresholds_hz: tuple[float, float] | None = None) -> None:
    """Write records as CSV. Thresholds go into leading ``#`` comment lines."""
    if not records:
        raise ValueError("no records to write")
    with open(path, "w", newline="") as f:
        if thresholds_hz is not None:
            for key, val in zip(THRESHOLD_KEYS, thresholds_hz):
                f.write(f"# {key}={val!r}\n")
        wr = csv.writer(f, lineterminator="\n")
        wr.writerow(COLUMNS)
        for r in records:
            wr.writerow([r.method, repr(r.bandwidth_hz), r.metric, repr(r.value),
                         r.trials_used, r.failures, r.seed])


def read_csv(path: str | Path) -> tuple[list[RmseRecord], tuple[float, float] | None]:
    meta = {}
    rows = []
    with open(path, newline="") as f:
        lines = []
        for line in f:
            if line.startswith("#"):
                key, _, val = line[1:].strip().partition("=")
                meta[key] = float(val)
            else:
                lines.append(line)
        for row in csv.DictReader(lines):
            rows.append(RmseRecord(
                method=row["method"], bandwidth_hz=float(row["bandwidth_hz"]), metric=row["metric"],
                value=float(row["value"]), trials_used=int(row["trials_used"]),
                failures=int(row["failures"]), seed=int(row["seed"]),
            ))
    thresholds = tuple(meta[k] for k in THRESHOLD_KEYS) if all(k in meta for k in THRESHOLD_KEYS) else None
    return rows, thresholds


def make_figure(records: Iterable[RmseRecord], metric: str,
                thresholds_hz: tuple[float, float] | None = None):
    """Log-log RMSE against bandwidth, one series per method."""
    records = [r for r in records if r.metric == metric]
    if not records:
        raise ValueError(f"no records for metric {metric!r}")
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
        methods = list(dict.fromkeys(r.method for r in records))
        for m in methods:
            pts = sorted((r.bandwidth_hz, r.value) for r in records if r.method == m)
            style = METHOD_STYLES.get(m, dict(label=m))
            ax.plot([b / 1e6 for b, _ in pts], [v for _, v in pts], **style)
        if thresholds_hz is not None:
            prop, ref = thresholds_hz
            ax.axvline(prop / 1e6, color="0.5", lw=1.0, label="NB threshold (proposed condition)")
            ax.axvline(ref / 1e6, color="0.5", lw=1.0, ls="-.", label="NB threshold (reference)")
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel("Bandwidth [MHz]")
        ax.set_ylabel(METRIC_LABELS.get(metric, metric))
        ax.grid(True, which="both", alpha=0.3)
        ax.legend(loc="lower left", ncol=2)
    return fig


def emit_plot(csv_path: str | Path, out_svg: str | Path, metric: str = "aoa_rad") -> Path:
    records, thresholds = read_csv(csv_path)
    fig = make_figure(records, metric, thresholds)
    out = Path(out_svg)
    with plt.rc_context(RC):
        fig.savefig(out, format="svg", metadata={"Date": None})
    plt.close(fig)
    return out


def emit_all_plots(csv_path: str | Path, out_dir: str | Path,
                   metrics: Sequence[str] = METRICS) -> list[Path]:
    """One SVG per metric present in the CSV, named ``rmse_<metric>.svg``."""
    records, _ = read_csv(csv_path)
    present = {r.metric for r in records}
    out_dir = Path(out_dir)
    return [emit_plot(csv_path, out_dir / f"rmse_{m}.svg", m) for m in metrics if m in present]
