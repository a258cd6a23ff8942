"""Command line entry point: ``wideband-esprit <command> [options]``."""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .bench import METHODS, TrialConfig, run_trial, simulate_trial, sweep_bandwidth
from .channel import narrowband_thresholds, write_tensor
from .config import RunConfig, load_config
from .esprit import write_singular_values
from .report import emit_all_plots, emit_csv, emit_plot

log = logging.getLogger("wideband_esprit")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="YAML run configuration")
    p.add_argument("--seed", type=int, help="base seed (overrides the config)")
    p.add_argument("--trials", type=int, help="Monte Carlo trials per bandwidth")
    p.add_argument("--methods", help=f"comma-separated subset of {','.join(METHODS)}")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    p.add_argument("--verbose", "-v", action="store_true", help="log progress and write diagnostics")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wideband-esprit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="dump one noisy channel tensor")
    _common(p)
    p.add_argument("--trial-index", type=int, default=0)
    p.add_argument("--noiseless", action="store_true")

    p = sub.add_parser("estimate", help="run one trial and print estimates")
    _common(p)
    p.add_argument("--trial-index", type=int, default=0)

    p = sub.add_parser("sweep", help="bandwidth sweep to CSV plus figures")
    _common(p)
    p.add_argument("--bandwidths", help="comma-separated bandwidths in Hz (overrides the config)")
    p.add_argument("--no-plots", action="store_true")

    p = sub.add_parser("plot", help="render figures from a sweep CSV")
    p.add_argument("csv", type=Path)
    p.add_argument("--out", type=Path, default=None, help="output directory (default: next to the CSV)")
    p.add_argument("--metric", default=None, help="single metric to plot")

    p = sub.add_parser("thresholds", help="print both narrowband thresholds")
    p.add_argument("--config", type=Path)
    p.add_argument("--strictness", type=float, default=10.0)
    return parser


def _run_config(args) -> RunConfig:
    rc = load_config(args.config)
    trial = rc.trial
    if args.seed is not None:
        trial = replace(trial, seed=args.seed)
    if args.trials is not None:
        trial = replace(trial, trials=args.trials)
    if args.methods:
        trial = replace(trial, methods=tuple(m.strip() for m in args.methods.split(",") if m.strip()))
    bws = rc.bandwidths_hz
    if getattr(args, "bandwidths", None):
        bws = tuple(float(b) for b in args.bandwidths.split(","))
    return RunConfig(trial=trial, bandwidths_hz=bws)


def cmd_simulate(args) -> int:
    cfg = _run_config(args).trial
    if args.noiseless:
        cfg = replace(cfg, options=replace(cfg.options, noiseless=True))
    paths, h = simulate_trial(cfg, args.trial_index)
    args.out.mkdir(parents=True, exist_ok=True)
    out = args.out / "channel.wbct"
    write_tensor(out, h)
    print(f"wrote {out} (K={h.shape[0]}, M_tx={h.shape[1]}, M_rx={h.shape[2]})")
    for i, p in enumerate(paths):
        print(f"path {i}: los={p.is_los} aod={math.degrees(p.theta_tx):.3f} deg "
              f"aoa={math.degrees(p.theta_rx):.3f} deg tau={p.tau * 1e9:.4f} ns |gain|={abs(p.gain):.4e}")
    return 0


def cmd_estimate(args) -> int:
    cfg = _run_config(args).trial
    paths, results = run_trial(cfg, args.trial_index)
    print(f"B = {cfg.sys.bandwidth_hz / 1e6:g} MHz, K = {cfg.sys.num_subcarriers}, trial {args.trial_index}")
    for i, p in enumerate(paths):
        print(f"  truth path {i}: aod={p.theta_tx:+.6f} aoa={p.theta_rx:+.6f} rad tau={p.tau * 1e9:.4f} ns")
    for m, r in results.items():
        if r.failed:
            print(f"{m}: FAILED ({r.error})")
            continue
        print(f"{m}:")
        for i in range(len(paths)):
            print(f"  path {i}: aod={r.estimate.theta[i, 0]:+.6f} aoa={r.estimate.theta[i, 1]:+.6f} rad "
                  f"tau={r.estimate.tau[i] * 1e9:.4f} ns")
        loc = r.location
        print(f"  UE = ({loc.p_ue.x:.4f}, {loc.p_ue.y:.4f}) m, clock bias = {loc.tau_b * 1e9:.4f} ns")
    return 0


def cmd_sweep(args) -> int:
    rc = _run_config(args)
    args.out.mkdir(parents=True, exist_ok=True)
    pairing_rows = []

    def on_trial(cfg: TrialConfig, t, paths, results):
        log.debug("B=%.2f MHz trial %d done", cfg.sys.bandwidth_hz / 1e6, t)
        if not args.verbose:
            return
        for m, r in results.items():
            d = r.diagnostics
            pairing_rows.append([m, cfg.sys.bandwidth_hz, t, int(r.failed), d.get("kmeans_iterations", ""),
                                 d.get("kmeans_converged", ""), d.get("discarded", ""), r.error or ""])
        if t == 0 and "proposed" in results:
            _, h = simulate_trial(cfg, 0)
            spectra = np.linalg.svd(h, compute_uv=False)
            write_singular_values(args.out / f"singular_values_{cfg.sys.num_subcarriers}.csv", spectra)

    result = sweep_bandwidth(rc.trial, rc.bandwidths_hz, on_trial=on_trial)
    csv_path = args.out / "rmse.csv"
    emit_csv(result.records, csv_path, result.thresholds_hz)
    print(f"wrote {csv_path}")
    if args.verbose:
        diag = args.out / "pairing_diagnostics.csv"
        with open(diag, "w", newline="") as f:
            wr = csv.writer(f, lineterminator="\n")
            wr.writerow(["method", "bandwidth_hz", "trial", "failed", "kmeans_iterations",
                         "kmeans_converged", "discarded", "error"])
            wr.writerows(pairing_rows)
        print(f"wrote {diag}")
    if not args.no_plots:
        for path in emit_all_plots(csv_path, args.out):
            print(f"wrote {path}")
    return 0


def cmd_plot(args) -> int:
    out_dir = args.out if args.out is not None else args.csv.parent
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.metric:
        paths = [emit_plot(args.csv, out_dir / f"rmse_{args.metric}.svg", args.metric)]
    else:
        paths = emit_all_plots(args.csv, out_dir)
    for p in paths:
        print(f"wrote {p}")
    return 0


def cmd_thresholds(args) -> int:
    sys_cfg = load_config(args.config).trial.sys
    prop, ref = narrowband_thresholds(sys_cfg, args.strictness)
    print(f"proposed condition (strictness {args.strictness:g}): {prop / 1e6:.2f} MHz")
    print(f"reference condition: {ref / 1e6:.2f} MHz")
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "sweep": cmd_sweep,
    "plot": cmd_plot,
    "thresholds": cmd_thresholds,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if not getattr(args, "verbose", False):
        logging.getLogger("wideband_esprit").setLevel(logging.WARNING)
    try:
        return COMMANDS[args.command](args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
