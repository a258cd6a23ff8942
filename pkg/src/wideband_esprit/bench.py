"""Monte Carlo comparison of the three estimators over a bandwidth sweep.

Methods:

``proposed``
    per-subcarrier 2D ESPRIT, constrained K-means pairing, squint-corrected
    gains and LS delay fit.
``proposed_no_pairing``
    the same Phase 1 outputs taken in per-subcarrier energy order; angles are
    slot averages and gains use each subcarrier's own angle estimates.
``esprit3d``
    narrowband 3D ESPRIT on the whole tensor.

All methods localize with the same stacked least-squares system.
"""

from __future__ import annotations

import itertools
import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .channel import SystemConfig, add_noise, narrowband_thresholds, synthesize
from .delaygain import estimate_delay_gain, estimate_gains_batch, reconstruct_steering
from .errors import GeometryError, IllConditionedError, PairingError, UnderdeterminedError
from .esprit import esprit_2d_batch, esprit_3d, mode_to_normalized_angle, normalized_to_physical
from .locate import LocalizationSolution, PathEstimate, localize
from .pairing import AngleMeasurements, cluster_means_to_angles, pair_subcarriers
from .scene import PathGeometry, SceneConfig, build_scene, randomize_phases

log = logging.getLogger(__name__)

METHODS = ("proposed", "proposed_no_pairing", "esprit3d")
METRICS = ("aoa_rad", "aod_rad", "delay_ns", "position_m")
DEFAULT_BANDWIDTHS_HZ = tuple(1.92e6 * 2 ** i for i in range(8))

# Estimation failures that count against a trial instead of aborting a sweep.
TRIAL_FAILURES = (PairingError, IllConditionedError, UnderdeterminedError, GeometryError,
                  ValueError, np.linalg.LinAlgError)


@dataclass(frozen=True)
class EstimatorOptions:
    kmeans_restarts: int = 5
    kmeans_max_iters: int = 100
    pairing_domain: str = "both"
    wrap_aware_distance: bool = False
    kmeans_init: str = "subcarrier"
    baseline_k_max: int = 64
    # Narrowband model: no squint factor in synthesis or in the estimators.
    narrowband: bool = False
    noiseless: bool = False


@dataclass(frozen=True)
class TrialConfig:
    sys: SystemConfig = field(default_factory=SystemConfig)
    scene: SceneConfig = field(default_factory=SceneConfig)
    methods: tuple[str, ...] = METHODS
    seed: int = 0
    trials: int = 200
    options: EstimatorOptions = field(default_factory=EstimatorOptions)

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods {sorted(unknown)}")


@dataclass(frozen=True)
class PathParameters:
    """Estimated per-path parameters, rows in truth order after matching."""

    theta: np.ndarray  # (L, 2): AOD, AOA in radians
    tau: np.ndarray  # (L,) seconds
    gain: np.ndarray | None = None


@dataclass
class MethodResult:
    method: str
    estimate: PathParameters | None = None
    location: LocalizationSolution | None = None
    error: str | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def failed(self) -> bool:
        return self.estimate is None or self.location is None


@dataclass(frozen=True)
class RmseRecord:
    method: str
    bandwidth_hz: float
    metric: str
    value: float
    trials_used: int
    failures: int
    seed: int


# --- estimators -----------------------------------------------------------


def _delays(gains: np.ndarray, sys: SystemConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    fits = [estimate_delay_gain(gains[:, l], sys) for l in range(gains.shape[1])]
    tau = np.array([f.tau for f in fits])
    alpha = np.array([f.gain for f in fits])
    slope = np.array([f.magnitude_slope for f in fits])
    return tau, alpha, slope


def squint_index(n_k: int, narrowband: bool = False) -> np.ndarray:
    """Subcarrier indices entering the squint factor; all zero under the
    narrowband model."""
    return np.zeros(n_k, dtype=int) if narrowband else np.arange(n_k)


def phase1(h: np.ndarray, sys: SystemConfig, l: int, rng,
           narrowband: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Per-subcarrier normalized angles ``(K, L, 2)`` in energy order, plus
    the energies."""
    modes, energy = esprit_2d_batch(h, l, rng=rng)
    k = squint_index(h.shape[0], narrowband)
    phi = mode_to_normalized_angle(modes, k[:, None, None], sys)
    return phi, energy


def estimate_proposed(h: np.ndarray, sys: SystemConfig, l: int, rng,
                      opts: EstimatorOptions = EstimatorOptions(), phi_k=None):
    if phi_k is None:
        phi_k, _ = phase1(h, sys, l, rng, opts.narrowband)
    ms = AngleMeasurements.from_grid(phi_k)
    state = pair_subcarriers(ms, l, rng=rng, restarts=opts.kmeans_restarts,
                             max_iters=opts.kmeans_max_iters, domain=opts.pairing_domain,
                             wrap_aware=opts.wrap_aware_distance, init=opts.kmeans_init)
    phi, theta = cluster_means_to_angles(state, sys)
    k = squint_index(h.shape[0], opts.narrowband)
    a_tx = reconstruct_steering(phi[:, 0], k, sys, "tx")
    a_rx = reconstruct_steering(phi[:, 1], k, sys, "rx")
    gains = estimate_gains_batch(h, a_tx, a_rx)
    tau, alpha, slope = _delays(gains, sys)
    diag = {"kmeans_iterations": state.iterations, "kmeans_converged": state.converged,
            "discarded": state.discarded, "magnitude_slope": slope}
    return PathParameters(theta=theta, tau=tau, gain=alpha), diag


def estimate_no_pairing(h: np.ndarray, sys: SystemConfig, l: int, rng,
                        opts: EstimatorOptions = EstimatorOptions(), phi_k=None):
    if phi_k is None:
        phi_k, _ = phase1(h, sys, l, rng, opts.narrowband)
    phi = phi_k.mean(axis=0)
    theta = np.column_stack([normalized_to_physical(phi[:, 0], sys, "tx"),
                             normalized_to_physical(phi[:, 1], sys, "rx")])
    k = squint_index(h.shape[0], opts.narrowband)
    a_tx = reconstruct_steering(phi_k[:, :, 0], k, sys, "tx")
    a_rx = reconstruct_steering(phi_k[:, :, 1], k, sys, "rx")
    gains = estimate_gains_batch(h, a_tx, a_rx)
    tau, alpha, slope = _delays(gains, sys)
    return PathParameters(theta=theta, tau=tau, gain=alpha), {"magnitude_slope": slope}


def estimate_esprit3d(h: np.ndarray, sys: SystemConfig, l: int, rng,
                      opts: EstimatorOptions = EstimatorOptions()):
    est = esprit_3d(h, l, sys, k_max=opts.baseline_k_max, rng=rng)
    theta = np.column_stack([normalized_to_physical(est[:, 0], sys, "tx"),
                             normalized_to_physical(est[:, 1], sys, "rx")])
    return PathParameters(theta=theta, tau=est[:, 2]), {}


# --- matching and scoring -------------------------------------------------


def truth_parameters(paths: Sequence[PathGeometry]) -> PathParameters:
    return PathParameters(
        theta=np.array([[p.theta_tx, p.theta_rx] for p in paths]),
        tau=np.array([p.tau for p in paths]),
        gain=np.array([p.gain for p in paths]),
    )


def match_paths(est_theta: np.ndarray, true_theta: np.ndarray) -> np.ndarray:
    """Permutation ``perm`` minimizing ``sum_l |est[perm[l]] - true[l]|``
    in the (AOD, AOA) plane."""
    l = len(true_theta)
    if len(est_theta) != l:
        raise ValueError("estimate and truth have different path counts")
    cost = np.linalg.norm(est_theta[None, :, :] - true_theta[:, None, :], axis=-1)
    if l <= 6:
        best, best_cost = None, np.inf
        for perm in itertools.permutations(range(l)):
            c = cost[np.arange(l), perm].sum()
            if c < best_cost:
                best, best_cost = perm, c
        return np.array(best)
    rows, cols = linear_sum_assignment(cost)
    return cols[np.argsort(rows)]


def reorder(est: PathParameters, perm: np.ndarray) -> PathParameters:
    return PathParameters(theta=est.theta[perm], tau=est.tau[perm],
                          gain=None if est.gain is None else est.gain[perm])


def match_and_score(est: PathParameters, truth: PathParameters) -> dict[str, np.ndarray]:
    """Per-path squared errors after optimal matching."""
    matched = reorder(est, match_paths(est.theta, truth.theta))
    return {
        "aod_rad": (matched.theta[:, 0] - truth.theta[:, 0]) ** 2,
        "aoa_rad": (matched.theta[:, 1] - truth.theta[:, 1]) ** 2,
        "delay_ns": ((matched.tau - truth.tau) * 1e9) ** 2,
    }


# --- trials ---------------------------------------------------------------


def trial_streams(seed: int, trial_index: int) -> tuple[np.random.Generator, np.random.Generator]:
    """Independent (channel, estimator) generators for one trial."""
    ss = np.random.SeedSequence(seed, spawn_key=(trial_index,))
    chan, est = ss.spawn(2)
    return np.random.default_rng(chan), np.random.default_rng(est)


def simulate_trial(cfg: TrialConfig, trial_index: int) -> tuple[list[PathGeometry], np.ndarray]:
    """Ground truth and noisy channel tensor for one trial."""
    chan_rng, _ = trial_streams(cfg.seed, trial_index)
    paths = randomize_phases(build_scene(cfg.scene, cfg.sys.wavelength), chan_rng)
    h = synthesize(paths, cfg.sys, narrowband=cfg.options.narrowband)
    if not cfg.options.noiseless:
        h = add_noise(h, cfg.sys, chan_rng)
    return paths, h


def run_trial(cfg: TrialConfig, trial_index: int) -> tuple[list[PathGeometry], dict[str, MethodResult]]:
    """Run every configured method on one noisy channel realization.

    Estimated paths are matched to the ground truth before localization, so
    the LOS path is identified by the oracle.
    """
    paths, h = simulate_trial(cfg, trial_index)
    _, est_rng = trial_streams(cfg.seed, trial_index)
    sys, l = cfg.sys, len(paths)
    truth = truth_parameters(paths)
    method_rngs = dict(zip(METHODS, est_rng.spawn(len(METHODS) + 1)))
    shared_rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(trial_index, 99)))

    phi_k = None
    if {"proposed", "proposed_no_pairing"} & set(cfg.methods):
        try:
            phi_k, _ = phase1(h, sys, l, shared_rng, cfg.options.narrowband)
        except TRIAL_FAILURES as exc:
            phi_k = exc

    results = {}
    with warnings.catch_warnings():
        # negative pre-reflection distances are legitimate for virtual scatterers
        warnings.simplefilter("ignore", UserWarning)
        for method in cfg.methods:
            results[method] = _run_method(method, h, cfg, l, truth, phi_k, method_rngs[method], trial_index)
    return paths, results


def _run_method(method, h, cfg, l, truth, phi_k, rng, trial_index) -> MethodResult:
    sys, opts = cfg.sys, cfg.options
    res = MethodResult(method)
    try:
        if isinstance(phi_k, Exception) and method != "esprit3d":
            raise phi_k
        if method == "proposed":
            est, res.diagnostics = estimate_proposed(h, sys, l, rng, opts, phi_k)
        elif method == "proposed_no_pairing":
            est, res.diagnostics = estimate_no_pairing(h, sys, l, rng, opts, phi_k)
        else:
            est, res.diagnostics = estimate_esprit3d(h, sys, l, rng, opts)
        est = reorder(est, match_paths(est.theta, truth.theta))
        estimates = [PathEstimate(*est.theta[i], est.tau[i]) for i in range(l)]
        res.location = localize(estimates, cfg.scene.p_bs)
        res.estimate = est
    except TRIAL_FAILURES as exc:
        res.error = f"{type(exc).__name__}: {exc}"
        log.debug("trial %d %s failed: %s", trial_index, method, res.error)
    return res


def position_error2(sol: LocalizationSolution, p_ue) -> float:
    return float((sol.p_ue[0] - p_ue[0]) ** 2 + (sol.p_ue[1] - p_ue[1]) ** 2)


@dataclass
class _Accumulator:
    sums: dict = field(default_factory=lambda: {m: 0.0 for m in METRICS})
    counts: dict = field(default_factory=lambda: {m: 0 for m in METRICS})
    used: int = 0
    failures: int = 0

    def add(self, res: MethodResult, truth: PathParameters, p_ue) -> None:
        if res.failed:
            self.failures += 1
            return
        self.used += 1
        for name, sq in match_and_score(res.estimate, truth).items():
            self.sums[name] += float(np.sum(sq))
            self.counts[name] += sq.size
        self.sums["position_m"] += position_error2(res.location, p_ue)
        self.counts["position_m"] += 1

    def rmse(self, metric: str) -> float:
        n = self.counts[metric]
        return math.sqrt(self.sums[metric] / n) if n else math.nan


@dataclass
class SweepResult:
    records: list[RmseRecord]
    thresholds_hz: tuple[float, float]


def sweep_bandwidth(base: TrialConfig, bandwidths: Sequence[float], methods: Sequence[str] | None = None,
                    trials: int | None = None, seed: int | None = None, on_trial=None) -> SweepResult:
    """RMSE of every method at every bandwidth over independent trials.

    ``on_trial(cfg, trial_index, paths, results)`` is called after each trial.
    """
    methods = tuple(base.methods if methods is None else methods)
    trials = base.trials if trials is None else trials
    seed = base.seed if seed is None else seed
    records = []
    for bw in bandwidths:
        cfg = replace(base, sys=base.sys.with_bandwidth(bw), methods=methods, trials=trials, seed=seed)
        acc = {m: _Accumulator() for m in methods}
        for t in range(trials):
            paths, results = run_trial(cfg, t)
            truth = truth_parameters(paths)
            for m in methods:
                acc[m].add(results[m], truth, cfg.scene.p_ue)
            if on_trial is not None:
                on_trial(cfg, t, paths, results)
        for m in methods:
            for metric in METRICS:
                records.append(RmseRecord(m, float(bw), metric, acc[m].rmse(metric),
                                          acc[m].used, acc[m].failures, seed))
        log.info("B=%.2f MHz done: %s", bw / 1e6,
                 ", ".join(f"{m} aoa={acc[m].rmse('aoa_rad'):.3g}" for m in methods))
    return SweepResult(records=records, thresholds_hz=narrowband_thresholds(base.sys))
