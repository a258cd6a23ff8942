"""YAML run configuration.

Every key is optional; missing keys take the library defaults. Example::

    fc_hz: 28.0e9
    delta_f_hz: 120.0e3
    bandwidth_hz: 15.36e6
    bs_position: [0, 40]
    ue_position: [40, 0]
    paths: [[-45, 45], [-54, -62], [65, 40]]
    bandwidths_hz: [1.92e6, 3.84e6]
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

import yaml

from .bench import DEFAULT_BANDWIDTHS_HZ, EstimatorOptions, TrialConfig
from .channel import SystemConfig
from .pairing import DOMAIN_COLUMNS, INITS
from .scene import Position2D, SceneConfig

SYSTEM_KEYS = ("fc_hz", "delta_f_hz", "m_tx", "m_rx", "spacing_wavelengths", "pt_dbm",
               "n0_dbm_hz", "nf_db", "n_pilots", "noise_variance_override", "tx_bandwidth_hz")
OPTION_KEYS = ("baseline_k_max", "kmeans_restarts", "kmeans_init", "pairing_domain", "wrap_aware_distance")
KNOWN_KEYS = frozenset(SYSTEM_KEYS + OPTION_KEYS + (
    "bandwidth_hz", "bs_position", "ue_position", "clock_bias_s", "paths",
    "reflection_loss_db", "bandwidths_hz", "seed", "trials", "methods",
))


@dataclass(frozen=True)
class RunConfig:
    trial: TrialConfig = field(default_factory=TrialConfig)
    bandwidths_hz: tuple[float, ...] = DEFAULT_BANDWIDTHS_HZ


def _float_or_none(v):
    return None if v is None else float(v)


def from_mapping(data: Mapping[str, Any] | None) -> RunConfig:
    data = dict(data or {})
    unknown = set(data) - KNOWN_KEYS
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")

    sys_kw = {}
    for key in SYSTEM_KEYS:
        if key in data:
            val = data[key]
            if key in ("m_tx", "m_rx", "n_pilots"):
                val = int(val)
            elif key in ("noise_variance_override", "tx_bandwidth_hz"):
                val = _float_or_none(val)
            else:
                val = float(val)
            sys_kw[key] = val
    sys = SystemConfig(**sys_kw)
    if "bandwidth_hz" in data:
        sys = sys.with_bandwidth(float(data["bandwidth_hz"]))

    scene_kw = {}
    if "bs_position" in data:
        scene_kw["p_bs"] = Position2D(*map(float, data["bs_position"]))
    if "ue_position" in data:
        scene_kw["p_ue"] = Position2D(*map(float, data["ue_position"]))
    if "clock_bias_s" in data:
        scene_kw["clock_bias"] = float(data["clock_bias_s"])
    if "paths" in data:
        scene_kw["paths"] = tuple((float(a), float(b)) for a, b in data["paths"])
    if "reflection_loss_db" in data:
        scene_kw["reflection_loss_db"] = float(data["reflection_loss_db"])
    scene = SceneConfig(**scene_kw)

    opt_kw = {}
    if "baseline_k_max" in data:
        opt_kw["baseline_k_max"] = int(data["baseline_k_max"])
    if "kmeans_restarts" in data:
        opt_kw["kmeans_restarts"] = int(data["kmeans_restarts"])
    if "pairing_domain" in data:
        if data["pairing_domain"] not in DOMAIN_COLUMNS:
            raise ValueError(f"pairing_domain must be one of {sorted(DOMAIN_COLUMNS)}")
        opt_kw["pairing_domain"] = str(data["pairing_domain"])
    if "kmeans_init" in data:
        if data["kmeans_init"] not in INITS:
            raise ValueError(f"kmeans_init must be one of {list(INITS)}")
        opt_kw["kmeans_init"] = str(data["kmeans_init"])
    if "wrap_aware_distance" in data:
        opt_kw["wrap_aware_distance"] = bool(data["wrap_aware_distance"])

    trial = TrialConfig(sys=sys, scene=scene, options=EstimatorOptions(**opt_kw))
    if "seed" in data:
        trial = replace(trial, seed=int(data["seed"]))
    if "trials" in data:
        trial = replace(trial, trials=int(data["trials"]))
    if "methods" in data:
        trial = replace(trial, methods=tuple(data["methods"]))
    bws = tuple(float(b) for b in data.get("bandwidths_hz", DEFAULT_BANDWIDTHS_HZ))
    for b in bws:
        sys.with_bandwidth(b)
    return RunConfig(trial=trial, bandwidths_hz=bws)


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    with open(path) as f:
        return from_mapping(yaml.safe_load(f))
