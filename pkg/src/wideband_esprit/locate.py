"""UE position and clock bias from per-path (AOD, AOA, delay) estimates.

Every path gives two linear equations in the unknowns
``v = [x_UE, y_UE, tau_B, d_2, ..., d_L]``; path 1 is the LOS path and
``d_l`` is the BS-to-scatterer distance of NLOS path ``l``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import IllConditionedError, UnderdeterminedError
from .scene import SPEED_OF_LIGHT, Position2D

# Coefficient of d_l in the stacked system. Substituting the NLOS geometry
# gives f_rx - f_tx; "sum" is the alternative -(f_rx + f_tx), kept only so
# the self-consistency check can reject it.
CONVENTIONS = ("difference", "sum")
RANK_TOL = 1e-10


@dataclass(frozen=True)
class PathEstimate:
    theta_tx: float
    theta_rx: float
    tau: float


@dataclass(frozen=True)
class LocalizationSolution:
    p_ue: Position2D
    tau_b: float
    d: np.ndarray
    residual_norm: float


def direction_vectors(theta_tx: float, theta_rx: float) -> tuple[np.ndarray, np.ndarray]:
    """Unit departure direction at the BS and propagation direction into the UE."""
    f_tx = np.array([math.cos(theta_tx), math.sin(theta_tx)])
    f_rx = np.array([math.cos(theta_rx), -math.sin(theta_rx)])
    return f_tx, f_rx


def build_system(paths: Sequence[PathEstimate], p_bs, convention: str = "difference",
                 c: float = SPEED_OF_LIGHT) -> tuple[np.ndarray, np.ndarray]:
    """Stacked ``B v = z`` with ``B`` of shape ``(2L, L + 2)``."""
    if convention not in CONVENTIONS:
        raise ValueError(f"unknown convention {convention!r}")
    l = len(paths)
    if l < 1:
        raise ValueError("need at least one path")
    bs = np.asarray(p_bs, dtype=float)
    b = np.zeros((2 * l, l + 2))
    z = np.zeros(2 * l)
    for i, p in enumerate(paths):
        f_tx, f_rx = direction_vectors(p.theta_tx, p.theta_rx)
        rows = slice(2 * i, 2 * i + 2)
        b[rows, :2] = np.eye(2)
        b[rows, 2] = c * f_rx
        if i > 0:
            b[rows, 2 + i] = f_rx - f_tx if convention == "difference" else -(f_rx + f_tx)
        z[rows] = bs + c * p.tau * f_rx
    return b, z


def solve_position(b: np.ndarray, z: np.ndarray, l: int | None = None) -> LocalizationSolution:
    """Minimum-norm least squares for the stacked system."""
    l = b.shape[0] // 2 if l is None else l
    if l < 2:
        raise UnderdeterminedError("localization needs at least 2 paths")
    # equilibrate columns so the rank tolerance is not set by the c-scaled
    # clock-bias column alone
    scale = np.linalg.norm(b, axis=0)
    scale[scale == 0.0] = 1.0
    w, _, rank, _ = np.linalg.lstsq(b / scale, z, rcond=RANK_TOL)
    if rank < b.shape[1]:
        raise IllConditionedError(f"localization system has rank {rank} < {b.shape[1]}")
    v = w / scale
    d = v[3:]
    if np.any(d < 0):
        warnings.warn("negative pre-reflection distance in localization solution", stacklevel=2)
    return LocalizationSolution(
        p_ue=Position2D(float(v[0]), float(v[1])),
        tau_b=float(v[2]),
        d=d,
        residual_norm=float(np.linalg.norm(b @ v - z)),
    )


def localize(paths: Sequence[PathEstimate], p_bs, convention: str = "difference") -> LocalizationSolution:
    b, z = build_system(paths, p_bs, convention)
    return solve_position(b, z, len(paths))


def true_unknowns(p_ue, tau_b: float, d: Sequence[float]) -> np.ndarray:
    return np.concatenate([np.asarray(p_ue, dtype=float), [tau_b], np.asarray(d, dtype=float)])
