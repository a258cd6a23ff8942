"""Spatial-wideband MIMO-OFDM channel synthesis and estimation noise.

Channel tensors are stored k-major: ``h[k, m_tx, m_rx]``.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .scene import SPEED_OF_LIGHT, PathGeometry


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


@dataclass(frozen=True)
class SystemConfig:
    fc_hz: float = 28e9
    delta_f_hz: float = 120e3
    num_subcarriers: int = 128
    m_tx: int = 32
    m_rx: int = 32
    spacing_wavelengths: float = 0.5
    pt_dbm: float = 15.0
    n0_dbm_hz: float = -174.0
    nf_db: float = 8.0
    n_pilots: int = 64
    # Bandwidth the transmit power is spread over. ``None`` means the
    # processed bandwidth K * delta_f.
    tx_bandwidth_hz: float | None = 245.76e6
    noise_variance_override: float | None = None

    def __post_init__(self):
        if self.num_subcarriers < 1:
            raise ValueError("num_subcarriers must be >= 1")
        if self.m_tx < 1 or self.m_rx < 1:
            raise ValueError("antenna counts must be >= 1")
        if not 0.0 < self.spacing_wavelengths <= 0.5:
            raise ValueError("antenna spacing must be in (0, lambda/2]")

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.fc_hz

    @property
    def bandwidth_hz(self) -> float:
        return self.num_subcarriers * self.delta_f_hz

    @property
    def d_tx(self) -> float:
        return self.spacing_wavelengths * self.wavelength

    @property
    def d_rx(self) -> float:
        return self.spacing_wavelengths * self.wavelength

    def spacing(self, side: str) -> float:
        if side == "tx":
            return self.d_tx
        if side == "rx":
            return self.d_rx
        raise ValueError(f"side must be 'tx' or 'rx', got {side!r}")

    def with_bandwidth(self, bandwidth_hz: float) -> "SystemConfig":
        k = int(round(bandwidth_hz / self.delta_f_hz))
        if k < 1 or abs(k * self.delta_f_hz - bandwidth_hz) > 1e-6 * bandwidth_hz:
            raise ValueError(f"bandwidth {bandwidth_hz} Hz is not a multiple of delta_f")
        return replace(self, num_subcarriers=k)

    @property
    def noise_variance(self) -> float:
        """Per-entry variance of the channel-estimation error.

        ``P_t`` is spread over the transmit bandwidth (fixed transmit power
        spectral density), so the per-subcarrier SNR does not depend on how
        many subcarriers are occupied; ``n_pilots`` symbols are averaged by
        the ML estimate. ``tx_bandwidth_hz=None`` spreads ``P_t`` over the
        occupied bandwidth instead.
        """
        if self.noise_variance_override is not None:
            return float(self.noise_variance_override)
        tx_bw = self.bandwidth_hz if self.tx_bandwidth_hz is None else self.tx_bandwidth_hz
        k_tx = tx_bw / self.delta_f_hz
        n0 = db_to_linear(self.n0_dbm_hz)
        nf = db_to_linear(self.nf_db)
        pt = db_to_linear(self.pt_dbm)
        return n0 * nf * self.delta_f_hz * k_tx / (pt * self.n_pilots)


def normalized_angle(theta: float | np.ndarray, sys: SystemConfig, side: str):
    """``d sin(theta) / lambda_c``."""
    return sys.spacing(side) * np.sin(theta) / sys.wavelength


def _path_arrays(paths: Sequence[PathGeometry], sys: SystemConfig):
    phi_tx = np.array([normalized_angle(p.theta_tx, sys, "tx") for p in paths])
    phi_rx = np.array([normalized_angle(p.theta_rx, sys, "rx") for p in paths])
    tau = np.array([p.tau for p in paths])
    gain = np.array([p.gain for p in paths], dtype=complex)
    if np.any(np.abs(phi_tx) > 0.5 + 1e-12) or np.any(np.abs(phi_rx) > 0.5 + 1e-12):
        raise ValueError("normalized angle outside [-1/2, 1/2]")
    return phi_tx, phi_rx, tau, gain


def carrier_gains(paths: Sequence[PathGeometry], sys: SystemConfig) -> np.ndarray:
    """``alpha_l * exp(-j 2 pi f_c tau_l)`` for every path."""
    _, _, tau, gain = _path_arrays(paths, sys)
    return gain * np.exp(-2j * np.pi * sys.fc_hz * tau)


def synthesize(paths: Sequence[PathGeometry], sys: SystemConfig, narrowband: bool = False) -> np.ndarray:
    """Noiseless channel tensor of shape ``(K, M_tx, M_rx)``.

    ``narrowband=True`` drops the ``k delta_f / f_c`` squint factor.
    """
    phi_tx, phi_rx, tau, _ = _path_arrays(paths, sys)
    gains = carrier_gains(paths, sys)
    k = np.arange(sys.num_subcarriers)
    squint = np.ones_like(k, dtype=float) if narrowband else 1.0 + k * sys.delta_f_hz / sys.fc_hz
    m_tx = np.arange(sys.m_tx)
    m_rx = np.arange(sys.m_rx)
    h = np.zeros((sys.num_subcarriers, sys.m_tx, sys.m_rx), dtype=complex)
    for l in range(len(paths)):
        a_tx = np.exp(-2j * np.pi * np.outer(squint * phi_tx[l], m_tx))  # (K, M_tx)
        a_rx = np.exp(-2j * np.pi * np.outer(squint * phi_rx[l], m_rx))  # (K, M_rx)
        a_k = gains[l] * np.exp(-2j * np.pi * k * sys.delta_f_hz * tau[l])
        h += a_k[:, None, None] * a_tx[:, :, None] * a_rx[:, None, :]
    return h


def phase_rotation_entry(l: int, m_tx: int, m_rx: int, k: int,
                         paths: Sequence[PathGeometry], sys: SystemConfig) -> complex:
    phi_tx, phi_rx, _, _ = _path_arrays(paths, sys)
    arg = k * sys.delta_f_hz * (m_tx * phi_tx[l] + m_rx * phi_rx[l]) / sys.fc_hz
    return complex(np.exp(-2j * np.pi * arg))


def phase_rotation_tensor(path: PathGeometry, sys: SystemConfig) -> np.ndarray:
    """Squint perturbation of one path, shape ``(K, M_tx, M_rx)``."""
    phi_tx, phi_rx, _, _ = _path_arrays([path], sys)
    k = np.arange(sys.num_subcarriers)[:, None, None]
    m_tx = np.arange(sys.m_tx)[None, :, None]
    m_rx = np.arange(sys.m_rx)[None, None, :]
    arg = k * sys.delta_f_hz * (m_tx * phi_tx[0] + m_rx * phi_rx[0]) / sys.fc_hz
    return np.exp(-2j * np.pi * arg)


def synthesize_factorized(paths: Sequence[PathGeometry], sys: SystemConfig) -> np.ndarray:
    """Same tensor as :func:`synthesize`, built as a sum of rank-one
    outer products times each path's phase-rotation tensor."""
    phi_tx, phi_rx, tau, _ = _path_arrays(paths, sys)
    gains = carrier_gains(paths, sys)
    h = np.zeros((sys.num_subcarriers, sys.m_tx, sys.m_rx), dtype=complex)
    for l, path in enumerate(paths):
        a_tx = np.exp(-2j * np.pi * np.arange(sys.m_tx) * phi_tx[l])
        a_rx = np.exp(-2j * np.pi * np.arange(sys.m_rx) * phi_rx[l])
        a_k = np.exp(-2j * np.pi * np.arange(sys.num_subcarriers) * sys.delta_f_hz * tau[l])
        rank_one = np.einsum("k,i,j->kij", a_k, a_tx, a_rx)
        h += gains[l] * rank_one * phase_rotation_tensor(path, sys)
    return h


def narrowband_thresholds(sys: SystemConfig, strictness: float = 10.0) -> tuple[float, float]:
    """Bandwidths below which the narrowband model is assumed to hold.

    Returns ``(proposed_hz, reference_hz)``: the first bounds the largest
    squint phase over the array aperture, the second is ``f_c / max(M)``,
    both divided by ``strictness``.
    """
    if strictness <= 0:
        raise ValueError("strictness must be positive")
    aperture = sys.m_tx * sys.d_tx + sys.m_rx * sys.d_rx
    proposed = sys.fc_hz * sys.wavelength / (2.0 * math.pi * strictness * aperture)
    reference = sys.fc_hz / (strictness * max(sys.m_tx, sys.m_rx))
    return proposed, reference


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def add_noise(h: np.ndarray, sys: SystemConfig, rng=None, variance: float | None = None) -> np.ndarray:
    """Add circularly-symmetric complex Gaussian estimation error."""
    var = sys.noise_variance if variance is None else variance
    if var == 0.0:
        return h.copy()
    gen = as_generator(rng)
    noise = gen.standard_normal(h.shape) + 1j * gen.standard_normal(h.shape)
    return h + math.sqrt(var / 2.0) * noise


_MAGIC = b"WBCT"


def write_tensor(path: str | Path, h: np.ndarray) -> None:
    """Dump ``h`` as little-endian complex64, k-major then tx-major."""
    k, m_tx, m_rx = h.shape
    with open(path, "wb") as f:
        f.write(_MAGIC + struct.pack("<III", m_tx, m_rx, k))
        f.write(np.ascontiguousarray(h, dtype="<c8").tobytes())


def read_tensor(path: str | Path) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.read(16)
        if len(header) != 16 or header[:4] != _MAGIC:
            raise ValueError(f"{path}: not a WBCT tensor file")
        m_tx, m_rx, k = struct.unpack("<III", header[4:])
        data = np.frombuffer(f.read(), dtype="<c8")
    if data.size != k * m_tx * m_rx:
        raise ValueError(f"{path}: expected {k * m_tx * m_rx} entries, found {data.size}")
    return data.reshape(k, m_tx, m_rx).astype(complex)
