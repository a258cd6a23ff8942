"""Per-subcarrier gain extraction and least-squares delay fit."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import SystemConfig
from .errors import IllConditionedError, UnderdeterminedError

GRAM_COND_LIMIT = 1e10


def reconstruct_steering(phi, k, sys: SystemConfig, side: str) -> np.ndarray:
    """Squint-corrected steering matrix.

    ``phi`` holds one normalized angle per path, shape ``(L,)`` or ``(K, L)``
    when the angles differ per subcarrier. Scalar ``k`` gives ``(M, L)``; an
    array of subcarriers gives ``(K, M, L)``.
    """
    if side not in ("tx", "rx"):
        raise ValueError(f"side must be 'tx' or 'rx', got {side!r}")
    m = sys.m_tx if side == "tx" else sys.m_rx
    phi = np.asarray(phi, dtype=float)
    k = np.asarray(k)
    squint = 1.0 + k * sys.delta_f_hz / sys.fc_hz
    idx = np.arange(m)
    if k.ndim == 0:
        return np.exp(-2j * np.pi * np.outer(idx, squint * phi))
    phi_k = np.broadcast_to(phi, (k.size, phi.shape[-1]))
    arg = idx[None, :, None] * (squint[:, None] * phi_k)[:, None, :]
    return np.exp(-2j * np.pi * arg)


def khatri_rao(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Column-wise Kronecker product; row ``i * M_b + j`` is ``a[i] * b[j]``."""
    return (a[:, None, :] * b[None, :, :]).reshape(a.shape[0] * b.shape[0], a.shape[1])


def estimate_gains(h_k: np.ndarray, a_tx: np.ndarray, a_rx: np.ndarray) -> np.ndarray:
    """Least-squares path gains of one slice, ``pinv(A_tx kr A_rx) vec_r(H_k)``."""
    kr = khatri_rao(a_tx, a_rx)
    s = np.linalg.svd(kr, compute_uv=False)
    if s[-1] <= s[0] / GRAM_COND_LIMIT:
        raise IllConditionedError("Khatri-Rao steering matrix is rank deficient")
    return np.linalg.lstsq(kr, h_k.reshape(-1), rcond=None)[0]


def estimate_gains_batch(h: np.ndarray, a_tx: np.ndarray, a_rx: np.ndarray) -> np.ndarray:
    """:func:`estimate_gains` for every subcarrier, via the normal equations.

    ``h`` is ``(K, M_tx, M_rx)``, steering ``(K, M, L)``; returns ``(K, L)``.
    The Gram matrix of a Khatri-Rao product is the Hadamard product of the
    factor Gram matrices.
    """
    gram = (np.conj(np.swapaxes(a_tx, 1, 2)) @ a_tx) * (np.conj(np.swapaxes(a_rx, 1, 2)) @ a_rx)
    rhs = np.einsum("kml,kmn,knl->kl", np.conj(a_tx), h, np.conj(a_rx))
    cond = np.linalg.cond(gram)
    if np.any(~np.isfinite(cond)) or np.any(cond > GRAM_COND_LIMIT):
        raise IllConditionedError("Khatri-Rao steering matrix is rank deficient")
    return np.linalg.solve(gram, rhs[..., None])[..., 0]


@dataclass(frozen=True)
class DelayGainFit:
    tau: float
    # Complex gain at k = 0, i.e. alpha * exp(-j 2 pi f_c tau) up to whole
    # turns of the carrier phase.
    gain: complex
    # Fitted slope of ln|gain| per subcarrier; ~0 for a consistent track.
    magnitude_slope: float


def estimate_delay_gain(track: np.ndarray, sys: SystemConfig, k: np.ndarray | None = None) -> DelayGainFit:
    """Fit ``ln g_k = ln g_0 - j 2 pi k df tau`` by complex least squares.

    The phase of ``g_k`` is unwrapped along ``k`` first, so the carrier term
    only enters the intercept and the delay comes from the slope.
    """
    track = np.asarray(track, dtype=complex)
    if track.size < 2:
        raise UnderdeterminedError("delay fit needs at least two subcarriers")
    k = np.arange(track.size) if k is None else np.asarray(k)
    log_g = np.log(np.abs(track)) + 1j * np.unwrap(np.angle(track))
    s = np.column_stack([-2j * np.pi * k * sys.delta_f_hz, np.ones(track.size)])
    (tau_c, log_g0), *_ = np.linalg.lstsq(s, log_g, rcond=None)
    magnitude_slope = 2 * np.pi * sys.delta_f_hz * float(tau_c.imag)
    return DelayGainFit(tau=float(tau_c.real), gain=complex(np.exp(log_g0)), magnitude_slope=magnitude_slope)
