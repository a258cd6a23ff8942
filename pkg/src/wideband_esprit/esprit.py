"""Single-snapshot multidimensional ESPRIT.

The building blocks (:func:`smooth`, :func:`signal_subspace`,
:func:`solve_shift_invariance`, :func:`joint_pair`) work for any number of
dimensions. Two instantiations are provided: :func:`esprit_2d` on one
``M_tx x M_rx`` subcarrier slice, and :func:`esprit_3d`, the narrowband
baseline on the whole tensor.

Modes follow the steering convention ``a = exp(-j 2 pi phi)``: moving one
element along a dimension multiplies the harmonic by its mode.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .channel import SystemConfig, as_generator
from .errors import IllConditionedError, UnderdeterminedError

COND_LIMIT = 1e10
TALL_RATIO = 16


@dataclass(frozen=True)
class SmoothingPlan:
    """Subarray size per dimension for the multilevel Hankel arrangement."""

    subarray: tuple[int, ...]

    def shifts(self, shape: tuple[int, ...]) -> tuple[int, ...]:
        return tuple(m - p + 1 for m, p in zip(shape, self.subarray))

    def validate(self, shape: tuple[int, ...], l: int | None = None) -> None:
        if len(shape) != len(self.subarray):
            raise ValueError(f"plan has {len(self.subarray)} dims, data has {len(shape)}")
        for m, p in zip(shape, self.subarray):
            if not 1 <= p <= m:
                raise ValueError(f"subarray size {p} outside [1, {m}]")
        if l is not None:
            if math.prod(self.subarray) <= l or math.prod(self.shifts(shape)) < l:
                raise ValueError(f"plan {self.subarray} cannot hold rank {l} for shape {shape}")


@dataclass(frozen=True)
class ModeSet:
    """Auto-paired modes, one row per path and one column per dimension,
    sorted by descending energy."""

    modes: np.ndarray
    energy: np.ndarray


def smooth(x: np.ndarray, plan: SmoothingPlan) -> np.ndarray:
    """Multilevel Hankel matrix of shape ``(prod(p), prod(q))``.

    Entry ``(i, j)`` is ``x[i_multi + j_multi]`` where ``i_multi`` indexes the
    subarray grid and ``j_multi`` the shift grid (both C order).
    """
    x = np.asarray(x)
    plan.validate(x.shape)
    win = sliding_window_view(x, plan.subarray)
    n_shift = math.prod(win.shape[: x.ndim])
    return win.reshape(n_shift, math.prod(plan.subarray)).T


def signal_subspace(m: np.ndarray, l: int) -> tuple[np.ndarray, np.ndarray]:
    """First ``l`` left singular vectors and all singular values.

    Very tall matrices go through the eigendecomposition of the small Gram
    matrix ``m^H m``, which is much cheaper than a thin SVD.
    """
    if l < 1 or l > min(m.shape):
        raise ValueError(f"cannot extract rank {l} from a {m.shape} matrix")
    rows, cols = m.shape
    if rows < TALL_RATIO * cols:
        u, s, _ = np.linalg.svd(m, full_matrices=False)
        if s[l - 1] <= s[0] / COND_LIMIT:
            raise IllConditionedError("signal subspace is rank deficient")
        return u[:, :l], s
    w, v = np.linalg.eigh(m.conj().T @ m)
    w, v = w[::-1], v[:, ::-1]
    s = np.sqrt(np.maximum(w, 0.0))
    if s[l - 1] <= s[0] / COND_LIMIT:
        raise IllConditionedError("signal subspace is rank deficient")
    u = (m @ v[:, :l]) / s[:l]
    # one re-orthonormalization guards against Gram round-off
    u, _ = np.linalg.qr(u)
    return u, s


def _selection(subarray: tuple[int, ...], dim: int) -> tuple[np.ndarray, np.ndarray]:
    idx = np.arange(math.prod(subarray)).reshape(subarray)
    p = subarray[dim]
    first = np.take(idx, np.arange(p - 1), axis=dim).ravel()
    second = np.take(idx, np.arange(1, p), axis=dim).ravel()
    return first, second


def _shift_solve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    s = np.linalg.svd(a, compute_uv=False)
    if s[-1] <= s[0] / COND_LIMIT:
        raise IllConditionedError("shift-invariance system is rank deficient")
    return np.linalg.lstsq(a, b, rcond=None)[0]


def solve_shift_invariance(basis: np.ndarray, dim: int, subarray: tuple[int, ...]) -> np.ndarray:
    """Least-squares ``Psi`` with ``J1 U Psi = J2 U`` along ``dim``."""
    l = basis.shape[1]
    first, second = _selection(tuple(subarray), dim)
    if first.size < l:
        raise ValueError(f"dimension {dim} leaves {first.size} rows for rank {l}")
    return _shift_solve(basis[first], basis[second])


def _min_gap(w: np.ndarray) -> float:
    if w.size < 2:
        return np.inf
    diff = np.abs(w[:, None] - w[None, :])
    return float(diff[np.triu_indices(w.size, 1)].min())


def _convex_weights(gen, n_dims: int, n_draws: int) -> np.ndarray:
    beta = gen.random((n_draws, n_dims)) + 0.1
    return beta / beta.sum(axis=1, keepdims=True)


def joint_pair(psis: list[np.ndarray], rng=None, sigma: np.ndarray | None = None,
               max_retries: int = 8, gap_tol: float = 1e-8, candidates: int = 4) -> ModeSet:
    """Pair modes across dimensions through shared eigenvectors.

    A random convex combination of the ``Psi_d`` is diagonalized; its
    eigenvectors diagonalize every ``Psi_d``. Of ``candidates`` random
    combinations the one with the widest eigenvalue separation is used,
    since nearly coincident eigenvalues mix the eigenvectors under noise.
    With ``sigma`` (the singular values belonging to the basis the ``Psi_d``
    were computed from) the rows are ordered by estimated path energy.
    """
    gen = as_generator(rng)
    psis = [np.asarray(p, dtype=complex) for p in psis]
    l = psis[0].shape[0]
    for _ in range(max_retries):
        best = None
        for beta in _convex_weights(gen, len(psis), max(1, candidates)):
            w, t = np.linalg.eig(sum(b * p for b, p in zip(beta, psis)))
            gap = _min_gap(w) / max(1.0, float(np.abs(w).max()))
            if best is None or gap > best[0]:
                best = (gap, t)
        gap, t = best
        if gap < gap_tol:
            continue
        t_inv = np.linalg.inv(t)
        modes = np.stack([np.diag(t_inv @ p @ t) for p in psis], axis=1)
        energy = _mode_energy(t, t_inv, sigma) if sigma is not None else np.ones(l)
        order = np.argsort(-energy, kind="stable")
        return ModeSet(modes=modes[order], energy=energy[order])
    raise IllConditionedError("eigenvalues of the combined invariance matrix are clustered")


def _mode_energy(t: np.ndarray, t_inv: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    # |gain_l|^2 up to a common factor: row norm of T^-1 Sigma times column norm of T
    rows = np.linalg.norm(t_inv * sigma[..., None, :], axis=-1)
    cols = np.linalg.norm(t, axis=-2)
    return (rows * cols) ** 2


def esprit_2d(h_k: np.ndarray, l: int, rng=None) -> ModeSet:
    """Paired ``(a_tx, a_rx)`` modes of one ``M_tx x M_rx`` slice.

    No smoothing is needed: the column space of the slice is spanned by the
    tx steering vectors and its row space by the rx steering vectors.
    """
    m_tx, m_rx = h_k.shape
    if l > min(m_tx, m_rx) - 1:
        raise ValueError(f"rank {l} too large for a {m_tx}x{m_rx} slice")
    u, s, vh = np.linalg.svd(h_k)
    us = u[:, :l]
    w = (s[:l, None] * vh[:l]).T
    psi_tx = solve_shift_invariance(us, 0, (m_tx,))
    psi_rx = solve_shift_invariance(w, 0, (m_rx,)).T
    return joint_pair([psi_tx, psi_rx], rng=rng, sigma=s[:l])


def esprit_2d_batch(h: np.ndarray, l: int, rng=None, candidates: int = 4) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`esprit_2d` over the leading subcarrier axis.

    Returns ``(modes, energy)`` with shapes ``(K, L, 2)`` and ``(K, L)``.
    """
    gen = as_generator(rng)
    n_k, m_tx, m_rx = h.shape
    if l > min(m_tx, m_rx) - 1:
        raise ValueError(f"rank {l} too large for a {m_tx}x{m_rx} slice")
    u, s, vh = np.linalg.svd(h)
    us = u[:, :, :l]
    sig = s[:, :l]
    w = np.swapaxes(sig[:, :, None] * vh[:, :l, :], 1, 2)
    psi_tx = np.linalg.pinv(us[:, :-1]) @ us[:, 1:]
    psi_rx = np.swapaxes(np.linalg.pinv(w[:, :-1]) @ w[:, 1:], 1, 2)
    best_gap = np.full(n_k, -1.0)
    t = np.empty((n_k, l, l), dtype=complex)
    for beta in _convex_weights(gen, 2, candidates):
        ev, tc = np.linalg.eig(beta[0] * psi_tx + beta[1] * psi_rx)
        diff = np.abs(ev[:, :, None] - ev[:, None, :])
        iu = np.triu_indices(l, 1)
        gap = diff[:, iu[0], iu[1]].min(axis=1) / np.maximum(1.0, np.abs(ev).max(axis=1)) if l > 1 \
            else np.full(n_k, np.inf)
        better = gap > best_gap
        t[better], best_gap[better] = tc[better], gap[better]
    t_inv = np.linalg.inv(t)
    modes = np.stack(
        [np.einsum("kij,kjl,kli->ki", t_inv, p, t) for p in (psi_tx, psi_rx)], axis=-1
    )
    energy = _mode_energy(t, t_inv, sig)

    for k in np.flatnonzero(best_gap < 1e-8):
        ms = esprit_2d(h[k], l, rng=gen)
        modes[k], energy[k] = ms.modes, ms.energy

    order = np.argsort(-energy, axis=1, kind="stable")
    modes = np.take_along_axis(modes, order[:, :, None], axis=1)
    energy = np.take_along_axis(energy, order, axis=1)
    return modes, energy


def default_3d_plan(shape: tuple[int, int, int]) -> SmoothingPlan:
    """Antenna windows one element short of the aperture, half-length
    windows along subcarriers.

    The single antenna shift gives the smoothed matrix enough column
    diversity even when the delay modes are nearly equal (small K).
    """
    m_tx, m_rx, n_k = shape
    return SmoothingPlan((max(1, m_tx - 1), max(1, m_rx - 1), (n_k + 2) // 2))


def esprit_3d(h: np.ndarray, l: int, sys: SystemConfig, plan: SmoothingPlan | None = None,
              k_max: int | None = 64, rng=None) -> np.ndarray:
    """Narrowband 3D ESPRIT on a ``(K, M_tx, M_rx)`` tensor.

    The subcarrier axis is uniformly decimated to at most ``k_max`` samples.
    Returns an ``(L, 3)`` array of ``(phi_tx, phi_rx, tau)`` rows ordered by
    energy; angles use the ``k = 0`` scaling, delays are wrapped to
    ``[0, 1 / delta_f')``.
    """
    n_k = h.shape[0]
    step = 1 if k_max is None or n_k <= k_max else math.ceil(n_k / k_max)
    hd = h[::step]
    df = sys.delta_f_hz * step
    if hd.shape[0] < 2:
        raise UnderdeterminedError("delay needs at least two subcarriers")
    x = np.moveaxis(hd, 0, -1)
    plan = default_3d_plan(x.shape) if plan is None else plan
    plan.validate(x.shape, l)
    us, s = signal_subspace(smooth(x, plan), l)
    psis = [solve_shift_invariance(us, d, plan.subarray) for d in range(3)]
    ms = joint_pair(psis, rng=rng, sigma=s[:l])
    phi_tx = mode_to_normalized_angle(ms.modes[:, 0], 0, sys)
    phi_rx = mode_to_normalized_angle(ms.modes[:, 1], 0, sys)
    tau = np.mod(-np.angle(ms.modes[:, 2]) / (2 * np.pi * df), 1.0 / df)
    return np.column_stack([phi_tx, phi_rx, tau])


def mode_to_normalized_angle(a, k, sys: SystemConfig):
    """Invert ``a = exp(-j 2 pi (1 + k df / fc) phi)`` using the principal
    argument."""
    return -np.angle(a) * sys.fc_hz / (2 * np.pi * (sys.fc_hz + np.asarray(k) * sys.delta_f_hz))


def normalized_to_physical(phi, sys: SystemConfig, side: str):
    """``arcsin(phi * lambda / d)``; raises if the argument leaves [-1, 1]."""
    arg = np.asarray(phi, dtype=float) * sys.wavelength / sys.spacing(side)
    if np.any(np.abs(arg) > 1.0):
        raise ValueError("normalized angle maps outside [-1, 1]")
    out = np.arcsin(arg)
    return float(out) if out.ndim == 0 else out


def write_singular_values(path: str | Path, spectra: np.ndarray) -> None:
    """Dump per-subcarrier singular values (rows = subcarriers) to CSV."""
    spectra = np.atleast_2d(spectra)
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["k"] + [f"s{i}" for i in range(spectra.shape[1])])
        for k, row in enumerate(spectra):
            wr.writerow([k] + [f"{v:.9e}" for v in row])
