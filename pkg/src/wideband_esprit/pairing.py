"""Cross-subcarrier pairing by constrained K-means.

Each subcarrier contributes ``L`` auto-paired ``(phi_tx, phi_rx)`` points
whose path order is arbitrary. Clustering groups the points by path; a
repair step then guarantees that no cluster keeps two points from the same
subcarrier.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .channel import SystemConfig, as_generator
from .errors import PairingError
from .esprit import normalized_to_physical

DOMAIN_COLUMNS = {"both": (0, 1), "aod": (0,), "aoa": (1,)}
INITS = ("subcarrier", "uniform")


@dataclass(frozen=True)
class AngleMeasurements:
    """Flattened per-subcarrier angle pairs.

    ``y[n]`` is ``(phi_tx, phi_rx)``; ``subcarrier[n]`` and ``slot[n]`` record
    where it came from.
    """

    y: np.ndarray
    subcarrier: np.ndarray
    slot: np.ndarray

    @classmethod
    def from_grid(cls, phi: np.ndarray) -> "AngleMeasurements":
        """Build from a ``(K, L, 2)`` array of per-subcarrier outputs."""
        n_k, l, _ = phi.shape
        k_idx, slot = np.meshgrid(np.arange(n_k), np.arange(l), indexing="ij")
        return cls(y=phi.reshape(-1, 2).astype(float), subcarrier=k_idx.ravel(), slot=slot.ravel())

    def __len__(self) -> int:
        return len(self.y)


@dataclass(frozen=True)
class ClusterState:
    """``labels[n]`` is the cluster of measurement ``n`` or -1 if discarded."""

    means: np.ndarray
    labels: np.ndarray
    iterations: int
    converged: bool
    discarded: int = 0
    history: tuple[float, ...] = ()

    def objective(self, y: np.ndarray, wrap: bool = False) -> float:
        keep = self.labels >= 0
        diff = _diff(y[keep], self.means[self.labels[keep]], wrap)
        return float(np.sum(diff ** 2))


def _diff(a: np.ndarray, b: np.ndarray, wrap: bool) -> np.ndarray:
    d = a - b
    if wrap:
        d = (d + 0.5) % 1.0 - 0.5
    return d


def _dist2(y: np.ndarray, means: np.ndarray, wrap: bool) -> np.ndarray:
    return np.sum(_diff(y[:, None, :], means[None, :, :], wrap) ** 2, axis=-1)


def _cluster_means(y: np.ndarray, labels: np.ndarray, l: int, wrap: bool,
                   previous: np.ndarray | None = None) -> np.ndarray:
    means = np.empty((l, y.shape[1])) if previous is None else previous.copy()
    for j in range(l):
        members = y[labels == j]
        if len(members) == 0:
            continue
        if wrap:
            z = np.exp(2j * np.pi * members).mean(axis=0)
            means[j] = np.angle(z) / (2 * np.pi)
        else:
            means[j] = members.mean(axis=0)
    return means


def _initial_indices(ms: AngleMeasurements, l: int, gen: np.random.Generator, init: str) -> np.ndarray:
    if init == "uniform":
        return gen.choice(len(ms), size=l, replace=False)
    if init != "subcarrier":
        raise ValueError(f"init must be one of {INITS}, got {init!r}")
    counts = np.bincount(ms.subcarrier)
    full = np.flatnonzero(counts == l)
    if len(full) == 0:
        return gen.choice(len(ms), size=l, replace=False)
    return np.flatnonzero(ms.subcarrier == gen.choice(full))


def kmeans_pair(ms: AngleMeasurements, l: int, rng=None, max_iters: int = 100,
                domain: str = "both", wrap_aware: bool = False, init: str = "subcarrier") -> ClusterState:
    """Plain K-means with nearest-mean assignment and mean update.

    Initial means are ``l`` distinct measurements: by default the ``l``
    outputs of one randomly drawn subcarrier, which hold one measurement per
    path, or ``l`` measurements drawn uniformly (``init="uniform"``). A
    cluster that runs empty is re-seeded at the measurement lying farthest
    from its own mean.
    ``domain`` selects the feature columns used for clustering ('aod' and
    'aoa' cluster on one angle only); the returned means always span both
    angles.
    """
    gen = as_generator(rng)
    if len(ms) < l:
        raise ValueError(f"{len(ms)} measurements cannot form {l} clusters")
    cols = list(DOMAIN_COLUMNS[domain])
    feat = ms.y[:, cols]
    means = feat[_initial_indices(ms, l, gen, init)].copy()
    labels = np.full(len(ms), -1)
    converged = False
    updates = 0
    history = []
    for _ in range(max_iters + 1):
        d2 = _dist2(feat, means, wrap_aware)
        new = np.argmin(d2, axis=1)
        own = d2[np.arange(len(new)), new]
        counts = np.bincount(new, minlength=l)
        while np.any(counts == 0):
            j = int(np.flatnonzero(counts == 0)[0])
            # never strip a cluster down to nothing
            movable = counts[new] > 1
            far = int(np.argmax(np.where(movable, own, -1.0)))
            new[far] = j
            own[far] = 0.0
            counts = np.bincount(new, minlength=l)
        if np.array_equal(new, labels):
            converged = True
            break
        if updates == max_iters:
            break
        labels = new
        means = _cluster_means(feat, labels, l, wrap_aware, means)
        updates += 1
        history.append(float(np.sum(_diff(feat, means[labels], wrap_aware) ** 2)))
    full_means = _cluster_means(ms.y, labels, l, wrap_aware)
    return ClusterState(means=full_means, labels=labels, iterations=updates,
                        converged=converged, history=tuple(history))


def enforce_constraint(state: ClusterState, ms: AngleMeasurements, wrap_aware: bool = False) -> ClusterState:
    """Keep at most one measurement per (cluster, subcarrier): the one
    closest to the cluster mean. Means are recomputed afterwards."""
    labels = state.labels.copy()
    l = len(state.means)
    d2 = np.sum(_diff(ms.y, state.means[np.maximum(labels, 0)], wrap_aware) ** 2, axis=1)
    # sort by (cluster, subcarrier, distance) and keep the first of each group
    order = np.lexsort((d2, ms.subcarrier, labels))
    lab_s, sub_s = labels[order], ms.subcarrier[order]
    dup = np.zeros(len(order), dtype=bool)
    dup[1:] = (lab_s[1:] == lab_s[:-1]) & (sub_s[1:] == sub_s[:-1])
    dup &= lab_s >= 0
    labels[order[dup]] = -1
    counts = np.bincount(labels[labels >= 0], minlength=l)
    if np.any(counts == 0):
        raise PairingError(f"cluster(s) {np.flatnonzero(counts == 0).tolist()} empty after repair")
    means = _cluster_means(ms.y, labels, l, wrap_aware)
    return replace(state, means=means, labels=labels, discarded=int(np.sum(labels < 0)))


def pair_subcarriers(ms: AngleMeasurements, l: int, rng=None, restarts: int = 5,
                     max_iters: int = 100, domain: str = "both",
                     wrap_aware: bool = False, init: str = "subcarrier") -> ClusterState:
    """Best of ``restarts`` constrained K-means runs.

    Runs are scored by the unconstrained K-means objective at the repaired
    means, so a run cannot win by discarding measurements.
    """
    gen = as_generator(rng)
    best, best_cost = None, np.inf
    last_error = None
    for _ in range(max(1, restarts)):
        state = kmeans_pair(ms, l, rng=gen, max_iters=max_iters, domain=domain,
                            wrap_aware=wrap_aware, init=init)
        try:
            state = enforce_constraint(state, ms, wrap_aware)
        except PairingError as exc:
            last_error = exc
            continue
        cost = float(np.sum(np.min(_dist2(ms.y, state.means, wrap_aware), axis=1)))
        if cost < best_cost:
            best, best_cost = state, cost
    if best is None:
        raise last_error
    return best


def cluster_means_to_angles(state: ClusterState, sys: SystemConfig) -> tuple[np.ndarray, np.ndarray]:
    """Per-path normalized angles ``(L, 2)`` and physical angles ``(L, 2)``."""
    phi = np.asarray(state.means, dtype=float)
    theta = np.column_stack([
        normalized_to_physical(phi[:, 0], sys, "tx"),
        normalized_to_physical(phi[:, 1], sys, "rx"),
    ])
    return phi, theta
