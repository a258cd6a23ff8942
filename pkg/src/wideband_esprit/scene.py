"""Ground-truth multipath geometry for a 2D BS/UE scene.

Angles follow the ULA conventions used throughout the package:

* the BS array looks along +x; the departure angle ``theta_tx`` of a ray
  heading in direction ``(cos t, sin t)`` is ``t``;
* the UE array looks along -x; a wave arriving *from* direction
  ``(-cos t, sin t)`` (as seen from the UE) has arrival angle ``t``.

Both angles therefore live in (-pi/2, pi/2) and are computed with the plain
arctangent.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from typing import NamedTuple, Sequence

import numpy as np

from .errors import GeometryError

SPEED_OF_LIGHT = 299_792_458.0


class Position2D(NamedTuple):
    x: float
    y: float


def _pos(p) -> np.ndarray:
    arr = np.asarray(p, dtype=float)
    if arr.shape != (2,) or not np.all(np.isfinite(arr)):
        raise GeometryError(f"expected a finite 2D position, got {p!r}")
    return arr


@dataclass(frozen=True)
class PathGeometry:
    """One propagation path.

    ``tau`` includes the clock bias. ``length`` is the (signed) propagated
    distance, so ``tau - tau_b == length / c``. ``gain`` is the complex
    amplitude without the carrier phase term.
    """

    is_los: bool
    theta_tx: float
    theta_rx: float
    tau: float
    length: float
    gain: complex = 1.0 + 0.0j
    scatterer: Position2D | None = None
    travel_before_reflection: float | None = None
    reflection_loss_db: float = 0.0
    virtual: bool = False


@dataclass(frozen=True)
class SceneConfig:
    """BS/UE placement plus (AOD, AOA) pairs in degrees.

    The first entry of ``paths`` is the LOS path; its angles are recomputed
    from the terminal positions and the configured values are only checked.
    """

    p_bs: Position2D = Position2D(0.0, 40.0)
    p_ue: Position2D = Position2D(40.0, 0.0)
    clock_bias: float = 0.0
    paths: tuple[tuple[float, float], ...] = ((-45.0, 45.0), (-54.0, -62.0), (65.0, 40.0))
    reflection_loss_db: float = 3.0
    allow_virtual_scatterers: bool = True

    def __post_init__(self):
        if len(self.paths) < 2:
            raise ValueError("a scene needs at least 2 paths for localization")


def los_geometry(p_bs, p_ue, tau_b: float = 0.0) -> PathGeometry:
    bs, ue = _pos(p_bs), _pos(p_ue)
    dx, dy = ue - bs
    if math.hypot(dx, dy) == 0.0:
        raise GeometryError("BS and UE positions coincide")
    if dx <= 0.0:
        raise GeometryError("UE must lie in front of the BS array (x_UE > x_BS)")
    dist = float(np.linalg.norm(bs - ue))
    return PathGeometry(
        is_los=True,
        theta_tx=math.atan(dy / dx),
        theta_rx=math.atan(-dy / dx),
        tau=dist / SPEED_OF_LIGHT + tau_b,
        length=dist,
    )


def _ray_parameters(p_bs, p_ue, theta_tx: float, theta_rx: float) -> tuple[float, float]:
    """Distances ``(t, s)`` along the BS departure ray and UE arrival ray to
    their intersection. Either may be negative."""
    bs, ue = _pos(p_bs), _pos(p_ue)
    u = np.array([math.cos(theta_tx), math.sin(theta_tx)])
    w = np.array([-math.cos(theta_rx), math.sin(theta_rx)])
    mat = np.column_stack([u, -w])
    det = np.linalg.det(mat)
    if abs(det) < 1e-12:
        raise GeometryError("departure and arrival rays are parallel")
    t, s = np.linalg.solve(mat, ue - bs)
    return float(t), float(s)


def scatterer_from_angles(p_bs, p_ue, theta_tx: float, theta_rx: float) -> Position2D:
    """Intersect the BS departure ray with the UE arrival ray."""
    t, s = _ray_parameters(p_bs, p_ue, theta_tx, theta_rx)
    if t <= 0.0 or s <= 0.0:
        raise GeometryError(
            f"rays do not meet in front of both arrays (t={t:.3f} m, s={s:.3f} m)"
        )
    bs = _pos(p_bs)
    p = bs + t * np.array([math.cos(theta_tx), math.sin(theta_tx)])
    return Position2D(float(p[0]), float(p[1]))


def nlos_geometry(p_bs, p_ue, p_l, tau_b: float = 0.0, reflection_loss: float = 3.0) -> PathGeometry:
    bs, ue, sc = _pos(p_bs), _pos(p_ue), _pos(p_l)
    d_bs = float(np.linalg.norm(bs - sc))
    d_ue = float(np.linalg.norm(ue - sc))
    if d_bs == 0.0 or d_ue == 0.0:
        raise GeometryError("scatterer coincides with a terminal")
    if sc[0] <= bs[0] or sc[0] >= ue[0]:
        raise GeometryError("scatterer outside the valid half-plane of an array")
    theta_tx = math.atan((sc[1] - bs[1]) / (sc[0] - bs[0]))
    theta_rx = math.atan((sc[1] - ue[1]) / (ue[0] - sc[0]))
    return PathGeometry(
        is_los=False,
        theta_tx=theta_tx,
        theta_rx=theta_rx,
        tau=(d_bs + d_ue) / SPEED_OF_LIGHT + tau_b,
        length=d_bs + d_ue,
        scatterer=Position2D(float(sc[0]), float(sc[1])),
        travel_before_reflection=d_bs,
        reflection_loss_db=reflection_loss,
    )


def virtual_nlos_geometry(p_bs, p_ue, theta_tx: float, theta_rx: float,
                          tau_b: float = 0.0, reflection_loss: float = 3.0) -> PathGeometry:
    """NLOS path whose departure/arrival rays only meet when extended
    backwards.

    The path is described by signed ray distances: the pre-reflection
    distance may be negative and the delay is the signed sum, which keeps the
    BS -> scatterer -> UE vector identity (and hence the localization
    equations) exact.
    """
    t, s = _ray_parameters(p_bs, p_ue, theta_tx, theta_rx)
    if t + s <= 0.0:
        raise GeometryError("virtual path has non-positive length")
    bs = _pos(p_bs)
    p = bs + t * np.array([math.cos(theta_tx), math.sin(theta_tx)])
    return PathGeometry(
        is_los=False,
        theta_tx=theta_tx,
        theta_rx=theta_rx,
        tau=(t + s) / SPEED_OF_LIGHT + tau_b,
        length=t + s,
        scatterer=Position2D(float(p[0]), float(p[1])),
        travel_before_reflection=t,
        reflection_loss_db=reflection_loss,
        virtual=True,
    )


def path_gain(geom: PathGeometry, wavelength: float, rng: np.random.Generator | None = None) -> complex:
    """Free-space amplitude over the path length, less the reflection loss.

    With ``rng`` a uniform random phase is attached.
    """
    mag = wavelength / (4.0 * math.pi * abs(geom.length))
    if not geom.is_los:
        mag *= 10.0 ** (-geom.reflection_loss_db / 20.0)
    phase = 0.0 if rng is None else rng.uniform(0.0, 2.0 * math.pi)
    return complex(mag * np.exp(1j * phase))


def build_scene(scene: SceneConfig, wavelength: float) -> list[PathGeometry]:
    """Deterministic paths (real positive gains) for ``scene``."""
    los = los_geometry(scene.p_bs, scene.p_ue, scene.clock_bias)
    aod, aoa = scene.paths[0]
    if abs(math.radians(aod) - los.theta_tx) > 1e-3 or abs(math.radians(aoa) - los.theta_rx) > 1e-3:
        warnings.warn(
            f"first path ({aod}, {aoa}) deg is replaced by LOS geometry "
            f"({math.degrees(los.theta_tx):.3f}, {math.degrees(los.theta_rx):.3f}) deg",
            stacklevel=2,
        )
    paths = [replace(los, gain=path_gain(los, wavelength))]
    for aod, aoa in scene.paths[1:]:
        th_tx, th_rx = math.radians(aod), math.radians(aoa)
        try:
            p_l = scatterer_from_angles(scene.p_bs, scene.p_ue, th_tx, th_rx)
            geom = nlos_geometry(scene.p_bs, scene.p_ue, p_l, scene.clock_bias, scene.reflection_loss_db)
        except GeometryError:
            if not scene.allow_virtual_scatterers:
                raise
            geom = virtual_nlos_geometry(scene.p_bs, scene.p_ue, th_tx, th_rx,
                                         scene.clock_bias, scene.reflection_loss_db)
        paths.append(replace(geom, gain=path_gain(geom, wavelength)))
    return paths


def randomize_phases(paths: Sequence[PathGeometry], rng: np.random.Generator) -> list[PathGeometry]:
    """Per-trial copy of ``paths`` with fresh uniform gain phases."""
    out = []
    for p in paths:
        phase = rng.uniform(0.0, 2.0 * math.pi)
        out.append(replace(p, gain=complex(abs(p.gain) * np.exp(1j * phase))))
    return out
