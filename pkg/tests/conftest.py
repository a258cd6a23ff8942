import math

import numpy as np
import pytest

from wideband_esprit.channel import SystemConfig
from wideband_esprit.locate import PathEstimate
from wideband_esprit.scene import SPEED_OF_LIGHT, SceneConfig, build_scene, los_geometry, nlos_geometry

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def sys_cfg():
    return SystemConfig()


@pytest.fixture
def scene_paths(sys_cfg):
    return build_scene(SceneConfig(), sys_cfg.wavelength)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def acceptance_line():
    """Record one PASS/FAIL summary line for the acceptance report."""

    def record(number: int, ok: bool, detail: str) -> None:
        ACCEPTANCE_LINES.append(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split(":")[0].split()[1])):
        terminalreporter.write_line(line)


def steering(m: int, phi: float) -> np.ndarray:
    return np.exp(-2j * math.pi * np.arange(m) * phi)


def light_distance(tau: float) -> float:
    return tau * SPEED_OF_LIGHT


def random_scene(gen, l):
    """Random UE and scatterers between the terminals, BS facing +x and UE facing -x."""
    bs = np.array([0.0, gen.uniform(-50, 50)])
    ue = np.array([gen.uniform(10, 100), gen.uniform(-50, 50)])
    tau_b = gen.uniform(-20e-9, 20e-9)
    paths = [los_geometry(bs, ue, tau_b)]
    d = []
    while len(paths) < l:
        p = (gen.uniform(0.5, ue[0] - 0.5), gen.uniform(-80, 80))
        g = nlos_geometry(bs, ue, p, tau_b)
        paths.append(g)
        d.append(g.travel_before_reflection)
    est = [PathEstimate(g.theta_tx, g.theta_rx, g.tau) for g in paths]
    return bs, ue, tau_b, np.array(d), est
