import math
from dataclasses import replace

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from wideband_esprit.channel import SystemConfig, normalized_angle, synthesize
from wideband_esprit.errors import IllConditionedError, UnderdeterminedError
from wideband_esprit.esprit import (
    SmoothingPlan,
    esprit_2d,
    esprit_2d_batch,
    esprit_3d,
    joint_pair,
    mode_to_normalized_angle,
    normalized_to_physical,
    signal_subspace,
    smooth,
    solve_shift_invariance,
    write_singular_values,
)
from wideband_esprit.scene import PathGeometry

from conftest import steering


def _modes(phi):
    return np.exp(-2j * np.pi * np.asarray(phi))


def _slice(phi_tx, phi_rx, gains, m_tx=8, m_rx=8):
    return sum(g * np.outer(steering(m_tx, a), steering(m_rx, b)) for a, b, g in zip(phi_tx, phi_rx, gains))


def _match_rows(est, truth):
    # greedy nearest match, enough for well separated noiseless modes
    out = np.empty_like(truth)
    for row in est:
        out[np.argmin(np.abs(truth - row).sum(axis=1))] = row
    return out


PHI_TX = np.array([0.21, -0.13, 0.37])
PHI_RX = np.array([-0.31, 0.08, 0.19])
GAINS = np.array([1.0, 0.6 - 0.3j, 0.25j])


class TestSmooth:
    def test_hankel(self):
        x = np.arange(4.0)
        np.testing.assert_array_equal(smooth(x, SmoothingPlan((2,))), [[0, 1, 2], [1, 2, 3]])

    def test_single_harmonic_rank_one(self):
        x = steering(9, 0.17)
        for p in range(1, 10):
            s = np.linalg.svd(smooth(x, SmoothingPlan((p,))), compute_uv=False)
            assert np.all(s[1:] < 1e-12 * s[0])

    def test_three_harmonics_2d(self):
        x = _slice(PHI_TX, PHI_RX, GAINS)
        s = np.linalg.svd(smooth(x, SmoothingPlan((4, 4))), compute_uv=False)
        assert s[3] / s[2] < 1e-10

    def test_multilevel_index(self):
        x = np.arange(3 * 4).reshape(3, 4)
        m = smooth(x, SmoothingPlan((2, 3)))
        assert m.shape == (6, 4)
        # row (i1,i2) C order, column (j1,j2) C order
        assert m[1 * 3 + 2, 1 * 2 + 1] == x[1 + 1, 2 + 1]

    def test_infeasible(self):
        with pytest.raises(ValueError):
            smooth(np.zeros(4), SmoothingPlan((5,)))
        with pytest.raises(ValueError):
            SmoothingPlan((2, 2)).validate((4, 4), l=4)


class TestSubspace:
    def test_identity(self):
        u, s = signal_subspace(np.eye(3), 2)
        np.testing.assert_allclose(u.conj().T @ u, np.eye(2), atol=1e-14)
        np.testing.assert_allclose(s[:2], [1, 1])

    def test_rank_one(self, rng):
        a = rng.standard_normal(5) + 1j * rng.standard_normal(5)
        b = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        u, _ = signal_subspace(np.outer(a, b.conj()), 1)
        assert abs(abs(np.vdot(u[:, 0], a)) / np.linalg.norm(a) - 1.0) < 1e-12

    def test_default_slice_spans_tx_steering(self, sys_cfg, scene_paths):
        h0 = synthesize(scene_paths, sys_cfg)[0]
        u, _ = signal_subspace(h0, 3)
        a_tx = np.column_stack([steering(32, normalized_angle(p.theta_tx, sys_cfg, "tx")) for p in scene_paths])
        angles = scipy.linalg.subspace_angles(u, a_tx)
        assert angles.max() < 1e-8
        # projection residual of the slice columns
        resid = h0 - u @ (u.conj().T @ h0)
        assert np.linalg.norm(resid) < 1e-10 * np.linalg.norm(h0)

    def test_gram_path_matches_svd(self, rng):
        m = rng.standard_normal((400, 6)) + 1j * rng.standard_normal((400, 6))
        m[:, 3:] = m[:, :3] @ (rng.standard_normal((3, 3)) * 0.5) + 1e-3 * m[:, 3:]
        u, s = signal_subspace(m, 3)
        u_ref, s_ref, _ = np.linalg.svd(m, full_matrices=False)
        np.testing.assert_allclose(s, s_ref, rtol=1e-8)
        assert scipy.linalg.subspace_angles(u, u_ref[:, :3]).max() < 1e-8

    def test_bad_rank(self):
        with pytest.raises(ValueError):
            signal_subspace(np.eye(3), 4)


class TestShiftInvariance:
    def test_scalar(self):
        x = steering(6, 0.3)[:, None]
        psi = solve_shift_invariance(x / np.linalg.norm(x), 0, (6,))
        assert psi.shape == (1, 1)
        assert psi[0, 0] == pytest.approx(_modes(0.3), abs=1e-12)

    def test_three_harmonics(self):
        phi = np.array([-0.3, 0.05, 0.41])
        x = sum(g * steering(20, p) for p, g in zip(phi, [1.0, 0.7j, -0.4]))
        plan = SmoothingPlan((10,))
        u, _ = signal_subspace(smooth(x, plan), 3)
        ev = np.linalg.eigvals(solve_shift_invariance(u, 0, plan.subarray))
        np.testing.assert_allclose(np.sort_complex(ev), np.sort_complex(_modes(phi)), atol=1e-10)

    def test_identical_harmonics_degenerate(self):
        x = steering(10, 0.2) + 0.5 * steering(10, 0.2)
        m = smooth(x, SmoothingPlan((5,)))
        with pytest.raises(IllConditionedError):
            u, _ = signal_subspace(m, 2)
            solve_shift_invariance(u, 0, (5,))


class TestJointPair:
    def test_one_dimension_is_eig(self, rng):
        a = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
        ms = joint_pair([a], rng=rng)
        np.testing.assert_allclose(np.sort_complex(ms.modes[:, 0]), np.sort_complex(np.linalg.eigvals(a)),
                                   atol=1e-12)

    def test_shared_eigenvectors(self, rng):
        t = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
        d1, d2 = _modes([0.1, 0.2, 0.3]), _modes([-0.2, 0.4, 0.0])
        ti = np.linalg.inv(t)
        ms = joint_pair([t @ np.diag(d1) @ ti, t @ np.diag(d2) @ ti], rng=rng)
        got = _match_rows(ms.modes, np.column_stack([d1, d2]))
        np.testing.assert_allclose(got, np.column_stack([d1, d2]), atol=1e-12)

    def test_clustered_raises(self):
        with pytest.raises(IllConditionedError):
            joint_pair([np.eye(3), 2 * np.eye(3)], rng=0, max_retries=2)


class TestEsprit2d:
    def test_rank_one(self):
        ms = esprit_2d(_slice([0.2], [-0.1], [2.0]), 1, rng=0)
        assert ms.modes[0, 0] == pytest.approx(_modes(0.2), abs=1e-12)
        assert ms.modes[0, 1] == pytest.approx(_modes(-0.1), abs=1e-12)

    def test_noiseless_pairing_exact(self):
        ms = esprit_2d(_slice(PHI_TX, PHI_RX, GAINS), 3, rng=1)
        truth = np.column_stack([_modes(PHI_TX), _modes(PHI_RX)])
        np.testing.assert_allclose(ms.modes, truth, atol=1e-8)  # energy order equals gain order here
        assert np.all(np.diff(ms.energy) <= 0)

    def test_default_scene_every_k(self, sys_cfg, scene_paths):
        sys = replace(sys_cfg, num_subcarriers=64)
        h = synthesize(scene_paths, sys)
        k = np.arange(64)
        modes, _ = esprit_2d_batch(h, 3, rng=2)
        for side, col in (("tx", 0), ("rx", 1)):
            phi_true = np.array([normalized_angle(p.theta_tx if side == "tx" else p.theta_rx, sys, side)
                                 for p in scene_paths])
            est = mode_to_normalized_angle(modes[:, :, col], k[:, None], sys)
            err = np.abs(np.sort(est, axis=1) - np.sort(phi_true))
            assert err.max() < 1e-9

    def test_batch_matches_single(self, sys_cfg, scene_paths):
        h = synthesize(scene_paths, replace(sys_cfg, num_subcarriers=4))
        modes, energy = esprit_2d_batch(h, 3, rng=0)
        for k in range(4):
            ms = esprit_2d(h[k], 3, rng=k)
            np.testing.assert_allclose(modes[k], ms.modes, atol=1e-9)
            np.testing.assert_allclose(energy[k], ms.energy, rtol=1e-8)

    def test_scale_equivariance(self):
        h = _slice(PHI_TX, PHI_RX, GAINS)
        base = esprit_2d(h, 3, rng=4).modes
        for c in (3.7, -0.2j, 1e-6 * (1 + 1j), 1e4):
            np.testing.assert_allclose(esprit_2d(c * h, 3, rng=4).modes, base, atol=1e-12)

    def test_permutation_invariance(self):
        ref = esprit_2d(_slice(PHI_TX, PHI_RX, GAINS), 3, rng=5).modes
        for perm in ([2, 0, 1], [1, 2, 0], [2, 1, 0]):
            ms = esprit_2d(_slice(PHI_TX[perm], PHI_RX[perm], GAINS[perm]), 3, rng=5)
            np.testing.assert_allclose(_match_rows(ms.modes, ref), ref, atol=1e-10)

    def test_noise_perturbation_scales_with_sigma(self):
        h = _slice(PHI_TX, PHI_RX, GAINS, 16, 16)
        truth = np.column_stack([_modes(PHI_TX), _modes(PHI_RX)])
        gen = np.random.default_rng(8)
        rms = []
        for sigma in (1e-4, 1e-3):
            errs = []
            for _ in range(200):
                n = sigma * (gen.standard_normal(h.shape) + 1j * gen.standard_normal(h.shape)) / math.sqrt(2)
                ms = esprit_2d(h + n, 3, rng=gen)
                errs.append(np.abs(_match_rows(ms.modes, truth) - truth))
            rms.append(np.sqrt(np.mean(np.square(errs))))
        # first-order perturbation: the error grows linearly with sigma
        assert rms[1] / rms[0] == pytest.approx(10.0, rel=0.2)
        assert rms[1] < 0.05
        assert np.all(np.abs(np.abs(ms.modes) - 1) < 0.5)

    def test_rank_too_large(self):
        with pytest.raises(ValueError):
            esprit_2d(np.zeros((3, 3)), 3)


class TestEsprit3d:
    def _params(self, paths, sys):
        return np.array([[normalized_angle(p.theta_tx, sys, "tx"), normalized_angle(p.theta_rx, sys, "rx"), p.tau]
                         for p in paths])

    def test_narrowband_exact(self, sys_cfg, scene_paths):
        sys = replace(sys_cfg, m_tx=8, m_rx=8, num_subcarriers=32)
        h = synthesize(scene_paths, sys, narrowband=True)
        est = esprit_3d(h, 3, sys, rng=0)
        truth = self._params(scene_paths, sys)
        order = [int(np.argmin(np.abs(est[:, 0] - t))) for t in truth[:, 0]]
        np.testing.assert_allclose(est[order, :2], truth[:, :2], atol=1e-8)
        np.testing.assert_allclose(est[order, 2] * sys.delta_f_hz, truth[:, 2] * sys.delta_f_hz, atol=1e-8)

    def test_narrowband_agrees_with_2d(self, sys_cfg, scene_paths):
        sys = replace(sys_cfg, m_tx=8, m_rx=8, num_subcarriers=16)
        h = synthesize(scene_paths, sys, narrowband=True)
        est3 = esprit_3d(h, 3, sys, rng=0)[:, :2]
        ms = esprit_2d(h[5], 3, rng=0)
        est2 = np.column_stack([mode_to_normalized_angle(ms.modes[:, d], 0, sys) for d in range(2)])
        np.testing.assert_allclose(np.sort(est3, axis=0), np.sort(est2, axis=0), atol=1e-8)

    def test_squint_bias_grows_with_bandwidth(self, sys_cfg):
        th = math.radians(40.0)
        path = PathGeometry(True, th, th, 100e-9, 1.0, gain=1.0)
        errs = []
        for k in (8, 64, 512):
            sys = replace(sys_cfg, m_tx=16, m_rx=16, num_subcarriers=k)
            est = esprit_3d(synthesize([path], sys), 1, sys, rng=0)
            errs.append(abs(est[0, 1] - normalized_angle(th, sys, "rx")))
        assert errs[0] < errs[1] < errs[2]

    def test_single_subcarrier_unidentifiable(self, sys_cfg, scene_paths):
        sys = replace(sys_cfg, m_tx=8, m_rx=8, num_subcarriers=1)
        with pytest.raises(UnderdeterminedError):
            esprit_3d(synthesize(scene_paths[:1], sys), 1, sys)

    def test_decimation_keeps_delay(self, sys_cfg, scene_paths):
        sys = replace(sys_cfg, m_tx=6, m_rx=6, num_subcarriers=256)
        est = esprit_3d(synthesize(scene_paths, sys, narrowband=True), 3, sys, k_max=64, rng=1)
        truth = self._params(scene_paths, sys)
        assert np.sort(est[:, 2]) == pytest.approx(np.sort(truth[:, 2]), abs=1e-15)


class TestAngles:
    def test_quarter(self, sys_cfg):
        assert mode_to_normalized_angle(np.exp(-0.5j * np.pi), 0, sys_cfg) == pytest.approx(0.25, abs=1e-15)

    def test_unit_mode(self, sys_cfg):
        assert mode_to_normalized_angle(1.0 + 0j, 500, sys_cfg) == 0.0

    def test_squinted_inversion(self, sys_cfg):
        k = 1000
        a = np.exp(-2j * np.pi * (1 + k * 120e3 / 28e9) * 0.25)
        assert mode_to_normalized_angle(a, k, sys_cfg) == pytest.approx(0.25, abs=1e-12)

    def test_physical(self, sys_cfg):
        assert normalized_to_physical(0.0, sys_cfg, "rx") == 0.0
        assert normalized_to_physical(0.25, sys_cfg, "tx") == pytest.approx(math.pi / 6, abs=1e-14)
        with pytest.raises(ValueError):
            normalized_to_physical(0.6, sys_cfg, "rx")

    @settings(max_examples=200, deadline=None)
    @given(phi=st.floats(-0.5, 0.5), k=st.integers(0, 4095))
    def test_round_trip(self, phi, k):
        sys = SystemConfig()
        a = np.exp(-2j * np.pi * (1 + k * sys.delta_f_hz / sys.fc_hz) * phi)
        got = mode_to_normalized_angle(a, k, sys)
        # near the edge the squinted exponent passes pi and the principal argument wraps
        if abs(phi) * (1 + k * sys.delta_f_hz / sys.fc_hz) < 0.5 - 1e-12:
            assert got == pytest.approx(phi, abs=1e-12)
        else:
            assert abs(got) <= 0.5


def test_singular_value_dump(tmp_path):
    write_singular_values(tmp_path / "s.csv", np.array([[3.0, 1.0], [2.0, 0.5]]))
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "k,s0,s1"
    assert lines[2].startswith("1,2.0")
