import numpy as np
import pytest

from beamspace.channel import (
    centered_indices,
    dft_lens,
    sample_channel,
    steering,
)
from beamspace.scenario import SystemConfig, UserGeometry, rng_stream


class TestSteering:
    def test_boresight_is_all_ones(self):
        assert np.allclose(steering(4, 0.0), np.ones(4))

    def test_two_element_endfire(self):
        # indices {-1/2, +1/2} at sin = 1: entries exp(+j pi/2), exp(-j pi/2)
        vec = steering(2, np.pi / 2)
        assert np.allclose(vec, [1j, -1j], atol=1e-12)

    @pytest.mark.parametrize("count", [1, 2, 3, 8, 17])
    def test_squared_norm_equals_length(self, count, rng):
        for angle in rng.uniform(0, 2 * np.pi, 5):
            vec = steering(count, angle)
            assert np.abs(np.abs(vec) - 1.0).max() < 1e-14
            assert np.vdot(vec, vec).real == pytest.approx(count)

    def test_conjugate_symmetry_in_angle(self, rng):
        for angle in rng.uniform(-np.pi, np.pi, 8):
            assert np.allclose(steering(6, angle), steering(6, -angle).conj())

    def test_zero_length_rejected(self):
        with pytest.raises(ValueError):
            steering(0, 0.3)


class TestLens:
    def test_degenerate_single_antenna(self):
        assert np.allclose(dft_lens(1), np.array([[1.0]]))

    @pytest.mark.parametrize("n", [2, 3, 4, 8, 15, 64])
    def test_unitary(self, n):
        u = dft_lens(n)
        assert np.allclose(u @ u.conj().T, np.eye(n), atol=1e-12)

    def test_rows_have_constant_modulus(self):
        u = dft_lens(16)
        assert np.allclose(np.abs(u), 1.0 / 4.0, atol=1e-14)

    def test_norm_preserved(self, rng):
        u = dft_lens(32)
        for _ in range(5):
            x = rng.standard_normal(32) + 1j * rng.standard_normal(32)
            assert np.linalg.norm(u @ x) == pytest.approx(np.linalg.norm(x), rel=1e-12)

    def test_aligned_arrival_focuses_all_energy(self):
        n = 8
        u = dft_lens(n)
        for row, m in enumerate(centered_indices(n)):
            angle = np.arcsin(2.0 * m / n)
            y = np.abs(u @ steering(n, angle)) ** 2
            assert y[row] == pytest.approx(n, rel=1e-12)
            assert y.sum() == pytest.approx(n, rel=1e-12)


class TestSampleChannel:
    def make(self, n=16, n_k=4, m=4, gain=1.0, seed=0, stream=0):
        cfg = SystemConfig(bs_antennas=n, rf_chains=1, num_users=1,
                           ut_antennas=n_k, num_paths=m, seed=seed)
        geo = UserGeometry(distance_km=0.05, large_scale_gain=gain)
        return sample_channel(cfg, 0, geo, rng_stream(seed, stream, 1))

    def test_shapes_and_reconstruction(self):
        ch = self.make()
        assert ch.matrix.shape == (16, 4)
        assert ch.num_paths == 4
        rebuilt = ch.reconstruct()
        assert np.linalg.norm(rebuilt - ch.matrix) <= 1e-12 * np.linalg.norm(ch.matrix)

    def test_single_path_is_rank_one(self):
        ch = self.make(m=1)
        assert np.linalg.matrix_rank(ch.matrix, tol=1e-10) == 1

    def test_rank_bounded_by_paths(self):
        ch = self.make(n=16, n_k=8, m=3)
        assert np.linalg.matrix_rank(ch.matrix, tol=1e-10) <= 3

    def test_determinism(self):
        a = self.make(seed=9, stream=2)
        b = self.make(seed=9, stream=2)
        assert np.array_equal(a.matrix, b.matrix)

    def test_mean_frobenius_energy(self):
        # E ||H||_F^2 = gain * N * N_k, independent of the path count
        n, n_k = 16, 4
        cfg = SystemConfig(bs_antennas=n, rf_chains=1, num_users=1,
                           ut_antennas=n_k, num_paths=4, seed=1)
        geo = UserGeometry(distance_km=0.05, large_scale_gain=1.0)
        gen = rng_stream(1, 0, 1)
        total = 0.0
        draws = 10_000
        for _ in range(draws):
            ch = sample_channel(cfg, 0, geo, gen)
            total += np.linalg.norm(ch.matrix) ** 2
        assert total / draws == pytest.approx(n * n_k, rel=0.02)
