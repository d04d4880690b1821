import numpy as np
import pytest

from beamspace.channel import UserChannel, dft_lens, steering
from beamspace.rate import (
    BeamSelection,
    PhaseProfile,
    effective_channels,
    herm,
    logdet2_id_plus,
    mmse_receiver,
    mse_matrix,
    selection_matrix_from_mask,
    sum_rate_masked,
    sum_rate_selected,
    wmmse_objective,
)
from conftest import logdet2_longdouble, random_stack


def make_user_channel(matrix, gain=1.0):
    matrix = np.asarray(matrix, dtype=complex)
    m = 1
    return UserChannel(
        matrix=matrix,
        path_gains=np.ones(m, dtype=complex),
        aoa=np.zeros(m),
        aod=np.zeros(m),
        large_scale=gain,
    )


class TestPhaseProfile:
    def test_rejects_non_unit_entries(self):
        with pytest.raises(ValueError):
            PhaseProfile(segments=(np.array([1.0, 0.5 + 0.5j]),))

    def test_beamformer_has_unit_norm(self, rng):
        prof = PhaseProfile.random((3, 5, 2), rng)
        for k in range(3):
            assert np.linalg.norm(prof.beamformer(k)) == pytest.approx(1.0, rel=1e-12)

    def test_concat_roundtrip(self, rng):
        prof = PhaseProfile.random((2, 4), rng)
        back = PhaseProfile.from_concat(prof.concat, prof.sizes)
        for a, b in zip(prof.segments, back.segments):
            assert np.array_equal(a, b)


class TestBeamSelection:
    def test_matrix_rows_are_orthonormal_selectors(self):
        sel = BeamSelection.from_mask([True, False, True, False, True])
        s = sel.matrix()
        assert s.shape == (3, 5)
        assert np.allclose(s @ s.T, np.eye(3))
        assert np.array_equal(s.argmax(axis=1), [0, 2, 4])

    def test_num_selected_requires_mask(self):
        with pytest.raises(ValueError):
            BeamSelection(soft=np.zeros(4)).num_selected


class TestEffectiveChannels:
    def test_zero_channel_gives_zero_column(self):
        n, n_k = 8, 3
        chans = (make_user_channel(np.zeros((n, n_k))),)
        phases = PhaseProfile(segments=(np.ones(n_k, dtype=complex),))
        eff = effective_channels(chans, dft_lens(n), phases, [2.0])
        assert np.allclose(eff.bar_h, 0.0)

    def test_power_scaling_is_sqrt(self, rng):
        n, n_k = 8, 3
        h = random_stack(rng, n, n_k)
        chans = (make_user_channel(h),)
        phases = PhaseProfile.random((n_k,), rng)
        lens = dft_lens(n)
        one = effective_channels(chans, lens, phases, [1.0])
        four = effective_channels(chans, lens, phases, [4.0])
        assert np.linalg.norm(four.bar_h) == pytest.approx(2 * np.linalg.norm(one.bar_h), rel=1e-12)

    def test_single_path_matched_phase_gain(self):
        # H = sqrt(gain) * a_N(aoa) a_Nk(aod)^H; matched phases give
        # column energy p * gain * N * N_k
        n, n_k, p, gain = 16, 4, 2.5, 0.7
        aoa, aod = 0.8, -1.1
        h = np.sqrt(gain) * np.outer(steering(n, aoa), steering(n_k, aod).conj())
        matched = steering(n_k, aod)
        eff = effective_channels(
            (make_user_channel(h),), dft_lens(n),
            PhaseProfile(segments=(matched,)), [p],
        )
        energy = np.linalg.norm(eff.bar_h[:, 0]) ** 2
        assert energy == pytest.approx(p * gain * n * n_k, rel=1e-10)

    def test_dimension_mismatch_rejected(self, rng):
        chans = (make_user_channel(random_stack(rng, 8, 3)),)
        phases = PhaseProfile.random((4,), rng)  # wrong segment size
        with pytest.raises(ValueError):
            effective_channels(chans, dft_lens(8), phases, [1.0])


class TestSumRates:
    def test_zero_channel_zero_rate(self):
        s = selection_matrix_from_mask([True, True, False, False])
        assert sum_rate_selected(s, np.zeros((4, 2), dtype=complex), 1e-3) == 0.0
        assert sum_rate_masked(np.zeros(4), np.zeros((4, 2), dtype=complex), 1e-3) == 0.0

    def test_full_selection_equals_identity_selector(self, rng):
        bar_h = random_stack(rng, 6, 3)
        noise = 0.37
        full = sum_rate_selected(np.eye(6), bar_h, noise)
        ones = sum_rate_masked(np.ones(6), bar_h, noise)
        assert full == pytest.approx(ones, abs=1e-9)

    def test_against_longdouble_elimination_oracle(self, rng):
        n, length, k, noise = 8, 3, 2, 0.05
        for _ in range(20):
            bar_h = random_stack(rng, n, k, scale=2.0)
            mask = np.zeros(n, dtype=bool)
            mask[rng.choice(n, size=length, replace=False)] = True
            s = selection_matrix_from_mask(mask)
            picked = s @ bar_h
            oracle = logdet2_longdouble(np.eye(length) + picked @ herm(picked) / noise)
            assert sum_rate_selected(s, bar_h, noise) == pytest.approx(oracle, abs=1e-9)

    def test_masked_equals_selected_for_binary_masks(self, rng):
        for _ in range(50):
            n = int(rng.integers(4, 17))
            k = int(rng.integers(1, 5))
            length = int(rng.integers(1, n + 1))
            bar_h = random_stack(rng, n, k, scale=3.0)
            mask = np.zeros(n, dtype=bool)
            mask[rng.choice(n, size=length, replace=False)] = True
            noise = float(10 ** rng.uniform(-3, 0))
            r_sel = sum_rate_selected(selection_matrix_from_mask(mask), bar_h, noise)
            r_mask = sum_rate_masked(mask.astype(float), bar_h, noise)
            assert abs(r_sel - r_mask) <= 1e-9

    def test_user_permutation_invariance(self, rng):
        bar_h = random_stack(rng, 8, 4)
        s = rng.uniform(0, 1, 8)
        perm = rng.permutation(4)
        assert sum_rate_masked(s, bar_h, 0.1) == pytest.approx(
            sum_rate_masked(s, bar_h[:, perm], 0.1), rel=1e-12
        )

    def test_power_monotonicity_by_finite_differences(self, rng):
        # central differences of a monotone rate are nonnegative up to rounding
        n, k, noise = 8, 3, 0.2
        for _ in range(20):
            stack = random_stack(rng, n, k)
            mask = np.zeros(n, dtype=bool)
            mask[rng.choice(n, size=4, replace=False)] = True
            sel = selection_matrix_from_mask(mask)
            powers = rng.uniform(0.5, 2.0, k)
            delta = 1e-3
            for j in range(k):
                up, down = powers.copy(), powers.copy()
                up[j] += delta
                down[j] -= delta
                diff = (
                    sum_rate_selected(sel, stack * np.sqrt(up), noise)
                    - sum_rate_selected(sel, stack * np.sqrt(down), noise)
                ) / (2 * delta)
                assert diff >= -1e-10

    def test_nonorthonormal_selector_rejected(self, rng):
        bar_h = random_stack(rng, 4, 2)
        bad = np.array([[1.0, 0, 0, 0], [1.0, 0, 0, 0]])
        with pytest.raises(ValueError):
            sum_rate_selected(bad, bar_h, 0.1)

    def test_non_hermitian_input_rejected(self):
        with pytest.raises(ValueError):
            logdet2_id_plus(np.array([[1.0, 2.0], [0.0, 1.0]]))


class TestMse:
    def test_zero_receiver_gives_identity(self, rng):
        bar_h = random_stack(rng, 6, 3)
        e = mse_matrix(np.zeros((6, 3), dtype=complex), np.ones(6), bar_h, 0.1)
        assert np.allclose(e, np.eye(3))

    def test_mmse_receiver_reaches_rate(self, rng):
        for _ in range(20):
            n, k = 10, 3
            bar_h = random_stack(rng, n, k, scale=2.0)
            s = rng.uniform(0, 1, n)
            noise = float(10 ** rng.uniform(-3, -1))
            u = mmse_receiver(s, bar_h, noise)
            e = mse_matrix(u, s, bar_h, noise)
            rate_from_mse = -np.linalg.slogdet(e)[1] / np.log(2.0)
            assert rate_from_mse == pytest.approx(sum_rate_masked(s, bar_h, noise), abs=1e-8)

    def test_zero_forcing_limit(self, rng):
        # square invertible masked channel, receiver = inverse: error -> noise only
        k = 4
        bar_h = random_stack(rng, k, k) + 2 * np.eye(k)
        u = herm(np.linalg.inv(bar_h))
        e = mse_matrix(u, np.ones(k), bar_h, 1e-12)
        assert np.linalg.norm(e) < 1e-9


class TestWmmseObjective:
    def test_identity_weight_reduces_to_trace(self, rng):
        from conftest import random_psd

        e = random_psd(rng, 4) + 0.1 * np.eye(4)
        assert wmmse_objective(np.eye(4), e) == pytest.approx(np.trace(e).real)

    def test_inverse_weight_identity(self, rng):
        from conftest import random_psd

        e = random_psd(rng, 4) + 0.1 * np.eye(4)
        w = np.linalg.inv(e)
        val = wmmse_objective(w, e)
        sign, logdet = np.linalg.slogdet(e)
        assert val == pytest.approx(4 + logdet, rel=1e-10)

    def test_eigendecomposition_oracle(self, rng):
        from conftest import random_psd

        for _ in range(10):
            w = random_psd(rng, 5) + 0.2 * np.eye(5)
            e = random_psd(rng, 5) + 0.2 * np.eye(5)
            trace = sum(
                (w[i, j] * e[j, i]).real for i in range(5) for j in range(5)
            )
            eig = np.linalg.eigvalsh(0.5 * (w + herm(w)))
            oracle = trace - np.sum(np.log(eig))
            assert wmmse_objective(w, e) == pytest.approx(oracle, rel=1e-10)

    def test_singular_weight_rejected(self):
        with pytest.raises(np.linalg.LinAlgError):
            wmmse_objective(np.zeros((3, 3)), np.eye(3))
