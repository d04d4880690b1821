"""Multipath spatial channels, ULA steering, and the beamspace lens transform."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scenario import SystemConfig, UserGeometry


def centered_indices(count: int) -> np.ndarray:
    """Symmetric index set {-(T-1)/2, ..., (T-1)/2}; half-integers for even T."""
    return np.arange(count) - (count - 1) / 2.0


def steering(count: int, angle_rad: float) -> np.ndarray:
    """Array response of a T-element half-wavelength ULA at the given angle.

    Entry for index x is exp(-j*pi*x*sin(angle)); all entries unit modulus,
    squared norm T. Conjugating is equivalent to negating the angle.
    """
    if count < 1:
        raise ValueError("array needs at least one element")
    x = centered_indices(count)
    return np.exp(-1j * np.pi * x * np.sin(angle_rad))


def dft_lens(num_antennas: int) -> np.ndarray:
    """Unitary lens transform: row m is the normalized steering vector at
    the sine-spaced direction sin(psi_m) = 2m/N, m in the centered index set.

    Rows have constant modulus 1/sqrt(N); a plane wave arriving exactly on a
    lens direction focuses all its energy into the matching row.
    """
    if num_antennas < 1:
        raise ValueError("lens needs at least one antenna")
    idx = centered_indices(num_antennas)
    grid = np.outer(idx, idx)
    return np.exp(2j * np.pi * grid / num_antennas) / np.sqrt(num_antennas)


@dataclass(frozen=True)
class UserChannel:
    """One user's spatial channel with the path parameters that built it.

    matrix is N x N_k; the stored gains and angles reconstruct it exactly.
    """

    matrix: np.ndarray
    path_gains: np.ndarray
    aoa: np.ndarray
    aod: np.ndarray
    large_scale: float

    @property
    def bs_antennas(self) -> int:
        return self.matrix.shape[0]

    @property
    def ut_antennas(self) -> int:
        return self.matrix.shape[1]

    @property
    def num_paths(self) -> int:
        return self.path_gains.shape[0]

    def reconstruct(self) -> np.ndarray:
        return _assemble(
            self.path_gains, self.aoa, self.aod,
            self.bs_antennas, self.ut_antennas, self.large_scale,
        )


def _assemble(gains, aoa, aod, n_bs, n_ut, large_scale) -> np.ndarray:
    num_paths = len(gains)
    h = np.zeros((n_bs, n_ut), dtype=complex)
    for gain, phi, theta in zip(gains, aoa, aod):
        h += gain * np.outer(steering(n_bs, phi), steering(n_ut, theta).conj())
    return np.sqrt(large_scale / num_paths) * h


def sample_channel(
    cfg: SystemConfig,
    user_index: int,
    geometry: UserGeometry,
    rng: np.random.Generator,
) -> UserChannel:
    """Draw one user's multipath channel.

    Per-path gains are standard complex Gaussian (variance 1/2 per component),
    arrival and departure angles uniform on [0, 2*pi).
    """
    m = cfg.num_paths[user_index]
    gains = (rng.standard_normal(m) + 1j * rng.standard_normal(m)) / np.sqrt(2.0)
    aoa = rng.uniform(0.0, 2.0 * np.pi, m)
    aod = rng.uniform(0.0, 2.0 * np.pi, m)
    matrix = _assemble(
        gains, aoa, aod, cfg.bs_antennas, cfg.ut_antennas[user_index],
        geometry.large_scale_gain,
    )
    return UserChannel(
        matrix=matrix,
        path_gains=gains,
        aoa=aoa,
        aod=aod,
        large_scale=geometry.large_scale_gain,
    )


def sample_all_channels(
    cfg: SystemConfig,
    geometry: list[UserGeometry],
    rng: np.random.Generator,
) -> tuple[UserChannel, ...]:
    """All K user channels from one stream, in user order."""
    return tuple(
        sample_channel(cfg, k, geometry[k], rng) for k in range(cfg.num_users)
    )
