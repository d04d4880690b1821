"""Scenario configuration, user geometry, and deterministic randomness.

Everything random downstream (geometry, channels, solver initialization) is a
pure function of (SystemConfig, stream key), so Monte Carlo trials reproduce
bit-exactly regardless of worker count.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Free-space reference offset: PL[dB] = 92.5 + 20 log10(f0/GHz) + 20 log10(d/km)
PATH_LOSS_OFFSET_DB = 92.5

# Users are resampled until at least this far from the BS; keeps the 1/d^2
# path-loss singularity out of sampled cells.
MIN_USER_DISTANCE_M = 1.0


def dbm_to_mw(value_dbm):
    """dBm to linear milliwatts. All solver math runs in mW."""
    return 10.0 ** (np.asarray(value_dbm, dtype=float) / 10.0)


def path_loss(carrier_ghz: float, distance_km: float) -> float:
    """Linear large-scale gain of the free-space model at (f0, d).

    Strictly decreasing in both arguments; 20 dB per decade of distance.
    """
    if carrier_ghz <= 0.0 or distance_km <= 0.0:
        raise ValueError("carrier frequency and distance must be positive")
    pl_db = (
        PATH_LOSS_OFFSET_DB
        + 20.0 * math.log10(carrier_ghz)
        + 20.0 * math.log10(distance_km)
    )
    return 10.0 ** (-pl_db / 10.0)


def rng_stream(seed: int, *key: int) -> np.random.Generator:
    """Independent, reproducible random stream for (seed, key).

    Philox is counter based, so streams with distinct keys never collide and
    results do not depend on how work is split across processes.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def _per_user(value, count: int, kind) -> tuple:
    if np.isscalar(value):
        return tuple(kind(value) for _ in range(count))
    return tuple(kind(v) for v in value)


@dataclass(frozen=True)
class SystemConfig:
    """Scenario scalars for one uplink cell.

    Powers are configured in dBm and converted to mW exactly once (the
    ``*_mw`` properties); everything downstream is linear.
    """

    bs_antennas: int = 64
    rf_chains: int = 8
    num_users: int = 8
    ut_antennas: int | tuple[int, ...] = 4
    num_paths: int | tuple[int, ...] = 4
    noise_power_dbm: float = -100.0
    max_power_dbm: float | tuple[float, ...] = 5.0
    carrier_ghz: float = 28.0
    cell_radius_m: float = 100.0
    seed: int = 0

    def __post_init__(self):
        k = int(self.num_users)
        object.__setattr__(self, "bs_antennas", int(self.bs_antennas))
        object.__setattr__(self, "rf_chains", int(self.rf_chains))
        object.__setattr__(self, "num_users", k)
        object.__setattr__(self, "ut_antennas", _per_user(self.ut_antennas, k, int))
        object.__setattr__(self, "num_paths", _per_user(self.num_paths, k, int))
        object.__setattr__(self, "max_power_dbm", _per_user(self.max_power_dbm, k, float))
        object.__setattr__(self, "noise_power_dbm", float(self.noise_power_dbm))
        object.__setattr__(self, "carrier_ghz", float(self.carrier_ghz))
        object.__setattr__(self, "cell_radius_m", float(self.cell_radius_m))
        object.__setattr__(self, "seed", int(self.seed))
        problems = self._validate()
        if problems:
            raise ValueError("invalid configuration: " + "; ".join(problems))

    def _validate(self) -> list[str]:
        problems = []
        if self.num_users < 1:
            problems.append("num_users must be >= 1")
        if not (self.num_users <= self.rf_chains <= self.bs_antennas):
            problems.append(
                f"need num_users <= rf_chains <= bs_antennas, got "
                f"K={self.num_users}, L={self.rf_chains}, N={self.bs_antennas}"
            )
        if len(self.ut_antennas) != self.num_users:
            problems.append("ut_antennas must list one count per user")
        if len(self.num_paths) != self.num_users:
            problems.append("num_paths must list one count per user")
        if len(self.max_power_dbm) != self.num_users:
            problems.append("max_power_dbm must list one value per user")
        if any(n < 1 for n in self.ut_antennas):
            problems.append("every ut_antennas entry must be >= 1")
        if any(m < 1 for m in self.num_paths):
            problems.append("every num_paths entry must be >= 1")
        if not all(math.isfinite(p) for p in self.max_power_dbm):
            problems.append("max_power_dbm entries must be finite")
        if not math.isfinite(self.noise_power_dbm):
            problems.append("noise_power_dbm must be finite")
        if self.carrier_ghz <= 0.0:
            problems.append("carrier_ghz must be positive")
        if self.cell_radius_m <= 0.0:
            problems.append("cell_radius_m must be positive")
        if not (0 <= self.seed < 2**64):
            problems.append("seed must fit an unsigned 64-bit integer")
        return problems

    @property
    def noise_mw(self) -> float:
        return float(dbm_to_mw(self.noise_power_dbm))

    @property
    def max_power_mw(self) -> np.ndarray:
        return dbm_to_mw(np.array(self.max_power_dbm))

    @property
    def total_ut_antennas(self) -> int:
        return int(sum(self.ut_antennas))


@dataclass(frozen=True)
class UserGeometry:
    """Distance and the large-scale gain it implies for one user."""

    distance_km: float
    large_scale_gain: float


# Edge normals of a regular hexagon with a vertex on the +x axis.
_HEX_NORMAL_ANGLES = (math.pi / 6.0, math.pi / 2.0, 5.0 * math.pi / 6.0)
_HEX_NORMALS = np.array(
    [[math.cos(a), math.sin(a)] for a in _HEX_NORMAL_ANGLES]
)


def in_hexagon(points: np.ndarray, circumradius: float) -> np.ndarray:
    """Boolean membership test for a regular hexagon centered at the origin."""
    pts = np.atleast_2d(points)
    proj = np.abs(pts @ _HEX_NORMALS.T)
    return proj.max(axis=1) <= circumradius * (math.sqrt(3.0) / 2.0)


def hexagon_points(
    rng: np.random.Generator,
    circumradius: float,
    count: int,
    min_radius: float = MIN_USER_DISTANCE_M,
) -> np.ndarray:
    """Uniform points in the hexagon, rejection-sampled from its circumcircle.

    Points closer than ``min_radius`` to the center are rejected as well.
    """
    out = np.empty((count, 2))
    filled = 0
    while filled < count:
        batch = max(count - filled, 64)
        radius = circumradius * np.sqrt(rng.random(batch))
        angle = 2.0 * math.pi * rng.random(batch)
        pts = np.column_stack((radius * np.cos(angle), radius * np.sin(angle)))
        keep = in_hexagon(pts, circumradius) & (radius >= min_radius)
        kept = pts[keep][: count - filled]
        out[filled : filled + kept.shape[0]] = kept
        filled += kept.shape[0]
    return out


def sample_geometry(cfg: SystemConfig, rng: np.random.Generator) -> list[UserGeometry]:
    """Drop the K users uniformly over the hexagonal cell."""
    pts = hexagon_points(rng, cfg.cell_radius_m, cfg.num_users)
    dist_km = np.hypot(pts[:, 0], pts[:, 1]) / 1000.0
    return [
        UserGeometry(distance_km=float(d), large_scale_gain=path_loss(cfg.carrier_ghz, float(d)))
        for d in dist_km
    ]
