"""Sequential optimizer, baseline schemes, and the exhaustive selection oracle.

The sequential scheme sets each user's phases from its channel Gram's
principal eigenvector, then greedily picks beams; no iteration between the
two stages.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .channel import UserChannel, dft_lens
from .rate import (
    BeamSelection,
    PhaseProfile,
    SchemeResult,
    effective_channels,
    herm,
    logdet2_id_plus,
    sum_rate_selected,
)
from .scenario import SystemConfig

EXHAUSTIVE_GUARD = 10**6


@dataclass(frozen=True)
class SelectionCandidate:
    """A feasible beam subset and the sum rate it achieves."""

    mask: np.ndarray
    rate_bits: float


def eigen_phase(h: np.ndarray) -> np.ndarray:
    """Unit-modulus phases of the principal eigenvector of H^H H.

    The eigenvector is rotated so its first nonzero entry is real positive,
    which fixes the arbitrary global phase; a zero channel falls back to the
    all-ones vector.
    """
    h = np.asarray(h, dtype=complex)
    n_ut = h.shape[1]
    if not np.any(np.abs(h) > 0.0):
        return np.ones(n_ut, dtype=complex)
    gram = herm(h) @ h
    gram = 0.5 * (gram + herm(gram))
    _, vecs = np.linalg.eigh(gram)
    vec = vecs[:, -1]
    pivot = np.flatnonzero(np.abs(vec) > 1e-12 * np.max(np.abs(vec)))[0]
    vec = vec * (vec[pivot].conj() / np.abs(vec[pivot]))
    return np.exp(1j * np.angle(vec))


def channel_gain(h: np.ndarray, phi: np.ndarray) -> float:
    """Effective gain (1/N_k) phi^H H^H H phi of a phase-only beamformer;
    equals the squared norm of the lens-side column because the lens is
    unitary."""
    v = h @ phi
    return float(np.real(v.conj() @ v)) / phi.size


def _gram_rate(gram: np.ndarray, noise_mw: float) -> float:
    return logdet2_id_plus(gram / noise_mw)


def greedy_beam_select(bar_h: np.ndarray, noise_mw: float, num_rf: int) -> SelectionCandidate:
    """Add one beam at a time, each time the one whose inclusion maximizes the
    sum rate; ties go to the lower beam index. Adding a beam never lowers the
    rate, so the build is monotone."""
    n, _ = bar_h.shape
    if num_rf > n:
        raise ValueError("cannot select more beams than exist")
    mask = np.zeros(n, dtype=bool)
    gram = np.zeros((bar_h.shape[1], bar_h.shape[1]), dtype=complex)
    best_rate = 0.0
    for _ in range(num_rf):
        best_idx = -1
        best_cand = -np.inf
        for cand in range(n):
            if mask[cand]:
                continue
            row = bar_h[cand]
            rate = _gram_rate(gram + np.outer(row.conj(), row), noise_mw)
            if rate > best_cand:
                best_idx, best_cand = cand, rate
        gram = gram + np.outer(bar_h[best_idx].conj(), bar_h[best_idx])
        mask[best_idx] = True
        best_rate = best_cand
    return SelectionCandidate(mask=mask, rate_bits=best_rate)


def exhaustive_beam_select(bar_h: np.ndarray, noise_mw: float, num_rf: int) -> SelectionCandidate:
    """Optimal beam subset by full enumeration; ties resolve to the
    lexicographically smallest subset. Guarded against combinatorial blowup."""
    n, _ = bar_h.shape
    if math.comb(n, num_rf) > EXHAUSTIVE_GUARD:
        raise ValueError(
            f"C({n},{num_rf}) exceeds {EXHAUSTIVE_GUARD} subsets; "
            "use greedy_beam_select instead"
        )
    grams = [np.outer(bar_h[i].conj(), bar_h[i]) for i in range(n)]
    best_rate = -1.0
    best: tuple[int, ...] = ()
    for subset in combinations(range(n), num_rf):
        gram = sum(grams[i] for i in subset)
        rate = _gram_rate(gram, noise_mw)
        if rate > best_rate:
            best_rate, best = rate, subset
    mask = np.zeros(n, dtype=bool)
    mask[list(best)] = True
    return SelectionCandidate(mask=mask, rate_bits=best_rate)


def _phase_profile(cfg: SystemConfig, channels) -> PhaseProfile:
    return PhaseProfile(segments=tuple(eigen_phase(ch.matrix) for ch in channels))


def _finish(cfg, channels, phases, mask) -> SchemeResult:
    lens = dft_lens(cfg.bs_antennas)
    eff = effective_channels(channels, lens, phases, cfg.max_power_mw)
    selection = BeamSelection.from_mask(mask)
    rate = sum_rate_selected(selection.matrix(), eff.bar_h, cfg.noise_mw)
    return SchemeResult(selection=selection, phases=phases, rate_bits=rate)


def run_so(cfg: SystemConfig, channels: tuple[UserChannel, ...]) -> SchemeResult:
    """Eigen-phases per user, then greedy beam selection. Deterministic."""
    phases = _phase_profile(cfg, channels)
    lens = dft_lens(cfg.bs_antennas)
    eff = effective_channels(channels, lens, phases, cfg.max_power_mw)
    cand = greedy_beam_select(eff.bar_h, cfg.noise_mw, cfg.rf_chains)
    return _finish(cfg, channels, phases, cand.mask)


def run_exhaustive(cfg: SystemConfig, channels: tuple[UserChannel, ...]) -> SchemeResult:
    """Eigen-phases per user, then the enumerated-optimal beam subset."""
    phases = _phase_profile(cfg, channels)
    lens = dft_lens(cfg.bs_antennas)
    eff = effective_channels(channels, lens, phases, cfg.max_power_mw)
    cand = exhaustive_beam_select(eff.bar_h, cfg.noise_mw, cfg.rf_chains)
    return _finish(cfg, channels, phases, cand.mask)


def baseline_ia_like(
    cfg: SystemConfig,
    channels: tuple[UserChannel, ...],
    rng: np.random.Generator,
) -> SchemeResult:
    """Baseline with random phase shifts and magnitude-driven selection: the
    beams with the largest effective-channel row energy win, ties to the
    lower index."""
    phases = PhaseProfile.random(tuple(ch.ut_antennas for ch in channels), rng)
    lens = dft_lens(cfg.bs_antennas)
    eff = effective_channels(channels, lens, phases, cfg.max_power_mw)
    energy = np.sum(np.abs(eff.bar_h) ** 2, axis=1)
    order = np.lexsort((np.arange(energy.size), -energy))
    mask = np.zeros(energy.size, dtype=bool)
    mask[order[: cfg.rf_chains]] = True
    return _finish(cfg, channels, phases, mask)
