"""Effective channels, sum-rate forms, and the weighted-MSE machinery.

This is the numerical substrate shared by both optimizers. Rates are in
bits/s/Hz (log base 2); the weighted-MSE objective uses natural log.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import UserChannel

UNIT_MODULUS_TOL = 1e-12
HERMITIAN_TOL = 1e-8


def herm(a: np.ndarray) -> np.ndarray:
    return a.conj().T


def logdet2_id_plus(gram: np.ndarray) -> float:
    """log2 det(I + A) for Hermitian PSD A, via Cholesky.

    The argument is symmetrized first; an anti-Hermitian residual above
    HERMITIAN_TOL (relative) is an error rather than silently dropped.
    """
    a = np.asarray(gram)
    sym = 0.5 * (a + herm(a))
    resid = np.linalg.norm(a - sym)
    if resid > HERMITIAN_TOL * max(1.0, np.linalg.norm(sym)):
        raise ValueError("matrix is not Hermitian within tolerance")
    chol = np.linalg.cholesky(np.eye(sym.shape[0]) + sym)
    return float(2.0 * np.sum(np.log2(np.real(np.diag(chol)))))


def logdet_pd(a: np.ndarray) -> float:
    """Natural-log determinant of a Hermitian positive definite matrix."""
    sym = 0.5 * (a + herm(a))
    chol = np.linalg.cholesky(sym)  # LinAlgError if not PD
    return float(2.0 * np.sum(np.log(np.real(np.diag(chol)))))


@dataclass(frozen=True)
class PhaseProfile:
    """Per-user unit-modulus phase vectors; user k's beamformer is
    segment_k / sqrt(N_k), which has unit norm."""

    segments: tuple[np.ndarray, ...]

    def __post_init__(self):
        segs = tuple(np.asarray(s, dtype=complex) for s in self.segments)
        for s in segs:
            if s.ndim != 1 or s.size == 0:
                raise ValueError("each phase segment must be a nonempty vector")
            if np.max(np.abs(np.abs(s) - 1.0)) > UNIT_MODULUS_TOL:
                raise ValueError("phase entries must have unit modulus")
        object.__setattr__(self, "segments", segs)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(s.size for s in self.segments)

    @property
    def concat(self) -> np.ndarray:
        return np.concatenate(self.segments)

    def beamformer(self, k: int) -> np.ndarray:
        seg = self.segments[k]
        return seg / np.sqrt(seg.size)

    @classmethod
    def from_concat(cls, vec: np.ndarray, sizes) -> "PhaseProfile":
        splits = np.cumsum(sizes)[:-1]
        return cls(segments=tuple(np.split(np.asarray(vec, dtype=complex), splits)))

    @classmethod
    def random(cls, sizes, rng: np.random.Generator) -> "PhaseProfile":
        total = int(sum(sizes))
        vec = np.exp(1j * rng.uniform(0.0, 2.0 * np.pi, total))
        return cls.from_concat(vec, sizes)


@dataclass(frozen=True)
class BeamSelection:
    """Beam selection: a soft vector during optimization, a binary mask after
    rounding. The L x N selector has one 1 per row, so S S^H = I_L."""

    soft: np.ndarray
    mask: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "soft", np.asarray(self.soft, dtype=float))
        if self.mask is not None:
            object.__setattr__(self, "mask", np.asarray(self.mask, dtype=bool))
            if self.mask.shape != self.soft.shape:
                raise ValueError("mask and soft vector must have the same length")

    @classmethod
    def from_mask(cls, mask) -> "BeamSelection":
        mask = np.asarray(mask, dtype=bool)
        return cls(soft=mask.astype(float), mask=mask)

    @property
    def num_selected(self) -> int:
        if self.mask is None:
            raise ValueError("selection has not been rounded to a mask yet")
        return int(self.mask.sum())

    def matrix(self) -> np.ndarray:
        """The L x N binary selector; row l picks the l-th selected beam."""
        sel = np.flatnonzero(self.mask)
        out = np.zeros((sel.size, self.soft.size))
        out[np.arange(sel.size), sel] = 1.0
        return out


def selection_matrix_from_mask(mask) -> np.ndarray:
    return BeamSelection.from_mask(mask).matrix()


@dataclass(frozen=True)
class EffectiveChannel:
    """Stacked lens-side channels: column k of bar_h is
    sqrt(p_k) * U H_k w_k; stack holds the unscaled columns."""

    bar_h: np.ndarray
    stack: np.ndarray
    powers_mw: np.ndarray


def effective_channels(
    channels: tuple[UserChannel, ...],
    lens: np.ndarray,
    phases: PhaseProfile,
    powers_mw,
) -> EffectiveChannel:
    powers = np.asarray(powers_mw, dtype=float)
    k = len(channels)
    if len(phases.segments) != k or powers.shape != (k,):
        raise ValueError("channels, phases and powers must agree on the user count")
    n = lens.shape[0]
    if lens.shape != (n, n):
        raise ValueError("lens transform must be square")
    stack = np.empty((n, k), dtype=complex)
    for j, chan in enumerate(channels):
        if chan.matrix.shape != (n, phases.sizes[j]):
            raise ValueError(
                f"user {j}: channel is {chan.matrix.shape}, expected "
                f"({n}, {phases.sizes[j]})"
            )
        stack[:, j] = lens @ (chan.matrix @ phases.beamformer(j))
    bar_h = stack * np.sqrt(powers)[None, :]
    return EffectiveChannel(bar_h=bar_h, stack=stack, powers_mw=powers)


def sum_rate_selected(sel_matrix: np.ndarray, bar_h: np.ndarray, noise_mw: float) -> float:
    """Uplink sum rate of the selected beams: log2 det over the L x L Gram."""
    s = np.asarray(sel_matrix, dtype=float)
    gram_rows = s @ s.T
    if not np.allclose(gram_rows, np.eye(s.shape[0]), atol=1e-9):
        raise ValueError("selector rows must be orthonormal (one beam per RF chain)")
    picked = s @ bar_h
    return logdet2_id_plus(picked @ herm(picked) / noise_mw)


def sum_rate_masked(s: np.ndarray, bar_h: np.ndarray, noise_mw: float) -> float:
    """Sum rate with a (possibly fractional) diagonal mask, as the N x N
    determinant. Coincides with sum_rate_selected for binary masks."""
    masked = np.asarray(s, dtype=float)[:, None] * bar_h
    return logdet2_id_plus(masked @ herm(masked) / noise_mw)


def mse_matrix(u_h: np.ndarray, s: np.ndarray, bar_h: np.ndarray, noise_mw: float) -> np.ndarray:
    """Error covariance of the hypothetical linear receiver u_h on the masked
    effective channel; always Hermitian positive definite for noise > 0."""
    masked = np.asarray(s, dtype=float)[:, None] * bar_h
    k = bar_h.shape[1]
    x = herm(u_h) @ masked - np.eye(k)
    e = x @ herm(x) + noise_mw * (herm(u_h) @ u_h)
    return 0.5 * (e + herm(e))


def mmse_receiver(s: np.ndarray, bar_h: np.ndarray, noise_mw: float) -> np.ndarray:
    """The MSE-optimal linear receiver for the masked effective channel."""
    masked = np.asarray(s, dtype=float)[:, None] * bar_h
    a = masked @ herm(masked) + noise_mw * np.eye(bar_h.shape[0])
    return np.linalg.solve(a, masked)


def wmmse_objective(w_h: np.ndarray, e_h: np.ndarray) -> float:
    """tr(W E) - log det(W), natural log; requires W Hermitian PD."""
    trace = float(np.real(np.sum(w_h * e_h.T)))
    return trace - logdet_pd(w_h)


@dataclass
class WmmseState:
    """Receiver, weight, and error covariance of the hypothetical system."""

    receiver: np.ndarray
    weight: np.ndarray
    mse: np.ndarray


@dataclass
class SchemeResult:
    """What every design scheme returns: a selection, phases, and the rate
    they achieve (always re-evaluated through sum_rate_selected)."""

    selection: BeamSelection
    phases: PhaseProfile
    rate_bits: float
    converged: bool = True
    outer_iters: int = 0
    trace: tuple = field(default_factory=tuple)
