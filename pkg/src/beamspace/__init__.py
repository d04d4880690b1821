"""Joint beam selection and phase-only beamforming for lens-array mmWave
MU-MIMO uplinks: channel simulation, a penalty-based joint optimizer, a
low-complexity sequential optimizer, baselines, and a Monte Carlo harness."""

__version__ = "0.1.0"

from .scenario import (
    SystemConfig,
    UserGeometry,
    dbm_to_mw,
    path_loss,
    rng_stream,
    sample_geometry,
)
from .channel import UserChannel, dft_lens, sample_all_channels, sample_channel, steering
from .rate import (
    BeamSelection,
    EffectiveChannel,
    PhaseProfile,
    SchemeResult,
    WmmseState,
    effective_channels,
    mmse_receiver,
    mse_matrix,
    sum_rate_masked,
    sum_rate_selected,
    wmmse_objective,
)
from .pdd import MmSubproblem, PddOptions, PddState, UplinkProblem, run_pdd
from .so import (
    SelectionCandidate,
    baseline_ia_like,
    channel_gain,
    eigen_phase,
    exhaustive_beam_select,
    greedy_beam_select,
    run_exhaustive,
    run_so,
)
from .cli import ExperimentSpec, TrialResult, emit_results, run_experiment

__all__ = [
    "__version__",
    "SystemConfig", "UserGeometry", "dbm_to_mw", "path_loss", "rng_stream",
    "sample_geometry",
    "UserChannel", "dft_lens", "sample_all_channels", "sample_channel", "steering",
    "BeamSelection", "EffectiveChannel", "PhaseProfile", "SchemeResult",
    "WmmseState", "effective_channels", "mmse_receiver", "mse_matrix",
    "sum_rate_masked", "sum_rate_selected", "wmmse_objective",
    "MmSubproblem", "PddOptions", "PddState", "UplinkProblem", "run_pdd",
    "SelectionCandidate", "baseline_ia_like", "channel_gain", "eigen_phase",
    "exhaustive_beam_select", "greedy_beam_select", "run_exhaustive", "run_so",
    "ExperimentSpec", "TrialResult", "emit_results", "run_experiment",
]
