"""Slot-level simulator for cache-enabled opportunistic joint transmission.

Short timescale: minimum-power WMMSE precoding under per-user rate
constraints, per-cell or across cells.  Long timescale: projected
stochastic-subgradient control of the cached fraction of each media file.
The sim module couples both clocks; the cli module wraps experiments in a
command-line front end.
"""

__version__ = "0.1.0"

from .cache import (CacheControlVector, CacheSchedule, LcState,
                    comp_probability, generate_cache_schedule, lc_update,
                    noisy_subgradient, project_cache, q_min_of,
                    round_half_toward_zero, uniform_cache_vector)
from .channel import (ChannelState, Topology, build_topology, draw_channel,
                      slot_rng, unit_gain_topology)
from .config import (SystemConfig, apply_overrides, config_snapshot,
                     load_config, parse_config_text)
from .errors import (CachedMimoError, ConfigurationError,
                     InfeasibleChannelError, SolverError, UsageError)
from .precoder import (DualSolution, PrecoderSet, RateConstraint,
                       SolverParams, WmmseState, algorithm_sp,
                       algorithm_sp_batch, comp_initial_point, feasible_init,
                       mmse_receiver, mse_matrix, project_streams, solve_dual,
                       sum_power, user_rates)
from .sim import (BASELINES, RUN_SCHEMES, ExperimentResult, RequestProfile,
                  draw_urp, run_baseline, run_mixed_timescale)
from .streaming import (BackhaulMeter, PlaybackState, account_backhaul,
                        account_cache_update, backhaul_rate_formula,
                        step_playback)

__all__ = [
    "__version__",
    "BackhaulMeter", "BASELINES", "CacheControlVector", "CacheSchedule",
    "CachedMimoError", "ChannelState", "ConfigurationError", "DualSolution",
    "ExperimentResult", "InfeasibleChannelError", "LcState", "PlaybackState",
    "PrecoderSet", "RateConstraint", "RequestProfile", "RUN_SCHEMES",
    "SolverError", "SolverParams", "SystemConfig", "Topology", "UsageError",
    "WmmseState",
    "account_backhaul", "account_cache_update", "algorithm_sp",
    "algorithm_sp_batch", "apply_overrides", "backhaul_rate_formula",
    "build_topology", "comp_initial_point", "comp_probability",
    "config_snapshot", "draw_channel", "draw_urp", "feasible_init",
    "generate_cache_schedule", "lc_update", "load_config", "mmse_receiver",
    "mse_matrix", "noisy_subgradient", "parse_config_text", "project_cache",
    "project_streams", "q_min_of", "round_half_toward_zero", "run_baseline",
    "run_mixed_timescale", "slot_rng", "solve_dual", "step_playback",
    "sum_power", "uniform_cache_vector", "unit_gain_topology", "user_rates",
]
