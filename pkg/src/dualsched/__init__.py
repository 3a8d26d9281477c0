"""Scheduling a sensor over a noiseless and a power-limited noisy channel."""
from .codec import ChannelParams, CodecParams, decode, encode, noisy_channel_mse
from .counterexamples import (ShiftConstruction, build_inward_shift, build_uniform_counterexample,
                              compare_costs)
from .dp import DpTable, policy_lookup, solve_dp
from .errors import (AsymmetricPolicy, ConfigMismatch, DualSchedError, GeometryViolation, NoBracket,
                     NonConvergence, ValidationError, ZeroMassInterval)
from .simulate import EpisodeConfig, SamplePath, monte_carlo_cost, run_episode, simulate_batch
from .sources import IntervalMoments, Laplace, NoiseModel, Tabulated, Uniform, interval_moments, sample
from .stage import (PolicyRegions, SoftSolution, StageCostParams, eval_region_cost, eval_threshold_cost,
                    solve_generic_thresholds, solve_laplace_thresholds, solve_soft, stage_costs)

__version__ = "0.1.0"
