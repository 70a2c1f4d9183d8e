"""Federated optimization via stochastic successive convex approximation.

The package simulates server/client training rounds in which clients report
batch statistics, the server maintains recursively averaged convex quadratic
surrogates of the objective and constraints, and each round solves a small
convex subproblem in closed form (or by a log-barrier method). Both
sample-partitioned (horizontal) and feature-partitioned (vertical) data
placements are supported, next to plain SGD / momentum-SGD baselines, over an
in-process or a real socket transport speaking one byte-exact wire format.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    DecodeError,
    IngestionError,
    NumericError,
    ProtocolError,
    RoundAbortError,
    SolverError,
    SscaflError,
)
from .numerics import SeededRng, sample_minibatch
from .schedules import StepsizeSchedule, constant, power_decay, validate_pair
from .data import RawDataset, load_idx, partition_features, partition_samples, synth_dataset
from .surrogate import QuadraticSurrogate, SurrogateBank
from .solvers import solve_penalized_ball, solve_qcqp_barrier, solve_unconstrained
from .model import (
    AppSurrogateState,
    NnParams,
    SampleStats,
    accuracy,
    batch_stats,
    forward,
    init_params,
    loss,
    regularized_loss,
    solve_constrained_app,
    solve_unconstrained_app,
    stats_from_pre,
    update_app_surrogate,
)
from .wire import MessageKind, RoundMessage, decode_message, encode_message
from .federation import (
    ALGORITHMS,
    PartitionedDataset,
    RoundConfig,
    RoundMetrics,
    RunResult,
    Server,
    run_penalty_stages,
    run_session,
)
from .baselines import (
    SgdConfig,
    momentum_velocity_step,
    run_sgd_session,
    ssca_momentum_equivalence,
)

__all__ = [
    "__version__",
    "ConfigError",
    "DecodeError",
    "IngestionError",
    "NumericError",
    "ProtocolError",
    "RoundAbortError",
    "SolverError",
    "SscaflError",
    "SeededRng",
    "sample_minibatch",
    "StepsizeSchedule",
    "constant",
    "power_decay",
    "validate_pair",
    "RawDataset",
    "load_idx",
    "partition_features",
    "partition_samples",
    "synth_dataset",
    "QuadraticSurrogate",
    "SurrogateBank",
    "solve_penalized_ball",
    "solve_qcqp_barrier",
    "solve_unconstrained",
    "AppSurrogateState",
    "NnParams",
    "SampleStats",
    "accuracy",
    "batch_stats",
    "forward",
    "init_params",
    "loss",
    "regularized_loss",
    "solve_constrained_app",
    "solve_unconstrained_app",
    "stats_from_pre",
    "update_app_surrogate",
    "MessageKind",
    "RoundMessage",
    "decode_message",
    "encode_message",
    "ALGORITHMS",
    "PartitionedDataset",
    "RoundConfig",
    "RoundMetrics",
    "RunResult",
    "Server",
    "run_penalty_stages",
    "run_session",
    "SgdConfig",
    "momentum_velocity_step",
    "run_sgd_session",
    "ssca_momentum_equivalence",
]
