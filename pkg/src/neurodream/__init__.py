"""Model-based RL with spiking readouts on a simulated mixed-signal substrate."""

from .checkpoint import load_checkpoint, save_checkpoint
from .config import (
    ConfigError,
    apply_overrides,
    build_train_config,
    config_hash,
    load_config_file,
    parse_config_text,
    render_config,
)
from .encoding import (
    PopulationCodeConfig,
    SpikeTrain,
    count_events,
    encode_action,
    encode_state,
    rates_to_trains,
)
from .policy import (
    EligibilityAccumulator,
    EpisodeTrace,
    FilteredActivity,
    FrameRecord,
    NumericalError,
    PolicyReadout,
    accumulate_step,
    apply_policy_update,
    entropy,
    init_policy,
    policy_forward,
    sample_action,
)
from .pong import GameState, PongAction, PongEnv, PongPhysics, StepOutcome, advance, opponent_move
from .substrate import (
    CalibrationConfig,
    CalibrationError,
    CalibrationResult,
    Connectivity,
    NeuronParams,
    Substrate,
    SubstrateConfig,
    build_substrate,
    calibrate_efficacy,
    dump_substrate,
    integration_factor,
    read_substrate_dump,
    reference_run_window,
    run_window,
)
from .trainer import (
    MetricsWriter,
    RunMetrics,
    SeriesSummary,
    TrainConfig,
    aggregate_runs,
    aggregate_series,
    awake_game,
    dream_game,
    seed_streams,
    sliding_return,
    train_run,
)
from .worldmodel import (
    ModelPrediction,
    ModelReadout,
    dream_step,
    init_model,
    model_forward,
    model_update,
)

__version__ = "0.1.0"

__all__ = [
    "CalibrationConfig",
    "CalibrationError",
    "CalibrationResult",
    "ConfigError",
    "Connectivity",
    "EligibilityAccumulator",
    "EpisodeTrace",
    "FilteredActivity",
    "FrameRecord",
    "GameState",
    "MetricsWriter",
    "ModelPrediction",
    "ModelReadout",
    "NeuronParams",
    "NumericalError",
    "PolicyReadout",
    "PongAction",
    "PongEnv",
    "PongPhysics",
    "PopulationCodeConfig",
    "RunMetrics",
    "SeriesSummary",
    "SpikeTrain",
    "StepOutcome",
    "Substrate",
    "SubstrateConfig",
    "TrainConfig",
    "accumulate_step",
    "advance",
    "aggregate_runs",
    "aggregate_series",
    "apply_overrides",
    "apply_policy_update",
    "awake_game",
    "build_substrate",
    "build_train_config",
    "calibrate_efficacy",
    "config_hash",
    "count_events",
    "dream_game",
    "dream_step",
    "dump_substrate",
    "encode_action",
    "encode_state",
    "entropy",
    "init_model",
    "init_policy",
    "integration_factor",
    "load_checkpoint",
    "load_config_file",
    "model_forward",
    "model_update",
    "opponent_move",
    "parse_config_text",
    "policy_forward",
    "rates_to_trains",
    "read_substrate_dump",
    "reference_run_window",
    "render_config",
    "run_window",
    "sample_action",
    "save_checkpoint",
    "seed_streams",
    "sliding_return",
    "train_run",
]
