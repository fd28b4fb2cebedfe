"""Linear world-model readouts over spike counts and the dream-phase transition."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoding import PopulationCodeConfig, encode_action, encode_state, rates_to_trains
from .policy import FilteredActivity, NumericalError, _as_activity
from .pong import GameState, PongAction
from .substrate import Substrate, run_window

N_STATE_VARS = 4


@dataclass
class ModelReadout:
    """State-change and reward readouts, zero-initialized, trained by plain SGD.

    The loss coefficients c_state and c_reward are documentation only: the
    per-term learning rates already absorb them.
    """

    state_weights: np.ndarray
    reward_weights: np.ndarray
    eta_state: float = 2e-3
    eta_reward: float = 4e-4
    c_state: float = 1.0
    c_reward: float = 1.0

    def __post_init__(self) -> None:
        self.state_weights = np.array(self.state_weights, dtype=np.float64)
        self.reward_weights = np.array(self.reward_weights, dtype=np.float64)
        if self.state_weights.ndim != 2 or self.state_weights.shape[0] != N_STATE_VARS:
            raise ValueError(f"state_weights must be {N_STATE_VARS} x n")
        if self.reward_weights.shape != (self.state_weights.shape[1],):
            raise ValueError("reward_weights length must match state_weights columns")
        if not (self.eta_state > 0.0 and self.eta_reward > 0.0):
            raise ValueError("learning rates must be > 0")

    @property
    def n_hidden(self) -> int:
        return self.state_weights.shape[1]


def init_model(n_hidden: int, eta_state: float = 2e-3, eta_reward: float = 4e-4) -> ModelReadout:
    """Both readouts start at exactly zero, making the first dreams inert."""
    return ModelReadout(
        np.zeros((N_STATE_VARS, n_hidden)), np.zeros(n_hidden), eta_state, eta_reward
    )


@dataclass(frozen=True)
class ModelPrediction:
    delta_state: np.ndarray
    reward: float


def model_forward(sbar, readout: ModelReadout) -> ModelPrediction:
    """Linear readouts: predicted state change (4-vector) and reward (scalar)."""
    s = _as_activity(sbar, readout.n_hidden)
    return ModelPrediction(readout.state_weights @ s, float(readout.reward_weights @ s))


def model_update(
    readout: ModelReadout,
    sbar,
    predicted: ModelPrediction,
    target_delta: np.ndarray,
    target_reward: float,
) -> None:
    """Per-sample gradient step pulling both predictions toward their targets."""
    s = _as_activity(sbar, readout.n_hidden)
    target_delta = np.asarray(target_delta, dtype=np.float64)
    if target_delta.shape != (N_STATE_VARS,):
        raise ValueError(f"target_delta must have length {N_STATE_VARS}")
    if not (np.all(np.isfinite(target_delta)) and np.isfinite(target_reward)):
        raise NumericalError("non-finite world-model targets")
    err_state = target_delta - predicted.delta_state
    err_reward = float(target_reward) - predicted.reward
    readout.state_weights += readout.eta_state * err_state[:, None] * s[None, :]
    readout.reward_weights += readout.eta_reward * err_reward * s


def dream_step(
    current: GameState,
    action: PongAction,
    substrate: Substrate,
    readout: ModelReadout,
    encoding_cfg: PopulationCodeConfig,
    rng: np.random.Generator,
    activity: FilteredActivity | None = None,
    clamp_reward: bool = False,
    absolute_targets: bool = False,
) -> tuple[GameState, float]:
    """One imagined frame: encode (state, action), run a window, apply the readout.

    The next state is current + predicted change, clamped to [0, 1] per
    variable (or the prediction itself in absolute-target mode). The reward
    passes through raw unless clamp_reward asks for a [-1, 1] clip.
    """
    rates = np.concatenate(
        [encode_state(current, encoding_cfg), encode_action(action, encoding_cfg)]
    )
    trains = rates_to_trains(rates, encoding_cfg, rng)
    counts = run_window(substrate, trains, encoding_cfg.window_us)
    sbar = activity.update(counts) if activity is not None else counts.astype(np.float64)
    pred = model_forward(sbar, readout)
    if not (np.all(np.isfinite(pred.delta_state)) and np.isfinite(pred.reward)):
        raise NumericalError("non-finite world-model prediction during dreaming")
    values = pred.delta_state if absolute_targets else current.as_array() + pred.delta_state
    clipped = np.clip(values, 0.0, 1.0)
    next_state = GameState(*(float(x) for x in clipped))
    reward = float(np.clip(pred.reward, -1.0, 1.0)) if clamp_reward else float(pred.reward)
    return next_state, reward
