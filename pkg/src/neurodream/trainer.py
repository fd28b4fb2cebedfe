"""Awake/dreaming training orchestration, metrics collection, and aggregation."""

from __future__ import annotations

import csv
import math
import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .encoding import PopulationCodeConfig, encode_action, encode_state, rates_to_trains
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
from .pong import PongEnv, PongPhysics
from .substrate import (
    CalibrationConfig,
    CalibrationResult,
    NeuronParams,
    Substrate,
    SubstrateConfig,
    build_substrate,
    calibrate_efficacy,
    run_window,
)
from .worldmodel import ModelReadout, dream_step, init_model, model_forward, model_update

MODES = ("baseline", "dreaming")
ETA_PI_BASELINE = 4e-3
ETA_PI_DREAMING = 2e-3
VIRTUAL_MS_BASELINE = 18.4  # per-frame virtual time without the model network
VIRTUAL_MS_DREAMING = 36.8  # per-frame virtual time with the model network
SLIDING_WINDOW = 50

CSV_SCHEMA_ID = "neurodream-metrics-v1"
CSV_COLUMNS = (
    "run_id",
    "game",
    "return",
    "sliding_return",
    "entropy",
    "model_state_loss",
    "model_reward_loss",
)


@dataclass(frozen=True)
class TrainConfig:
    """Everything one training campaign needs; defaults follow the reference protocol."""

    mode: str = "dreaming"
    games: int = 2000
    runs: int = 10
    master_seed: int = 1
    t_awake: int = 100
    t_dream: int = 50
    gamma: float = 0.998
    eta_pi: float | None = None  # None resolves by mode: 4e-3 baseline, 2e-3 dreaming
    eta_state: float = 2e-3
    eta_reward: float = 4e-4
    sbar_alpha: float = 0.0
    clamp_dream_reward: bool = False
    absolute_model_targets: bool = False
    point_terminal: bool = False
    n_agent: int = 510
    n_model: int = 510
    mismatch_cv: float = 0.2
    sim_dt_us: float = 100.0
    reset_each_window: bool = False
    fixed_efficacy: float | None = None  # set to skip calibration
    physics: PongPhysics = field(default_factory=PongPhysics)
    encoding: PopulationCodeConfig = field(default_factory=PopulationCodeConfig)
    neuron: NeuronParams = field(default_factory=NeuronParams)
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if min(self.games, self.runs, self.t_awake, self.t_dream) < 1:
            raise ValueError("games, runs, t_awake, t_dream must all be >= 1")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must be in [0, 1]")
        if self.eta_pi is not None and not self.eta_pi > 0.0:
            raise ValueError("eta_pi must be > 0 or left unset")
        if self.fixed_efficacy is not None and not self.fixed_efficacy > 0.0:
            raise ValueError("fixed_efficacy must be > 0 or left unset")

    @property
    def resolved_eta_pi(self) -> float:
        if self.eta_pi is not None:
            return self.eta_pi
        return ETA_PI_DREAMING if self.mode == "dreaming" else ETA_PI_BASELINE

    @property
    def virtual_ms_per_frame(self) -> float:
        return VIRTUAL_MS_DREAMING if self.mode == "dreaming" else VIRTUAL_MS_BASELINE

    def substrate_config(self, variant: str) -> SubstrateConfig:
        return SubstrateConfig(
            variant=variant,
            n_neurons=self.n_agent if variant == "agent" else self.n_model,
            n_state_generators=self.encoding.n_state_generators,
            mismatch_cv=self.mismatch_cv,
            sim_dt_us=self.sim_dt_us,
            reset_each_window=self.reset_each_window,
            base_params=self.neuron,
        )


_STREAM_NAMES = (
    "env",
    "substrate_agent",
    "substrate_model",
    "policy_init",
    "actions",
    "encoding_agent",
    "encoding_model",
    "dream_start",
    "calibration_agent",
    "calibration_model",
)


def seed_streams(master_seed: int, run_index: int) -> dict[str, np.random.Generator]:
    """Named independent generators split from (master_seed, run_index).

    Each stream's identity depends only on the master seed, the run index,
    and its fixed position, so substrate draws match across modes and
    ablations that share a master seed.
    """
    root = np.random.SeedSequence(master_seed, spawn_key=(run_index,))
    children = root.spawn(len(_STREAM_NAMES))
    return {name: np.random.default_rng(ss) for name, ss in zip(_STREAM_NAMES, children)}


@dataclass
class RunMetrics:
    """Everything recorded for one training run, one entry per game in order."""

    mode: str
    run_index: int
    master_seed: int
    returns: np.ndarray
    entropies: np.ndarray
    model_state_loss: np.ndarray
    model_reward_loss: np.ndarray
    agent_calibration: CalibrationResult | None
    model_calibration: CalibrationResult | None
    awake_frames: int
    dream_frames: int
    policy_updates: int
    model_updates: int
    virtual_ms_per_frame: float
    wall_seconds: dict[str, float]

    @property
    def games(self) -> int:
        return self.returns.size

    @property
    def sliding(self) -> np.ndarray:
        if self.games < SLIDING_WINDOW:
            return np.full(self.games, np.nan)
        return sliding_return(self.returns, SLIDING_WINDOW)

    @property
    def virtual_total_ms(self) -> float:
        return (self.awake_frames + self.dream_frames) * self.virtual_ms_per_frame


def sliding_return(returns: np.ndarray, window: int = SLIDING_WINDOW) -> np.ndarray:
    """Trailing-window mean; entries before the first full window are NaN."""
    r = np.asarray(returns, dtype=np.float64)
    if r.ndim != 1:
        raise ValueError("returns must be a flat series")
    if window < 1:
        raise ValueError("window must be >= 1")
    if r.size < window:
        raise ValueError(f"need at least {window} games for a sliding mean")
    out = np.full(r.size, np.nan)
    out[window - 1 :] = np.convolve(r, np.ones(window) / window, mode="valid")
    return out


@dataclass(frozen=True)
class SeriesSummary:
    mean: np.ndarray
    std: np.ndarray
    p80: np.ndarray


def aggregate_series(stack: np.ndarray) -> SeriesSummary:
    """Across-runs mean, population std, and interpolated 80th percentile per index."""
    stack = np.asarray(stack, dtype=np.float64)
    if stack.ndim != 2:
        raise ValueError("expected a runs x games matrix")
    return SeriesSummary(
        mean=stack.mean(axis=0),
        std=stack.std(axis=0),
        p80=np.percentile(stack, 80, axis=0),
    )


def aggregate_runs(runs: list[RunMetrics]) -> dict[str, SeriesSummary]:
    """Cross-run statistics of returns, sliding returns, and entropy."""
    if len(runs) < 2:
        raise ValueError("need at least 2 runs to aggregate")
    games = runs[0].games
    if any(r.games != games for r in runs):
        raise ValueError("runs must have equal game counts")
    return {
        "return": aggregate_series(np.stack([r.returns for r in runs])),
        "sliding_return": aggregate_series(np.stack([r.sliding for r in runs])),
        "entropy": aggregate_series(np.stack([r.entropies for r in runs])),
    }


class MetricsWriter:
    """Streams one CSV row per game, flushed eagerly so crashes lose nothing."""

    def __init__(self, fh):
        self._fh = fh
        self._writer = csv.writer(fh, lineterminator="\n")
        self._tails: dict[int, deque] = {}
        fh.write(f"# {CSV_SCHEMA_ID}\n")
        self._writer.writerow(CSV_COLUMNS)
        fh.flush()

    @staticmethod
    def _fmt(value) -> str:
        if value is None:
            return ""
        value = float(value)
        if math.isnan(value):
            return ""
        return repr(value)

    def write_game(
        self,
        run_id: int,
        game: int,
        ret: float,
        ent: float,
        state_loss: float | None,
        reward_loss: float | None,
    ) -> None:
        tail = self._tails.setdefault(run_id, deque(maxlen=SLIDING_WINDOW))
        tail.append(ret)
        sliding = sum(tail) / SLIDING_WINDOW if len(tail) == SLIDING_WINDOW else None
        self._writer.writerow(
            [
                str(run_id),
                str(game),
                self._fmt(ret),
                self._fmt(sliding),
                self._fmt(ent),
                self._fmt(state_loss),
                self._fmt(reward_loss),
            ]
        )
        self._fh.flush()


def awake_game(
    env: PongEnv,
    game_seed: int,
    agent_sub: Substrate,
    policy: PolicyReadout,
    acc: EligibilityAccumulator,
    agent_activity: FilteredActivity,
    cfg: TrainConfig,
    rngs: dict[str, np.random.Generator],
    model_sub: Substrate | None = None,
    model_readout: ModelReadout | None = None,
    model_activity: FilteredActivity | None = None,
) -> tuple[EpisodeTrace, dict]:
    """One real game: act every frame, learn the model per frame, update the policy once."""
    enc = cfg.encoding
    state = env.reset(game_seed)
    trace = EpisodeTrace()
    total_return = 0.0
    entropy_sum = 0.0
    state_loss_sum = 0.0
    reward_loss_sum = 0.0
    for _ in range(cfg.t_awake):
        rates = encode_state(state, enc)
        trains = rates_to_trains(rates, enc, rngs["encoding_agent"])
        counts = run_window(agent_sub, trains, enc.window_us)
        sbar = agent_activity.update(counts)
        probs = policy_forward(sbar, policy)
        action = sample_action(probs, rngs["actions"])
        outcome = env.step(action)
        reward = outcome.reward

        if model_readout is not None:
            m_rates = np.concatenate([rates, encode_action(action, enc)])
            m_trains = rates_to_trains(m_rates, enc, rngs["encoding_model"])
            m_counts = run_window(model_sub, m_trains, enc.window_us)
            m_sbar = model_activity.update(m_counts)
            pred = model_forward(m_sbar, model_readout)
            if cfg.absolute_model_targets:
                target_delta = outcome.next_state.as_array()
            else:
                target_delta = outcome.next_state.as_array() - state.as_array()
            state_err = float(np.mean((target_delta - pred.delta_state) ** 2))
            reward_err = (reward - pred.reward) ** 2
            if not (math.isfinite(state_err) and math.isfinite(reward_err)):
                raise NumericalError("non-finite world-model loss during awake play")
            model_update(model_readout, m_sbar, pred, target_delta, reward)
            state_loss_sum += state_err
            reward_loss_sum += reward_err

        accumulate_step(acc, sbar, probs, action, reward)
        trace.frames.append(FrameRecord(state, sbar, probs, action, reward))
        entropy_sum += entropy(probs)
        total_return += reward
        state = outcome.next_state
    apply_policy_update(policy, acc)
    frag = {
        "return": total_return,
        "entropy": entropy_sum / cfg.t_awake,
        "state_loss": state_loss_sum / cfg.t_awake if model_readout is not None else None,
        "reward_loss": reward_loss_sum / cfg.t_awake if model_readout is not None else None,
    }
    return trace, frag


def dream_game(
    start_state,
    agent_sub: Substrate,
    policy: PolicyReadout,
    acc: EligibilityAccumulator,
    agent_activity: FilteredActivity,
    model_sub: Substrate,
    model_readout: ModelReadout,
    model_activity: FilteredActivity,
    cfg: TrainConfig,
    rngs: dict[str, np.random.Generator],
) -> dict:
    """One imagined game from a sampled awake state; only the policy learns."""
    enc = cfg.encoding
    state = start_state
    total_reward = 0.0
    for _ in range(cfg.t_dream):
        rates = encode_state(state, enc)
        trains = rates_to_trains(rates, enc, rngs["encoding_agent"])
        counts = run_window(agent_sub, trains, enc.window_us)
        sbar = agent_activity.update(counts)
        probs = policy_forward(sbar, policy)
        action = sample_action(probs, rngs["actions"])
        state, reward = dream_step(
            state,
            action,
            model_sub,
            model_readout,
            enc,
            rngs["encoding_model"],
            activity=model_activity,
            clamp_reward=cfg.clamp_dream_reward,
            absolute_targets=cfg.absolute_model_targets,
        )
        accumulate_step(acc, sbar, probs, action, reward)
        total_reward += reward
    apply_policy_update(policy, acc)
    return {"dream_return": total_reward}


def train_run(cfg: TrainConfig, run_index: int, on_game=None, artifacts: dict | None = None) -> RunMetrics:
    """Run the full awake(/dream) schedule for one seed.

    on_game, when given, is called after every game with
    (run_index, game_number, return, entropy, state_loss, reward_loss)
    so metrics can stream to disk as they are produced. artifacts, when
    given, receives the final readouts and substrates for checkpointing.
    """
    rngs = seed_streams(cfg.master_seed, run_index)
    dreaming = cfg.mode == "dreaming"
    env = PongEnv(cfg.physics, frames_per_game=cfg.t_awake, point_terminal=cfg.point_terminal)

    t0 = time.perf_counter()
    agent_sub = build_substrate(cfg.substrate_config("agent"), rngs["substrate_agent"])
    model_sub = (
        build_substrate(cfg.substrate_config("model"), rngs["substrate_model"])
        if dreaming
        else None
    )
    if cfg.fixed_efficacy is not None:
        agent_sub.set_core_efficacy(cfg.fixed_efficacy)
        agent_cal = None
        model_cal = None
        if dreaming:
            model_sub.set_core_efficacy(cfg.fixed_efficacy)
    else:
        agent_cal = calibrate_efficacy(
            agent_sub, cfg.encoding, cfg.physics, rngs["calibration_agent"], cfg.calibration
        )
        model_cal = (
            calibrate_efficacy(
                model_sub, cfg.encoding, cfg.physics, rngs["calibration_model"], cfg.calibration
            )
            if dreaming
            else None
        )
    wall_calibration = time.perf_counter() - t0

    policy = init_policy(rngs["policy_init"], cfg.n_agent, cfg.resolved_eta_pi)
    acc = EligibilityAccumulator(cfg.n_agent, cfg.gamma)
    agent_activity = FilteredActivity(cfg.n_agent, cfg.sbar_alpha)
    model_readout = init_model(cfg.n_model, cfg.eta_state, cfg.eta_reward) if dreaming else None
    model_activity = FilteredActivity(cfg.n_model, cfg.sbar_alpha) if dreaming else None

    returns = np.zeros(cfg.games)
    entropies = np.zeros(cfg.games)
    state_losses = np.full(cfg.games, np.nan)
    reward_losses = np.full(cfg.games, np.nan)
    policy_updates = 0
    model_updates = 0
    wall_awake = 0.0
    wall_dream = 0.0

    for game in range(cfg.games):
        game_seed = int(rngs["env"].integers(2**63))
        t_awake0 = time.perf_counter()
        trace, frag = awake_game(
            env,
            game_seed,
            agent_sub,
            policy,
            acc,
            agent_activity,
            cfg,
            rngs,
            model_sub=model_sub,
            model_readout=model_readout,
            model_activity=model_activity,
        )
        wall_awake += time.perf_counter() - t_awake0
        policy_updates += 1
        returns[game] = frag["return"]
        entropies[game] = frag["entropy"]
        if dreaming:
            model_updates += cfg.t_awake
            state_losses[game] = frag["state_loss"]
            reward_losses[game] = frag["reward_loss"]
            start = trace.frames[int(rngs["dream_start"].integers(len(trace)))].state
            t_dream0 = time.perf_counter()
            dream_game(
                start,
                agent_sub,
                policy,
                acc,
                agent_activity,
                model_sub,
                model_readout,
                model_activity,
                cfg,
                rngs,
            )
            wall_dream += time.perf_counter() - t_dream0
            policy_updates += 1
        if on_game is not None:
            on_game(
                run_index,
                game + 1,
                frag["return"],
                frag["entropy"],
                frag["state_loss"],
                frag["reward_loss"],
            )

    if artifacts is not None:
        artifacts.update(
            policy=policy,
            model=model_readout,
            agent_substrate=agent_sub,
            model_substrate=model_sub,
        )
    return RunMetrics(
        mode=cfg.mode,
        run_index=run_index,
        master_seed=cfg.master_seed,
        returns=returns,
        entropies=entropies,
        model_state_loss=state_losses,
        model_reward_loss=reward_losses,
        agent_calibration=agent_cal,
        model_calibration=model_cal,
        awake_frames=cfg.games * cfg.t_awake,
        dream_frames=cfg.games * cfg.t_dream if dreaming else 0,
        policy_updates=policy_updates,
        model_updates=model_updates,
        virtual_ms_per_frame=cfg.virtual_ms_per_frame,
        wall_seconds={
            "calibration": wall_calibration,
            "awake": wall_awake,
            "dream": wall_dream,
        },
    )
