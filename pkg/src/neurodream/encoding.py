"""Population-code encoding: state and action to spike rates to timed spike trains."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .pong import GameState, PongAction

N_STATE_VARS = 4
N_ACTIONS = 3


@dataclass(frozen=True)
class PopulationCodeConfig:
    """Gaussian bump code: one population of generators per state variable.

    A variable's value v places the bump center at v*(G-1) in generator-index
    units, so the most active generator index encodes the value.
    """

    generators_per_variable: int = 10
    sigma: float = 1.5
    peak_spikes_per_window: float = 5.0
    window_us: float = 10_000.0

    def __post_init__(self) -> None:
        if self.generators_per_variable < 2:
            raise ValueError("generators_per_variable must be >= 2")
        if not self.sigma > 0.0:
            raise ValueError("sigma must be > 0")
        if not self.peak_spikes_per_window >= 1.0:
            raise ValueError("peak_spikes_per_window must be >= 1")
        if not self.window_us > 0.0:
            raise ValueError("window_us must be > 0")

    @property
    def n_state_generators(self) -> int:
        return N_STATE_VARS * self.generators_per_variable

    @property
    def n_model_generators(self) -> int:
        return self.n_state_generators + N_ACTIONS


@dataclass(frozen=True)
class SpikeTrain:
    """Strictly increasing spike times (microsecond offsets) for one generator."""

    generator_id: int
    timestamps_us: np.ndarray


def encode_state(state: GameState, cfg: PopulationCodeConfig) -> np.ndarray:
    """Expected spike counts for the 4 concatenated populations (length 4*G)."""
    state.validate()
    g = cfg.generators_per_variable
    idx = np.arange(g, dtype=np.float64)
    centers = state.as_array() * (g - 1)
    rates = cfg.peak_spikes_per_window * np.exp(
        -((idx[None, :] - centers[:, None]) ** 2) / (2.0 * cfg.sigma * cfg.sigma)
    )
    return rates.reshape(-1)


def encode_action(action: PongAction, cfg: PopulationCodeConfig) -> np.ndarray:
    """One-hot rates over the 3 action generators."""
    rates = np.zeros(N_ACTIONS, dtype=np.float64)
    rates[PongAction(action)] = cfg.peak_spikes_per_window
    return rates


def rates_to_trains(
    rates: np.ndarray, cfg: PopulationCodeConfig, rng: np.random.Generator
) -> list[SpikeTrain]:
    """Stochastically round expected counts, then space spikes evenly.

    A count of c spikes is laid out at (k + 1/2) * window/c. Exactly one
    uniform draw is consumed per generator regardless of its rate, so the
    rng stream advances by the same amount every window.
    """
    rates = np.asarray(rates, dtype=np.float64)
    if rates.ndim != 1:
        raise ValueError("rates must be a flat vector")
    if not np.all(np.isfinite(rates)) or np.any(rates < 0.0):
        raise ValueError("rates must be finite and >= 0")
    base = np.floor(rates)
    extra = rng.random(rates.shape[0]) < (rates - base)
    counts = base.astype(np.int64) + extra
    trains: list[SpikeTrain] = []
    for gid in np.nonzero(counts)[0]:
        c = int(counts[gid])
        ts = (np.arange(c, dtype=np.float64) + 0.5) * (cfg.window_us / c)
        trains.append(SpikeTrain(int(gid), ts))
    return trains


def count_events(trains: list[SpikeTrain]) -> int:
    """Total number of input spikes across trains (integration-factor denominator)."""
    return int(sum(t.timestamps_us.size for t in trains))
