"""Softmax policy over spike counts, eligibility-trace gradients, and Adam."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .pong import GameState, PongAction

N_ACTIONS = 3


class NumericalError(RuntimeError):
    """Non-finite values produced during training; aborts the run (exit code 3)."""


@dataclass
class FilteredActivity:
    """Exponentially filtered spike counts; alpha = 0 passes raw counts through."""

    n: int
    alpha: float = 0.0
    sbar: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError("alpha must be in [0, 1)")
        self.sbar = np.zeros(self.n, dtype=np.float64)

    def update(self, counts: np.ndarray) -> np.ndarray:
        counts = np.asarray(counts, dtype=np.float64)
        if counts.shape != (self.n,):
            raise ValueError(f"expected {self.n} counts, got shape {counts.shape}")
        # Always produces a fresh array so stored traces never alias.
        self.sbar = self.alpha * self.sbar + counts
        return self.sbar

    def reset(self) -> None:
        self.sbar = np.zeros(self.n, dtype=np.float64)


def _as_activity(sbar, n: int) -> np.ndarray:
    s = sbar.sbar if isinstance(sbar, FilteredActivity) else np.asarray(sbar, dtype=np.float64)
    if s.shape != (n,):
        raise ValueError(f"activity vector must have length {n}")
    return s


@dataclass
class PolicyReadout:
    """Trainable 3 x n readout with adaptive-moment optimizer state."""

    weights: np.ndarray
    learning_rate: float = 4e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    m: np.ndarray = field(init=False)
    v: np.ndarray = field(init=False)
    step_count: int = field(init=False, default=0)

    def __post_init__(self) -> None:
        self.weights = np.array(self.weights, dtype=np.float64)
        if self.weights.ndim != 2 or self.weights.shape[0] != N_ACTIONS:
            raise ValueError(f"weights must be {N_ACTIONS} x n")
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("weights must be finite")
        if not self.learning_rate > 0.0:
            raise ValueError("learning_rate must be > 0")
        self.m = np.zeros_like(self.weights)
        self.v = np.zeros_like(self.weights)

    @property
    def n_hidden(self) -> int:
        return self.weights.shape[1]


def init_policy(seed, n_hidden: int, learning_rate: float = 4e-3) -> PolicyReadout:
    """Entries i.i.d. normal with mean 0 and standard deviation 0.1."""
    rng = np.random.default_rng(seed)
    weights = rng.normal(0.0, 0.1, size=(N_ACTIONS, n_hidden))
    return PolicyReadout(weights, learning_rate)


def policy_forward(sbar, readout: PolicyReadout) -> np.ndarray:
    """Action probabilities: softmax of the readout logits (max-subtracted)."""
    s = _as_activity(sbar, readout.n_hidden)
    if not np.all(np.isfinite(s)):
        raise NumericalError("non-finite activity fed to the policy readout")
    y = readout.weights @ s
    if not np.all(np.isfinite(y)):
        raise NumericalError("non-finite policy logits")
    y = y - y.max()
    p = np.exp(y)
    p /= p.sum()
    return p


def sample_action(probs: np.ndarray, rng: np.random.Generator) -> PongAction:
    """Draw an action from the distribution (sampling keeps exploration alive)."""
    u = rng.random()
    acc = 0.0
    for k in range(N_ACTIONS - 1):
        acc += probs[k]
        if u < acc:
            return PongAction(k)
    return PongAction(N_ACTIONS - 1)


def entropy(probs: np.ndarray) -> float:
    """Shannon entropy in nats, with 0 * log 0 = 0."""
    p = np.asarray(probs, dtype=np.float64)
    nz = p[p > 0.0]
    return float(-np.sum(nz * np.log(nz)))


@dataclass
class EligibilityAccumulator:
    """Per-game eligibility trace e and accumulated gradient delta (both 3 x n)."""

    n: int
    gamma: float = 0.998
    e: np.ndarray = field(init=False)
    delta: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must be in [0, 1]")
        self.e = np.zeros((N_ACTIONS, self.n), dtype=np.float64)
        self.delta = np.zeros((N_ACTIONS, self.n), dtype=np.float64)

    def reset(self) -> None:
        self.e.fill(0.0)
        self.delta.fill(0.0)


def accumulate_step(
    acc: EligibilityAccumulator,
    sbar,
    probs: np.ndarray,
    action: PongAction,
    reward: float,
) -> None:
    """One frame of the gradient recursion.

    e <- gamma * e + g with g[k, i] = (probs[k] - [action == k]) * sbar[i],
    then delta += reward * e. After a whole game, delta is the gradient of the
    discounted score-function loss, so descending it increases expected return.
    """
    s = _as_activity(sbar, acc.n)
    coeff = np.array(probs, dtype=np.float64)
    coeff[int(action)] -= 1.0
    acc.e *= acc.gamma
    acc.e += coeff[:, None] * s[None, :]
    if reward != 0.0:
        acc.delta += reward * acc.e


def apply_policy_update(readout: PolicyReadout, acc: EligibilityAccumulator) -> None:
    """One adaptive-moment descent step on the accumulated gradient; resets the accumulator.

    An all-zero gradient is a strict no-op (moments and step count untouched)
    so a game with no reward signal cannot move the weights.
    """
    g = acc.delta
    if g.shape != readout.weights.shape:
        raise ValueError("accumulator and readout shapes differ")
    if not np.all(np.isfinite(g)):
        raise NumericalError("non-finite policy gradient at game boundary")
    if np.any(g != 0.0):
        r = readout
        r.step_count += 1
        r.m *= r.beta1
        r.m += (1.0 - r.beta1) * g
        r.v *= r.beta2
        r.v += (1.0 - r.beta2) * (g * g)
        m_hat = r.m / (1.0 - r.beta1**r.step_count)
        v_hat = r.v / (1.0 - r.beta2**r.step_count)
        r.weights -= r.learning_rate * m_hat / (np.sqrt(v_hat) + r.epsilon)
        if not np.all(np.isfinite(r.weights)):
            raise NumericalError("non-finite policy weights after update")
    acc.reset()


@dataclass
class FrameRecord:
    """What one frame contributes to learning (state kept for dream starts)."""

    state: GameState
    sbar: np.ndarray
    probs: np.ndarray
    action: PongAction
    reward: float


@dataclass
class EpisodeTrace:
    frames: list[FrameRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.frames)
