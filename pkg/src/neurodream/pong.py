"""Minimal Pong with normalized scalar state, a tracking opponent, and point rewards."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

STATE_FIELDS = ("paddle_agent_y", "paddle_opp_y", "ball_x", "ball_y")


class PongAction(IntEnum):
    """Paddle commands; the index order is fixed and shared with the policy readout."""

    UP = 0
    DOWN = 1
    STAY = 2


_ACTION_DIR = (1.0, -1.0, 0.0)

# Serve headings: the four diagonals, as (sign_x, sign_y).
_HEADINGS = ((1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0))


@dataclass(frozen=True)
class PongPhysics:
    """Per-frame movement scales, all as fractions of the unit court."""

    ball_speed: float = 0.04
    paddle_speed: float = 0.04
    paddle_half_height: float = 0.1
    opp_speed: float = 0.02

    def __post_init__(self) -> None:
        if not (self.ball_speed > 0 and self.paddle_speed > 0 and self.opp_speed > 0):
            raise ValueError("all speeds must be positive")
        if not 0.0 < self.paddle_half_height < 0.5:
            raise ValueError("paddle_half_height must be in (0, 0.5)")


@dataclass(frozen=True)
class GameState:
    """The four observable variables; ball velocity is deliberately not observable."""

    paddle_agent_y: float
    paddle_opp_y: float
    ball_x: float
    ball_y: float

    def validate(self) -> None:
        for name in STATE_FIELDS:
            value = getattr(self, name)
            if not (math.isfinite(value) and 0.0 <= value <= 1.0):
                raise ValueError(f"{name}={value!r} is outside [0, 1]")

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.paddle_agent_y, self.paddle_opp_y, self.ball_x, self.ball_y],
            dtype=np.float64,
        )


@dataclass(frozen=True)
class StepOutcome:
    next_state: GameState
    reward: float
    terminal: bool


def opponent_move(state: GameState, physics: PongPhysics) -> PongAction:
    """Track ball_y; a dead band of half a step stops jitter around the target."""
    err = state.ball_y - state.paddle_opp_y
    if abs(err) <= 0.5 * physics.opp_speed:
        return PongAction.STAY
    return PongAction.UP if err > 0.0 else PongAction.DOWN


def _clip01(x: float) -> float:
    return 0.0 if x < 0.0 else (1.0 if x > 1.0 else x)


def advance(
    state: GameState,
    velocity: tuple[float, float],
    action: PongAction,
    physics: PongPhysics,
) -> tuple[GameState, tuple[float, float], float]:
    """One frame of physics: pure in (state, velocity, action).

    Returns (next_state, next_velocity, reward). Reward is -1 when the ball
    crosses the agent's plane (x=0) unblocked, +1 across the opponent's plane
    (x=1) unblocked, else 0; a point re-centers the ball. The caller owns the
    hidden velocity and must re-serve after a point.
    """
    state.validate()
    action = PongAction(action)
    vx, vy = velocity

    pa = _clip01(state.paddle_agent_y + _ACTION_DIR[action] * physics.paddle_speed)
    po = _clip01(
        state.paddle_opp_y + _ACTION_DIR[opponent_move(state, physics)] * physics.opp_speed
    )

    bx = state.ball_x + vx
    by = state.ball_y + vy
    if by > 1.0:
        by, vy = 2.0 - by, -vy
    elif by < 0.0:
        by, vy = -by, -vy

    reward = 0.0
    if bx <= 0.0 and vx < 0.0:
        if abs(by - pa) <= physics.paddle_half_height:
            bx, vx = -bx, -vx
        else:
            reward = -1.0
            bx, by = 0.5, 0.5
    elif bx >= 1.0 and vx > 0.0:
        if abs(by - po) <= physics.paddle_half_height:
            bx, vx = 2.0 - bx, -vx
        else:
            reward = 1.0
            bx, by = 0.5, 0.5

    next_state = GameState(pa, po, _clip01(bx), _clip01(by))
    return next_state, (vx, vy), reward


def _serve(rng: np.random.Generator, ball_speed: float) -> tuple[float, float]:
    sx, sy = _HEADINGS[int(rng.integers(len(_HEADINGS)))]
    return (sx * ball_speed, sy * ball_speed)


class PongEnv:
    """Stateful wrapper pairing the pure physics with the hidden ball velocity.

    The agent defends the x=0 plane; the deterministic tracker defends x=1.
    Games run a fixed number of frames; points re-center the ball and, unless
    point_terminal is set, do not end the game.
    """

    def __init__(
        self,
        physics: PongPhysics | None = None,
        frames_per_game: int = 100,
        point_terminal: bool = False,
    ) -> None:
        self.physics = physics if physics is not None else PongPhysics()
        self.frames_per_game = int(frames_per_game)
        if self.frames_per_game < 1:
            raise ValueError("frames_per_game must be >= 1")
        self.point_terminal = bool(point_terminal)
        self._rng = np.random.default_rng(0)
        self._state = GameState(0.5, 0.5, 0.5, 0.5)
        self._velocity = (self.physics.ball_speed, self.physics.ball_speed)
        self._frame = 0

    @property
    def state(self) -> GameState:
        return self._state

    @property
    def frame(self) -> int:
        return self._frame

    def reset(self, seed: int) -> GameState:
        """Center everything and draw a fresh serve heading from the seed."""
        self._rng = np.random.default_rng(seed)
        self._state = GameState(0.5, 0.5, 0.5, 0.5)
        self._velocity = _serve(self._rng, self.physics.ball_speed)
        self._frame = 0
        return self._state

    def set_state(self, state: GameState, velocity: tuple[float, float]) -> None:
        """Place the game in an exact configuration (hook for tests)."""
        state.validate()
        vx, vy = velocity
        self._state = state
        self._velocity = (float(vx), float(vy))

    def step(self, action: PongAction) -> StepOutcome:
        next_state, vel, reward = advance(self._state, self._velocity, action, self.physics)
        if reward != 0.0:
            vel = _serve(self._rng, self.physics.ball_speed)
        self._state = next_state
        self._velocity = vel
        self._frame += 1
        terminal = self._frame >= self.frames_per_game or (
            self.point_terminal and reward != 0.0
        )
        return StepOutcome(next_state, reward, terminal)
