"""Small deterministic episodic environments with discrete actions."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class EpisodeFinished(RuntimeError):
    pass


@dataclass(frozen=True)
class EnvSpec:
    obs_dim: int
    action_count: int
    max_episode_steps: int

    def __post_init__(self):
        if min(self.obs_dim, self.action_count, self.max_episode_steps) <= 0:
            raise ValueError(f"all EnvSpec fields must be positive: {self}")


class _Episodic:
    spec: EnvSpec

    def __init__(self):
        self.steps = 0
        self.terminal = False
        self.truncated = False
        self._started = False

    @property
    def done(self) -> bool:
        return self.terminal or self.truncated

    def _begin_step(self, action):
        if not self._started or self.done:
            raise EpisodeFinished("episode finished")
        if not 0 <= action < self.spec.action_count:
            raise ValueError(f"action {action} outside [0, {self.spec.action_count})")

    def _end_step(self, terminal):
        self.steps += 1
        self.terminal = terminal
        self.truncated = not terminal and self.steps >= self.spec.max_episode_steps

    def _reset_counters(self):
        self.steps = 0
        self.terminal = False
        self.truncated = False
        self._started = True


class GridWorld(_Episodic):
    """5x5 grid from (0, 0) to the goal (4, 4); walls clamp moves.

    Actions: 0 up (row - 1), 1 down (row + 1), 2 left (col - 1), 3 right (col + 1).
    Every step costs 0.01 except the step onto the goal, which pays 1.0 and
    ends the episode.  Observation is ``[row / 4, col / 4]``.
    """

    size = 5
    goal = (4, 4)
    step_reward = -0.01
    goal_reward = 1.0
    spec = EnvSpec(obs_dim=2, action_count=4, max_episode_steps=200)
    _moves = ((-1, 0), (1, 0), (0, -1), (0, 1))

    def __init__(self):
        super().__init__()
        self.pos = (0, 0)

    def observation(self) -> np.ndarray:
        scale = self.size - 1
        return np.array([self.pos[0] / scale, self.pos[1] / scale])

    def reset(self, seed: int | None = None) -> np.ndarray:
        # the start cell is fixed; the seed is accepted for interface parity
        self._reset_counters()
        self.pos = (0, 0)
        return self.observation()

    def step(self, action: int):
        self._begin_step(action)
        dr, dc = self._moves[action]
        hi = self.size - 1
        self.pos = (min(max(self.pos[0] + dr, 0), hi), min(max(self.pos[1] + dc, 0), hi))
        at_goal = self.pos == self.goal
        self._end_step(at_goal)
        return self.observation(), (self.goal_reward if at_goal else self.step_reward), at_goal


GRAVITY = 9.8
CART_MASS = 1.0
POLE_MASS = 0.1
HALF_LENGTH = 0.5
FORCE_MAG = 10.0
DT = 0.02
X_LIMIT = 2.4
THETA_LIMIT = 12 * 2 * math.pi / 360


def cartpole_dynamics(state, force: float):
    """One explicit Euler step of the cart-pole equations of motion."""
    x, x_dot, theta, theta_dot = state
    total_mass = CART_MASS + POLE_MASS
    pm_length = POLE_MASS * HALF_LENGTH
    cos_t = math.cos(theta)
    sin_t = math.sin(theta)
    temp = (force + pm_length * theta_dot * theta_dot * sin_t) / total_mass
    theta_acc = (GRAVITY * sin_t - cos_t * temp) / (
        HALF_LENGTH * (4.0 / 3.0 - POLE_MASS * cos_t * cos_t / total_mass)
    )
    x_acc = temp - pm_length * theta_acc * cos_t / total_mass
    return (
        x + DT * x_dot,
        x_dot + DT * x_acc,
        theta + DT * theta_dot,
        theta_dot + DT * theta_acc,
    )


class CartPole(_Episodic):
    """Classic cart-pole balance task. Action 0 pushes left, 1 pushes right.

    ``state`` holds the raw ``(x, x_dot, theta, theta_dot)``.  Observations
    divide these by ``obs_scale``; every divisor is >= 1 so the reset range
    of +-0.05 is preserved.
    """

    spec = EnvSpec(obs_dim=4, action_count=2, max_episode_steps=500)
    obs_scale = np.array([X_LIMIT, 2.0, 1.0, 2.0])

    def __init__(self):
        super().__init__()
        self.state = (0.0, 0.0, 0.0, 0.0)

    def observation(self) -> np.ndarray:
        return np.array(self.state) / self.obs_scale

    def reset(self, seed: int | None = None) -> np.ndarray:
        self._reset_counters()
        rng = np.random.default_rng(seed)
        self.state = tuple(float(v) for v in rng.uniform(-0.05, 0.05, 4))
        return self.observation()

    def step(self, action: int):
        self._begin_step(action)
        force = FORCE_MAG if action == 1 else -FORCE_MAG
        self.state = cartpole_dynamics(self.state, force)
        x, _, theta, _ = self.state
        terminal = abs(x) > X_LIMIT or abs(theta) > THETA_LIMIT
        self._end_step(terminal)
        return self.observation(), 1.0, terminal


ENVIRONMENTS = {"gridworld": GridWorld, "cartpole": CartPole}


def make_env(name: str):
    try:
        return ENVIRONMENTS[name.lower()]()
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; choose from {sorted(ENVIRONMENTS)}") from None
