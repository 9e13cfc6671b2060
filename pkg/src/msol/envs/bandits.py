"""Moving Bandits: reach the (unsignalled) correct one of two marked points.

Actions ``0..3`` move N/E/S/W by a fixed step, clipped to the square arena.
The observation is ``(agent, goal 0, goal 1)`` positions divided by the arena
size; which goal pays is not observed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import kernels

N_ACTIONS = 4
OBS_DIM = 6
MAX_STEPS = 50
DELTAS = ((0.0, 1.0), (1.0, 0.0), (0.0, -1.0), (-1.0, 0.0))


@dataclass(frozen=True)
class BanditGeometry:
    arena: float = 10.0
    step: float = 0.5
    threshold: float = 1.0
    min_separation: float = 2.0


@dataclass(frozen=True)
class BanditState:
    pos: tuple[float, float]
    goals: tuple[tuple[float, float], tuple[float, float]]
    t: int = 0


def _sample_goals(rng: np.random.Generator, geom: BanditGeometry) -> np.ndarray:
    while True:
        goals = rng.uniform(0.0, geom.arena, size=(2, 2))
        if np.linalg.norm(goals[0] - goals[1]) >= geom.min_separation:
            return goals


def reset_bandits(rng: np.random.Generator, geom: BanditGeometry = BanditGeometry()):
    goals = _sample_goals(rng, geom)
    centre = geom.arena / 2.0
    state = BanditState((centre, centre), (tuple(goals[0]), tuple(goals[1])), 0)
    return state, observe(state, geom)


def observe(state: BanditState, geom: BanditGeometry = BanditGeometry()) -> np.ndarray:
    return np.array([*state.pos, *state.goals[0], *state.goals[1]]) / geom.arena


def bandit_reward(pos, goal, geom: BanditGeometry = BanditGeometry()) -> float:
    return 1.0 if float(np.hypot(pos[0] - goal[0], pos[1] - goal[1])) < geom.threshold else 0.0


def step_moving_bandits(state: BanditState, task, action: int, geom: BanditGeometry = BanditGeometry()):
    """Pure single-environment transition: ``(state', reward, done)``.

    The reward is evaluated at the position after the move.
    """
    if not 0 <= action < N_ACTIONS:
        raise ValueError(f"bandits action {action} out of range")
    dx, dy = DELTAS[action]
    x = min(max(state.pos[0] + dx * geom.step, 0.0), geom.arena)
    y = min(max(state.pos[1] + dy * geom.step, 0.0), geom.arena)
    nxt = BanditState((x, y), state.goals, state.t + 1)
    reward = bandit_reward(nxt.pos, state.goals[task.goal], geom)
    return nxt, reward, nxt.t >= MAX_STEPS


class BanditsVecEnv:
    """A batch of Moving Bandits environments, auto-resetting."""

    def __init__(self, tasks, seeds, geom: BanditGeometry = BanditGeometry()):
        self.tasks = list(tasks)
        self.geom = geom
        self.n = len(self.tasks)
        self.rngs = [np.random.default_rng(s) for s in seeds]
        self.obs_dim = OBS_DIM
        self.n_actions = N_ACTIONS
        self.correct = np.array([t.goal for t in self.tasks], dtype=np.int64)
        self.pos = np.zeros((self.n, 2))
        self.goals = np.zeros((self.n, 2, 2))
        self.t = np.zeros(self.n, dtype=np.int64)
        self.collected = np.zeros(self.n)

    def reset_one(self, i: int) -> None:
        self.goals[i] = _sample_goals(self.rngs[i], self.geom)
        self.pos[i] = self.geom.arena / 2.0
        self.t[i] = 0
        self.collected[i] = 0.0

    def reset(self) -> np.ndarray:
        for i in range(self.n):
            self.reset_one(i)
        return self.observe()

    def state(self, i: int) -> BanditState:
        g = self.goals[i]
        return BanditState(tuple(self.pos[i]), (tuple(g[0]), tuple(g[1])), int(self.t[i]))

    def observe(self) -> np.ndarray:
        return np.concatenate([self.pos, self.goals.reshape(self.n, 4)], axis=1) / self.geom.arena

    def step(self, actions):
        reward, done = kernels.bandits_step(
            self.pos, self.goals, self.correct, self.t, np.asarray(actions, dtype=np.int64),
            self.geom.step, self.geom.arena, self.geom.threshold, MAX_STEPS,
        )
        self.collected += reward
        success = (done == 1) & (self.collected > 0)
        for i in np.flatnonzero(done):
            self.reset_one(int(i))
        return self.observe(), reward, done.astype(bool), success
