"""Task distributions: Moving Bandits, Taxi, Directional Taxi."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import permutations

import numpy as np

from ..errors import ConfigError
from . import bandits, taxi
from .layout import GridLayout, load_layout, shifted_layout

FAMILIES = ("bandits", "taxi", "dir-taxi")


@dataclass(frozen=True)
class TaskSpec:
    """One task: a pickup/drop-off pair (taxi) or the paying goal (bandits)."""

    family: str
    layout: str | None = None
    pickup: int = -1
    dropoff: int = -1
    goal: int = -1

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown family {self.family!r}; valid: {FAMILIES}")
        if self.family != "bandits" and self.pickup == self.dropoff:
            raise ConfigError("taxi task needs pickup != dropoff")

    @property
    def label(self) -> str:
        if self.family == "bandits":
            return f"bandits/goal{self.goal}"
        return f"{self.family}/{self.layout}/{self.pickup}->{self.dropoff}"


def enumerate_tasks(family: str, layout: str | None = None) -> list[TaskSpec]:
    """All 12 ordered pickup/drop-off pairs for taxi; both goal indices for bandits."""
    if family == "bandits":
        return [TaskSpec("bandits", goal=g) for g in (0, 1)]
    if family in ("taxi", "dir-taxi"):
        if layout is None:
            raise ConfigError("taxi tasks need a layout")
        return [TaskSpec(family, layout, p, d) for p, d in permutations(range(4), 2)]
    raise ConfigError(f"unknown family {family!r}; valid: {FAMILIES}")


def reset(task: TaskSpec, mode: str, rng: np.random.Generator, geom=None):
    """Initial ``(state, observation)`` for one environment."""
    if mode not in ("train", "test"):
        raise ConfigError(f"mode must be 'train' or 'test', got {mode!r}")
    if task.family == "bandits":
        return bandits.reset_bandits(rng, geom or bandits.BanditGeometry())
    return taxi.reset_taxi(load_layout(task.layout), mode, rng, task.family == "dir-taxi")


class LastActionObs:
    """Appends a one-hot of the previous primitive action to the observation."""

    def __init__(self, env):
        self.env = env
        self.n = env.n
        self.n_actions = env.n_actions
        self.obs_dim = env.obs_dim + env.n_actions
        self.tasks = env.tasks
        self.last = np.zeros((self.n, self.n_actions))

    def reset(self) -> np.ndarray:
        self.last[:] = 0.0
        return np.concatenate([self.env.reset(), self.last], axis=1)

    def reset_one(self, i: int) -> None:
        self.env.reset_one(i)
        self.last[i] = 0.0

    def observe(self) -> np.ndarray:
        return np.concatenate([self.env.observe(), self.last], axis=1)

    def step(self, actions):
        obs, reward, done, success = self.env.step(actions)
        self.last[:] = 0.0
        self.last[np.arange(self.n), np.asarray(actions)] = 1.0
        self.last[done] = 0.0
        return np.concatenate([obs, self.last], axis=1), reward, done, success


def make_vec_env(tasks, mode: str, seeds, last_action: bool = False, geom=None):
    """Batched environment over ``tasks`` (one entry per environment slot)."""
    tasks = list(tasks)
    families = {t.family for t in tasks}
    if len(families) != 1:
        raise ConfigError(f"all tasks in one batch must share a family, got {sorted(families)}")
    family = families.pop()
    if family == "bandits":
        env = bandits.BanditsVecEnv(tasks, seeds, geom or bandits.BanditGeometry())
    else:
        layouts = {t.layout for t in tasks}
        if len(layouts) != 1:
            raise ConfigError(f"all taxi tasks in one batch must share a layout, got {sorted(layouts)}")
        env = taxi.TaxiVecEnv(load_layout(layouts.pop()), tasks, mode, seeds, family == "dir-taxi")
    return LastActionObs(env) if last_action else env


def env_dims(family: str, layout: str | None = None) -> tuple[int, int]:
    """``(observation width, number of actions)`` for a family."""
    if family == "bandits":
        return bandits.OBS_DIM, bandits.N_ACTIONS
    lay = load_layout(layout)
    directional = family == "dir-taxi"
    return taxi.obs_dim(lay, directional), (taxi.N_ACTIONS_DIRECTIONAL if directional else taxi.N_ACTIONS)


__all__ = [
    "FAMILIES",
    "GridLayout",
    "LastActionObs",
    "TaskSpec",
    "enumerate_tasks",
    "env_dims",
    "load_layout",
    "make_vec_env",
    "reset",
    "shifted_layout",
]
