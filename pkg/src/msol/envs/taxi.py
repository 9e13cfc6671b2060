"""Taxi and Directional Taxi.

Standard actions: ``0..3`` move N/E/S/W, ``4`` no-op, ``5`` pickup/drop-off.
Directional actions: ``0`` forward, ``1`` rotate clockwise, ``2`` rotate
counter-clockwise, ``3`` no-op, ``4`` pickup/drop-off.

Every step costs ``STEP_PENALTY``; delivering the passenger adds
``DELIVERY_REWARD`` on the same step and ends the episode.  Episodes are cut
after ``MAX_STEPS`` steps.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, replace

import numpy as np

from .. import kernels
from .layout import GridLayout

STEP_PENALTY = -0.1
DELIVERY_REWARD = 2.0
MAX_STEPS = 50

N_ACTIONS = 6
N_ACTIONS_DIRECTIONAL = 5
PICKUP_DROPOFF = 5
PICKUP_DROPOFF_DIRECTIONAL = 4
ACTION_NAMES = ("N", "E", "S", "W", "noop", "pickup")
ACTION_NAMES_DIRECTIONAL = ("forward", "cw", "ccw", "noop", "pickup")


@dataclass(frozen=True)
class TaxiState:
    loc: int
    passenger: int = 0
    facing: int = 0
    t: int = 0


def obs_dim(layout: GridLayout, directional: bool = False) -> int:
    return layout.n_locations * 2 * (4 if directional else 1)


def state_index(layout: GridLayout, state: TaxiState, directional: bool = False) -> int:
    """Position of the single 1 in the one-hot observation.

    Standard: ``loc + L * passenger``; directional: ``4 * loc + facing + 4L * passenger``.
    """
    if directional:
        return 4 * state.loc + state.facing + 4 * layout.n_locations * state.passenger
    return state.loc + layout.n_locations * state.passenger


def observe(layout: GridLayout, state: TaxiState, directional: bool = False) -> np.ndarray:
    obs = np.zeros(obs_dim(layout, directional))
    obs[state_index(layout, state, directional)] = 1.0
    return obs


def reset_taxi(layout: GridLayout, mode: str, rng: np.random.Generator, directional: bool = False):
    """Train mode: any location, passenger on board or not.  Test mode: never on board."""
    loc = int(rng.integers(layout.n_locations))
    passenger = int(rng.integers(2)) if mode == "train" else 0
    facing = int(rng.integers(4)) if directional else 0
    state = TaxiState(loc=loc, passenger=passenger, facing=facing, t=0)
    return state, observe(layout, state, directional)


def _pickup_dropoff(layout, task, state, reward):
    if state.passenger == 1 and state.loc == layout.special_idx[task.dropoff]:
        return replace(state, passenger=0), reward + DELIVERY_REWARD, True
    if state.passenger == 0 and state.loc == layout.special_idx[task.pickup]:
        return replace(state, passenger=1), reward, False
    return state, reward, False


def step_taxi(layout: GridLayout, task, state: TaxiState, action: int):
    """Pure single-environment transition: ``(state', reward, done)``."""
    if not 0 <= action < N_ACTIONS:
        raise ValueError(f"taxi action {action} out of range")
    reward = STEP_PENALTY
    delivered = False
    if action < 4:
        state = replace(state, loc=int(layout.neighbors[state.loc, action]))
    elif action == PICKUP_DROPOFF:
        state, reward, delivered = _pickup_dropoff(layout, task, state, reward)
    state = replace(state, t=state.t + 1)
    return state, reward, delivered or state.t >= MAX_STEPS


def step_directional_taxi(layout: GridLayout, task, state: TaxiState, action: int):
    if not 0 <= action < N_ACTIONS_DIRECTIONAL:
        raise ValueError(f"directional taxi action {action} out of range")
    reward = STEP_PENALTY
    delivered = False
    if action == 0:
        state = replace(state, loc=int(layout.neighbors[state.loc, state.facing]))
    elif action == 1:
        state = replace(state, facing=(state.facing + 1) % 4)
    elif action == 2:
        state = replace(state, facing=(state.facing + 3) % 4)
    elif action == PICKUP_DROPOFF_DIRECTIONAL:
        state, reward, delivered = _pickup_dropoff(layout, task, state, reward)
    state = replace(state, t=state.t + 1)
    return state, reward, delivered or state.t >= MAX_STEPS


class TaxiVecEnv:
    """A batch of taxi environments, one task per slot, auto-resetting."""

    def __init__(self, layout: GridLayout, tasks, mode: str, seeds, directional: bool = False):
        self.layout = layout
        self.tasks = list(tasks)
        self.mode = mode
        self.directional = directional
        self.n = len(self.tasks)
        self.rngs = [np.random.default_rng(s) for s in seeds]
        self.obs_dim = obs_dim(layout, directional)
        self.n_actions = N_ACTIONS_DIRECTIONAL if directional else N_ACTIONS
        self.pickup = np.array([t.pickup for t in self.tasks], dtype=np.int64)
        self.dropoff = np.array([t.dropoff for t in self.tasks], dtype=np.int64)
        self.loc = np.zeros(self.n, dtype=np.int64)
        self.face = np.zeros(self.n, dtype=np.int64)
        self.passenger = np.zeros(self.n, dtype=np.int64)
        self.t = np.zeros(self.n, dtype=np.int64)
        self._rows = np.arange(self.n)

    def reset_one(self, i: int) -> None:
        state, _ = reset_taxi(self.layout, self.mode, self.rngs[i], self.directional)
        self.loc[i] = state.loc
        self.face[i] = state.facing
        self.passenger[i] = state.passenger
        self.t[i] = 0

    def reset(self) -> np.ndarray:
        for i in range(self.n):
            self.reset_one(i)
        return self.observe()

    def state(self, i: int) -> TaxiState:
        return TaxiState(int(self.loc[i]), int(self.passenger[i]), int(self.face[i]), int(self.t[i]))

    def observe(self) -> np.ndarray:
        L = self.layout.n_locations
        if self.directional:
            idx = 4 * self.loc + self.face + 4 * L * self.passenger
        else:
            idx = self.loc + L * self.passenger
        obs = np.zeros((self.n, self.obs_dim))
        obs[self._rows, idx] = 1.0
        return obs

    def step(self, actions):
        reward, done = kernels.taxi_step(
            self.loc, self.face, self.passenger, self.t, np.asarray(actions, dtype=np.int64),
            self.pickup, self.dropoff, self.layout.neighbors, self.layout.special_idx,
            self.directional, MAX_STEPS, STEP_PENALTY, DELIVERY_REWARD,
        )
        success = (done == 1) & (reward > 0)
        for i in np.flatnonzero(done):
            self.reset_one(int(i))
        return self.observe(), reward, done.astype(bool), success


# ----------------------------------------------------------------------------
# breadth-first-search oracle


def _successors(layout: GridLayout, task, directional: bool, node):
    """Deterministic transitions of the (loc, facing, passenger) graph, ignoring time."""
    loc, facing, passenger = node
    state = TaxiState(loc, passenger, facing, 0)
    step = step_directional_taxi if directional else step_taxi
    n_actions = N_ACTIONS_DIRECTIONAL if directional else N_ACTIONS
    for a in range(n_actions):
        nxt, reward, _ = step(layout, task, state, a)
        delivered = reward > 0
        yield (nxt.loc, nxt.facing, nxt.passenger), delivered


def shortest_delivery(layout: GridLayout, task, directional: bool = False) -> dict:
    """Minimal number of steps to deliver from every non-terminal state.

    Returns ``{(loc, facing, passenger): steps}``; unreachable states are absent.
    Solved as a multi-source BFS on the reversed transition graph.
    """
    facings = range(4) if directional else (0,)
    nodes = [(l, f, p) for l in range(layout.n_locations) for f in facings for p in (0, 1)]
    reverse: dict = {n: [] for n in nodes}
    dist: dict = {}
    queue = deque()
    for node in nodes:
        for nxt, delivered in _successors(layout, task, directional, node):
            if delivered:
                if node not in dist:
                    dist[node] = 1
                    queue.append(node)
            else:
                reverse[nxt].append(node)
    while queue:
        node = queue.popleft()
        for prev in reverse[node]:
            if prev not in dist:
                dist[prev] = dist[node] + 1
                queue.append(prev)
    return dist


def optimal_return(steps: int) -> float:
    """Return of a delivery that takes ``steps`` steps (the last one delivers)."""
    return DELIVERY_REWARD + STEP_PENALTY * steps


def start_optimal_returns(layout: GridLayout, task, directional: bool = False) -> np.ndarray:
    """Optimal return from every test-mode start state (uniform start distribution)."""
    dist = shortest_delivery(layout, task, directional)
    facings = range(4) if directional else (0,)
    out = []
    for loc in range(layout.n_locations):
        for f in facings:
            steps = dist.get((loc, f, 0))
            out.append(np.nan if steps is None or steps > MAX_STEPS else optimal_return(steps))
    return np.array(out)


def certify_layout(layout: GridLayout, tasks, directional: bool = False) -> dict:
    """BFS certificate: per-task worst-case steps and expected optimal test return.

    Raises ``ValueError`` when some task is unsolvable within the step limit
    from some test-mode start.
    """
    report = {}
    for task in tasks:
        returns = start_optimal_returns(layout, task, directional)
        if np.isnan(returns).any():
            raise ValueError(f"task {task} unsolvable within {MAX_STEPS} steps from some start")
        worst = int(round((DELIVERY_REWARD - returns.min()) / -STEP_PENALTY))
        report[(task.pickup, task.dropoff)] = {
            "max_steps": worst,
            "expected_optimal_return": float(returns.mean()),
            "best_optimal_return": float(returns.max()),
        }
    return report
