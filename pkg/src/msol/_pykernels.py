"""Pure-numpy implementations of the per-step hot kernels.

Same signatures and semantics as the compiled ``_ckernels`` module; used when
the extension is not built or ``MSOL_PURE_PYTHON=1`` is set.
"""

from __future__ import annotations

import numpy as np


def sample_categorical(logits, u):
    """Inverse-CDF draw per row.  Returns ``(index int64, log-prob)``."""
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    cdf = np.cumsum(np.exp(logp), axis=1)
    idx = (cdf <= np.asarray(u, dtype=np.float64)[:, None]).sum(axis=1)
    idx = np.minimum(idx, logits.shape[1] - 1).astype(np.int64)
    return idx, logp[np.arange(logits.shape[0]), idx]


def sample_bernoulli(logit, u):
    """``bit = u < sigmoid(logit)``.  Returns ``(bit int64, log-prob of bit)``."""
    logit = np.asarray(logit, dtype=np.float64)
    p1 = np.exp(-np.logaddexp(0.0, -logit))
    bit = (np.asarray(u, dtype=np.float64) < p1).astype(np.int64)
    signed = np.where(bit == 1, logit, -logit)
    return bit, -np.logaddexp(0.0, -signed)


def taxi_step(loc, face, passenger, t, actions, pickup, dropoff, neighbors, special,
              directional, max_steps, step_penalty, delivery_reward):
    """Advance a batch of taxi states in place; returns ``(reward, done)``."""
    actions = np.asarray(actions, dtype=np.int64)
    n = loc.shape[0]
    reward = np.full(n, step_penalty, dtype=np.float64)
    done = np.zeros(n, dtype=np.int64)
    if directional:
        fwd = actions == 0
        loc[fwd] = neighbors[loc[fwd], face[fwd]]
        face[actions == 1] = (face[actions == 1] + 1) % 4
        face[actions == 2] = (face[actions == 2] + 3) % 4
        act_pd = actions == 4
    else:
        mv = actions < 4
        loc[mv] = neighbors[loc[mv], actions[mv]]
        act_pd = actions == 5
    at_pick = loc == special[pickup]
    at_drop = loc == special[dropoff]
    deliver = act_pd & (passenger == 1) & at_drop
    pick = act_pd & (passenger == 0) & at_pick
    passenger[pick] = 1
    passenger[deliver] = 0
    reward[deliver] += delivery_reward
    done[deliver] = 1
    t += 1
    done[t >= max_steps] = 1
    return reward, done


def bandits_step(pos, goals, correct, t, actions, step_size, arena, threshold, max_steps):
    """Move agents on the plane in place; returns ``(reward, done)``."""
    actions = np.asarray(actions, dtype=np.int64)
    dx = np.array([0.0, step_size, 0.0, -step_size])
    dy = np.array([step_size, 0.0, -step_size, 0.0])
    pos[:, 0] = np.clip(pos[:, 0] + dx[actions], 0.0, arena)
    pos[:, 1] = np.clip(pos[:, 1] + dy[actions], 0.0, arena)
    target = goals[np.arange(pos.shape[0]), correct]
    dist = np.sqrt(((pos - target) ** 2).sum(axis=1))
    reward = (dist < threshold).astype(np.float64)
    t += 1
    done = (t >= max_steps).astype(np.int64)
    return reward, done


def discounted_returns(rewards, dones, bootstrap, gamma):
    """Backward recursion ``R_t = r_t + gamma * R_{t+1} * (1 - done_t)``."""
    rewards = np.asarray(rewards, dtype=np.float64)
    out = np.empty_like(rewards)
    running = np.asarray(bootstrap, dtype=np.float64).copy()
    for k in range(rewards.shape[0] - 1, -1, -1):
        running = rewards[k] + gamma * running * (1.0 - dones[k])
        out[k] = running
    return out
