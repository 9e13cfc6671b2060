# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled per-step kernels; mirrors ``_pykernels`` exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, log1p, sqrt, fabs

cnp.import_array()


cdef inline double _log_sigmoid(double x) nogil:
    # log(sigmoid(x)) = -log(1 + exp(-x)), evaluated stably
    if x >= 0:
        return -log1p(exp(-x))
    return x - log1p(exp(x))


def sample_categorical(double[:, ::1] logits, double[::1] u):
    cdef Py_ssize_t n = logits.shape[0], k = logits.shape[1], i, j
    cdef cnp.ndarray[cnp.int64_t, ndim=1] idx = np.empty(n, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] logp = np.empty(n, dtype=np.float64)
    cdef double mx, total, lse, cdf
    cdef Py_ssize_t pick
    with nogil:
        for i in range(n):
            mx = logits[i, 0]
            for j in range(1, k):
                if logits[i, j] > mx:
                    mx = logits[i, j]
            total = 0.0
            for j in range(k):
                total += exp(logits[i, j] - mx)
            lse = log(total)
            cdf = 0.0
            pick = k - 1
            for j in range(k):
                cdf += exp(logits[i, j] - mx - lse)
                if cdf > u[i]:
                    pick = j
                    break
            idx[i] = pick
            logp[i] = logits[i, pick] - mx - lse
    return idx, logp


def sample_bernoulli(double[::1] logit, double[::1] u):
    cdef Py_ssize_t n = logit.shape[0], i
    cdef cnp.ndarray[cnp.int64_t, ndim=1] bit = np.empty(n, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] logp = np.empty(n, dtype=np.float64)
    cdef double lp1
    with nogil:
        for i in range(n):
            lp1 = _log_sigmoid(logit[i])
            if u[i] < exp(lp1):
                bit[i] = 1
                logp[i] = lp1
            else:
                bit[i] = 0
                logp[i] = _log_sigmoid(-logit[i])
    return bit, logp


def taxi_step(cnp.int64_t[::1] loc, cnp.int64_t[::1] face, cnp.int64_t[::1] passenger,
              cnp.int64_t[::1] t, actions, cnp.int64_t[::1] pickup, cnp.int64_t[::1] dropoff,
              cnp.int64_t[:, ::1] neighbors, cnp.int64_t[::1] special,
              bint directional, long max_steps, double step_penalty, double delivery_reward):
    cdef cnp.int64_t[::1] act = np.ascontiguousarray(actions, dtype=np.int64)
    cdef Py_ssize_t n = loc.shape[0], i
    cdef cnp.ndarray[cnp.float64_t, ndim=1] reward = np.empty(n, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] done = np.zeros(n, dtype=np.int64)
    cdef long a
    cdef bint pd
    with nogil:
        for i in range(n):
            a = act[i]
            reward[i] = step_penalty
            if directional:
                if a == 0:
                    loc[i] = neighbors[loc[i], face[i]]
                elif a == 1:
                    face[i] = (face[i] + 1) % 4
                elif a == 2:
                    face[i] = (face[i] + 3) % 4
                pd = a == 4
            else:
                if a < 4:
                    loc[i] = neighbors[loc[i], a]
                pd = a == 5
            if pd:
                if passenger[i] == 1 and loc[i] == special[dropoff[i]]:
                    passenger[i] = 0
                    reward[i] += delivery_reward
                    done[i] = 1
                elif passenger[i] == 0 and loc[i] == special[pickup[i]]:
                    passenger[i] = 1
            t[i] += 1
            if t[i] >= max_steps:
                done[i] = 1
    return reward, done


def bandits_step(double[:, ::1] pos, double[:, :, ::1] goals, cnp.int64_t[::1] correct,
                 cnp.int64_t[::1] t, actions, double step_size, double arena,
                 double threshold, long max_steps):
    cdef cnp.int64_t[::1] act = np.ascontiguousarray(actions, dtype=np.int64)
    cdef Py_ssize_t n = pos.shape[0], i
    cdef cnp.ndarray[cnp.float64_t, ndim=1] reward = np.empty(n, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] done = np.zeros(n, dtype=np.int64)
    cdef double x, y, gx, gy
    cdef long a
    with nogil:
        for i in range(n):
            a = act[i]
            x = pos[i, 0]
            y = pos[i, 1]
            if a == 0:
                y = y + step_size
            elif a == 1:
                x = x + step_size
            elif a == 2:
                y = y - step_size
            else:
                x = x - step_size
            x = min(max(x, 0.0), arena)
            y = min(max(y, 0.0), arena)
            pos[i, 0] = x
            pos[i, 1] = y
            gx = goals[i, correct[i], 0]
            gy = goals[i, correct[i], 1]
            reward[i] = 1.0 if sqrt((x - gx) * (x - gx) + (y - gy) * (y - gy)) < threshold else 0.0
            t[i] += 1
            if t[i] >= max_steps:
                done[i] = 1
    return reward, done


def discounted_returns(double[:, ::1] rewards, dones, double[::1] bootstrap, double gamma):
    cdef double[:, ::1] d = np.ascontiguousarray(dones, dtype=np.float64)
    cdef Py_ssize_t steps = rewards.shape[0], n = rewards.shape[1], k, i
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((steps, n), dtype=np.float64)
    cdef double[::1] running = np.array(bootstrap, dtype=np.float64)
    with nogil:
        for k in range(steps - 1, -1, -1):
            for i in range(n):
                running[i] = rewards[k, i] + gamma * running[i] * (1.0 - d[k, i])
                out[k, i] = running[i]
    return out
