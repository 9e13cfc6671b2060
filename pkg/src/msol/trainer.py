"""Multitask actor-critic training of priors and per-task posteriors.

Every update collects ``n_steps`` steps from ``envs_per_task`` environments of
each task (all acting with their own posterior), then takes one gradient step
on the combined loss summed over tasks.  Environments reset themselves at
episode ends, so segments may straddle episode boundaries.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig
from .envs import TaskSpec, enumerate_tasks, make_vec_env
from .errors import ConfigError, NumericError
from .funcapprox import Optimizer, ParamStore
from .objective import LossBundle, ObjectiveConfig, Segment, combined_update, regularized_reward
from .policy import NetSpec, PosteriorSet, SharedPrior, act, build_policy, init_posterior_from_prior, save_policy

log = logging.getLogger(__name__)

TrainConfig = RunConfig


def resolve_tasks(family: str, layout: str | None, selection) -> list[TaskSpec]:
    """Tasks from indices into the family's task list (bandits: goal indices)."""
    if family == "bandits":
        goals = [0, 1] if selection is None else list(selection)
        if any(g not in (0, 1) for g in goals):
            raise ConfigError(f"bandit goals must be 0 or 1, got {goals}")
        return [TaskSpec("bandits", goal=int(g)) for g in goals]
    pool = enumerate_tasks(family, layout)
    if selection is None:
        return pool
    try:
        return [pool[int(i)] for i in selection]
    except IndexError:
        raise ConfigError(f"task index out of range 0..{len(pool) - 1}: {selection}") from None


def net_spec(cfg: RunConfig, obs_dim: int, n_actions: int, n_options: int | None = None) -> NetSpec:
    p = cfg.policy
    return NetSpec(
        obs_dim=obs_dim,
        n_actions=n_actions,
        n_options=p.n_options if n_options is None else n_options,
        hidden=tuple(p.hidden),
        option_embed=p.option_embed,
        activation=p.activation,
    )


def make_optimizer(cfg: RunConfig, lr: float | None = None) -> Optimizer:
    o = cfg.optim
    return Optimizer(kind=o.kind, lr=o.lr if lr is None else lr, eps=o.eps, max_grad_norm=o.max_grad_norm)


class Runner:
    """Vectorised rollouts for ``n`` tasks with ``E`` environments each.

    Slot ``k`` belongs to task ``k // E``.  Each slot owns an environment
    random stream and an action random stream, both spawned from ``seed``.
    """

    def __init__(
        self,
        tasks: list[TaskSpec],
        envs_per_task: int,
        mode: str,
        seed: np.random.SeedSequence,
        prior: SharedPrior,
        posterior: PosteriorSet,
        last_action: bool = False,
    ):
        if posterior.n_tasks != len(tasks):
            raise ConfigError(f"{posterior.n_tasks} posteriors for {len(tasks)} tasks")
        self.tasks = tasks
        self.n = len(tasks)
        self.E = envs_per_task
        self.prior = prior
        self.posterior = posterior
        env_seed, act_seed = seed.spawn(2)
        slots = [t for t in tasks for _ in range(envs_per_task)]
        self.env = make_vec_env(slots, mode, env_seed.spawn(len(slots)), last_action=last_action)
        self.gens = [np.random.default_rng(s) for s in act_seed.spawn(len(slots))]
        self.N = len(slots)
        self.m = posterior.spec.n_options
        self.obs = self.env.reset()
        self.z_prev = np.full(self.N, self.m, dtype=np.int64)
        self.first = np.ones(self.N, dtype=bool)
        self.ep_return = np.zeros(self.N)
        self.frames = np.zeros(self.n, dtype=np.int64)
        # finished episodes since the last drain: per task lists of (return, success)
        self.finished: list[list[tuple[float, bool]]] = [[] for _ in range(self.n)]

    def draws(self) -> np.ndarray:
        return np.stack([g.random(4) for g in self.gens])

    def collect(self, n_steps: int, beta: float, master_term: bool = False) -> tuple[Segment, dict]:
        n, E, T, N = self.n, self.E, n_steps, self.N
        D = self.obs.shape[1]
        obs = np.empty((T, N, D))
        ints = {k: np.empty((T, N), dtype=np.int64) for k in ("z_prev", "b", "z", "a", "z_alt", "done")}
        first = np.empty((T, N), dtype=bool)
        reward = np.empty((T, N))
        r_reg = np.empty((T, N))
        kl = np.zeros(3)
        for t in range(T):
            step = act(self.posterior, self.prior, self.obs, self.z_prev, self.first, self.draws())
            nxt, r, done, success = self.env.step(step.a)
            reg = regularized_reward(step, r, beta, master_term)
            obs[t] = self.obs
            first[t] = self.first
            ints["z_prev"][t] = self.z_prev
            ints["b"][t] = step.b
            ints["z"][t] = step.z
            ints["a"][t] = step.a
            ints["z_alt"][t] = step.z_alt
            ints["done"][t] = done
            reward[t] = r
            r_reg[t] = reg.r_reg
            kl += (reg.master.mean(), reg.action.mean(), reg.termination.mean())
            self.ep_return += r
            for k in np.flatnonzero(done):
                self.finished[k // E].append((float(self.ep_return[k]), bool(success[k])))
            self.ep_return[done] = 0.0
            self.z_prev = np.where(done, self.m, step.z)
            self.first = done.copy()
            self.obs = nxt
        self.frames += E * T

        def shape(a):
            return np.ascontiguousarray(a.reshape(T, n, E, *a.shape[2:]).swapaxes(0, 1).swapaxes(1, 2))

        seg = Segment(
            obs=shape(obs), z_prev=shape(ints["z_prev"]), first=shape(first), b=shape(ints["b"]),
            z=shape(ints["z"]), a=shape(ints["a"]), z_alt=shape(ints["z_alt"]), reward=shape(reward),
            r_reg=shape(r_reg), done=shape(ints["done"]),
            last_obs=self.obs.reshape(n, E, D).copy(), last_z_prev=self.z_prev.reshape(n, E).copy(),
            last_first=self.first.reshape(n, E).copy(),
        )
        stats = {"r_reg": float(r_reg.mean()), "kl_master": kl[0] / T, "kl_action": kl[1] / T,
                 "kl_termination": kl[2] / T}
        return seg, stats

    def restart_task(self, i: int) -> None:
        """Restart the episodes of every environment of task ``i``."""
        for k in range(i * self.E, (i + 1) * self.E):
            self.env.reset_one(k)
            self.z_prev[k] = self.m
            self.first[k] = True
            self.ep_return[k] = 0.0
        self.obs = self.env.observe()

    def drain(self) -> list[list[tuple[float, bool]]]:
        out = self.finished
        self.finished = [[] for _ in range(self.n)]
        return out


def task_reset(prior: SharedPrior, posterior: PosteriorSet, runner: Runner | None, task: int,
               rng: np.random.Generator, head_gain: float = 1.0) -> None:
    """Fresh master and value for ``task``; its option posteriors are re-copied
    from the current prior and its episodes restarted."""
    init_posterior_from_prior(prior, posterior, task, rng, head_gain)
    if runner is not None:
        runner.restart_task(task)


def reset_due(update: int, task: int, n_tasks: int, period: int) -> bool:
    """Staggered schedule: task ``i`` resets every ``period`` updates, offset by ``i * period / n``."""
    if period <= 0 or update == 0:
        return False
    offset = (task * period) // n_tasks
    return update > offset and (update - offset) % period == 0


@dataclass
class TrainResult:
    prior: SharedPrior
    posterior: PosteriorSet
    tasks: list[TaskSpec]
    records: list[dict] = field(default_factory=list)
    curve: list[tuple[int, float]] = field(default_factory=list)


class MetricsLog:
    """Line-delimited JSON records, optionally mirrored to a file."""

    def __init__(self, path: str | Path | None = None):
        self.records: list[dict] = []
        self.path = Path(path) if path else None
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("")

    def write(self, record: dict) -> None:
        self.records.append(record)
        if self.path:
            with open(self.path, "a") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")


def _atomic_save(path: Path, prior, posterior, extra) -> None:
    tmp = path.with_name(path.stem + ".tmp.npz")
    save_policy(tmp, prior, posterior, extra)
    os.replace(tmp, path)


class _Window:
    """Running sums between metric records."""

    def __init__(self, n_tasks: int):
        self.n_tasks = n_tasks
        self.clear()

    def clear(self):
        self.count = 0
        self.sums: dict[str, float] = {}
        self.episodes = [[] for _ in range(self.n_tasks)]

    def add(self, values: dict, episodes):
        self.count += 1
        for k, v in values.items():
            self.sums[k] = self.sums.get(k, 0.0) + float(v)
        for i, eps in enumerate(episodes):
            self.episodes[i].extend(eps)

    def record(self) -> dict:
        rec = {k: v / max(self.count, 1) for k, v in self.sums.items()}
        rec["returns"] = [float(np.mean([r for r, _ in e])) if e else None for e in self.episodes]
        rec["success"] = [float(np.mean([s for _, s in e])) if e else None for e in self.episodes]
        rec["episodes"] = sum(len(e) for e in self.episodes)
        return rec


def run_updates(
    runner: Runner,
    cfg: RunConfig,
    n_updates: int,
    beta,
    lambda_h,
    optimizer: Optimizer,
    trainable: list[ParamStore],
    train_prior: bool,
    objective: ObjectiveConfig,
    metrics: MetricsLog,
    reset_period: int = 0,
    rng: np.random.Generator | None = None,
    on_checkpoint=None,
    checkpoint_every: int = 0,
    curve_every: int = 0,
    lr: float | None = None,
) -> list[tuple[int, float]]:
    """The shared update loop; returns an online learning curve
    ``[(frames per task, mean episode return), ...]`` sampled every ``curve_every`` updates."""
    n_steps = cfg.trainer.n_steps
    window = _Window(runner.n)
    curve_eps: list[float] = []
    curve: list[tuple[int, float]] = []
    log_interval = max(cfg.trainer.log_interval, 1)
    for update in range(n_updates):
        step = int(runner.frames[0])
        b_now, h_now = beta(step), lambda_h(step)
        if reset_period and rng is not None:
            for i in range(runner.n):
                if reset_due(update, i, runner.n, reset_period):
                    task_reset(runner.prior, runner.posterior, runner, i, rng, cfg.policy.head_gain)
        seg, stats = runner.collect(n_steps, b_now, objective.master_term)
        bundle: LossBundle = combined_update(
            runner.posterior, runner.prior, seg, objective, optimizer, h_now, trainable,
            train_prior=train_prior, lr=lr,
        )
        episodes = runner.drain()
        for eps in episodes:
            curve_eps.extend(r for r, _ in eps)
        stats.update(
            loss_policy=bundle.policy, loss_value=bundle.value, loss_prior=bundle.prior,
            loss_entropy=bundle.entropy, loss_total=bundle.total, grad_norm=bundle.grad_norm,
        )
        window.add(stats, episodes)
        done = update + 1
        if done % log_interval == 0 or done == n_updates:
            rec = {"update": done, "frames": int(runner.frames[0]), "beta": b_now, "lambda_h": h_now}
            rec.update(window.record())
            metrics.write(rec)
            window.clear()
        if curve_every and (done % curve_every == 0 or done == n_updates):
            curve.append((int(runner.frames[0]), float(np.mean(curve_eps)) if curve_eps else float("nan")))
            curve_eps = []
        if on_checkpoint and checkpoint_every and done % checkpoint_every == 0 and done != n_updates:
            on_checkpoint(done)
    return curve


def updates_for(cfg: RunConfig, frames_per_task: int) -> int:
    per_update = cfg.env.envs_per_task * cfg.trainer.n_steps
    return max(1, frames_per_task // per_update)


def train(cfg: RunConfig, out_dir: str | Path | None = None, metrics_path: str | Path | None = None,
          tasks: list[TaskSpec] | None = None, n_options: int | None = None) -> TrainResult:
    """Train a prior and one posterior per task from scratch."""
    out_dir = Path(out_dir) if out_dir else (Path(cfg.trainer.out_dir) if cfg.trainer.out_dir else None)
    if metrics_path is None and out_dir is not None:
        metrics_path = out_dir / "metrics.jsonl"
    if tasks is None:
        tasks = resolve_tasks(cfg.env.family, cfg.env.layout, cfg.env.tasks)
    root = np.random.SeedSequence(cfg.trainer.seed)
    init_seed, run_seed, reset_seed = root.spawn(3)
    rng = np.random.default_rng(init_seed)

    probe = make_vec_env(tasks[:1], cfg.env.mode, [0], last_action=cfg.policy.last_action)
    spec = net_spec(cfg, probe.obs_dim, probe.n_actions, n_options)
    prior, posterior = build_policy(
        spec, len(tasks), rng, alpha=cfg.policy.alpha, termination=cfg.policy.termination,
        share_encoder=cfg.policy.share_encoder, gain=cfg.policy.gain, head_gain=cfg.policy.head_gain,
    )
    runner = Runner(tasks, cfg.env.envs_per_task, cfg.env.mode, run_seed, prior, posterior,
                    last_action=cfg.policy.last_action)
    optimizer = make_optimizer(cfg)
    stores = list({id(s): s for s in (*posterior.stores(), *prior.stores())}.values())
    objective = cfg.objective.objective()
    n_updates = updates_for(cfg, cfg.trainer.frames_per_task)
    metrics = MetricsLog(metrics_path)

    about = {"tasks": [t.label for t in tasks], "family": tasks[0].family, "layout": tasks[0].layout,
             "last_action": cfg.policy.last_action}
    ckpt_every = int(round(n_updates * cfg.trainer.checkpoint_every)) if cfg.trainer.checkpoint_every > 0 else 0

    def checkpoint(done: int) -> None:
        if out_dir is not None:
            _atomic_save(out_dir / "checkpoint.npz", prior, posterior,
                         {"update": done, "frames": int(runner.frames[0]), **about})

    log.info("training %d tasks for %d updates (%d frames/task)", len(tasks), n_updates, cfg.trainer.frames_per_task)
    try:
        curve = run_updates(
            runner, cfg, n_updates, cfg.objective.beta, cfg.objective.lambda_h, optimizer, stores,
            train_prior=True, objective=objective, metrics=metrics, reset_period=cfg.trainer.reset_period,
            rng=np.random.default_rng(reset_seed), on_checkpoint=checkpoint, checkpoint_every=ckpt_every,
            curve_every=max(1, n_updates // 50),
        )
    except NumericError as exc:
        metrics.write({"error": str(exc), "frames": int(runner.frames[0])})
        raise
    prior.learned_termination = True
    if out_dir is not None:
        _atomic_save(out_dir / "final.npz", prior, posterior,
                     {"update": n_updates, "frames": int(runner.frames[0]), **about})
    return TrainResult(prior, posterior, tasks, metrics.records, curve)
