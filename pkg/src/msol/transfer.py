"""Learning new tasks with a frozen prior, and the comparison protocols.

Variants:

``msol``          posteriors start at the prior (own copy of the encoder) and
                  are fine-tuned, regularised towards the frozen prior
``msol-frozen``   option policies and terminations stay equal to the prior;
                  only master and value heads learn; with
                  ``transfer.hard_primitives`` the master may also pick any
                  primitive action as a one-step option
``distral``       one option that never terminates (prior trained the same way)
``distral+action`` as ``distral`` with the last action appended to the input
``flat``          single-level actor-critic from scratch, no prior
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig, preset
from .envs import TaskSpec, make_vec_env
from .envs import bandits as bandit_env
from .errors import ConfigError, UsageError
from .funcapprox import ParamStore
from .objective import Schedule
from .policy import (
    OptionEncoder,
    PosteriorSet,
    SharedPrior,
    act,
    build_policy,
    frozen_prior_copy,
    init_posterior_from_prior,
    load_policy,
    with_primitives,
)
from .trainer import MetricsLog, Runner, make_optimizer, net_spec, resolve_tasks, run_updates, train, updates_for

log = logging.getLogger(__name__)

VARIANTS = ("msol", "msol-frozen", "distral", "distral+action", "flat")
PROTOCOLS = (
    "bandits-transfer",
    "taxi-transfer",
    "dir-taxi-transfer",
    "taxi-generalization",
    "taxi-adaptation",
    "taxi-adaptation-8x8",
    "taxi-adaptation-10x10",
)
# held-out pairs for generalisation: every location is a pickup and a drop-off once
GENERALIZATION_HELD_OUT = (0, 4, 8, 9)


@dataclass
class TransferResult:
    variant: str
    curve: list[tuple[int, float]]
    posterior: PosteriorSet
    prior: SharedPrior
    prior_checksum_before: str
    prior_checksum_after: str
    evaluation: list[dict] = field(default_factory=list)

    @property
    def auc(self) -> float:
        return area_under_curve(self.curve)


def area_under_curve(curve) -> float:
    """Mean of the curve's return values (equal frame spacing), ignoring empty windows."""
    vals = np.array([v for _, v in curve], dtype=np.float64)
    vals = vals[np.isfinite(vals)]
    return float(vals.mean()) if vals.size else float("nan")


def _variant_settings(variant: str) -> dict:
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; valid: {VARIANTS}")
    return {
        "termination": variant in ("msol", "msol-frozen"),
        "last_action": variant == "distral+action",
        "single_option": variant in ("distral", "distral+action", "flat"),
    }


def transfer_train(
    prior: SharedPrior | None,
    tasks: list[TaskSpec],
    variant: str,
    cfg: RunConfig,
    seed: int = 0,
    metrics_path: str | Path | None = None,
) -> TransferResult:
    """Learn ``tasks`` with fresh posteriors; the given prior is never modified."""
    settings = _variant_settings(variant)
    tc = cfg.transfer
    probe = make_vec_env(tasks[:1], tc.mode, [0], last_action=settings["last_action"])
    root = np.random.SeedSequence([seed, VARIANTS.index(variant)])
    init_seed, run_seed = root.spawn(2)
    rng = np.random.default_rng(init_seed)

    if variant == "flat":
        spec = net_spec(cfg, probe.obs_dim, probe.n_actions, n_options=1)
        source, posterior = build_policy(spec, len(tasks), rng, alpha=cfg.policy.alpha, termination=False,
                                         share_encoder=False, gain=cfg.policy.gain,
                                         head_gain=cfg.policy.head_gain)
        frozen = source
        checksum_before = source.checksum()
        trainable = posterior.stores()
        beta = Schedule(0.0)
    else:
        if prior is None:
            raise UsageError(f"variant {variant!r} needs a trained prior")
        spec = prior.spec
        if spec.obs_dim != probe.obs_dim or spec.n_actions != probe.n_actions:
            raise ConfigError(
                f"prior expects obs/actions {spec.obs_dim}/{spec.n_actions}, "
                f"tasks provide {probe.obs_dim}/{probe.n_actions}"
            )
        if settings["single_option"] and spec.n_options != 1:
            raise ConfigError(f"{variant} needs a one-option prior, checkpoint has m={spec.n_options}")
        checksum_before = prior.checksum()
        frozen = frozen_prior_copy(prior, learned_termination=True)
        if variant == "msol-frozen" and tc.hard_primitives:
            frozen = with_primitives(frozen)
            spec = frozen.spec
        if variant == "msol-frozen":
            encoder = frozen.encoder
        else:
            encoder = OptionEncoder(spec, ParamStore("posterior_encoder"))
            encoder.store.load_state(frozen.encoder.store.state())
        posterior = PosteriorSet(spec, len(tasks), encoder, termination=settings["termination"])
        for i in range(len(tasks)):
            init_posterior_from_prior(frozen, posterior, i, rng, cfg.policy.head_gain)
        trainable = [posterior.control_store] if variant == "msol-frozen" else posterior.stores()
        beta = Schedule(tc.distral_beta) if variant.startswith("distral") else tc.beta

    runner = Runner(tasks, cfg.env.envs_per_task, tc.mode, run_seed, frozen, posterior,
                    last_action=settings["last_action"])
    n_updates = updates_for(cfg, tc.frames_per_task)
    curve = run_updates(
        runner, cfg, n_updates, beta, tc.lambda_h, make_optimizer(cfg, tc.lr), trainable,
        train_prior=False, objective=cfg.objective.objective(), metrics=MetricsLog(metrics_path),
        curve_every=max(1, n_updates // tc.curve_points),
    )
    after = (source if variant == "flat" else prior).checksum()
    result = TransferResult(variant, curve, posterior, frozen, checksum_before, after)
    if tc.eval_episodes:
        for i, task in enumerate(tasks):
            ev = evaluate_policy(posterior, frozen, i, task, tc.eval_episodes, seed, tc.greedy_eval,
                                 last_action=settings["last_action"])
            result.evaluation.append({"task": task.label, **ev})
    return result


def evaluate_policy(
    posterior: PosteriorSet,
    prior: SharedPrior,
    task_index: int,
    task: TaskSpec,
    episodes: int,
    seed: int = 0,
    greedy: bool = True,
    last_action: bool = False,
) -> dict:
    """Mean return and success rate over ``episodes`` test-mode episodes, no learning."""
    if episodes <= 0:
        return {"mean_return": float("nan"), "success_rate": float("nan"), "returns": []}
    root = np.random.SeedSequence([seed, task_index, 7])
    env_seed, act_seed = root.spawn(2)
    env = make_vec_env([task] * episodes, "test", env_seed.spawn(episodes), last_action=last_action)
    gens = [np.random.default_rng(s) for s in act_seed.spawn(episodes)]
    m = posterior.spec.n_options
    obs = env.reset()
    z_prev = np.full(episodes, m, dtype=np.int64)
    first = np.ones(episodes, dtype=bool)
    total = np.zeros(episodes)
    success = np.zeros(episodes, dtype=bool)
    live = np.ones(episodes, dtype=bool)
    while live.any():
        u = np.stack([g.random(4) for g in gens])
        step = act(posterior, prior, obs, z_prev, first, u, task=task_index, greedy=greedy)
        obs, r, done, succ = env.step(step.a)
        total += np.where(live, r, 0.0)
        success |= live & succ
        live &= ~done
        z_prev = np.where(done, m, step.z)
        first = done
    return {"mean_return": float(total.mean()), "success_rate": float(success.mean()),
            "returns": total.tolist()}


def option_goal_diversity(prior: SharedPrior, rollouts: int = 100, seed: int = 0) -> dict:
    """Greedy rollouts of every option prior in Moving Bandits.

    Each rollout follows ``argmax p^L(a | s, z)`` from the episode start and is
    labelled with the first goal it reaches (or ``None``).  Returns the
    per-option majority goal and its fraction; ``score`` is the smallest
    majority fraction when the options' majority goals are all distinct, else 0.
    """
    m = prior.spec.n_options
    geom = bandit_env.BanditGeometry()
    majorities, fractions = [], []
    for z in range(m):
        root = np.random.SeedSequence([seed, z])
        env = make_vec_env([TaskSpec("bandits", goal=0)] * rollouts, "test", root.spawn(rollouts))
        obs = env.reset()
        goals = env.goals.copy()
        pos = env.pos.copy()
        reached = np.full(rollouts, -1)
        slots = np.full(rollouts, z)
        deltas = np.array(bandit_env.DELTAS) * geom.step
        for _ in range(bandit_env.MAX_STEPS):
            lat = prior.encoder.forward(obs, cache=False).at(slots)
            a = prior.head_L.forward(lat, cache=False).argmax(axis=1)
            pos = np.clip(pos + deltas[a], 0.0, geom.arena)
            hit = np.hypot(*(pos[:, None, :] - goals).transpose(2, 0, 1)) < geom.threshold
            new = (reached < 0) & hit.any(axis=1)
            reached[new] = hit[new].argmax(axis=1)
            obs = np.concatenate([pos, goals.reshape(rollouts, 4)], axis=1) / geom.arena
        counts = np.array([(reached == g).sum() for g in (0, 1)])
        majorities.append(int(counts.argmax()))
        fractions.append(float(counts.max() / rollouts))
    bijective = len(set(majorities)) == m
    return {"majority": majorities, "fraction": fractions,
            "score": min(fractions) if bijective else 0.0, "bijective": bijective}


# ----------------------------------------------------------------------------
# protocols


@dataclass
class Protocol:
    name: str
    config: RunConfig
    train_tasks: list[TaskSpec]
    transfer_tasks: list[TaskSpec]


def protocol_config(name: str, scale: str = "desk") -> RunConfig:
    """Default configuration a protocol runs with when no base is given."""
    if name not in PROTOCOLS:
        raise ConfigError(f"unknown protocol {name!r}; valid: {PROTOCOLS}")
    family = "bandits" if name.startswith("bandits") else "dir-taxi" if name.startswith("dir-taxi") else "taxi"
    cfg = preset(family + ("-desk" if scale == "desk" else ""))
    if scale == "desk" and name == "taxi-adaptation-10x10":
        # longer paths on the big grid: the prior needs more frames to become
        # reliable and the shifted goals need more than the default transfer budget
        frames = 600_000
        cfg.trainer.frames_per_task = frames
        cfg.objective.beta = Schedule(0.02, 0.1, frames)
        cfg.objective.lambda_h = Schedule(0.1, 0.05, frames)
        cfg.transfer.frames_per_task = 100_000
    return cfg


def protocol(name: str, scale: str = "desk", base: RunConfig | None = None) -> Protocol:
    """Training and transfer task sets for a named protocol."""
    if name not in PROTOCOLS:
        raise ConfigError(f"unknown protocol {name!r}; valid: {PROTOCOLS}")
    if name == "bandits-transfer":
        cfg = base.copy() if base else protocol_config(name, scale)
        train_tasks = resolve_tasks("bandits", None, cfg.env.tasks)
        return Protocol(name, cfg, train_tasks, resolve_tasks("bandits", None, cfg.transfer.tasks))
    family = "dir-taxi" if name.startswith("dir-taxi") else "taxi"
    cfg = base.copy() if base else protocol_config(name, scale)
    layout = {"taxi-adaptation-8x8": "taxi8x8", "taxi-adaptation-10x10": "taxi10x10"}.get(name, cfg.env.layout)
    cfg.env.family, cfg.env.layout = family, layout
    every = resolve_tasks(family, layout, None)
    if name == "taxi-generalization":
        train_tasks = [t for i, t in enumerate(every) if i not in GENERALIZATION_HELD_OUT]
        transfer_tasks = [every[i] for i in GENERALIZATION_HELD_OUT]
    elif name.startswith("taxi-adaptation"):
        train_tasks = resolve_tasks(family, layout, cfg.env.tasks)
        transfer_tasks = resolve_tasks(family, cfg.transfer.layout or f"{layout}-shifted", cfg.transfer.tasks)
    else:
        train_tasks = resolve_tasks(family, layout, cfg.env.tasks)
        transfer_tasks = resolve_tasks(family, cfg.transfer.layout or layout, cfg.transfer.tasks)
    return Protocol(name, cfg, train_tasks, transfer_tasks)


def train_prior_for(variant: str, proto: Protocol, seed: int, out_dir: Path | None = None) -> SharedPrior | None:
    """Training phase appropriate for a transfer variant (``None`` for flat)."""
    if variant == "flat":
        return None
    cfg = proto.config.copy()
    cfg.trainer.seed = seed
    n_options = None
    if variant.startswith("distral"):
        cfg.policy.termination = False
        cfg.policy.last_action = variant == "distral+action"
        cfg.objective.beta = Schedule(cfg.transfer.distral_beta)
        n_options = 1
    result = train(cfg, out_dir=out_dir, tasks=proto.train_tasks, n_options=n_options)
    return result.prior


def run_experiment(
    name: str,
    seeds=range(5),
    variants=("msol", "msol-frozen", "flat"),
    scale: str = "desk",
    base: RunConfig | None = None,
    out_dir: str | Path | None = None,
    prior_path: str | Path | None = None,
) -> dict:
    """Train (or load) priors and run every transfer variant for every seed.

    Returns ``{variant: {"frames", "curves", "median", "std", "auc", "final", "evaluation"}}``.
    """
    proto = protocol(name, scale, base)
    out_dir = Path(out_dir) if out_dir else None
    results: dict = {v: {"curves": [], "auc": [], "final": [], "evaluation": []} for v in variants}
    for seed in seeds:
        priors: dict = {}
        for variant in variants:
            kind = "msol" if variant.startswith("msol") else variant
            if kind not in priors:
                if prior_path is not None and kind == "msol":
                    priors[kind] = load_policy(prior_path)[0]
                else:
                    run_dir = out_dir / f"seed{seed}" / f"train-{kind}" if out_dir else None
                    priors[kind] = train_prior_for(variant, proto, seed, run_dir)
            metrics = out_dir / f"seed{seed}" / f"transfer-{variant}.jsonl" if out_dir else None
            res = transfer_train(priors[kind], proto.transfer_tasks, variant, proto.config, seed, metrics)
            if res.prior_checksum_before != res.prior_checksum_after:
                raise AssertionError(f"{variant}: prior changed during transfer")
            entry = results[variant]
            entry["frames"] = [f for f, _ in res.curve]
            entry["curves"].append([v for _, v in res.curve])
            entry["auc"].append(res.auc)
            entry["final"].append(res.curve[-1][1])
            entry["evaluation"].append(res.evaluation)
            log.info("%s seed %d %s: auc %.3f final %.3f", name, seed, variant, res.auc, res.curve[-1][1])
    for entry in results.values():
        curves = np.array(entry["curves"], dtype=np.float64)
        with warnings.catch_warnings():  # windows without a finished episode stay NaN
            warnings.simplefilter("ignore", RuntimeWarning)
            entry["median"] = np.nanmedian(curves, axis=0).tolist()
            entry["std"] = np.nanstd(curves, axis=0).tolist()
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / f"{name}.json").write_text(json.dumps({"protocol": name, "variants": results}, indent=1))
    return results
