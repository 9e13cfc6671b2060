"""Regularised reward, k-step advantages and the four training losses.

Per task the update minimises ``L_A + lambda_V L_V + lambda_P L_P + lambda_H L_H``:

``L_A``  policy gradient on the joint ``log q(a, z, b)`` weighted by a
         stop-gradient advantage,
``L_V``  squared advantage (gradient only through ``V(s_t, z_{t-1})``),
``L_P``  prior distillation: action log-likelihood under ``p^L`` plus a
         cross-entropy pulling ``p^T`` towards the posterior's effective
         switching probability,
``L_H``  negative entropy of the posterior factors.

Gradients are computed by hand and accumulated into the parameter stores.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigError, NumericError
from .funcapprox import Optimizer, ParamStore, log_sigmoid, log_softmax, sigmoid
from .policy import PosteriorSet, SharedPrior, StepBatch, _grouped, pin_actions, pin_termination, primitive_rows

ENTROPY_MODES = ("exact", "sampled")
DISTILL_MODES = ("exact", "sampled", "sampled-literal", "off")
REDUCTIONS = ("mean", "sum")


# ----------------------------------------------------------------------------
# schedules


@dataclass(frozen=True)
class Schedule:
    """Linear interpolation from ``start`` to ``end`` over ``frames``, then constant."""

    start: float
    end: float | None = None
    frames: int = 0

    def __call__(self, step: float) -> float:
        return schedule_eval(self, step)

    @classmethod
    def coerce(cls, value) -> "Schedule":
        if isinstance(value, Schedule):
            return value
        if isinstance(value, (int, float)):
            return cls(float(value))
        if isinstance(value, dict):
            unknown = set(value) - {"start", "end", "frames"}
            if unknown:
                raise ConfigError(f"unknown schedule keys {sorted(unknown)}; valid: start, end, frames")
            return cls(float(value["start"]), value.get("end"), int(value.get("frames", 0)))
        raise ConfigError(f"cannot read a schedule from {value!r}")

    def to_dict(self) -> dict:
        out = {"start": self.start, "frames": self.frames}
        if self.end is not None:
            out["end"] = self.end
        return out


def schedule_eval(schedule: Schedule, step: float) -> float:
    if schedule.end is None or schedule.frames <= 0:
        return float(schedule.start)
    if step >= schedule.frames:
        return float(schedule.end)
    frac = max(step / schedule.frames, 0.0)
    return float(schedule.start + frac * (schedule.end - schedule.start))


# ----------------------------------------------------------------------------
# regularised reward and returns


@dataclass
class RegRewardBreakdown:
    r_reg: np.ndarray
    master: np.ndarray
    action: np.ndarray
    termination: np.ndarray


def regularized_reward(step: StepBatch, reward, beta: float, master_term: bool = False) -> RegRewardBreakdown:
    """``r - beta * (log q - log p)`` summed over the enabled factors.

    The master factor is off by default; its role is then taken by the master
    entropy bonus.  The result is a plain array and carries no gradient.
    """
    logs = (step.logq_T, step.logq_H, step.logq_L, step.logp_T, step.logp_H, step.logp_L)
    for arr in logs:
        if not np.all(np.isfinite(arr)):
            raise NumericError("non-finite log-probability while computing the regularised reward")
    master = step.logq_H - step.logp_H
    action = step.logq_L - step.logp_L
    term = step.logq_T - step.logp_T
    penalty = action + term + (master if master_term else 0.0)
    r = np.asarray(reward, dtype=np.float64) - beta * penalty
    return RegRewardBreakdown(r, master, action, term)


def k_step_advantage(rewards, gamma: float, bootstrap: float, value: float, terminal: bool = False) -> float:
    """``sum_j gamma^j r_j + gamma^k V_boot - V``; the bootstrap is dropped at terminal states."""
    rewards = np.asarray(rewards, dtype=np.float64)
    k = len(rewards)
    ret = float(np.sum(gamma ** np.arange(k) * rewards))
    if not terminal:
        ret += gamma**k * bootstrap
    return ret - value


def segment_returns(rewards: np.ndarray, dones: np.ndarray, bootstrap: np.ndarray, gamma: float) -> np.ndarray:
    """Discounted returns for ``(T, N)`` arrays, cut at episode ends."""
    return kernels.discounted_returns(
        np.ascontiguousarray(rewards, dtype=np.float64),
        np.ascontiguousarray(dones, dtype=np.int64),
        np.ascontiguousarray(bootstrap, dtype=np.float64),
        gamma,
    )


# ----------------------------------------------------------------------------
# segments and losses


@dataclass
class Segment:
    """``T`` steps from ``E`` environments of each of ``n`` tasks.

    Step arrays have shape ``(n, E, T)`` (observations ``(n, E, T, D)``);
    ``last_*`` describe the state after the final step, for bootstrapping.
    """

    obs: np.ndarray
    z_prev: np.ndarray
    first: np.ndarray
    b: np.ndarray
    z: np.ndarray
    a: np.ndarray
    z_alt: np.ndarray
    reward: np.ndarray
    r_reg: np.ndarray
    done: np.ndarray
    last_obs: np.ndarray
    last_z_prev: np.ndarray
    last_first: np.ndarray

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.b.shape

    def flat(self, name: str) -> np.ndarray:
        arr = getattr(self, name)
        n, e, t = self.shape
        return arr.reshape(n * e * t, *arr.shape[3:])


@dataclass(frozen=True)
class ObjectiveConfig:
    gamma: float = 0.95
    lambda_a: float = 1.0
    lambda_v: float = 0.5
    lambda_p: float = 1.0
    master_term: bool = False
    entropy: str = "exact"
    distill: str = "exact"
    reduction: str = "mean"

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("gamma must lie in [0, 1]")
        if self.entropy not in ENTROPY_MODES:
            raise ConfigError(f"entropy must be one of {ENTROPY_MODES}")
        if self.distill not in DISTILL_MODES:
            raise ConfigError(f"distill must be one of {DISTILL_MODES}")
        if self.reduction not in REDUCTIONS:
            raise ConfigError(f"reduction must be one of {REDUCTIONS}")


@dataclass
class LossBundle:
    policy: float
    value: float
    prior: float
    entropy: float
    total: float
    advantages: np.ndarray = field(repr=False)
    returns: np.ndarray = field(repr=False)
    grad_norm: float = float("nan")
    stops: dict = field(default_factory=dict, repr=False)


def _onehot(idx: np.ndarray, k: int) -> np.ndarray:
    out = np.zeros((idx.shape[0], k))
    out[np.arange(idx.shape[0]), idx] = 1.0
    return out


def _grouped_backward(layer, dy: np.ndarray) -> np.ndarray:
    n = layer.groups
    dx = layer.backward(dy.reshape(n, -1, dy.shape[-1]))
    return dx.reshape(dy.shape[0], -1)


def bootstrap_values(posterior: PosteriorSet, seg: Segment) -> np.ndarray:
    n, e, _ = seg.shape
    x = seg.last_obs.reshape(n * e, -1)
    zp = seg.last_z_prev.reshape(-1)
    enc = posterior.encoder.forward(x, cache=False)
    return _grouped(posterior.head_V, enc.at(zp), None, cache=False)[:, 0].reshape(n, e)


def termination_distill_target(posterior: PosteriorSet, obs, z_prev, task: int | None = None) -> np.ndarray:
    """Posterior probability that the active option changes: ``1 - q^H(z_prev | s)``."""
    obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
    z_prev = np.atleast_1d(np.asarray(z_prev, dtype=np.int64))
    enc = posterior.encoder.forward(obs, cache=False)
    sent = np.full(obs.shape[0], posterior.spec.n_options)
    probs = np.exp(log_softmax(_grouped(posterior.head_H, enc.at(sent), task, cache=False)))
    return 1.0 - probs[np.arange(obs.shape[0]), z_prev]


def evaluate_losses(
    posterior: PosteriorSet,
    prior: SharedPrior,
    seg: Segment,
    cfg: ObjectiveConfig,
    lambda_h: float,
    backward: bool = True,
    train_prior: bool = True,
    stops: dict | None = None,
) -> LossBundle:
    """All four losses on one segment; with ``backward`` the weighted total's
    gradient is added to the parameter stores' gradient buffers.

    Returns, the advantage weighting ``L_A`` and the switching target are
    treated as constants.  Their values are returned in ``bundle.stops``;
    passing them back in ``stops`` pins them (used by gradient checks).
    """
    spec = posterior.spec
    m = spec.n_options
    n, e, t = seg.shape
    rows = n * e * t
    w = 1.0 / (e * t) if cfg.reduction == "mean" else 1.0

    x = seg.flat("obs")
    zp, z, b, a = seg.flat("z_prev"), seg.flat("z"), seg.flat("b"), seg.flat("a")
    first = seg.flat("first").astype(bool)
    bf = b.astype(np.float64)
    term_mask = (~first).astype(np.float64) if posterior.termination else np.zeros(rows)

    # targets
    if stops is None:
        boot = bootstrap_values(posterior, seg)
        r_tn = seg.r_reg.reshape(n * e, t).T
        d_tn = seg.done.reshape(n * e, t).T
        returns = segment_returns(r_tn, d_tn, boot.reshape(-1), cfg.gamma).T.reshape(rows)
    else:
        returns = stops["returns"]

    enc = posterior.encoder.forward(x, cache=backward)
    lat_prev = enc.at(zp)
    lat_sent = enc.at(np.full(rows, m, dtype=np.int64))
    lat_z = enc.at(z)

    v = _grouped(posterior.head_V, lat_prev, None, backward)[:, 0]
    h_logits = _grouped(posterior.head_H, lat_sent, None, backward)
    l_logits = pin_actions(spec, _grouped(posterior.head_L, lat_z, None, backward), z)
    lsm_H = log_softmax(h_logits)
    lsm_L = log_softmax(l_logits)
    pi_H = np.exp(lsm_H)
    pi_L = np.exp(lsm_L)
    idx = np.arange(rows)
    logq_L = lsm_L[idx, a]
    logq_H = lsm_H[idx, z] * bf
    if posterior.termination:
        t_logit = pin_termination(spec, _grouped(posterior.head_T, lat_prev, None, backward)[:, 0], zp)
        p_T = sigmoid(t_logit)
        logq_T = np.where(b == 1, log_sigmoid(t_logit), log_sigmoid(-t_logit)) * term_mask
    else:
        t_logit = p_T = None
        logq_T = np.zeros(rows)

    adv = returns - v
    adv_c = adv.copy() if stops is None else stops["advantages"]
    L_V = float(np.sum(w * adv**2))
    L_A = float(-np.sum(w * adv_c * (logq_L + logq_H + logq_T)))

    master_h_mask = bf * (0.0 if cfg.master_term else 1.0)
    if cfg.entropy == "exact":
        f_L = np.sum(pi_L * lsm_L, axis=1)
        f_H = np.sum(pi_H * lsm_H, axis=1)
        if p_T is not None:
            f_T = p_T * log_sigmoid(t_logit) + (1.0 - p_T) * log_sigmoid(-t_logit)
        else:
            f_T = np.zeros(rows)
        L_H = float(np.sum(w * (f_L + master_h_mask * f_H + term_mask * f_T)))
    else:
        L_H = float(np.sum(w * (logq_L + master_h_mask * logq_H + logq_T)))

    # prior
    shared = prior.encoder is posterior.encoder
    do_prior = train_prior and cfg.lambda_p != 0.0
    if shared:
        p_lat_z, p_lat_prev, penc = lat_z, lat_prev, None
    else:
        penc = prior.encoder.forward(x, cache=backward and do_prior)
        p_lat_z, p_lat_prev = penc.at(z), penc.at(zp)
    pl_logits = pin_actions(spec, prior.head_L.forward(p_lat_z, cache=backward and do_prior), z)
    lsm_P = log_softmax(pl_logits)
    L_P_rows = -lsm_P[idx, a]
    distill = cfg.distill != "off" and posterior.termination
    if distill:
        pt_logit = pin_termination(spec, prior.head_T.forward(p_lat_prev, cache=backward and do_prior)[:, 0], zp)
        if stops is not None:
            target = stops["target"]
        elif cfg.distill == "exact":
            target = 1.0 - pi_H[idx, np.minimum(zp, m - 1)]
        elif cfg.distill == "sampled":
            target = (seg.flat("z_alt") != zp).astype(np.float64)
        else:
            target = (seg.flat("z_alt") == zp).astype(np.float64)
        D = target * log_sigmoid(pt_logit) + (1.0 - target) * log_sigmoid(-pt_logit)
        L_P_rows = L_P_rows - term_mask * D
    L_P = float(np.sum(w * L_P_rows))

    total = cfg.lambda_a * L_A + cfg.lambda_v * L_V + cfg.lambda_p * L_P + lambda_h * L_H
    bundle = LossBundle(L_A, L_V, L_P, L_H, float(total), adv_c, returns)
    bundle.stops = {"returns": returns, "advantages": adv_c, "target": target if distill else None}
    if not backward:
        return bundle

    # gradients with respect to head outputs
    ga = cfg.lambda_a * w * adv_c
    gh = lambda_h * w
    d_V = (-2.0 * cfg.lambda_v * w * adv)[:, None]
    d_L = -ga[:, None] * (_onehot(a, spec.n_actions) - pi_L)
    d_H = -(ga * bf)[:, None] * (_onehot(z, m) - pi_H)
    if cfg.entropy == "exact":
        d_L += gh * pi_L * (lsm_L - f_L[:, None])
        d_H += (gh * master_h_mask)[:, None] * pi_H * (lsm_H - f_H[:, None])
    else:
        d_L += gh * (_onehot(a, spec.n_actions) - pi_L)
        d_H += (gh * master_h_mask)[:, None] * (_onehot(z, m) - pi_H)

    # pinned primitive rows are constants
    pinned_z, pinned_prev = primitive_rows(spec, z), primitive_rows(spec, zp)
    if pinned_z is not None:
        d_L[pinned_z] = 0.0
    dlat_z = _grouped_backward(posterior.head_L, d_L)
    dlat_sent = _grouped_backward(posterior.head_H, d_H)
    dlat_prev = _grouped_backward(posterior.head_V, d_V)
    if p_T is not None:
        d_T = -ga * term_mask * (bf - p_T)
        if cfg.entropy == "exact":
            d_T += gh * term_mask * p_T * (1.0 - p_T) * t_logit
        else:
            d_T += gh * term_mask * (bf - p_T)
        if pinned_prev is not None:
            d_T[pinned_prev] = 0.0
        dlat_prev = dlat_prev + _grouped_backward(posterior.head_T, d_T[:, None])

    if do_prior:
        gp = cfg.lambda_p * w
        dp_L = -gp * (_onehot(a, spec.n_actions) - np.exp(lsm_P))
        if pinned_z is not None:
            dp_L[pinned_z] = 0.0
        dp_lat_z = prior.head_L.backward(dp_L)
        dp_lat_prev = None
        if distill:
            dp_T = -gp * term_mask * (target - sigmoid(pt_logit))
            if pinned_prev is not None:
                dp_T[pinned_prev] = 0.0
            dp_lat_prev = prior.head_T.backward(dp_T[:, None])
        if shared:
            dlat_z = dlat_z + dp_lat_z
            if dp_lat_prev is not None:
                dlat_prev = dlat_prev + dp_lat_prev
        else:
            penc.backward([dp_lat_z, dp_lat_prev])
    enc.backward([dlat_prev, dlat_sent, dlat_z])
    return bundle


# named views on single terms, mainly for tests and diagnostics


def value_loss(posterior, prior, seg, cfg: ObjectiveConfig) -> float:
    return evaluate_losses(posterior, prior, seg, cfg, 0.0, backward=False).value


def policy_gradient_loss(posterior, prior, seg, cfg: ObjectiveConfig) -> float:
    return evaluate_losses(posterior, prior, seg, cfg, 0.0, backward=False).policy


def prior_loss(posterior, prior, seg, cfg: ObjectiveConfig) -> float:
    return evaluate_losses(posterior, prior, seg, cfg, 0.0, backward=False).prior


def entropy_loss(posterior, prior, seg, cfg: ObjectiveConfig) -> float:
    return evaluate_losses(posterior, prior, seg, cfg, 0.0, backward=False).entropy


def combined_update(
    posterior: PosteriorSet,
    prior: SharedPrior,
    seg: Segment,
    cfg: ObjectiveConfig,
    optimizer: Optimizer,
    lambda_h: float,
    trainable: list[ParamStore],
    train_prior: bool = True,
    lr: float | None = None,
) -> LossBundle:
    """One gradient step on the weighted sum of all losses over all tasks."""
    stores = {id(s): s for s in (*posterior.stores(), *prior.stores(), *trainable)}
    for store in stores.values():
        store.zero_grads()
    bundle = evaluate_losses(posterior, prior, seg, cfg, lambda_h, backward=True, train_prior=train_prior)
    if not np.isfinite(bundle.total):
        raise NumericError(f"non-finite loss {bundle.total}")
    bundle.grad_norm = optimizer.step(trainable, lr=lr)
    return bundle
