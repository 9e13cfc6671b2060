"""Hierarchical soft-option policies.

Each task ``i`` owns a posterior ``(q^T_i, q^H_i, q^L_i, V_i)``; all tasks share
a prior ``(p^T, p^H, p^L)``.  One step samples, in order, a termination bit
``b`` for the previous option, an option ``z`` (re-drawn from the master only
when ``b = 1``), and a primitive action ``a`` from the option's policy.

Option indices run ``0..m-1``; index ``m`` is the sentinel "no previous option"
used on the first step of an episode.  When ``spec.primitives = k`` the last
``k`` options are pinned primitives: option ``m - k + j`` always plays action
``j`` and always terminates, whatever the heads say.

Architecture: a shared encoder maps the observation through a dense trunk; the
option one-hot goes through its own dense layer and is added (concatenated
then projected) before the last hidden layer, so every head reads a latent
that depends on ``(s, option slot)``.  Heads are single linear layers.  The
master reads the sentinel slot, termination and value read the previous
option's slot, the intra-option policy reads the current option's slot.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import kernels
from .errors import ConfigError, UsageError
from .funcapprox import (
    Linear,
    ParamStore,
    StackedLinear,
    _act,
    _act_grad,
    bernoulli_log_prob,
    load_checkpoint,
    log_sigmoid,
    log_softmax,
    orthogonal,
    save_checkpoint,
)

NEG_INF = -1e30
PIN = 30.0  # logit margin of a pinned primitive option


@dataclass(frozen=True)
class NetSpec:
    obs_dim: int
    n_actions: int
    n_options: int
    hidden: tuple[int, ...] = (64, 64)
    option_embed: int = 128
    activation: str = "tanh"
    primitives: int = 0

    def __post_init__(self):
        if self.n_options < 1:
            raise ConfigError("n_options must be >= 1")
        if not 0 <= self.primitives < self.n_options:
            raise ConfigError("primitives must leave at least one learned option")
        if len(self.hidden) < 1:
            raise ConfigError("encoder needs at least one hidden layer")
        if min(self.obs_dim, self.n_actions, self.option_embed, *self.hidden) < 1:
            raise ConfigError("all network widths must be >= 1")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    @property
    def latent(self) -> int:
        return self.hidden[-1]

    @property
    def sentinel(self) -> int:
        return self.n_options

    @property
    def first_primitive(self) -> int:
        return self.n_options - self.primitives

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


class OptionEncoder:
    """State trunk plus option embedding, producing per-slot latents."""

    def __init__(self, spec: NetSpec, store: ParamStore, prefix: str = "enc"):
        self.spec = spec
        self.store = store
        widths = (spec.obs_dim, *spec.hidden[:-1])
        self.trunk = [
            Linear(store, f"{prefix}.trunk{i}", widths[i], widths[i + 1]) for i in range(len(widths) - 1)
        ]
        self.embed = Linear(store, f"{prefix}.embed", spec.n_options + 1, spec.option_embed)
        self.last_s = Linear(store, f"{prefix}.last_s", widths[-1], spec.latent)
        self.z_key = f"{prefix}.last_z.w"
        store.add(self.z_key, (spec.option_embed, spec.latent))
        self._eye = np.eye(spec.n_options + 1)

    def init(self, rng: np.random.Generator, gain: float = 1.0) -> None:
        for layer in self.trunk:
            layer.init(rng, gain)
        self.embed.init(rng, gain)
        self.last_s.init(rng, gain)
        self.store.assign(self.z_key, orthogonal(rng, (self.spec.option_embed, self.spec.latent), gain))

    def forward(self, x: np.ndarray, cache: bool = True) -> "EncoderPass":
        return EncoderPass(self, np.asarray(x, dtype=np.float64), cache)


class EncoderPass:
    """One encoder evaluation; ``at(slots)`` reads latents, ``backward`` pushes gradients."""

    def __init__(self, enc: OptionEncoder, x: np.ndarray, cache: bool):
        self.enc = enc
        self.cache = cache
        act = enc.spec.activation
        h = x
        self.trunk_out = []
        for layer in enc.trunk:
            h = _act(act, layer.forward(h, cache=cache))
            self.trunk_out.append(h)
        self.pre_s = enc.last_s.forward(h, cache=cache)
        self.emb = _act(act, enc.embed.forward(enc._eye, cache=cache))
        self.slot_bias = self.emb @ enc.store[enc.z_key]
        self.uses: list[tuple[np.ndarray, np.ndarray]] = []

    def at(self, slots) -> np.ndarray:
        slots = np.asarray(slots, dtype=np.int64)
        lat = _act(self.enc.spec.activation, self.pre_s + self.slot_bias[slots])
        if self.cache:
            self.uses.append((slots, lat))
        return lat

    def backward(self, dlats) -> np.ndarray:
        if not self.cache:
            raise UsageError("backward on an uncached encoder pass")
        enc = self.enc
        act = enc.spec.activation
        if len(dlats) != len(self.uses):
            raise UsageError("one gradient (or None) per latent read is required")
        d_pre = np.zeros_like(self.pre_s)
        d_bias = np.zeros_like(self.slot_bias)
        for (slots, lat), dlat in zip(self.uses, dlats):
            if dlat is None:
                continue
            g = _act_grad(act, lat, dlat)
            d_pre += g
            onehot = enc._eye[slots]
            d_bias += onehot.T @ g
        enc.store.grads[enc.z_key] += self.emb.T @ d_bias
        enc.embed.backward(_act_grad(act, self.emb, d_bias @ enc.store[enc.z_key].T))
        dh = enc.last_s.backward(d_pre)
        for layer, out in zip(reversed(enc.trunk), reversed(self.trunk_out)):
            dh = layer.backward(_act_grad(act, out, dh))
        return dh


def _grouped(layer: StackedLinear, x: np.ndarray, task: int | None, cache: bool) -> np.ndarray:
    """Apply a per-task head to task-major rows (``task=None``) or to one task's rows."""
    if task is None:
        n = layer.groups
        if x.shape[0] % n:
            raise UsageError(f"{x.shape[0]} rows cannot be split over {n} tasks")
        y = layer.forward(x.reshape(n, -1, x.shape[-1]), cache=cache)
        return y.reshape(x.shape[0], layer.out_dim)
    w = layer.store[layer.w_key][task]
    b = layer.store[layer.b_key][task]
    return x @ w + b


def primitive_rows(spec: NetSpec, slots) -> np.ndarray | None:
    """Mask of rows whose slot is a pinned primitive (``None`` when there are none)."""
    if not spec.primitives:
        return None
    slots = np.asarray(slots)
    return (slots >= spec.first_primitive) & (slots < spec.n_options)


def pin_actions(spec: NetSpec, logits: np.ndarray, slots) -> np.ndarray:
    rows = primitive_rows(spec, slots)
    if rows is None or not rows.any():
        return logits
    out = logits.copy()
    idx = np.flatnonzero(rows)
    out[idx] = 0.0
    out[idx, np.asarray(slots)[idx] - spec.first_primitive] = PIN
    return out


def pin_termination(spec: NetSpec, logit: np.ndarray, slots) -> np.ndarray:
    rows = primitive_rows(spec, slots)
    if rows is None or not rows.any():
        return logit
    return np.where(rows, PIN, logit)


def with_primitives(prior: "SharedPrior") -> "SharedPrior":
    """Copy of a prior whose option set gains one pinned option per action.

    Embedding rows of the new slots start at zero; every other tensor is copied.
    """
    spec = prior.spec
    if spec.primitives:
        raise ConfigError("prior already has primitive options")
    m, k = spec.n_options, spec.n_actions
    aug = replace(spec, n_options=m + k, primitives=k)
    encoder = OptionEncoder(aug, ParamStore("prior_encoder"))
    state = prior.encoder.store.state()
    key = prior.encoder.embed.w_key
    w = np.zeros((m + k + 1, spec.option_embed))
    w[:m] = state[key][:m]
    w[m + k] = state[key][m]  # sentinel
    state[key] = w
    encoder.store.load_state(state)
    out = SharedPrior(aug, encoder, alpha=prior.alpha, learned_termination=prior.learned_termination)
    out.store.load_state(prior.store.state())
    return out


class SharedPrior:
    """Cross-task prior: learned ``p^L`` and ``p^T`` heads, uniform ``p^H``.

    While ``learned_termination`` is false the regularised reward uses the
    fixed Bernoulli prior ``p(b) = (1 - alpha)^b alpha^(1 - b)``; the learned
    ``p^T`` head is still distilled for later transfer.
    """

    def __init__(
        self,
        spec: NetSpec,
        encoder: OptionEncoder | None = None,
        alpha: float = 0.95,
        learned_termination: bool = False,
    ):
        if not 0.0 < alpha < 1.0:
            raise ConfigError("alpha must lie in (0, 1)")
        self.spec = spec
        self.alpha = alpha
        self.learned_termination = learned_termination
        if encoder is None:
            encoder = OptionEncoder(spec, ParamStore("prior_encoder"))
        self.encoder = encoder
        self.store = ParamStore("prior")
        self.head_L = Linear(self.store, "pL", spec.latent, spec.n_actions)
        self.head_T = Linear(self.store, "pT", spec.latent, 1)

    def init(self, rng: np.random.Generator, gain: float = 1.0, head_gain: float = 1.0,
             init_encoder: bool = True) -> None:
        if init_encoder:
            self.encoder.init(rng, gain)
        self.head_L.init(rng, head_gain)
        # learned termination prior starts at the fixed Bernoulli
        self.store.tensors[self.head_T.w_key].fill(0.0)
        self.store.tensors[self.head_T.b_key].fill(np.log((1.0 - self.alpha) / self.alpha))

    def fixed_termination_log_prob(self, b) -> np.ndarray:
        b = np.asarray(b, dtype=np.float64)
        return b * np.log1p(-self.alpha) + (1.0 - b) * np.log(self.alpha)

    def stores(self) -> list[ParamStore]:
        return [self.encoder.store, self.store]

    def checksum(self) -> str:
        return self.encoder.store.checksum() + self.store.checksum()

    def master_log_prob(self, b) -> np.ndarray:
        """``log p^H(z | z_prev, b)`` for a consistent ``(b, z)`` pair."""
        return np.where(np.asarray(b) == 1, -np.log(self.spec.n_options), 0.0)


class PosteriorSet:
    """Per-task posteriors for ``n_tasks`` tasks over one shared encoder."""

    def __init__(self, spec: NetSpec, n_tasks: int, encoder: OptionEncoder, termination: bool = True):
        if n_tasks < 1:
            raise ConfigError("n_tasks must be >= 1")
        self.spec = spec
        self.n_tasks = n_tasks
        self.encoder = encoder
        self.termination = termination
        self.option_store = ParamStore("posterior_options")
        self.control_store = ParamStore("posterior_control")
        H = spec.latent
        self.head_L = StackedLinear(self.option_store, "qL", n_tasks, H, spec.n_actions)
        self.head_T = StackedLinear(self.option_store, "qT", n_tasks, H, 1)
        self.head_H = StackedLinear(self.control_store, "qH", n_tasks, H, spec.n_options)
        self.head_V = StackedLinear(self.control_store, "V", n_tasks, H, 1)

    def stores(self) -> list[ParamStore]:
        return [self.encoder.store, self.option_store, self.control_store]

    def init_control(self, task: int, rng: np.random.Generator, head_gain: float = 1.0) -> None:
        """Fresh master and value heads for one task."""
        self.head_H.init_group(task, rng, head_gain)
        self.head_V.init_group(task, rng, 1.0)


def init_posterior_from_prior(
    prior: SharedPrior,
    posterior: PosteriorSet,
    task: int,
    rng: np.random.Generator,
    head_gain: float = 1.0,
) -> None:
    """Copy the option heads from the prior and re-initialise master and value.

    ``q^T`` copies the learned ``p^T`` when the prior uses it, otherwise it is
    set to the fixed Bernoulli (zero weights, matching bias).
    """
    if prior.spec != posterior.spec:
        raise ConfigError(f"prior/posterior architecture mismatch: {prior.spec} vs {posterior.spec}")
    posterior.head_L.set_group(task, prior.store[prior.head_L.w_key], prior.store[prior.head_L.b_key])
    if prior.learned_termination:
        posterior.head_T.set_group(task, prior.store[prior.head_T.w_key], prior.store[prior.head_T.b_key])
    else:
        posterior.head_T.set_group(
            task,
            np.zeros((posterior.spec.latent, 1)),
            np.full(1, np.log((1.0 - prior.alpha) / prior.alpha)),
        )
    posterior.init_control(task, rng, head_gain)


def build_policy(
    spec: NetSpec,
    n_tasks: int,
    rng: np.random.Generator,
    alpha: float = 0.95,
    termination: bool = True,
    share_encoder: bool = True,
    gain: float = 1.0,
    head_gain: float = 1.0,
) -> tuple[SharedPrior, PosteriorSet]:
    """Fresh prior plus ``n_tasks`` posteriors initialised from it."""
    prior_encoder = OptionEncoder(spec, ParamStore("encoder"))
    prior = SharedPrior(spec, prior_encoder, alpha=alpha, learned_termination=False)
    prior.init(rng, gain, head_gain)
    if share_encoder:
        post_encoder = prior_encoder
    else:
        post_encoder = OptionEncoder(spec, ParamStore("posterior_encoder"))
        post_encoder.store.load_state(prior_encoder.store.state())
    posterior = PosteriorSet(spec, n_tasks, post_encoder, termination=termination)
    for i in range(n_tasks):
        init_posterior_from_prior(prior, posterior, i, rng, head_gain)
    return prior, posterior


def distral_policy(spec: NetSpec, mode: str = "plain") -> dict:
    """Settings that turn the hierarchy into Distral: one option, never terminate.

    Returns keyword overrides for :func:`build_policy` and the observation
    wrapper.  ``plus-action`` appends the last primitive action to the input;
    ``spec.obs_dim`` must already include those extra ``n_actions`` entries.
    """
    if spec.n_options != 1:
        raise ConfigError(f"Distral needs exactly one option, got m={spec.n_options}")
    if mode not in ("plain", "plus-action"):
        raise ConfigError(f"unknown Distral mode {mode!r}; valid: plain, plus-action")
    return {"termination": False, "last_action": mode == "plus-action"}


# ----------------------------------------------------------------------------
# acting


@dataclass
class StepBatch:
    """Decisions and cached log-probabilities for a batch of environments."""

    b: np.ndarray
    z: np.ndarray
    a: np.ndarray
    z_alt: np.ndarray
    logq_T: np.ndarray
    logq_H: np.ndarray
    logq_L: np.ndarray
    logp_T: np.ndarray
    logp_H: np.ndarray
    logp_L: np.ndarray
    value: np.ndarray
    master_probs: np.ndarray = field(repr=False, default=None)


@dataclass(frozen=True)
class StepDecision:
    b: int
    z: int
    a: int
    logq_T: float
    logq_H: float
    logq_L: float
    logp_T: float
    logp_H: float
    logp_L: float
    value: float


def prior_termination_log_prob(prior: SharedPrior, lat_prev_prior: np.ndarray, b, first, termination: bool,
                               z_prev=None):
    b = np.asarray(b)
    if not termination:
        return np.zeros(b.shape[0])
    if prior.learned_termination:
        l_p = lat_prev_prior @ prior.store[prior.head_T.w_key][:, 0] + prior.store[prior.head_T.b_key][0]
        if z_prev is not None:
            l_p = pin_termination(prior.spec, l_p, z_prev)
        lp = np.where(b == 1, log_sigmoid(l_p), log_sigmoid(-l_p))
    else:
        lp = prior.fixed_termination_log_prob(b)
    return np.where(first, 0.0, lp)


def act(
    posterior: PosteriorSet,
    prior: SharedPrior,
    obs: np.ndarray,
    z_prev: np.ndarray,
    first: np.ndarray,
    u: np.ndarray,
    task: int | None = None,
    greedy: bool = False,
) -> StepBatch:
    """Sample ``(b, z, a)`` for a batch of environments.

    ``obs`` rows are task-major over all posteriors (``task=None``) or all
    belong to ``task``.  ``u`` holds four uniforms per row, consumed in a fixed
    pattern (termination, master, action, distillation re-draw) so the random
    stream does not depend on which branches are taken.
    """
    spec = posterior.spec
    m = spec.n_options
    obs = np.asarray(obs, dtype=np.float64)
    z_prev = np.asarray(z_prev, dtype=np.int64)
    first = np.asarray(first, dtype=bool)
    n = obs.shape[0]
    if np.any(~first & (z_prev == m)):
        raise UsageError("sentinel previous option is only valid on the first step")
    if np.any(first & (z_prev != m)):
        raise UsageError("first step must use the sentinel previous option")

    enc = posterior.encoder.forward(obs, cache=False)
    sentinel = np.full(n, m, dtype=np.int64)
    lat_prev = enc.at(z_prev)
    lat_sent = enc.at(sentinel)
    v = _grouped(posterior.head_V, lat_prev, task, cache=False)[:, 0]
    master_logits = _grouped(posterior.head_H, lat_sent, task, cache=False)

    if posterior.termination:
        t_logit = pin_termination(spec, _grouped(posterior.head_T, lat_prev, task, cache=False)[:, 0], z_prev)
        if greedy:
            b = (t_logit > 0).astype(np.int64)
            lq_T = np.where(b == 1, log_sigmoid(t_logit), log_sigmoid(-t_logit))
        else:
            b, lq_T = kernels.sample_bernoulli(np.ascontiguousarray(t_logit), np.ascontiguousarray(u[:, 0]))
        b = np.where(first, 1, b)
        lq_T = np.where(first, 0.0, lq_T)
    else:
        b = first.astype(np.int64)
        lq_T = np.zeros(n)

    master_logits = np.ascontiguousarray(master_logits)
    if greedy:
        z_new = master_logits.argmax(axis=1)
        master_lp = log_softmax(master_logits)
        lq_new = master_lp[np.arange(n), z_new]
    else:
        z_new, lq_new = kernels.sample_categorical(master_logits, np.ascontiguousarray(u[:, 1]))
    z_alt, _ = kernels.sample_categorical(master_logits, np.ascontiguousarray(u[:, 3]))
    z = np.where(b == 1, z_new, z_prev)
    lq_H = np.where(b == 1, lq_new, 0.0)

    lat_z = enc.at(z)
    action_logits = np.ascontiguousarray(pin_actions(spec, _grouped(posterior.head_L, lat_z, task, cache=False), z))
    if greedy:
        a = action_logits.argmax(axis=1)
        lq_L = log_softmax(action_logits)[np.arange(n), a]
    else:
        a, lq_L = kernels.sample_categorical(action_logits, np.ascontiguousarray(u[:, 2]))

    if prior.encoder is posterior.encoder:
        p_lat_z, p_lat_prev = lat_z, lat_prev
    else:
        penc = prior.encoder.forward(obs, cache=False)
        p_lat_z, p_lat_prev = penc.at(z), penc.at(z_prev)
    p_logits = pin_actions(spec, prior.head_L.forward(p_lat_z, cache=False), z)
    lp_L = log_softmax(p_logits)[np.arange(n), a]
    lp_T = prior_termination_log_prob(prior, p_lat_prev, b, first, posterior.termination, z_prev)
    lp_H = prior.master_log_prob(b)
    return StepBatch(
        b=b, z=z, a=a, z_alt=z_alt,
        logq_T=lq_T, logq_H=lq_H, logq_L=lq_L,
        logp_T=lp_T, logp_H=lp_H, logp_L=lp_L,
        value=v, master_probs=np.exp(log_softmax(master_logits)),
    )


def act_one(posterior: PosteriorSet, prior: SharedPrior, task: int, obs, z_prev: int, t: int,
            rng: np.random.Generator, greedy: bool = False) -> StepDecision:
    """Single-environment form of :func:`act`; ``t`` counts from 1."""
    m = posterior.spec.n_options
    if z_prev == m and t > 1:
        raise UsageError("sentinel previous option is only valid at t = 1")
    first = t == 1
    if first:
        z_prev = m
    u = rng.random((1, 4))
    s = act(posterior, prior, np.asarray(obs, dtype=np.float64)[None, :], np.array([z_prev]),
            np.array([first]), u, task=task, greedy=greedy)
    return StepDecision(
        int(s.b[0]), int(s.z[0]), int(s.a[0]),
        float(s.logq_T[0]), float(s.logq_H[0]), float(s.logq_L[0]),
        float(s.logp_T[0]), float(s.logp_H[0]), float(s.logp_L[0]), float(s.value[0]),
    )


def head_distributions(posterior: PosteriorSet, task: int, obs, z_prev: int):
    """``(q^T(b=1), q^H(.|s), q^L(.|s, z) for every z)`` at one state."""
    spec = posterior.spec
    m = spec.n_options
    x = np.asarray(obs, dtype=np.float64)[None, :]
    enc = posterior.encoder.forward(x, cache=False)
    t_logit = pin_termination(spec, _grouped(posterior.head_T, enc.at([z_prev]), task, cache=False)[:, 0], [z_prev])[0]
    master = np.exp(log_softmax(_grouped(posterior.head_H, enc.at([m]), task, cache=False)[0]))
    options = np.stack([
        np.exp(log_softmax(pin_actions(spec, _grouped(posterior.head_L, enc.at([z]), task, cache=False), [z])[0]))
        for z in range(m)
    ])
    p_term = float(np.exp(log_sigmoid(t_logit))) if posterior.termination else 0.0
    return p_term, master, options


def joint_log_prob(posterior: PosteriorSet, task: int, obs, z_prev: int, b: int, z: int, a: int,
                   first: bool = False) -> float:
    """``log q^T(b) + log q^H(z | s, z_prev, b) + log q^L(a | s, z)``.

    Inconsistent ``(b, z, z_prev)`` combinations return the ``NEG_INF`` sentinel.
    """
    m = posterior.spec.n_options
    if first:
        if b != 1:
            return NEG_INF
        z_prev = m
    x = np.asarray(obs, dtype=np.float64)[None, :]
    enc = posterior.encoder.forward(x, cache=False)
    if first or not posterior.termination:
        if not first and b != 0:
            return NEG_INF
        lq_T = 0.0
    else:
        t_logit = _grouped(posterior.head_T, enc.at([z_prev]), task, cache=False)[:, 0]
        lq_T = bernoulli_log_prob(pin_termination(posterior.spec, t_logit, [z_prev])[0], b)
    if b == 1:
        lq_H = float(log_softmax(_grouped(posterior.head_H, enc.at([m]), task, cache=False)[0])[z])
    elif z == z_prev:
        lq_H = 0.0
    else:
        return NEG_INF
    lq_L = float(log_softmax(pin_actions(posterior.spec, _grouped(posterior.head_L, enc.at([z]), task, cache=False), [z])[0])[a])
    return lq_T + lq_H + lq_L


# ----------------------------------------------------------------------------
# checkpoints


def save_policy(path: str | Path, prior: SharedPrior, posterior: PosteriorSet | None = None,
                extra: dict | None = None) -> None:
    """Prior (and optionally posteriors) in the tensor checkpoint format."""
    tensors = {}
    for key, value in prior.encoder.store.tensors.items():
        tensors[f"prior_encoder/{key}"] = value
    for key, value in prior.store.tensors.items():
        tensors[f"prior/{key}"] = value
    manifest = {
        "kind": "msol-policy",
        "spec": prior.spec.to_dict(),
        "n_options": prior.spec.n_options,
        "alpha": prior.alpha,
        "learned_termination": prior.learned_termination,
        "heads": {"prior": ["pL", "pT"]},
    }
    if posterior is not None:
        if posterior.encoder is not prior.encoder:
            for key, value in posterior.encoder.store.tensors.items():
                tensors[f"posterior_encoder/{key}"] = value
        for store, tag in ((posterior.option_store, "posterior_options"), (posterior.control_store, "posterior_control")):
            for key, value in store.tensors.items():
                tensors[f"{tag}/{key}"] = value
        manifest["heads"]["posterior"] = ["qT", "qH", "qL", "V"]
        manifest["n_tasks"] = posterior.n_tasks
        manifest["termination"] = posterior.termination
        manifest["shared_encoder"] = posterior.encoder is prior.encoder
    if extra:
        manifest["extra"] = extra
    save_checkpoint(path, tensors, manifest)


def _section(tensors: dict, prefix: str) -> dict:
    p = prefix + "/"
    return {k[len(p):]: v for k, v in tensors.items() if k.startswith(p)}


def load_policy(path: str | Path) -> tuple[SharedPrior, PosteriorSet | None, dict]:
    tensors, manifest = load_checkpoint(path)
    if manifest.get("kind") != "msol-policy":
        raise ConfigError(f"{path}: not a policy checkpoint")
    spec_d = dict(manifest["spec"])
    spec_d["hidden"] = tuple(spec_d["hidden"])
    spec = NetSpec(**spec_d)
    encoder = OptionEncoder(spec, ParamStore("encoder"))
    encoder.store.load_state(_section(tensors, "prior_encoder"))
    prior = SharedPrior(spec, encoder, alpha=manifest["alpha"],
                        learned_termination=manifest["learned_termination"])
    prior.store.load_state(_section(tensors, "prior"))
    posterior = None
    if "n_tasks" in manifest:
        if manifest["shared_encoder"]:
            p_enc = encoder
        else:
            p_enc = OptionEncoder(spec, ParamStore("posterior_encoder"))
            p_enc.store.load_state(_section(tensors, "posterior_encoder"))
        posterior = PosteriorSet(spec, manifest["n_tasks"], p_enc, termination=manifest["termination"])
        posterior.option_store.load_state(_section(tensors, "posterior_options"))
        posterior.control_store.load_state(_section(tensors, "posterior_control"))
    return prior, posterior, manifest


def frozen_prior_copy(prior: SharedPrior, learned_termination: bool = True) -> SharedPrior:
    """Independent copy of the prior (own encoder tensors) for transfer."""
    encoder = OptionEncoder(prior.spec, ParamStore("prior_encoder"))
    encoder.store.load_state(prior.encoder.store.state())
    out = SharedPrior(prior.spec, encoder, alpha=prior.alpha, learned_termination=learned_termination)
    out.store.load_state(prior.store.state())
    return out


def with_obs_dim(spec: NetSpec, obs_dim: int) -> NetSpec:
    return replace(spec, obs_dim=obs_dim)
