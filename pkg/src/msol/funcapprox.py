"""Small float64 neural-network toolkit with hand-written reverse mode.

Every layer caches what it needs during ``forward`` and accumulates (``+=``)
parameter gradients into its :class:`ParamStore` during ``backward``.  There
is no graph object: callers chain ``backward`` calls in reverse order.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, NumericError, UsageError

CHECKPOINT_FORMAT_VERSION = 1

ACTIVATIONS = ("tanh", "relu")


class ParamStore:
    """Named float64 tensors, each with a same-shaped gradient buffer."""

    def __init__(self, name: str = "params"):
        self.name = name
        self.tensors: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.updates = 0

    def add(self, key: str, shape: Sequence[int]) -> np.ndarray:
        if key in self.tensors:
            raise ConfigError(f"duplicate tensor {key!r} in store {self.name!r}")
        shape = tuple(int(s) for s in shape)
        self.tensors[key] = np.zeros(shape, dtype=np.float64)
        self.grads[key] = np.zeros(shape, dtype=np.float64)
        return self.tensors[key]

    def __getitem__(self, key: str) -> np.ndarray:
        return self.tensors[key]

    def __contains__(self, key: str) -> bool:
        return key in self.tensors

    def __iter__(self):
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def zero_grads(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def assign(self, key: str, value: np.ndarray) -> None:
        """Overwrite a tensor in place (keeps views held by layers valid)."""
        value = np.asarray(value, dtype=np.float64)
        if value.shape != self.tensors[key].shape:
            raise ConfigError(
                f"shape mismatch for {self.name}/{key}: "
                f"{value.shape} vs {self.tensors[key].shape}"
            )
        self.tensors[key][...] = value

    def num_params(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def checksum(self) -> str:
        h = hashlib.sha256()
        for key in sorted(self.tensors):
            h.update(key.encode())
            h.update(np.ascontiguousarray(self.tensors[key]).tobytes())
        return h.hexdigest()

    def copy(self, name: str | None = None) -> "ParamStore":
        other = ParamStore(name or self.name)
        for key, value in self.tensors.items():
            other.add(key, value.shape)[...] = value
        other.updates = self.updates
        return other

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.tensors.items()}

    def load_state(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        missing = set(self.tensors) - set(state)
        extra = set(state) - set(self.tensors)
        if strict and (missing or extra):
            raise ConfigError(
                f"store {self.name!r}: missing {sorted(missing)}, unexpected {sorted(extra)}"
            )
        for key, value in state.items():
            if key in self.tensors:
                self.assign(key, value)


# ----------------------------------------------------------------------------
# initialisation


def orthogonal(rng: np.random.Generator, shape: tuple[int, int], gain: float = 1.0) -> np.ndarray:
    rows, cols = shape
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


# ----------------------------------------------------------------------------
# activations and distribution helpers


def _act(name: str, x: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(x)
    return np.maximum(x, 0.0)


def _act_grad(name: str, y: np.ndarray, dy: np.ndarray) -> np.ndarray:
    # derivative expressed through the activation output
    if name == "tanh":
        return dy * (1.0 - y * y)
    return dy * (y > 0.0)


def log_softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    return np.exp(log_softmax(logits, axis=axis))


def log_sigmoid(x: np.ndarray) -> np.ndarray:
    """``log(1 / (1 + exp(-x)))`` without overflow for large ``|x|``."""
    x = np.asarray(x, dtype=np.float64)
    return -np.logaddexp(0.0, -x)


def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.exp(log_sigmoid(x))


def categorical_log_prob(logits: np.ndarray, index: int) -> float:
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 1:
        raise UsageError("categorical_log_prob expects a single logits vector")
    if not 0 <= int(index) < logits.shape[0]:
        raise UsageError(f"index {index} out of range for {logits.shape[0]} categories")
    return float(log_softmax(logits)[int(index)])


def bernoulli_log_prob(logit: float, bit: int) -> float:
    """Log-probability of ``bit`` under ``Bernoulli(sigmoid(logit))``."""
    if bit not in (0, 1):
        raise UsageError(f"bit must be 0 or 1, got {bit!r}")
    logit = float(logit)
    return float(log_sigmoid(logit if bit == 1 else -logit))


# ----------------------------------------------------------------------------
# layers


class Linear:
    """``y = x @ W + b`` on the trailing axis; leading axes are batch axes."""

    def __init__(self, store: ParamStore, name: str, in_dim: int, out_dim: int):
        if in_dim < 1 or out_dim < 1:
            raise ConfigError(f"layer {name}: widths must be >= 1")
        self.store = store
        self.name = name
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.w_key = f"{name}.w"
        self.b_key = f"{name}.b"
        store.add(self.w_key, (in_dim, out_dim))
        store.add(self.b_key, (out_dim,))
        self._x: np.ndarray | None = None

    def init(self, rng: np.random.Generator, gain: float = 1.0, bias: float = 0.0) -> None:
        self.store.assign(self.w_key, orthogonal(rng, (self.in_dim, self.out_dim), gain))
        self.store.tensors[self.b_key].fill(bias)

    def forward(self, x: np.ndarray, cache: bool = True) -> np.ndarray:
        if x.shape[-1] != self.in_dim:
            raise ConfigError(
                f"layer {self.name}: expected input width {self.in_dim}, got {x.shape[-1]}"
            )
        if cache:
            self._x = x
        return x @ self.store.tensors[self.w_key] + self.store.tensors[self.b_key]

    def backward(self, dy: np.ndarray) -> np.ndarray:
        if self._x is None:
            raise UsageError(f"backward on {self.name} before forward")
        x2 = self._x.reshape(-1, self.in_dim)
        dy2 = dy.reshape(-1, self.out_dim)
        self.store.grads[self.w_key] += x2.T @ dy2
        self.store.grads[self.b_key] += dy2.sum(axis=0)
        return dy @ self.store.tensors[self.w_key].T


class StackedLinear:
    """One independent linear map per group: ``y[g] = x[g] @ W[g] + b[g]``.

    Used for per-task heads so every task is evaluated in one batched matmul.
    ``x`` has shape ``(groups, rows, in_dim)``.
    """

    def __init__(self, store: ParamStore, name: str, groups: int, in_dim: int, out_dim: int):
        if groups < 1 or in_dim < 1 or out_dim < 1:
            raise ConfigError(f"layer {name}: sizes must be >= 1")
        self.store = store
        self.name = name
        self.groups = groups
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.w_key = f"{name}.w"
        self.b_key = f"{name}.b"
        store.add(self.w_key, (groups, in_dim, out_dim))
        store.add(self.b_key, (groups, out_dim))
        self._x: np.ndarray | None = None

    def init_group(
        self, g: int, rng: np.random.Generator, gain: float = 1.0, bias: float = 0.0
    ) -> None:
        self.store.tensors[self.w_key][g] = orthogonal(rng, (self.in_dim, self.out_dim), gain)
        self.store.tensors[self.b_key][g] = bias

    def set_group(self, g: int, w: np.ndarray, b: np.ndarray) -> None:
        self.store.tensors[self.w_key][g] = w
        self.store.tensors[self.b_key][g] = b

    def forward(self, x: np.ndarray, cache: bool = True) -> np.ndarray:
        if x.ndim != 3 or x.shape[0] != self.groups or x.shape[2] != self.in_dim:
            raise ConfigError(
                f"layer {self.name}: expected ({self.groups}, rows, {self.in_dim}), got {x.shape}"
            )
        if cache:
            self._x = x
        return np.matmul(x, self.store.tensors[self.w_key]) + self.store.tensors[self.b_key][:, None, :]

    def backward(self, dy: np.ndarray) -> np.ndarray:
        if self._x is None:
            raise UsageError(f"backward on {self.name} before forward")
        self.store.grads[self.w_key] += np.matmul(self._x.transpose(0, 2, 1), dy)
        self.store.grads[self.b_key] += dy.sum(axis=1)
        return np.matmul(dy, self.store.tensors[self.w_key].transpose(0, 2, 1))


@dataclass(frozen=True)
class MlpSpec:
    in_dim: int
    hidden: tuple[int, ...] = ()
    out_dim: int = 1
    activation: str = "tanh"

    def __post_init__(self):
        widths = (self.in_dim, *self.hidden, self.out_dim)
        if any(int(w) < 1 for w in widths):
            raise ConfigError(f"all MLP widths must be >= 1, got {widths}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}; valid: {ACTIVATIONS}")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))


class Mlp:
    """Dense network: activation after every hidden layer, linear output."""

    def __init__(self, spec: MlpSpec, store: ParamStore, prefix: str = "mlp"):
        self.spec = spec
        self.store = store
        widths = (spec.in_dim, *spec.hidden, spec.out_dim)
        self.layers = [
            Linear(store, f"{prefix}.{i}", widths[i], widths[i + 1])
            for i in range(len(widths) - 1)
        ]
        self._outs: list[np.ndarray] | None = None

    def init(self, rng: np.random.Generator, gain: float = 1.0, out_gain: float | None = None) -> None:
        for i, layer in enumerate(self.layers):
            last = i == len(self.layers) - 1
            layer.init(rng, gain if not last or out_gain is None else out_gain)

    def forward(self, x: np.ndarray, cache: bool = True) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        outs = []
        h = x
        for i, layer in enumerate(self.layers):
            h = layer.forward(h, cache=cache)
            if i < len(self.layers) - 1:
                h = _act(self.spec.activation, h)
                outs.append(h)
        if cache:
            self._outs = outs
        return h

    def backward(self, dy: np.ndarray) -> np.ndarray:
        if self._outs is None:
            raise UsageError("Mlp.backward called before forward")
        g = np.asarray(dy, dtype=np.float64)
        for i in range(len(self.layers) - 1, -1, -1):
            if i < len(self.layers) - 1:
                g = _act_grad(self.spec.activation, self._outs[i], g)
            g = self.layers[i].backward(g)
        return g


def forward(spec: MlpSpec, store: ParamStore, x: np.ndarray, prefix: str = "mlp") -> np.ndarray:
    """Stateless evaluation of an :class:`Mlp` whose tensors live in ``store``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != spec.in_dim:
        raise ConfigError(f"expected input width {spec.in_dim}, got {x.shape[-1]}")
    widths = (spec.in_dim, *spec.hidden, spec.out_dim)
    h = x
    for i in range(len(widths) - 1):
        h = h @ store[f"{prefix}.{i}.w"] + store[f"{prefix}.{i}.b"]
        if i < len(widths) - 2:
            h = _act(spec.activation, h)
    return h


# ----------------------------------------------------------------------------
# optimisation


def global_grad_norm(stores: Iterable[ParamStore]) -> float:
    total = 0.0
    for store in stores:
        for g in store.grads.values():
            total += float(np.dot(g.ravel(), g.ravel()))
    return float(np.sqrt(total))


def clip_grad_norm(stores: Sequence[ParamStore], max_norm: float | None) -> float:
    """Scale all gradients so their joint norm is at most ``max_norm``."""
    norm = global_grad_norm(stores)
    if max_norm is not None and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for store in stores:
            for g in store.grads.values():
                g *= scale
    return norm


def check_finite_grads(stores: Iterable[ParamStore]) -> None:
    for store in stores:
        for key, g in store.grads.items():
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient in tensor {store.name}/{key}")


@dataclass
class Optimizer:
    """First-order optimiser over one or more parameter stores.

    ``kind`` is ``"adam"``, ``"rmsprop"`` or ``"sgd"``.  Moment buffers are
    keyed by ``(store name, tensor name)`` so stores may be added later.
    """

    kind: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    alpha: float = 0.99
    eps: float = 1e-8
    max_grad_norm: float | None = 0.5
    state: dict = field(default_factory=dict)
    steps: int = 0

    def __post_init__(self):
        if self.kind not in ("adam", "rmsprop", "sgd"):
            raise ConfigError(f"unknown optimizer {self.kind!r}; valid: adam, rmsprop, sgd")

    def step(self, stores: Sequence[ParamStore], lr: float | None = None) -> float:
        """Apply one update; returns the pre-clipping gradient norm."""
        lr = self.lr if lr is None else lr
        check_finite_grads(stores)
        norm = clip_grad_norm(stores, self.max_grad_norm)
        self.steps += 1
        t = self.steps
        for store in stores:
            for key, p in store.tensors.items():
                g = store.grads[key]
                if self.kind == "sgd":
                    p -= lr * g
                    continue
                slot = self.state.setdefault((store.name, key), {})
                if self.kind == "adam":
                    m = slot.setdefault("m", np.zeros_like(p))
                    v = slot.setdefault("v", np.zeros_like(p))
                    m *= self.beta1
                    m += (1.0 - self.beta1) * g
                    v *= self.beta2
                    v += (1.0 - self.beta2) * g * g
                    mhat = m / (1.0 - self.beta1**t)
                    vhat = v / (1.0 - self.beta2**t)
                    p -= lr * mhat / (np.sqrt(vhat) + self.eps)
                else:
                    v = slot.setdefault("v", np.zeros_like(p))
                    v *= self.alpha
                    v += (1.0 - self.alpha) * g * g
                    p -= lr * g / (np.sqrt(v) + self.eps)
            store.updates += 1
        return norm


# ----------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path: str | Path, tensors: dict[str, np.ndarray], manifest: dict | None = None) -> None:
    """Write tensors (row-major float64) plus a JSON manifest to one ``.npz`` file."""
    path = Path(path)
    meta = {"format_version": CHECKPOINT_FORMAT_VERSION, "manifest": manifest or {}}
    meta["shapes"] = {k: list(np.shape(v)) for k, v in tensors.items()}
    arrays = {f"t/{k}": np.ascontiguousarray(v, dtype=np.float64) for k, v in tensors.items()}
    arrays["__meta__"] = np.array(json.dumps(meta, sort_keys=True))
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    with np.load(Path(path), allow_pickle=False) as data:
        if "__meta__" not in data.files:
            raise ConfigError(f"{path}: not a checkpoint (missing metadata)")
        meta = json.loads(str(data["__meta__"]))
        version = meta.get("format_version")
        if version != CHECKPOINT_FORMAT_VERSION:
            raise ConfigError(
                f"{path}: checkpoint format version {version}, expected {CHECKPOINT_FORMAT_VERSION}"
            )
        tensors = {k[2:]: data[k].astype(np.float64) for k in data.files if k.startswith("t/")}
    for key, shape in meta["shapes"].items():
        if list(tensors[key].shape) != shape:
            raise ConfigError(f"{path}: tensor {key} has shape {tensors[key].shape}, manifest says {shape}")
    return tensors, meta["manifest"]
