"""Dense numeric primitives with hand-written backward passes.

Everything downstream (the LN-LSTM, the decoder, the text CNN) is built from
numpy arrays plus the explicit gradient rules collected here. There is no
tape: each layer keeps whatever cache it needs and exposes a matching
``*_backward`` function.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional

import numpy as np


class DimensionError(ValueError):
    pass


class StateError(RuntimeError):
    pass


class ConsistencyError(RuntimeError):
    pass


@dataclass
class Tensor:
    """A named-less parameter buffer: values plus an optional gradient."""

    value: np.ndarray
    grad: Optional[np.ndarray] = None
    trainable: bool = True

    def __post_init__(self):
        self.value = np.asarray(self.value)
        if self.value.ndim == 0 or 0 in self.value.shape:
            raise DimensionError(f"tensor shape must be non-empty and positive, got {self.value.shape}")
        if self.grad is not None and self.grad.shape != self.value.shape:
            raise DimensionError(f"grad shape {self.grad.shape} != value shape {self.value.shape}")

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def size(self) -> int:
        return self.value.size

    def zero_grad(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        else:
            self.grad.fill(0.0)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.value)))


class ParamStore:
    """Ordered name -> Tensor map. Insertion order is iteration order."""

    def __init__(self):
        self._entries: "OrderedDict[str, Tensor]" = OrderedDict()

    def add(self, name: str, value, trainable: bool = True) -> Tensor:
        if name in self._entries:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = value if isinstance(value, Tensor) else Tensor(np.asarray(value))
        t.trainable = trainable
        self._entries[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def items(self):
        return self._entries.items()

    def names(self) -> list[str]:
        return list(self._entries)

    def trainable_items(self):
        return [(k, t) for k, t in self._entries.items() if t.trainable]

    def set_trainable(self, name: str, flag: bool):
        self._entries[name].trainable = flag

    def zero_grad(self):
        for t in self._entries.values():
            t.zero_grad()

    def astype(self, dtype):
        """Cast every value (and grad) in place, keeping Tensor identity."""
        for t in self._entries.values():
            t.value = t.value.astype(dtype)
            if t.grad is not None:
                t.grad = t.grad.astype(dtype)

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: t.value.copy() for k, t in self._entries.items()}


@dataclass
class OptimConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    decay_factor: float = 0.5
    decay_interval_epochs: int = 80
    clip_norm: float = 5.0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("beta1/beta2 must lie in (0, 1)")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not 0 < self.decay_factor <= 1:
            raise ValueError("decay_factor must lie in (0, 1]")
        if int(self.decay_interval_epochs) < 1:
            raise ValueError("decay_interval_epochs must be a positive integer")
        if not self.clip_norm > 0:
            raise ValueError("clip_norm must be positive")

    def lr_at(self, epoch: int) -> float:
        return self.learning_rate * self.decay_factor ** (epoch // self.decay_interval_epochs)


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def affine(x: np.ndarray, W: np.ndarray, b: Optional[np.ndarray] = None) -> np.ndarray:
    """W @ x (+ b). ``x`` may carry leading batch axes: (..., n) -> (..., m)."""
    x = np.asarray(x)
    W = np.asarray(W)
    if W.ndim != 2 or x.shape[-1] != W.shape[1]:
        raise DimensionError(f"affine: cannot apply W{W.shape} to x{x.shape}")
    out = x @ W.T
    if b is not None:
        if b.shape != (W.shape[0],):
            raise DimensionError(f"affine: bias {b.shape} does not match W{W.shape}")
        out = out + b
    return out


def affine_backward(dout: np.ndarray, x: np.ndarray, W: np.ndarray):
    """Returns (dx, dW, db) for ``affine``; db is the summed upstream grad."""
    dx = dout @ W
    x2 = x.reshape(-1, x.shape[-1])
    d2 = dout.reshape(-1, dout.shape[-1])
    dW = d2.T @ x2
    db = d2.sum(axis=0)
    return dx, dW, db


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, target):
    """Loss and logit gradient of -log softmax(logits)[target].

    Works on a single vector with an int target, or row-wise on (B, V) with a
    length-B target array (returning per-row losses).
    """
    logits = np.asarray(logits)
    V = logits.shape[-1]
    target = np.asarray(target)
    if np.any(target < 0) or np.any(target >= V):
        raise IndexError(f"target {target} out of range for {V} classes")
    logp = log_softmax(logits)
    if logits.ndim == 1:
        loss = -float(logp[int(target)])
        grad = np.exp(logp)
        grad[int(target)] -= 1.0
        return loss, grad
    rows = np.arange(logits.shape[0])
    loss = -logp[rows, target]
    grad = np.exp(logp)
    grad[rows, target] -= 1.0
    return loss, grad


def sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def global_grad_norm(store: ParamStore) -> float:
    total = 0.0
    for name, t in store.trainable_items():
        if t.grad is None:
            raise StateError(f"parameter {name!r} has no gradient")
        total += float(np.sum(t.grad.astype(np.float64) ** 2))
    return math.sqrt(total)


def clip_gradients(store: ParamStore, clip_norm: float) -> float:
    """Global L2-norm clipping over trainable entries. Returns the applied scale."""
    g_norm = global_grad_norm(store)
    if g_norm <= clip_norm:
        return 1.0
    scale = clip_norm / g_norm
    for _, t in store.trainable_items():
        t.grad *= scale
    return scale


def adam_step(store: ParamStore, state: AdamState, cfg: OptimConfig, epoch: int) -> None:
    if epoch < 0:
        raise ValueError(f"epoch must be non-negative, got {epoch}")
    lr = cfg.lr_at(epoch)
    state.t += 1
    bc1 = 1.0 - cfg.beta1 ** state.t
    bc2 = 1.0 - cfg.beta2 ** state.t
    for name, p in store.trainable_items():
        if p.grad is None:
            raise StateError(f"parameter {name!r} has no gradient")
        m = state.m.get(name)
        if m is None or m.shape != p.shape:
            m = state.m[name] = np.zeros_like(p.value)
            state.v[name] = np.zeros_like(p.value)
        v = state.v[name]
        g = p.grad
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        p.value -= (lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.epsilon)).astype(p.value.dtype)
        p.grad.fill(0.0)


def uniform_init(shape, range_limit: float, seed) -> np.ndarray:
    """I.i.d. U[-range_limit, range_limit]; ``seed`` may be an int or a Generator."""
    if not range_limit > 0:
        raise ValueError("range_limit must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return rng.uniform(-range_limit, range_limit, size=tuple(shape))


def finite_difference_check(
    loss_fn: Callable[[], float],
    store: ParamStore,
    grad_fn: Optional[Callable[[], None]] = None,
    h: float = 1e-5,
    tol: float = 1e-4,
    names: Optional[list[str]] = None,
) -> tuple[float, dict[str, float]]:
    """Compare analytic gradients against central differences.

    ``loss_fn`` evaluates the objective from the store's current values.
    Analytic gradients are read from ``store[name].grad``; pass ``grad_fn`` to
    have them (re)computed first.
    Returns (max relative error, per-parameter max relative error); frozen
    entries are skipped and do not appear in the report. ``tol`` is only used
    to phrase the consistency check, the caller judges pass/fail.
    """
    if not h > 0:
        raise ValueError("h must be positive")
    base = loss_fn()
    if loss_fn() != base:
        raise ConsistencyError("loss_fn returned different values for identical parameters")
    if grad_fn is not None:
        store.zero_grad()
        grad_fn()
    for name, t in store.trainable_items():
        if t.grad is None:
            raise StateError(f"parameter {name!r} has no gradient")
    analytic = {k: t.grad.copy() for k, t in store.trainable_items()}

    report: dict[str, float] = {}
    for name, t in store.trainable_items():
        if names is not None and name not in names:
            continue
        flat = t.value.reshape(-1)
        worst = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = loss_fn()
            flat[i] = orig - h
            fm = loss_fn()
            flat[i] = orig
            num = (fp - fm) / (2.0 * h)
            ana = float(analytic[name].reshape(-1)[i])
            rel = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
            worst = max(worst, rel)
        report[name] = worst
    if loss_fn() != base:
        raise ConsistencyError("parameters were not restored after probing")
    return (max(report.values()) if report else 0.0), report
