"""Dense float64 primitives with hand-written backward passes, plus Adam.

Every network in the package (the DAM feed-forward blocks, the domain heads,
the policy and value nets) is built from :func:`feed_forward` and its
companion :func:`feed_forward_backward`. Parameters live in a
:class:`ParamStore`, which also carries the Adam moment buffers.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

ACTIVATIONS = ("relu", "tanh")
OUTPUTS = ("none", "softmax")
PROB_FLOOR = 1e-12


class NumericError(ArithmeticError):
    """Raised when a NaN/Inf shows up or shapes do not line up."""


def check_finite(x: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite values in {what}")
    return x


@dataclass
class Param:
    value: np.ndarray
    grad: np.ndarray
    adam_m: np.ndarray
    adam_v: np.ndarray
    step: int = 0


class ParamStore:
    """Named dense tensors with gradient and Adam moment buffers."""

    def __init__(self) -> None:
        self.entries: dict[str, Param] = {}

    def add(self, name: str, value: np.ndarray) -> None:
        if name in self.entries:
            raise KeyError(f"parameter {name!r} already exists")
        value = np.array(value, dtype=np.float64)
        self.entries[name] = Param(
            value=value,
            grad=np.zeros_like(value),
            adam_m=np.zeros_like(value),
            adam_v=np.zeros_like(value),
        )

    def __getitem__(self, name: str) -> np.ndarray:
        return self.entries[name].value

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def __iter__(self):
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def grad(self, name: str) -> np.ndarray:
        return self.entries[name].grad

    def names(self, prefix: str = "") -> list[str]:
        return [n for n in self.entries if n.startswith(prefix)]

    def zero_grad(self, names: Iterable[str] | None = None) -> None:
        for n in self.entries if names is None else names:
            self.entries[n].grad.fill(0.0)

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for n, p in self.entries.items():
            out.entries[n] = Param(
                p.value.copy(), p.grad.copy(), p.adam_m.copy(), p.adam_v.copy(), p.step
            )
        return out

    def merge(self, other: "ParamStore") -> None:
        for n, p in other.entries.items():
            if n in self.entries:
                raise KeyError(f"parameter {n!r} already exists")
            self.entries[n] = p


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


@dataclass(frozen=True)
class FeedForwardSpec:
    """Layer widths ``[d_in, ..., d_out]`` of a dense stack.

    ``activate_output`` controls whether the activation is also applied to
    the last layer (DAM's F and G) or the last layer stays linear (policy
    and value nets, where ``output`` decides between logits and softmax).
    """

    sizes: tuple[int, ...]
    activation: str = "relu"
    output: str = "none"
    activate_output: bool = True

    def __post_init__(self) -> None:
        if len(self.sizes) < 2:
            raise ValueError("a feed-forward spec needs at least one layer")
        if any(int(s) < 1 for s in self.sizes):
            raise ValueError(f"layer widths must be positive: {self.sizes}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.output not in OUTPUTS:
            raise ValueError(f"unknown output transform {self.output!r}")

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1


def init_feed_forward(
    params: ParamStore, spec: FeedForwardSpec, prefix: str, rng: np.random.Generator
) -> None:
    for k in range(spec.n_layers):
        d_in, d_out = spec.sizes[k], spec.sizes[k + 1]
        params.add(f"{prefix}.W{k}", glorot_uniform(rng, d_in, d_out))
        params.add(f"{prefix}.b{k}", np.zeros(d_out))


@dataclass
class FFCache:
    inputs: list[np.ndarray] = field(default_factory=list)
    pre: list[np.ndarray] = field(default_factory=list)
    out: np.ndarray | None = None


def _act(name: str, x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0) if name == "relu" else np.tanh(x)


def _act_grad(name: str, pre: np.ndarray, post: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (pre > 0.0).astype(np.float64)
    return 1.0 - post * post


def feed_forward(
    x: np.ndarray, spec: FeedForwardSpec, params: ParamStore, prefix: str
) -> tuple[np.ndarray, FFCache]:
    """Apply the stack to the rows of ``x`` (``[..., d_in]``).

    Returns the output and the cache :func:`feed_forward_backward` needs.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != spec.sizes[0]:
        raise NumericError(
            f"{prefix}: input width {x.shape[-1]} != expected {spec.sizes[0]}"
        )
    check_finite(x, f"{prefix} input")
    cache = FFCache()
    h = x
    last = spec.n_layers - 1
    for k in range(spec.n_layers):
        W = params[f"{prefix}.W{k}"]
        b = params[f"{prefix}.b{k}"]
        if W.shape != (spec.sizes[k], spec.sizes[k + 1]):
            raise NumericError(f"{prefix}.W{k} has shape {W.shape}")
        cache.inputs.append(h)
        a = h @ W + b
        cache.pre.append(a)
        h = _act(spec.activation, a) if (k < last or spec.activate_output) else a
    if spec.output == "softmax":
        h = softmax_dim(h, -1)
    check_finite(h, f"{prefix} output")
    cache.out = h
    return h, cache


def feed_forward_backward(
    grad_out: np.ndarray,
    cache: FFCache,
    spec: FeedForwardSpec,
    params: ParamStore,
    prefix: str,
    wrt_logits: bool = False,
) -> np.ndarray:
    """Accumulate parameter grads into ``params``; return the input grad.

    With a softmax output, ``grad_out`` is taken w.r.t. the probabilities
    unless ``wrt_logits`` says it is already w.r.t. the pre-softmax logits.
    """
    g = np.asarray(grad_out, dtype=np.float64)
    if spec.output == "softmax" and not wrt_logits:
        p = cache.out
        g = p * (g - np.sum(g * p, axis=-1, keepdims=True))
    last = spec.n_layers - 1
    for k in range(last, -1, -1):
        if k < last or spec.activate_output:
            post = cache.inputs[k + 1] if k < last else None
            if post is None:
                post = _act(spec.activation, cache.pre[k])
            g = g * _act_grad(spec.activation, cache.pre[k], post)
        inp = cache.inputs[k]
        W = params[f"{prefix}.W{k}"]
        params.grad(f"{prefix}.W{k}")[...] += (
            inp.reshape(-1, inp.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        )
        params.grad(f"{prefix}.b{k}")[...] += g.reshape(-1, g.shape[-1]).sum(axis=0)
        g = g @ W.T
    return g


def softmax_dim(x: np.ndarray, dim: int = -1) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[dim] == 0:
        raise ValueError("softmax over an empty slice")
    shifted = x - np.max(x, axis=dim, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=dim, keepdims=True)


def cross_entropy(probs: np.ndarray, labels: Sequence[int]) -> float:
    """Mean ``-log p[label]`` with probabilities floored at 1e-12."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (probs.shape[0],):
        raise NumericError("labels do not match the batch size")
    if np.any(labels < 0) or np.any(labels >= probs.shape[1]):
        raise ValueError(f"label out of range [0, {probs.shape[1]})")
    return float(np.mean(per_example_nll(probs, labels)))


def per_example_nll(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    picked = probs[np.arange(len(labels)), labels]
    return -np.log(np.maximum(picked, PROB_FLOOR))


def softmax_xent_logit_grad(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Gradient of mean cross-entropy w.r.t. the logits feeding a softmax."""
    g = probs.copy()
    g[np.arange(len(labels)), labels] -= 1.0
    return g / len(labels)


def global_norm(params: ParamStore, names: Iterable[str]) -> float:
    return float(np.sqrt(sum(np.sum(params.grad(n) ** 2) for n in names)))


def adam_step(
    params: ParamStore,
    names: Iterable[str],
    lr: float,
    *,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    clip_norm: float | None = 5.0,
) -> None:
    """One bias-corrected Adam update on ``names``; grads are zeroed after.

    Gradients are first rescaled so their joint L2 norm is at most
    ``clip_norm`` (pass ``None`` to disable).
    """
    names = list(names)
    for n in names:
        if n not in params:
            raise KeyError(f"missing gradient for {n!r}")
        check_finite(params.grad(n), f"gradient of {n}")
    scale = 1.0
    if clip_norm is not None:
        norm = global_norm(params, names)
        if norm > clip_norm:
            scale = clip_norm / norm
    for n in names:
        p = params.entries[n]
        g = p.grad * scale if scale != 1.0 else p.grad
        p.step += 1
        p.adam_m *= beta1
        p.adam_m += (1.0 - beta1) * g
        p.adam_v *= beta2
        p.adam_v += (1.0 - beta2) * g * g
        m_hat = p.adam_m / (1.0 - beta1**p.step)
        v_hat = p.adam_v / (1.0 - beta2**p.step)
        if lr != 0.0:
            p.value -= lr * m_hat / (np.sqrt(v_hat) + eps)
        p.grad.fill(0.0)


def finite_diff_check(
    loss_fn: Callable[[ParamStore], float],
    params: ParamStore,
    name: str,
    eps: float = 1e-5,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Max elementwise relative error between ``params.grad(name)`` and
    central differences of ``loss_fn``.

    The analytic gradient must already be populated. ``max_entries`` limits
    the check to a random subset of coordinates for large tensors.
    """
    value = params[name]
    analytic = params.grad(name).copy()
    flat_idx = np.arange(value.size)
    if max_entries is not None and value.size > max_entries:
        rng = rng or np.random.default_rng(0)
        flat_idx = rng.choice(value.size, size=max_entries, replace=False)
    worst = 0.0
    for idx in flat_idx:
        pos = np.unravel_index(idx, value.shape)
        orig = value[pos]
        value[pos] = orig + eps
        up = loss_fn(params)
        value[pos] = orig - eps
        down = loss_fn(params)
        value[pos] = orig
        numeric = (up - down) / (2.0 * eps)
        a = analytic[pos]
        err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
        worst = max(worst, err)
    return worst
