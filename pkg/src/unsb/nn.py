"""Small numpy MLPs with exact reverse-mode gradients, time embedding and Adam.

Everything is batched: a "vector" input is a (B, n) array with B >= 1. A
forward pass returns a :class:`Tape` which the matching backward pass
consumes; tapes remember the parameter version they were recorded with so a
backward through stale parameters raises instead of returning wrong numbers.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalAbort, ParameterError, ShapeError
from .numerics import Rng

LEAKY_SLOPE = 0.2


class Mlp:
    """Leaky-ReLU hidden layers, linear output layer."""

    def __init__(self, widths: list[int], rng: Rng | None = None, slope: float = LEAKY_SLOPE):
        if len(widths) < 2 or any(w < 1 for w in widths):
            raise ParameterError(f"bad layer widths {widths}")
        self.widths = [int(w) for w in widths]
        self.slope = slope
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(self.widths[:-1], self.widths[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            if rng is None:
                w = np.zeros((fan_in, fan_out))
                b = np.zeros(fan_out)
            else:
                w = (2.0 * rng.uniform((fan_in, fan_out)) - 1.0) * bound
                b = (2.0 * rng.uniform(fan_out) - 1.0) * bound
            self.weights.append(w)
            self.biases.append(b)
        self.version = 0

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def bump(self) -> None:
        self.version += 1

    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    def copy(self) -> "Mlp":
        other = Mlp.__new__(Mlp)
        other.widths = list(self.widths)
        other.slope = self.slope
        other.weights = [w.copy() for w in self.weights]
        other.biases = [b.copy() for b in self.biases]
        other.version = 0
        return other


@dataclass
class Tape:
    inputs: list[np.ndarray]
    pre: list[np.ndarray]
    version: int
    net_id: int


def mlp_forward(net: Mlp, x) -> tuple[np.ndarray, Tape]:
    h = np.asarray(x, dtype=np.float64)
    if h.ndim == 1:
        h = h[None, :]
    if h.shape[1] != net.widths[0]:
        raise ShapeError(f"input width {h.shape[1]} != {net.widths[0]}")
    inputs, pre = [], []
    last = len(net.weights) - 1
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        inputs.append(h)
        z = h @ w + b
        pre.append(z)
        h = z if k == last else np.where(z > 0, z, net.slope * z)
    return h, Tape(inputs, pre, net.version, id(net))


def mlp_backward(net: Mlp, tape: Tape, output_grad) -> tuple[list[np.ndarray], np.ndarray]:
    """Gradients of ``sum(output * output_grad)``.

    Returns parameter gradients in ``net.params`` order and the input gradient.
    """
    if tape.net_id != id(net) or tape.version != net.version:
        raise RuntimeError("stale tape: parameters changed since the forward pass")
    g = np.asarray(output_grad, dtype=np.float64)
    if g.ndim == 1:
        g = g[None, :]
    last = len(net.weights) - 1
    grads: list[np.ndarray] = [None] * (2 * len(net.weights))
    for k in range(last, -1, -1):
        if k != last:
            g = np.where(tape.pre[k] > 0, g, net.slope * g)
        grads[2 * k] = tape.inputs[k].T @ g
        grads[2 * k + 1] = g.sum(axis=0)
        g = g @ net.weights[k].T
    return grads, g


class TimeEmbedding:
    """Sinusoidal features of ``t`` on a geometric frequency ladder from 1 to ``max_freq``."""

    def __init__(self, embed_dim: int = 16, max_freq: float = 100.0):
        if embed_dim < 2 or embed_dim % 2:
            raise ParameterError("embed_dim must be an even number >= 2")
        self.embed_dim = embed_dim
        self.max_freq = max_freq
        half = embed_dim // 2
        self.frequencies = max_freq ** (np.arange(half) / max(half - 1, 1))

    def __call__(self, t, batch: int | None = None) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=np.float64))
        if batch is not None and t.size == 1:
            t = np.full(batch, t[0])
        arg = t[:, None] * self.frequencies[None, :]
        return np.concatenate([np.sin(arg), np.cos(arg)], axis=1)


class ConditionalNet:
    """MLP over the concatenation ``[part_0, ..., part_k, time-embedding(t)]``.

    ``part_dims`` fixes the width of each data part; the backward pass splits
    the input gradient back into those parts (the embedding slice is dropped).
    """

    def __init__(self, part_dims: list[int], hidden: list[int], out_dim: int,
                 embedding: TimeEmbedding, rng: Rng | None):
        self.part_dims = [int(p) for p in part_dims]
        self.embedding = embedding
        self.mlp = Mlp([sum(self.part_dims) + embedding.embed_dim, *hidden, out_dim], rng)

    @property
    def params(self) -> list[np.ndarray]:
        return self.mlp.params

    def forward(self, parts: list[np.ndarray], t) -> tuple[np.ndarray, Tape]:
        parts = [np.atleast_2d(np.asarray(p, dtype=np.float64)) for p in parts]
        if [p.shape[1] for p in parts] != self.part_dims:
            raise ShapeError(f"part widths {[p.shape[1] for p in parts]} != {self.part_dims}")
        batch = parts[0].shape[0]
        x = np.concatenate(parts + [self.embedding(t, batch)], axis=1)
        return mlp_forward(self.mlp, x)

    def backward(self, tape: Tape, output_grad) -> tuple[list[np.ndarray], list[np.ndarray]]:
        grads, gin = mlp_backward(self.mlp, tape, output_grad)
        offsets = np.cumsum([0] + self.part_dims)
        return grads, [gin[:, offsets[k]:offsets[k + 1]] for k in range(len(self.part_dims))]


class Generator(ConditionalNet):
    """Predicts x1 from ``(x_t, t, z)``; with ``residual`` the MLP output is added to ``x_t``."""

    def __init__(self, dim: int, z_dim: int, hidden: list[int], embedding: TimeEmbedding,
                 rng: Rng | None, residual: bool = True):
        super().__init__([dim, z_dim], hidden, dim, embedding, rng)
        self.dim = dim
        self.z_dim = z_dim
        self.residual = residual


def generator_forward(gen: Generator, x_t, t, z) -> tuple[np.ndarray, Tape]:
    """Deterministic in ``(x_t, t, z)``; all stochasticity comes from ``z``."""
    x_t = np.atleast_2d(np.asarray(x_t, dtype=np.float64))
    out, tape = gen.forward([x_t, z], t)
    if gen.residual:
        out = out + x_t
    return out, tape


def generator_backward(gen: Generator, tape: Tape, output_grad):
    """Returns (param grads, grad wrt x_t, grad wrt z)."""
    grads, (gx, gz) = gen.backward(tape, output_grad)
    if gen.residual:
        gx = gx + output_grad
    return grads, gx, gz


@dataclass
class AdamState:
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps_stab: float = 1e-8
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    step: int = 0


def adam_step(state: AdamState, params: list[np.ndarray], grads: list[np.ndarray], lr: float | None = None) -> None:
    """Bias-corrected Adam update, in place on ``params``."""
    if len(params) != len(grads):
        raise ShapeError("params and grads differ in length")
    for k, g in enumerate(grads):
        if g.shape != params[k].shape:
            raise ShapeError(f"grad {k} has shape {g.shape}, param has {params[k].shape}")
        if not np.all(np.isfinite(g)):
            raise NumericalAbort("non-finite gradient", {"param_index": k, "step": state.step,
                                                          "n_bad": int((~np.isfinite(g)).sum())})
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.step += 1
    lr = state.lr if lr is None else lr
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps_stab)
        if not np.all(np.isfinite(p)):
            raise NumericalAbort("non-finite parameter after update", {"step": state.step})


def net_to_dict(net: ConditionalNet) -> dict:
    d = {
        "part_dims": net.part_dims,
        "widths": net.mlp.widths,
        "embed_dim": net.embedding.embed_dim,
        "max_freq": net.embedding.max_freq,
        "params": [p.tolist() for p in net.params],
    }
    if isinstance(net, Generator):
        d.update(z_dim=net.z_dim, residual=net.residual)
    return d


def net_from_dict(d: dict) -> ConditionalNet:
    emb = TimeEmbedding(d["embed_dim"], d["max_freq"])
    hidden = d["widths"][1:-1]
    if "z_dim" in d:
        net = Generator(d["part_dims"][0], d["z_dim"], hidden, emb, None, d["residual"])
    else:
        net = ConditionalNet(d["part_dims"], hidden, d["widths"][-1], emb, None)
    for p, values in zip(net.params, d["params"]):
        p[...] = np.asarray(values, dtype=np.float64).reshape(p.shape)
    return net


def dumps_nets(nets: dict[str, ConditionalNet], header: dict) -> str:
    return json.dumps({"header": header, "nets": {k: net_to_dict(v) for k, v in nets.items()}})


def loads_nets(text: str) -> tuple[dict, dict[str, ConditionalNet]]:
    d = json.loads(text)
    return d["header"], {k: net_from_dict(v) for k, v in d["nets"].items()}
