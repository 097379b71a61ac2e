"""Feed-forward tanh networks with hand-written backward passes.

Parameters are stored as float32 (the default) or float64 for gradient
checks; all arithmetic runs in float64 and results are rounded back on
update, so identical inputs give identical bits on any BLAS thread count
as long as the reduction order is fixed (see ``hvrs.determinism``).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class MlpParams:
    sizes: tuple
    weights: list
    biases: list
    grad_w: list = field(default_factory=list)
    grad_b: list = field(default_factory=list)

    def __post_init__(self):
        self.sizes = tuple(int(s) for s in self.sizes)
        if len(self.weights) != len(self.sizes) - 1 or len(self.biases) != len(self.weights):
            raise ValueError("layer count does not match sizes")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.sizes[k], self.sizes[k + 1]) or b.shape != (self.sizes[k + 1],):
                raise ValueError(f"layer {k} shape {w.shape}/{b.shape} does not chain with sizes {self.sizes}")
        if not self.grad_w:
            self.grad_w = [np.zeros_like(w) for w in self.weights]
            self.grad_b = [np.zeros_like(b) for b in self.biases]

    @property
    def dtype(self):
        return self.weights[0].dtype

    def arrays(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def grads(self) -> list:
        out = []
        for w, b in zip(self.grad_w, self.grad_b):
            out.extend((w, b))
        return out

    def copy(self) -> "MlpParams":
        return MlpParams(self.sizes, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def zero_grad(self) -> None:
        for g in self.grads():
            g[...] = 0.0

    def n_params(self) -> int:
        return sum(a.size for a in self.arrays())


def init_mlp(sizes, rng: np.random.Generator, dtype=np.float32, out_scale: float = 1.0) -> MlpParams:
    """Uniform fan-in init; the output layer is scaled by ``out_scale``."""
    weights, biases = [], []
    for k in range(len(sizes) - 1):
        bound = 1.0 / np.sqrt(sizes[k])
        w = rng.uniform(-bound, bound, size=(sizes[k], sizes[k + 1]))
        if k == len(sizes) - 2:
            w = w * out_scale
        weights.append(w.astype(dtype))
        biases.append(np.zeros(sizes[k + 1], dtype=dtype))
    return MlpParams(tuple(sizes), weights, biases)


def zeros_mlp(sizes, dtype=np.float32) -> MlpParams:
    return MlpParams(tuple(sizes), [np.zeros((sizes[k], sizes[k + 1]), dtype) for k in range(len(sizes) - 1)],
                     [np.zeros(sizes[k + 1], dtype) for k in range(len(sizes) - 1)])


def _check_input(params: MlpParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.sizes[0]:
        raise ValueError(f"input has {x.shape[-1]} features, network expects {params.sizes[0]}")
    return x


def forward(params: MlpParams, x) -> np.ndarray:
    """tanh hidden layers, linear output; ``x`` may be one vector or a batch."""
    h = _check_input(params, x)
    n = len(params.weights)
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w.astype(np.float64) + b
        if k < n - 1:
            h = np.tanh(h)
    return h


def forward_cached(params: MlpParams, x):
    h = _check_input(params, x)
    if h.ndim == 1:
        h = h[None, :]
    acts = [h]
    n = len(params.weights)
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w.astype(np.float64) + b
        if k < n - 1:
            h = np.tanh(h)
        acts.append(h)
    return h, acts


def backward(params: MlpParams, acts: list, grad_out: np.ndarray, accumulate: bool = False) -> np.ndarray:
    """Backprop ``grad_out`` (batch x out) into the gradient buffers.

    Returns the gradient with respect to the input batch.
    """
    g = np.asarray(grad_out, dtype=np.float64)
    if g.ndim == 1:
        g = g[None, :]
    n = len(params.weights)
    for k in range(n - 1, -1, -1):
        if k < n - 1:
            g = g * (1.0 - acts[k + 1] ** 2)
        gw = acts[k].T @ g
        gb = g.sum(axis=0)
        if accumulate:
            params.grad_w[k] += gw
            params.grad_b[k] += gb
        else:
            params.grad_w[k][...] = gw
            params.grad_b[k][...] = gb
        g = g @ params.weights[k].astype(np.float64).T
    return g


def global_norm(arrays) -> float:
    return float(np.sqrt(sum(float(np.sum(np.asarray(a, dtype=np.float64) ** 2)) for a in arrays)))


def clip_grads(grads, max_norm: float) -> float:
    norm = global_norm(grads)
    if max_norm > 0 and norm > max_norm:
        s = max_norm / (norm + 1e-12)
        for g in grads:
            g *= s
    return norm


class Adam:
    """Adam over a fixed list of arrays; moments are kept in the arrays' dtype."""

    def __init__(self, arrays, lr: float = 3e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.arrays = list(arrays)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(a) for a in self.arrays]
        self.v = [np.zeros_like(a) for a in self.arrays]

    def step(self, grads) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for a, g, m, v in zip(self.arrays, grads, self.m, self.v):
            g = np.asarray(g, dtype=np.float64)
            m64 = self.b1 * m.astype(np.float64) + (1.0 - self.b1) * g
            v64 = self.b2 * v.astype(np.float64) + (1.0 - self.b2) * g * g
            m[...] = m64
            v[...] = v64
            if self.lr == 0.0:
                continue
            upd = self.lr * (m64 / c1) / (np.sqrt(v64 / c2) + self.eps)
            a[...] = a.astype(np.float64) - upd

    def state(self, prefix: str) -> dict:
        out = {f"{prefix}.t": np.array([self.t], dtype=np.float64)}
        for k, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"{prefix}.m{k}"] = m
            out[f"{prefix}.v{k}"] = v
        return out

    def load_state(self, prefix: str, entries: dict) -> None:
        self.t = int(entries[f"{prefix}.t"][0])
        for k in range(len(self.m)):
            self.m[k][...] = entries[f"{prefix}.m{k}"]
            self.v[k][...] = entries[f"{prefix}.v{k}"]


def mlp_entries(params: MlpParams, prefix: str) -> dict:
    out = {f"{prefix}.sizes": np.asarray(params.sizes, dtype=np.float64)}
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        out[f"{prefix}.w{k}"] = w
        out[f"{prefix}.b{k}"] = b
    return out


def mlp_from_entries(entries: dict, prefix: str) -> MlpParams:
    key = f"{prefix}.sizes"
    if key not in entries:
        raise KeyError(f"checkpoint has no network {prefix!r}")
    sizes = tuple(int(s) for s in entries[key])
    ws = [np.array(entries[f"{prefix}.w{k}"], dtype=np.float32) for k in range(len(sizes) - 1)]
    bs = [np.array(entries[f"{prefix}.b{k}"], dtype=np.float32) for k in range(len(sizes) - 1)]
    return MlpParams(sizes, ws, bs)
