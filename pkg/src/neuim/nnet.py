"""Small dense feedforward networks with hand-written reverse mode and Adam.

Layers are stored as ``W`` of shape ``(n_out, n_in)`` and ``b`` of shape
``(n_out,)``. Inputs may be a single vector or a batch of row vectors.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("tanh", "identity")


@dataclass
class MlpNetwork:
    layer_sizes: list
    weights: list
    biases: list
    activation: str = "tanh"

    def __post_init__(self):
        self.layer_sizes = [int(n) for n in self.layer_sizes]
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if len(self.weights) != len(self.layer_sizes) - 1 or len(self.biases) != len(self.weights):
            raise ValueError("number of weight/bias arrays does not match layer_sizes")
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            shape = (self.layer_sizes[l + 1], self.layer_sizes[l])
            if W.shape != shape:
                raise ValueError(f"layer {l}: weight shape {W.shape} != {shape}")
            if b.shape != (shape[0],):
                raise ValueError(f"layer {l}: bias shape {b.shape} != {(shape[0],)}")

    @property
    def d_in(self) -> int:
        return self.layer_sizes[0]

    @property
    def d_out(self) -> int:
        return self.layer_sizes[-1]

    @property
    def n_params(self) -> int:
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    def params(self) -> list:
        """Parameter arrays in a fixed order: W0, b0, W1, b1, ..."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def copy(self) -> "MlpNetwork":
        return MlpNetwork(
            list(self.layer_sizes),
            [W.copy() for W in self.weights],
            [b.copy() for b in self.biases],
            self.activation,
        )

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params()])

    def set_flat(self, theta: np.ndarray) -> None:
        i = 0
        for p in self.params():
            p[...] = theta[i : i + p.size].reshape(p.shape)
            i += p.size


def init_network(layer_sizes, seed: int, activation: str = "tanh") -> MlpNetwork:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    sizes = [int(n) for n in layer_sizes]
    if len(sizes) < 2 or any(n <= 0 for n in sizes):
        raise ValueError(f"invalid layer sizes {layer_sizes!r}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(n_in)
        weights.append(rng.uniform(-bound, bound, size=(n_out, n_in)))
        biases.append(np.zeros(n_out))
    return MlpNetwork(sizes, weights, biases, activation)


def _act(net, z):
    return np.tanh(z) if net.activation == "tanh" else z


def forward(net: MlpNetwork, x):
    """Returns ``(y, cache)``; hidden layers use the network activation, the output is linear."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.shape[-1] != net.d_in:
        raise ValueError(f"expected {net.d_in} inputs, got {X.shape[-1]}")
    acts = [X]
    h = X
    n_layers = len(net.weights)
    for l, (W, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ W.T + b
        h = z if l == n_layers - 1 else _act(net, z)
        acts.append(h)
    y = h[0] if single else h
    return y, {"acts": acts, "single": single}


def backward(net: MlpNetwork, cache, dL_dy):
    """Vector-Jacobian product: returns ``(grads, dL_dx)``.

    ``grads`` follows the ordering of :meth:`MlpNetwork.params`. For a batch,
    parameter gradients are summed over rows.
    """
    acts = cache["acts"]
    g = np.asarray(dL_dy, dtype=float)
    if cache["single"]:
        g = g[None, :]
    if g.shape != acts[-1].shape:
        raise ValueError(f"dL_dy shape {g.shape} does not match output {acts[-1].shape}")
    n_layers = len(net.weights)
    grads = [None] * (2 * n_layers)
    for l in range(n_layers - 1, -1, -1):
        h_in = acts[l]
        grads[2 * l] = g.T @ h_in
        grads[2 * l + 1] = g.sum(axis=0)
        g = g @ net.weights[l]
        if l > 0 and net.activation == "tanh":
            g = g * (1.0 - h_in * h_in)
    dx = g[0] if cache["single"] else g
    return grads, dx


@dataclass
class OptimizerState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_update(net: MlpNetwork, grads, opt: OptimizerState) -> None:
    """In-place bias-corrected Adam step on ``net``; increments ``opt.step``."""
    params = net.params()
    if len(grads) != len(params):
        raise ValueError("gradient list does not match network parameters")
    if not opt.m:
        opt.m = [np.zeros_like(p) for p in params]
        opt.v = [np.zeros_like(p) for p in params]
    opt.step += 1
    c1 = 1.0 - opt.beta1**opt.step
    c2 = 1.0 - opt.beta2**opt.step
    for p, g, m, v in zip(params, grads, opt.m, opt.v):
        m *= opt.beta1
        m += (1.0 - opt.beta1) * g
        v *= opt.beta2
        v += (1.0 - opt.beta2) * g * g
        p -= opt.lr * (m / c1) / (np.sqrt(v / c2) + opt.eps)


@dataclass
class GradientCheckReport:
    max_rel_error: float
    n_checked: int
    tolerance: float
    worst_index: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def gradient_check(net: MlpNetwork, loss_fn, tolerance: float = 1e-5, h: float = 1e-5,
                   max_params: int = 400, seed: int = 0) -> GradientCheckReport:
    """Compare analytic gradients with central differences.

    ``loss_fn(net)`` returns ``(loss, grads)`` with grads ordered like
    :meth:`MlpNetwork.params`. Networks larger than ``max_params`` are checked
    on a seeded random subset. The relative error of each entry is
    ``|a - n| / max(|a|, |n|, floor)`` where ``floor`` is 1e-7 of the largest
    gradient magnitude, so that entries that vanish do not divide by zero.
    """
    work = net.copy()
    _, grads = loss_fn(work)
    analytic = np.concatenate([np.ravel(g) for g in grads])
    theta = work.flat()
    idx = np.arange(theta.size)
    if theta.size > max_params:
        idx = np.sort(np.random.default_rng(seed).choice(theta.size, size=max_params, replace=False))
    numeric = np.empty(idx.size)
    for j, i in enumerate(idx):
        old = theta[i]
        theta[i] = old + h
        work.set_flat(theta)
        lp, _ = loss_fn(work)
        theta[i] = old - h
        work.set_flat(theta)
        lm, _ = loss_fn(work)
        theta[i] = old
        numeric[j] = (lp - lm) / (2.0 * h)
    work.set_flat(theta)
    a = analytic[idx]
    floor = max(1e-7 * max(np.abs(a).max(initial=0.0), np.abs(numeric).max(initial=0.0)), 1e-300)
    rel = np.abs(a - numeric) / np.maximum(np.maximum(np.abs(a), np.abs(numeric)), floor)
    worst = int(np.argmax(rel)) if rel.size else 0
    return GradientCheckReport(float(rel.max(initial=0.0)), int(idx.size), tolerance, int(idx[worst]) if rel.size else -1)
