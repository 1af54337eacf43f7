"""One-hidden-layer nets with hand-written backprop and an Adam optimizer.

Everything downstream (factor potentials, outcome regressors, simulator
equations) uses this same shape: tanh hidden layer, linear scalar output.
Zero-input nets are allowed and reduce to a learnable constant path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Mlp:
    w1: np.ndarray  # (hidden, in_dim)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (hidden,)
    b2: np.ndarray  # scalar, kept 0-d for uniform optimizer handling

    @property
    def in_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def hidden(self) -> int:
        return self.w1.shape[0]

    def params(self) -> list:
        return [self.w1, self.b1, self.w2, self.b2]

    def copy(self) -> "Mlp":
        return Mlp(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy())


def init_mlp(in_dim: int, hidden: int, rng: np.random.Generator, out_scale: float = 0.0) -> Mlp:
    """Fresh net; hidden layer uniform in +-1/sqrt(fan_in), output scaled.

    With out_scale 0 the net is identically zero, which downstream code
    relies on (a zero potential is the uniform distribution, a zero
    regressor predicts 0).
    """
    bound = 1.0 / np.sqrt(max(in_dim, 1))
    w1 = rng.uniform(-bound, bound, size=(hidden, in_dim))
    b1 = rng.uniform(-bound, bound, size=hidden)
    if out_scale == 0.0:
        w2 = np.zeros(hidden)
        b2 = np.zeros(())
    else:
        w2 = rng.normal(0.0, out_scale / np.sqrt(hidden), size=hidden)
        b2 = np.asarray(rng.normal(0.0, out_scale))
    return Mlp(w1, b1, w2, np.asarray(b2, dtype=float))


def mlp_forward(net: Mlp, x: np.ndarray):
    """Evaluate on rows x (n, in_dim); returns (outputs (n,), hidden (n, H))."""
    h = np.tanh(x @ net.w1.T + net.b1)
    return h @ net.w2 + float(net.b2), h


def mlp_backward(net: Mlp, x: np.ndarray, h: np.ndarray, dout: np.ndarray) -> list:
    """Gradients of sum(dout * output) w.r.t. params, same order as params()."""
    gw2 = h.T @ dout
    gb2 = np.asarray(dout.sum())
    dz = (dout[:, None] * net.w2) * (1.0 - h * h)
    gw1 = dz.T @ x
    gb1 = dz.sum(axis=0)
    return [gw1, gb1, gw2, gb2]


def zero_grads(net: Mlp) -> list:
    return [np.zeros_like(p) for p in net.params()]


def mlp_to_dict(net: Mlp) -> dict:
    return {
        "w1": net.w1.tolist(),
        "b1": net.b1.tolist(),
        "w2": net.w2.tolist(),
        "b2": float(net.b2),
    }


def mlp_from_dict(obj: dict) -> Mlp:
    w1 = np.asarray(obj["w1"], dtype=float)
    if w1.ndim != 2:
        w1 = w1.reshape(len(obj["b1"]), -1)
    return Mlp(
        w1,
        np.asarray(obj["b1"], dtype=float),
        np.asarray(obj["w2"], dtype=float),
        np.asarray(obj["b2"], dtype=float),
    )


class Adam:
    """Standard Adam over a flat list of parameter arrays, updated in place."""

    def __init__(self, params: list, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, maximize: bool = False):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.sign = 1.0 if maximize else -1.0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            mhat = m / (1 - b1 ** self.t)
            vhat = v / (1 - b2 ** self.t)
            p += self.sign * self.lr * mhat / (np.sqrt(vhat) + self.eps)
