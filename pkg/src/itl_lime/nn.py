"""Dense layers with hand-written backprop, and Adam/SGD updates.

Parameters live in plain dicts of numpy arrays (``W0, b0, W1, ...``) so
checkpoints are a flat list of named arrays.
"""
from __future__ import annotations

import json

import numpy as np


def init_mlp(widths, rng: np.random.Generator, prefix: str = "") -> dict:
    """He-uniform weights, zero biases, for consecutive ``widths``."""
    params = {}
    for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        bound = np.sqrt(6.0 / fan_in)
        params[f"{prefix}W{i}"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        params[f"{prefix}b{i}"] = np.zeros(fan_out)
    return params


def n_layers(params: dict, prefix: str = "") -> int:
    return sum(1 for k in params if k.startswith(f"{prefix}W"))


def mlp_forward(params, x, prefix="", relu_last=True, dropout=0.0, rng=None):
    """Forward pass; returns ``(output, cache)`` for :func:`mlp_backward`.

    Dropout (inverted) applies after every ReLU when ``rng`` is given.
    """
    L = n_layers(params, prefix)
    cache = []
    h = x
    for i in range(L):
        z = h @ params[f"{prefix}W{i}"] + params[f"{prefix}b{i}"]
        act = relu_last or i < L - 1
        out = np.maximum(z, 0.0) if act else z
        mask = None
        if act and rng is not None and dropout > 0.0:
            mask = (rng.random(out.shape) >= dropout) / (1.0 - dropout)
            out = out * mask
        cache.append((h, z, act, mask))
        h = out
    return h, cache


def mlp_backward(params, cache, grad_out, prefix=""):
    """Backprop ``grad_out`` through the cached pass; returns ``(grads, grad_in)``."""
    grads = {}
    g = grad_out
    for i in reversed(range(len(cache))):
        h, z, act, mask = cache[i]
        if mask is not None:
            g = g * mask
        if act:
            g = g * (z > 0.0)
        grads[f"{prefix}W{i}"] = h.T @ g
        grads[f"{prefix}b{i}"] = g.sum(axis=0)
        g = g @ params[f"{prefix}W{i}"].T
    return grads, g


class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m, self.v, self.t = {}, {}, 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            m = self.m.get(k)
            if m is None:
                m = self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            v = self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class SGD:
    def __init__(self, lr=1e-3):
        self.lr = lr

    def step(self, params: dict, grads: dict) -> None:
        for k, g in grads.items():
            params[k] -= self.lr * g


def make_optimizer(name: str, lr: float):
    if name == "adam":
        return Adam(lr)
    if name == "sgd":
        return SGD(lr)
    raise ValueError(f"unknown optimizer {name!r}")


def params_to_json(params: dict, meta: dict | None = None) -> str:
    """Flat parameter list with a shape header per entry."""
    entries = [
        {"name": k, "shape": list(v.shape), "values": [float(x) for x in v.ravel()]}
        for k, v in params.items()
    ]
    return json.dumps({"meta": meta or {}, "params": entries})


def params_from_json(text: str) -> tuple[dict, dict]:
    obj = json.loads(text)
    params = {
        e["name"]: np.array(e["values"], dtype=np.float64).reshape(e["shape"])
        for e in obj["params"]
    }
    return params, obj.get("meta", {})
