"""Dense feed-forward networks with hand-written reverse-mode gradients.

Only the fixed MLP topology is differentiated: one affine map followed by an
elementwise activation per layer. Every routine accepts either a single input
vector of shape ``(input_dim,)`` or a batch of shape ``(batch, input_dim)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InputError, NumericError

ACTIVATIONS = ("relu", "identity", "sigmoid")
FORMAT_NAME = "cfopt-densenet"
FORMAT_VERSION = 1


def _activate(name, a):
    if name == "relu":
        return np.maximum(a, 0.0)
    if name == "sigmoid":
        return 1.0 / (1.0 + np.exp(-a))
    return a


def _activation_grad(name, a, out, upstream):
    # relu subgradient at exactly 0 is 0
    if name == "relu":
        return upstream * (a > 0.0)
    if name == "sigmoid":
        return upstream * out * (1.0 - out)
    return upstream


@dataclass
class Layer:
    weight: np.ndarray
    bias: np.ndarray
    activation: str = "identity"

    def __post_init__(self):
        self.weight = np.array(self.weight, dtype=np.float64, ndmin=2)
        self.bias = np.array(self.bias, dtype=np.float64).reshape(-1)
        if self.activation not in ACTIVATIONS:
            raise InputError(f"unknown activation {self.activation!r}")
        if self.bias.shape[0] != self.weight.shape[0]:
            raise InputError(
                f"bias length {self.bias.shape[0]} does not match "
                f"weight rows {self.weight.shape[0]}"
            )


class DenseNet:
    """A stack of dense layers.

    Parameters are exposed through :meth:`params` as the flat list
    ``[W0, b0, W1, b1, ...]``; gradients use the same layout.
    """

    def __init__(self, layers):
        self.layers = list(layers)
        if not self.layers:
            raise InputError("a DenseNet needs at least one layer")
        for k, (prev, nxt) in enumerate(zip(self.layers, self.layers[1:])):
            if prev.weight.shape[0] != nxt.weight.shape[1]:
                raise InputError(
                    f"layer {k} outputs {prev.weight.shape[0]} values but "
                    f"layer {k + 1} expects {nxt.weight.shape[1]}"
                )
        for p in self.params():
            if not np.all(np.isfinite(p)):
                raise NumericError("non-finite network parameter")

    @classmethod
    def create(cls, sizes, rng, hidden_activation="relu", output_activation="identity"):
        """Glorot-uniform initialised network with layer widths ``sizes``."""
        if len(sizes) < 2:
            raise InputError("sizes needs an input and an output width")
        layers = []
        for k, (fan_in, fan_out) in enumerate(zip(sizes, sizes[1:])):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            act = output_activation if k == len(sizes) - 2 else hidden_activation
            layers.append(
                Layer(
                    rng.uniform(-limit, limit, size=(fan_out, fan_in)),
                    np.zeros(fan_out),
                    act,
                )
            )
        return cls(layers)

    @property
    def input_dim(self):
        return self.layers[0].weight.shape[1]

    @property
    def output_dim(self):
        return self.layers[-1].weight.shape[0]

    def params(self):
        out = []
        for layer in self.layers:
            out.extend([layer.weight, layer.bias])
        return out

    def copy(self):
        return DenseNet(
            [Layer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers]
        )

    def _check_input(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim not in (1, 2) or x.shape[-1] != self.input_dim:
            raise InputError(
                f"expected input of width {self.input_dim}, got shape {x.shape}"
            )
        return x

    def _check_upstream(self, v, batch_shape):
        v = np.asarray(v, dtype=np.float64)
        if v.shape != batch_shape[:-1] + (self.output_dim,):
            raise InputError(
                f"expected upstream of shape {batch_shape[:-1] + (self.output_dim,)}, "
                f"got {v.shape}"
            )
        return v

    def __call__(self, x):
        return self.forward(x)

    def forward(self, x):
        h = self._check_input(x)
        for layer in self.layers:
            h = _activate(layer.activation, h @ layer.weight.T + layer.bias)
        return h

    def forward_cache(self, x):
        """Forward pass that keeps every layer input, pre-activation and output."""
        h = self._check_input(x)
        cache = []
        for layer in self.layers:
            a = h @ layer.weight.T + layer.bias
            out = _activate(layer.activation, a)
            cache.append((h, a, out))
            h = out
        return h, cache

    def backward(self, cache, upstream, need_params=True):
        """Backpropagate ``upstream`` through a cached forward pass.

        Returns ``(param_grads, input_grad)``. For batched inputs the parameter
        gradients are summed over the batch and the input gradient is per row.
        ``param_grads`` is None when ``need_params`` is false.
        """
        g = upstream
        grads = [None] * (2 * len(self.layers)) if need_params else None
        for k in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[k]
            h, a, out = cache[k]
            g = _activation_grad(layer.activation, a, out, g)
            if need_params:
                if g.ndim == 1:
                    grads[2 * k] = np.outer(g, h)
                    grads[2 * k + 1] = g.copy()
                else:
                    grads[2 * k] = g.T @ h
                    grads[2 * k + 1] = g.sum(axis=0)
            g = g @ layer.weight
        return grads, g

    def vjp_input(self, x, v):
        """Gradient of ``v . net(x)`` with respect to ``x``."""
        x = self._check_input(x)
        v = self._check_upstream(v, x.shape)
        _, cache = self.forward_cache(x)
        return self.backward(cache, v, need_params=False)[1]

    def grad_params(self, x, upstream):
        """Gradient of ``upstream . net(x)`` with respect to every parameter."""
        x = self._check_input(x)
        upstream = self._check_upstream(upstream, x.shape)
        _, cache = self.forward_cache(x)
        return self.backward(cache, upstream)[0]

    def to_dict(self):
        return {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "input_dim": int(self.input_dim),
            "output_dim": int(self.output_dim),
            "layers": [
                {
                    "activation": l.activation,
                    "shape": list(l.weight.shape),
                    "weight": l.weight.ravel().tolist(),
                    "bias": l.bias.tolist(),
                }
                for l in self.layers
            ],
        }

    @classmethod
    def from_dict(cls, data):
        if data.get("format") != FORMAT_NAME:
            raise InputError(f"not a {FORMAT_NAME} document")
        if data.get("version") != FORMAT_VERSION:
            raise InputError(f"unsupported network format version {data.get('version')}")
        layers = [
            Layer(
                np.asarray(d["weight"], dtype=np.float64).reshape(d["shape"]),
                d["bias"],
                d["activation"],
            )
            for d in data["layers"]
        ]
        net = cls(layers)
        if net.input_dim != data["input_dim"] or net.output_dim != data["output_dim"]:
            raise InputError("header dimensions disagree with layer shapes")
        return net

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def forward(net, x):
    return net.forward(x)


def vjp_input(net, x, v):
    return net.vjp_input(x, v)


def grad_params(net, x, upstream):
    return net.grad_params(x, upstream)


@dataclass
class AdamState:
    m: list
    v: list
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0

    @classmethod
    def for_params(cls, params, lr=1e-3, **kwargs):
        return cls(
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
            lr=lr,
            **kwargs,
        )


def adam_step(params, grads, state):
    """One bias-corrected Adam descent step, applied to ``params`` in place."""
    if len(grads) != len(params):
        raise InputError("gradient list does not match parameter list")
    for p, g in zip(params, grads):
        if p.shape != np.shape(g):
            raise InputError(f"gradient shape {np.shape(g)} != parameter shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient passed to adam_step")
    state.step += 1
    c1 = 1.0 - state.beta1**state.step
    c2 = 1.0 - state.beta2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state
