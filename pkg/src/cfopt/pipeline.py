"""Predict-then-optimize pipelines and SPO+ training.

Internally every formula is written for minimization. A maximize-sense layer
(the knapsack) is handled by negating the predicted rewards, so ``costs`` below
always means "the vector whose inner product with ``y`` is minimized".
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InputError, TrainingError
from .nn import AdamState, DenseNet, adam_step
from .optlayers import layer_from_dict

log = logging.getLogger(__name__)

BUNDLE_VERSION = 1


class Pipeline:
    def __init__(self, predictor, layer):
        if predictor.output_dim != layer.n_y:
            raise InputError(
                f"predictor outputs {predictor.output_dim} values, layer expects {layer.n_y}"
            )
        self.predictor = predictor
        self.layer = layer

    @property
    def sense(self):
        return self.layer.sense

    @property
    def sign(self):
        """+1 when the layer minimizes, -1 when it maximizes."""
        return 1.0 if self.sense == "minimize" else -1.0

    @property
    def n_x(self):
        return self.predictor.input_dim

    @property
    def n_y(self):
        return self.layer.n_y

    def predict(self, x):
        return self.predictor(x)

    def costs(self, x):
        return self.sign * self.predictor(x)

    def costs_vjp(self, x, v):
        """Gradient of ``v . costs(x)`` with respect to ``x``."""
        return self.predictor.vjp_input(x, self.sign * np.asarray(v))

    def decide(self, x):
        theta = self.predictor(x)
        return theta, self.layer.solve(theta)

    def solve_costs(self, costs):
        """Minimize ``costs . y`` over the layer."""
        return self.layer.solve_min(costs)

    def copy(self):
        return Pipeline(self.predictor.copy(), self.layer)


def pipeline_decide(p, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (p.n_x,):
        raise InputError(f"expected a context of length {p.n_x}, got shape {x.shape}")
    return p.decide(x)


def spo_plus_loss(theta_hat, theta, y_true, layer):
    """SPO+ loss and a subgradient with respect to ``theta_hat``.

    Both cost vectors are in minimize form and ``y_true`` must be an optimal
    solution under ``theta``.
    """
    theta_hat = np.asarray(theta_hat, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    y_true = np.asarray(getattr(y_true, "y", y_true), dtype=np.float64)
    sol = layer.solve_min(2.0 * theta_hat - theta)
    loss = -sol.objective + 2.0 * theta_hat @ y_true - theta @ y_true
    return float(loss), 2.0 * (y_true - sol.y)


@dataclass
class Dataset:
    """Contexts, true costs/rewards in the layer's native sense, and optimal
    decisions under those true values."""

    contexts: np.ndarray
    costs: np.ndarray
    solutions: np.ndarray | None = None

    def __post_init__(self):
        self.contexts = np.asarray(self.contexts, dtype=np.float64)
        self.costs = np.asarray(self.costs, dtype=np.float64)
        if self.contexts.ndim != 2 or self.costs.ndim != 2:
            raise InputError("contexts and costs must be 2-D arrays")
        if len(self.contexts) != len(self.costs):
            raise InputError("contexts and costs have different row counts")
        if self.solutions is not None:
            self.solutions = np.asarray(self.solutions, dtype=np.float64)
            if self.solutions.shape != self.costs.shape:
                raise InputError("solutions must have the same shape as costs")

    def __len__(self):
        return len(self.contexts)

    def subset(self, idx):
        sol = None if self.solutions is None else self.solutions[idx]
        return Dataset(self.contexts[idx], self.costs[idx], sol)

    def with_solutions(self, layer):
        if self.solutions is not None:
            return self
        sols = np.array([layer.solve(c).y for c in self.costs])
        return Dataset(self.contexts, self.costs, sols)


def _mean_spo_plus(pipe, X, C, Y):
    C_hat = pipe.costs(X)
    losses = np.empty(len(X))
    upstream = np.empty_like(C_hat)
    for i in range(len(X)):
        losses[i], upstream[i] = spo_plus_loss(C_hat[i], C[i], Y[i], pipe.layer)
    return losses, upstream


def train_spo(pipe, data, epochs=70, lr=3e-4, seed=0, batch_size=32,
              early_stopping=None, patience=5, val_fraction=0.1):
    """Train ``pipe.predictor`` on the SPO+ loss with Adam.

    Returns ``(trained_pipeline, trace)`` where ``trace`` holds one dict per
    epoch with the mean training loss and, if early stopping is active, the
    validation loss. Early stopping defaults to on for multi-layer predictors.
    The input pipeline is not modified.
    """
    if len(data) == 0:
        raise InputError("cannot train on an empty dataset")
    data = data.with_solutions(pipe.layer)
    pipe = pipe.copy()
    rng = np.random.default_rng(seed)
    if early_stopping is None:
        early_stopping = len(pipe.predictor.layers) > 1

    idx = np.arange(len(data))
    val_idx = np.array([], dtype=int)
    if early_stopping and len(data) >= 10:
        perm = rng.permutation(len(data))
        n_val = max(1, int(round(val_fraction * len(data))))
        val_idx, idx = np.sort(perm[:n_val]), np.sort(perm[n_val:])

    X, C, Y = data.contexts, pipe.sign * data.costs, data.solutions
    params = pipe.predictor.params()
    state = AdamState.for_params(params, lr=lr)
    bs = len(idx) if batch_size is None else int(batch_size)

    trace = []
    best_val, best_params, stale = np.inf, None, 0
    for epoch in range(epochs):
        order = rng.permutation(idx)
        total = 0.0
        for start in range(0, len(order), bs):
            b = order[start:start + bs]
            losses, up = _mean_spo_plus(pipe, X[b], C[b], Y[b])
            total += losses.sum()
            if not np.all(np.isfinite(losses)):
                raise TrainingError("non-finite SPO+ loss", epoch)
            grads = pipe.predictor.grad_params(X[b], pipe.sign * up / len(b))
            adam_step(params, grads, state)
        row = {"epoch": epoch, "train_loss": total / len(idx)}
        if not np.isfinite(row["train_loss"]):
            raise TrainingError("non-finite SPO+ loss", epoch)
        if len(val_idx):
            val = _mean_spo_plus(pipe, X[val_idx], C[val_idx], Y[val_idx])[0].mean()
            row["val_loss"] = float(val)
            if val < best_val:
                best_val, stale = val, 0
                best_params = [p.copy() for p in params]
            else:
                stale += 1
        trace.append(row)
        log.debug("epoch %d: %s", epoch, row)
        if len(val_idx) and stale >= patience:
            break
    if best_params is not None:
        for p, b in zip(params, best_params):
            p[...] = b
    return pipe, trace


def save_pipeline(p, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    p.predictor.save(directory / "predictor.json")
    (directory / "layer.json").write_text(json.dumps(p.layer.to_dict()) + "\n")
    manifest = {
        "kind": "pipeline",
        "version": BUNDLE_VERSION,
        "sense": p.sense,
        "predictor": "predictor.json",
        "layer": "layer.json",
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def load_pipeline(directory):
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    if manifest.get("kind") != "pipeline" or manifest.get("version") != BUNDLE_VERSION:
        raise InputError(f"{directory} is not a version {BUNDLE_VERSION} pipeline bundle")
    predictor = DenseNet.load(directory / manifest["predictor"])
    layer = layer_from_dict(json.loads((directory / manifest["layer"]).read_text()))
    p = Pipeline(predictor, layer)
    if p.sense != manifest["sense"]:
        raise InputError("bundle sense disagrees with its layer")
    return p
