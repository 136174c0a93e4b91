"""Synthetic contextual datasets for grid shortest paths and knapsacks.

Contexts are standard Gaussian. Each cost (or reward) is a noisy quartic of a
random 0/1 projection of the context::

    theta_j = ((B x / sqrt(n_x) + 3)_j ** 4 / 3.5 ** 4 + 1) * noise_j

with ``noise_j ~ U(noise_low, noise_high)``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputError
from .optlayers import GridGraph, KnapsackInstance, layer_from_dict
from .pipeline import Dataset

DATASET_VERSION = 1


@dataclass
class GenSpec:
    n_x: int = 10
    layer: dict = field(default_factory=lambda: {"kind": "grid", "N": 5})
    n_samples: int = 1000
    seed: int = 0
    noise_low: float = 0.5
    noise_high: float = 1.5

    def __post_init__(self):
        if self.n_x < 1 or self.n_samples < 1:
            raise InputError("n_x and n_samples must be positive")
        if not 0 < self.noise_low <= self.noise_high:
            raise InputError("noise bounds must satisfy 0 < low <= high")
        if self.layer.get("kind") not in ("grid", "knapsack"):
            raise InputError(f"unknown layer kind {self.layer.get('kind')!r}")


def build_layer(layer_spec, rng):
    """Instantiate a layer from a generator spec; knapsacks draw their weights."""
    if layer_spec["kind"] == "grid":
        return GridGraph(layer_spec["N"])
    return KnapsackInstance.generate(
        layer_spec["m"],
        rng,
        d=layer_spec.get("d", 2),
        low=layer_spec.get("weight_low", 3),
        high=layer_spec.get("weight_high", 8),
        capacity_ratio=layer_spec.get("capacity_ratio", 0.5),
    )


def gen_costs(B, x, noise):
    """Costs for context(s) ``x`` under projection ``B`` and multiplicative ``noise``."""
    B = np.asarray(B, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    n_x = B.shape[1]
    proj = x @ B.T / np.sqrt(n_x)
    return ((proj + 3.0) ** 4 / 3.5**4 + 1.0) * noise


def generate(spec):
    """Return ``(layer, dataset, B)`` drawn deterministically from ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    layer = build_layer(spec.layer, rng)
    B = rng.binomial(1, 0.5, size=(layer.n_y, spec.n_x)).astype(np.float64)
    X = rng.standard_normal((spec.n_samples, spec.n_x))
    noise = rng.uniform(spec.noise_low, spec.noise_high, size=(spec.n_samples, layer.n_y))
    costs = gen_costs(B, X, noise)
    sols = np.array([layer.solve(c).y for c in costs])
    return layer, Dataset(X, costs, sols), B


def _write_csv(path, arr, prefix):
    header = ",".join(f"{prefix}{j}" for j in range(arr.shape[1]))
    np.savetxt(path, arr, delimiter=",", fmt="%.17g", header=header, comments="")


def _read_csv(path):
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


def save_dataset(directory, spec, layer, data, B):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    _write_csv(directory / "contexts.csv", data.contexts, "x")
    _write_csv(directory / "costs.csv", data.costs, "theta")
    _write_csv(directory / "solutions.csv", data.solutions, "y")
    _write_csv(directory / "B.csv", B, "col")
    (directory / "layer.json").write_text(json.dumps(layer.to_dict()) + "\n")
    manifest = {
        "kind": "dataset",
        "version": DATASET_VERSION,
        "genspec": asdict(spec),
        "n_samples": len(data),
        "n_x": data.contexts.shape[1],
        "n_y": data.costs.shape[1],
        "sense": layer.sense,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def load_dataset(directory):
    """Return ``(spec, layer, dataset, B)`` from a dataset directory."""
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    if manifest.get("kind") != "dataset" or manifest.get("version") != DATASET_VERSION:
        raise InputError(f"{directory} is not a version {DATASET_VERSION} dataset")
    spec = GenSpec(**manifest["genspec"])
    layer = layer_from_dict(json.loads((directory / "layer.json").read_text()))
    data = Dataset(
        _read_csv(directory / "contexts.csv"),
        _read_csv(directory / "costs.csv"),
        _read_csv(directory / "solutions.csv"),
    )
    if len(data) != manifest["n_samples"]:
        raise InputError("dataset row count disagrees with its manifest")
    for y in data.solutions:
        if not layer.is_feasible(y):
            raise InputError("stored solution is infeasible for the dataset's layer")
    return spec, layer, data, _read_csv(directory / "B.csv")


def split(data, n_test):
    """Train/test split keeping the last ``n_test`` rows for testing."""
    if not 0 < n_test < len(data):
        raise InputError("n_test must lie strictly between 0 and the dataset size")
    n = len(data)
    return data.subset(np.arange(n - n_test)), data.subset(np.arange(n - n_test, n))
