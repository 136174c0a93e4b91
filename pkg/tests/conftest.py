import numpy as np
import pytest

from cfopt.data import GenSpec, generate, split
from cfopt.nn import DenseNet, Layer
from cfopt.pipeline import Pipeline, train_spo
from cfopt.vae import Vae, train_vae


def central_diff(f, x, h=1e-5):
    """Central finite-difference gradient of scalar ``f`` at array ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        old = x[i]
        x[i] = old + h
        fp = f(x)
        x[i] = old - h
        fm = f(x)
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b):
    a, b = np.ravel(a), np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return np.linalg.norm(a - b) / scale


def min_abs_preact(net, x):
    _, cache = net.forward_cache(x)
    return min(np.min(np.abs(a)) for _, a, _ in cache[:-1]) if len(cache) > 1 else np.inf


def jitter_biases(nets, rng, scale=0.3):
    """Move zero-initialised biases off the ReLU kinks."""
    for net in nets:
        for layer in net.layers:
            layer.bias += scale * rng.standard_normal(layer.bias.shape)


def identity_vae(n):
    """Exact autoencoder: relu([x; -x]) -> x, with a fixed tiny posterior variance."""
    eye = np.eye(n)
    trunk = DenseNet([Layer(np.vstack([eye, -eye]), np.zeros(2 * n), "relu")])
    mu = DenseNet([Layer(np.hstack([eye, -eye]), np.zeros(n), "identity")])
    lv = DenseNet([Layer(np.zeros((n, 2 * n)), np.full(n, -9.0), "identity")])
    dec = DenseNet([Layer(eye.copy(), np.zeros(n), "identity")])
    return Vae(trunk, mu, lv, dec)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def grid3_setup():
    """Small trained linear pipeline on a 3x3 grid with held-out data."""
    layer, data, B = generate(GenSpec(n_x=5, layer={"kind": "grid", "N": 3}, n_samples=600, seed=3))
    train, test = split(data, 200)
    pipe = Pipeline(DenseNet.create([5, layer.n_y], np.random.default_rng(0)), layer)
    pipe, _ = train_spo(pipe, train, epochs=20, lr=3e-3, seed=0)
    return pipe, train, test


@pytest.fixture(scope="session")
def grid3_mlp_setup():
    layer, data, B = generate(GenSpec(n_x=5, layer={"kind": "grid", "N": 3}, n_samples=600, seed=4))
    train, test = split(data, 200)
    pipe = Pipeline(DenseNet.create([5, 8, layer.n_y], np.random.default_rng(1)), layer)
    pipe, _ = train_spo(pipe, train, epochs=20, lr=3e-3, seed=0, early_stopping=False)
    return pipe, train, test


@pytest.fixture(scope="session")
def grid3_vae(grid3_setup):
    pipe, train, _ = grid3_setup
    vae = Vae.create(5, 3, np.random.default_rng(2), hidden=16)
    vae, _ = train_vae(vae, train.contexts, pipe.predictor, alpha=2.0, epochs=60, seed=0)
    return vae
