"""Fully connected Gaussian VAE with an optional cost-aware penalty.

The encoder outputs a diagonal Gaussian ``N(mu(x), diag(exp(logvar(x))))``
and the decoder an isotropic unit-variance Gaussian around ``decoder(z)``, so
the ELBO has a squared-error reconstruction term and a closed-form KL term.
The cost-aware variant subtracts ``alpha * ||phi(x) - phi(decoder(z))||^2``
for a frozen predictor ``phi``, reusing the reconstruction's latent samples.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InputError, NumericError, TrainingError
from .nn import AdamState, DenseNet, adam_step

log = logging.getLogger(__name__)

LOGVAR_MIN, LOGVAR_MAX = -10.0, 10.0
BUNDLE_VERSION = 1
_NETS = ("encoder_trunk", "head_mu", "head_logvar", "decoder")


class Vae:
    def __init__(self, encoder_trunk, head_mu, head_logvar, decoder):
        self.encoder_trunk = encoder_trunk
        self.head_mu = head_mu
        self.head_logvar = head_logvar
        self.decoder = decoder
        if head_mu.output_dim != head_logvar.output_dim:
            raise InputError("mean and log-variance heads disagree on n_z")
        if head_mu.input_dim != encoder_trunk.output_dim or head_logvar.input_dim != encoder_trunk.output_dim:
            raise InputError("heads do not match the encoder trunk width")
        if decoder.input_dim != head_mu.output_dim:
            raise InputError("decoder input width differs from n_z")
        if decoder.output_dim != encoder_trunk.input_dim:
            raise InputError("decoder output width differs from n_x")

    @classmethod
    def create(cls, n_x, n_z, rng, hidden=32):
        return cls(
            DenseNet.create([n_x, hidden], rng, output_activation="relu"),
            DenseNet.create([hidden, n_z], rng),
            DenseNet.create([hidden, n_z], rng),
            DenseNet.create([n_z, hidden, n_x], rng),
        )

    @property
    def n_x(self):
        return self.encoder_trunk.input_dim

    @property
    def n_z(self):
        return self.head_mu.output_dim

    def nets(self):
        return [getattr(self, name) for name in _NETS]

    def params(self):
        return [p for net in self.nets() for p in net.params()]

    def copy(self):
        return Vae(*(net.copy() for net in self.nets()))

    def encode(self, x):
        """Posterior mean and clamped log-variance for ``x``."""
        h = self.encoder_trunk(x)
        return self.head_mu(h), np.clip(self.head_logvar(h), LOGVAR_MIN, LOGVAR_MAX)

    def encode_mean(self, x):
        return self.head_mu(self.encoder_trunk(x))

    def sample_latent(self, x, rng):
        mu, logvar = self.encode(x)
        return mu + np.exp(0.5 * logvar) * rng.standard_normal(mu.shape)

    def decode(self, z):
        return self.decoder(z)

    def reconstruct(self, x):
        return self.decode(self.encode_mean(x))


def encode_mean(v, x):
    return v.encode_mean(x)


def sample_latent(v, x, rng):
    return v.sample_latent(x, rng)


def decode(v, z):
    return v.decode(z)


def kl_closed_form(mu, logvar):
    """KL divergence from ``N(mu, diag(exp(logvar)))`` to the standard normal."""
    mu = np.asarray(mu, dtype=np.float64)
    logvar = np.asarray(logvar, dtype=np.float64)
    if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(logvar))):
        raise NumericError("non-finite KL arguments")
    return -0.5 * np.sum(1.0 + logvar - np.exp(logvar) - mu**2, axis=-1)


@dataclass
class ElboTerms:
    recon: float
    kl: float
    cost_recon: float
    total: float


def cost_aware_elbo(v, predictor, x, alpha, rng=None, n_mc=1, noise=None):
    """Batch-mean cost-aware ELBO and its gradient.

    ``x`` is one context or a batch. Latent noise comes from ``noise`` (shape
    ``(batch, n_mc, n_z)``) when given, otherwise from ``rng``. Returns
    ``(terms, grads)`` with ``grads`` laid out like :meth:`Vae.params`; the
    gradient is of ``terms.total``, to be ascended. ``predictor`` is never
    updated and may be None when ``alpha`` is 0.
    """
    if alpha < 0:
        raise InputError("alpha must be >= 0")
    if alpha > 0 and predictor is None:
        raise InputError("a cost-aware ELBO needs a predictor")
    if predictor is not None and predictor.input_dim != v.n_x:
        raise InputError("predictor input width differs from the VAE's n_x")
    X = np.atleast_2d(np.asarray(x, dtype=np.float64))
    B = len(X)
    if noise is None:
        noise = rng.standard_normal((B, n_mc, v.n_z))
    noise = np.asarray(noise, dtype=np.float64)
    n_mc = noise.shape[1]

    h, trunk_cache = v.encoder_trunk.forward_cache(X)
    mu, mu_cache = v.head_mu.forward_cache(h)
    raw_lv, lv_cache = v.head_logvar.forward_cache(h)
    lv = np.clip(raw_lv, LOGVAR_MIN, LOGVAR_MAX)
    std = np.exp(0.5 * lv)

    z = (mu[:, None, :] + std[:, None, :] * noise).reshape(B * n_mc, v.n_z)
    x_rep = np.repeat(X, n_mc, axis=0)
    x_tilde, dec_cache = v.decoder.forward_cache(z)
    diff = x_rep - x_tilde
    recon = -0.5 * np.sum(diff**2, axis=1)
    kl = kl_closed_form(mu, lv)

    # d total / d x_tilde, already divided by the number of terms averaged
    scale = 1.0 / (B * n_mc)
    up = diff * scale
    cost = np.zeros(B * n_mc)
    if alpha > 0:
        theta = np.repeat(predictor(X), n_mc, axis=0)
        theta_tilde = predictor(x_tilde)
        cdiff = theta - theta_tilde
        cost = np.sum(cdiff**2, axis=1)
        up = up + predictor.vjp_input(x_tilde, 2.0 * alpha * cdiff * scale)

    dec_grads, dz = v.decoder.backward(dec_cache, up)
    dz = dz.reshape(B, n_mc, v.n_z)
    dmu = dz.sum(axis=1) - mu / B
    dlv = (dz * noise).sum(axis=1) * 0.5 * std + 0.5 * (1.0 - np.exp(lv)) / B
    dlv = dlv * ((raw_lv > LOGVAR_MIN) & (raw_lv < LOGVAR_MAX))
    mu_grads, dh_mu = v.head_mu.backward(mu_cache, dmu)
    lv_grads, dh_lv = v.head_logvar.backward(lv_cache, dlv)
    trunk_grads, _ = v.encoder_trunk.backward(trunk_cache, dh_mu + dh_lv)

    recon_mean = float(recon.mean())
    kl_mean = float(kl.mean())
    cost_mean = float(cost.mean())
    terms = ElboTerms(
        recon=recon_mean,
        kl=kl_mean,
        cost_recon=cost_mean,
        total=recon_mean - kl_mean - alpha * cost_mean,
    )
    return terms, trunk_grads + mu_grads + lv_grads + dec_grads


def train_vae(v, data, predictor=None, alpha=0.0, epochs=100, lr=1e-3, seed=0,
              batch_size=64, early_stopping=True, patience=10, val_fraction=0.1):
    """Adam ascent on the mean cost-aware ELBO.

    Returns ``(trained_vae, trace)``; the input VAE is left untouched. With
    early stopping, 10% of ``data`` is held out and the parameters with the
    best validation objective are kept.
    """
    X = np.asarray(data, dtype=np.float64)
    if X.ndim != 2 or len(X) == 0:
        raise InputError("VAE training data must be a nonempty 2-D array")
    v = v.copy()
    rng = np.random.default_rng(seed)
    idx = np.arange(len(X))
    val_idx = np.array([], dtype=int)
    if early_stopping and len(X) >= 10:
        perm = rng.permutation(len(X))
        n_val = max(1, int(round(val_fraction * len(X))))
        val_idx, idx = np.sort(perm[:n_val]), np.sort(perm[n_val:])
    # fixed validation noise keeps the stopping criterion comparable across epochs
    val_noise = rng.standard_normal((len(val_idx), 1, v.n_z))

    params = v.params()
    state = AdamState.for_params(params, lr=lr)
    trace = []
    best_val, best_params, stale = -np.inf, None, 0
    for epoch in range(epochs):
        order = rng.permutation(idx)
        sums = np.zeros(4)
        for start in range(0, len(order), batch_size):
            b = order[start:start + batch_size]
            terms, grads = cost_aware_elbo(v, predictor, X[b], alpha, rng)
            if not np.isfinite(terms.total):
                raise TrainingError("non-finite ELBO", epoch)
            sums += len(b) * np.array([terms.recon, terms.kl, terms.cost_recon, terms.total])
            adam_step(params, [-g for g in grads], state)
        means = sums / len(idx)
        row = {
            "epoch": epoch,
            "recon": means[0],
            "kl": means[1],
            "cost_recon": means[2],
            "total": means[3],
        }
        if len(val_idx):
            val = cost_aware_elbo(v, predictor, X[val_idx], alpha, noise=val_noise)[0].total
            row["val_total"] = val
            if val > best_val:
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
    return v, trace


def save_vae(v, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name in _NETS:
        getattr(v, name).save(directory / f"{name}.json")
    manifest = {
        "kind": "vae",
        "version": BUNDLE_VERSION,
        "n_x": v.n_x,
        "n_z": v.n_z,
        "nets": {name: f"{name}.json" for name in _NETS},
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def load_vae(directory):
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    if manifest.get("kind") != "vae" or manifest.get("version") != BUNDLE_VERSION:
        raise InputError(f"{directory} is not a version {BUNDLE_VERSION} VAE bundle")
    v = Vae(*(DenseNet.load(directory / manifest["nets"][name]) for name in _NETS))
    if v.n_z != manifest["n_z"] or v.n_x != manifest["n_x"]:
        raise InputError("VAE manifest dimensions disagree with its networks")
    return v
