import math

import numpy as np
import pytest

from cfopt.errors import InputError, NumericError
from cfopt.nn import DenseNet
from cfopt.plausibility import AnnulusRegion, empirical_mass, prior_mass
from cfopt.vae import (
    Vae,
    cost_aware_elbo,
    decode,
    encode_mean,
    kl_closed_form,
    load_vae,
    sample_latent,
    save_vae,
    train_vae,
)

from conftest import central_diff, identity_vae, jitter_biases, rel_err


def test_shapes_and_wrappers(rng):
    v = Vae.create(6, 3, rng, hidden=10)
    x = rng.standard_normal((4, 6))
    assert encode_mean(v, x).shape == (4, 3)
    assert decode(v, encode_mean(v, x)).shape == (4, 6)
    assert sample_latent(v, x[0], rng).shape == (3,)
    assert (v.n_x, v.n_z) == (6, 3)


def test_identity_vae_reconstructs_exactly(rng):
    v = identity_vae(4)
    x = rng.standard_normal((5, 4))
    np.testing.assert_allclose(v.reconstruct(x), x, atol=1e-15)


def test_mismatched_nets_rejected(rng):
    v = Vae.create(6, 3, rng)
    with pytest.raises(InputError):
        Vae(v.encoder_trunk, v.head_mu, v.head_logvar, DenseNet.create([3, 5], rng))


def test_sampling_statistics(rng):
    v = identity_vae(3)
    v.head_logvar.layers[0].bias[:] = math.log(0.25)
    x = np.array([1.0, -2.0, 0.5])
    z = np.array([v.sample_latent(x, rng) for _ in range(20_000)])
    np.testing.assert_allclose(z.mean(axis=0), x, atol=0.02)
    np.testing.assert_allclose(z.std(axis=0), 0.5, atol=0.01)


def test_kl_known_values():
    assert kl_closed_form(np.zeros(3), np.zeros(3)) == 0.0
    assert kl_closed_form(np.array([1.0]), np.array([0.0])) == pytest.approx(0.5)
    with pytest.raises(NumericError):
        kl_closed_form(np.array([np.nan]), np.zeros(1))


def test_kl_matches_monte_carlo(rng):
    for _ in range(5):
        mu = rng.standard_normal(3)
        lv = rng.uniform(-1, 1, 3)
        std = np.exp(0.5 * lv)
        z = mu + std * rng.standard_normal((200_000, 3))
        log_q = -0.5 * np.sum(((z - mu) / std) ** 2 + lv, axis=1)
        log_p = -0.5 * np.sum(z**2, axis=1)
        d = log_q - log_p
        assert abs(kl_closed_form(mu, lv) - d.mean()) <= 3 * d.std() / math.sqrt(len(d))


def test_alpha_zero_is_plain_elbo(rng):
    v = Vae.create(5, 2, rng, hidden=8)
    pred = DenseNet.create([5, 4], rng)
    x = rng.standard_normal((6, 5))
    noise = rng.standard_normal((6, 1, 2))
    t0, g0 = cost_aware_elbo(v, None, x, 0.0, noise=noise)
    t1, g1 = cost_aware_elbo(v, pred, x, 0.0, noise=noise)
    assert t0 == t1
    for a, b in zip(g0, g1):
        np.testing.assert_array_equal(a, b)
    assert t0.total == pytest.approx(t0.recon - t0.kl)


def test_perfect_autoencoder_has_zero_cost_term(rng):
    v = identity_vae(4)
    pred = DenseNet.create([4, 6], rng)
    terms, _ = cost_aware_elbo(v, pred, rng.standard_normal((8, 4)), 2.0, noise=np.zeros((8, 1, 4)))
    assert terms.cost_recon == pytest.approx(0.0, abs=1e-20)
    assert terms.recon == pytest.approx(0.0, abs=1e-20)


def test_cost_aware_needs_predictor(rng):
    v = Vae.create(4, 2, rng)
    with pytest.raises(InputError):
        cost_aware_elbo(v, None, np.zeros(4), 1.0, rng)
    with pytest.raises(InputError):
        cost_aware_elbo(v, None, np.zeros(4), -1.0, rng)


@pytest.mark.parametrize("alpha", [0.0, 2.0])
def test_elbo_gradient_finite_differences(rng, alpha):
    v = Vae.create(4, 2, rng, hidden=6)
    pred = DenseNet.create([4, 5, 3], rng)
    jitter_biases(v.nets() + [pred], rng)
    x = rng.standard_normal((3, 4))
    noise = rng.standard_normal((3, 2, 2))
    _, grads = cost_aware_elbo(v, pred, x, alpha, noise=noise)
    params = v.params()
    for p, g in zip(params, grads):
        def f(val, p=p):
            old = p.copy()
            p[...] = val
            out = cost_aware_elbo(v, pred, x, alpha, noise=noise)[0].total
            p[...] = old
            return out
        assert rel_err(g, central_diff(f, p)) < 1e-5


def test_training_improves_elbo_and_is_deterministic(grid3_setup):
    pipe, train, _ = grid3_setup
    v = Vae.create(5, 3, np.random.default_rng(0), hidden=12)
    a, ta = train_vae(v, train.contexts, pipe.predictor, alpha=1.0, epochs=8, seed=1)
    b, tb = train_vae(v, train.contexts, pipe.predictor, alpha=1.0, epochs=8, seed=1)
    assert ta == tb
    for p, q in zip(a.params(), b.params()):
        np.testing.assert_array_equal(p, q)
    assert ta[-1]["total"] > ta[0]["total"]


def test_cost_aware_training_lowers_cost_error(grid3_setup):
    pipe, train, test = grid3_setup
    phi = pipe.predictor
    errs = {}
    for alpha in (0.0, 2.0):
        v = Vae.create(5, 3, np.random.default_rng(0), hidden=16)
        v, _ = train_vae(v, train.contexts, phi, alpha=alpha, epochs=60, seed=0)
        d = phi(test.contexts) - phi(v.reconstruct(test.contexts))
        errs[alpha] = np.mean(np.sum(d**2, axis=1))
    assert errs[2.0] < errs[0.0]


def test_encoded_population_concentrates(grid3_vae, grid3_setup):
    _, train, _ = grid3_setup
    rng = np.random.default_rng(0)
    z = np.array([grid3_vae.sample_latent(x, rng) for x in train.contexts])
    for kappa in (0.5, 1.0):
        region = AnnulusRegion.band(3, kappa)
        assert abs(empirical_mass(z, region) - prior_mass(region)) <= 0.10


def test_bundle_round_trip(tmp_path, rng):
    v = Vae.create(5, 2, rng, hidden=7)
    save_vae(v, tmp_path / "v")
    back = load_vae(tmp_path / "v")
    x = rng.standard_normal(5)
    np.testing.assert_array_equal(back.reconstruct(x), v.reconstruct(x))
    np.testing.assert_array_equal(back.encode(x)[1], v.encode(x)[1])
