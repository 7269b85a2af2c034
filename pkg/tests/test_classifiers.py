import math

import numpy as np
import pytest

from modq import classifiers, kernels
from modq.classifiers import (
    BbbModel,
    ModelBundle,
    TrainConfig,
    bbb_elbo_and_grad,
    gaussian_kl,
    mlp_loss_and_grad,
    predict_samples,
    softmax,
    train_bbb,
    train_ensemble,
    train_mlp,
)
from modq.corpus import FeatureVector, Vocabulary
from tests.conftest import csr_from_dense


def batch_probs(model, X):
    a1 = kernels.csr_matmul(X.indptr, X.indices, X.data, model.w1) + model.b1
    h = np.maximum(a1, 0.0)
    return softmax(h @ model.w2 + model.b2)


def rel_err(a, b):
    return np.abs(a - b) / np.maximum(np.abs(a) + np.abs(b), 1e-8)


# -- softmax ----------------------------------------------------------

def test_softmax_examples():
    assert np.allclose(softmax(np.array([0.0, 0.0])), [0.5, 0.5])
    assert np.allclose(softmax(np.array([math.log(2), 0.0])), [2 / 3, 1 / 3])
    big = softmax(np.array([1000.0, 0.0]))
    assert np.isfinite(big).all() and big[0] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        softmax(np.array([np.nan, 0.0]))
    with pytest.raises(ValueError):
        softmax(np.array([np.inf, 0.0]))


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(0)
    probs = softmax(rng.standard_normal((40, 7)) * 10)
    assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-9)
    assert (probs > 0).all()


# -- gaussian KL -------------------------------------------------------

def test_gaussian_kl_examples():
    assert gaussian_kl(0.0, 1.0, 1.0) == pytest.approx(0.0, abs=1e-12)
    assert gaussian_kl(1.0, 1.0, 1.0) == pytest.approx(0.5, abs=1e-12)
    assert gaussian_kl(0.0, 0.5, 1.0) == pytest.approx(0.125 - 0.5 + math.log(2), abs=1e-12)
    with pytest.raises(ValueError):
        gaussian_kl(0.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        gaussian_kl(0.0, 1.0, -1.0)


def test_gaussian_kl_nonnegative_zero_iff_prior():
    rng = np.random.default_rng(1)
    for _ in range(300):
        mu = rng.normal(scale=2)
        sigma = rng.uniform(0.05, 3)
        prior = rng.uniform(0.05, 3)
        kl = gaussian_kl(mu, sigma, prior)
        assert kl >= -1e-12
        if abs(mu) < 1e-13 and abs(sigma - prior) < 1e-13:
            assert kl < 1e-12
        if kl < 1e-12:
            assert abs(mu) < 1e-6 and abs(sigma - prior) < 1e-6


# -- MLP training ------------------------------------------------------

def test_train_mlp_fits_separable_toy(toy_separable):
    X, y = toy_separable
    cfg = TrainConfig(epochs=500, batch_size=4, learning_rate=0.5, hidden_size=8,
                      dropout_rate=0.0, seed=3)
    model = train_mlp(X, y, 2, cfg)
    assert (batch_probs(model, X).argmax(axis=1) == y).all()
    assert model.loss_history[-1] < model.loss_history[0]


def test_train_mlp_loss_decreases_with_dropout(toy_separable):
    X, y = toy_separable
    big = csr_from_dense(np.tile(X.toarray(), (8, 1)))
    big_y = np.tile(y, 8)
    cfg = TrainConfig(epochs=10, batch_size=8, learning_rate=0.3, hidden_size=8,
                      dropout_rate=0.4, seed=0)
    model = train_mlp(big, big_y, 2, cfg)
    assert model.loss_history[1] < model.loss_history[0]
    assert np.mean(model.loss_history[-3:]) < model.loss_history[0]


def test_train_mlp_bit_identical(toy_separable):
    X, y = toy_separable
    cfg = TrainConfig(epochs=20, batch_size=2, hidden_size=8, seed=9)
    a = train_mlp(X, y, 2, cfg)
    b = train_mlp(X, y, 2, cfg)
    for name in ("w1", "b1", "w2", "b2"):
        assert np.array_equal(getattr(a, name), getattr(b, name))


def test_train_mlp_rejects_bad_inputs(toy_separable):
    X, y = toy_separable
    with pytest.raises(ValueError, match="feature dimension"):
        train_mlp(csr_from_dense(np.zeros((4, 0))), y, 2, TrainConfig())
    with pytest.raises(ValueError, match="empty training"):
        train_mlp(csr_from_dense(np.zeros((0, 3))), y[:0], 2, TrainConfig())
    with pytest.raises(ValueError):
        train_mlp(X, y, 2, TrainConfig(dropout_rate=1.0))


def test_mlp_gradients_match_finite_differences():
    rng = np.random.default_rng(5)
    X = csr_from_dense(np.abs(rng.standard_normal((5, 3))) * (rng.random((5, 3)) < 0.8))
    y = np.array([0, 1, 1, 0, 1])
    params = {
        "w1": rng.standard_normal((3, 4)) * 0.7,
        "b1": rng.standard_normal(4) * 0.1,
        "w2": rng.standard_normal((4, 2)) * 0.7,
        "b2": rng.standard_normal(2) * 0.1,
    }
    masks = (
        (rng.random(len(X.data)) >= 0.5).astype(np.float64),
        (rng.random((5, 4)) >= 0.5).astype(np.float64),
    )
    _, grads = mlp_loss_and_grad(params, X, y, l2_penalty=0.01, dropout_rate=0.5, masks=masks)

    h = 1e-6
    worst = 0.0
    for key, arr in params.items():
        flat = arr.ravel()
        fd = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp, _ = mlp_loss_and_grad(params, X, y, 0.01, 0.5, masks)
            flat[i] = orig - h
            lm, _ = mlp_loss_and_grad(params, X, y, 0.01, 0.5, masks)
            flat[i] = orig
            fd[i] = (lp - lm) / (2 * h)
        worst = max(worst, rel_err(grads[key].ravel(), fd).max())
    assert worst < 1e-4


# -- BBB ---------------------------------------------------------------

def test_bbb_gradients_match_finite_differences():
    rng = np.random.default_rng(11)
    X = csr_from_dense(np.abs(rng.standard_normal((4, 2))))
    y = np.array([0, 1, 0, 1])
    mu = {
        "w1": rng.standard_normal((2, 2)) * 0.5,
        "b1": rng.standard_normal(2) * 0.1,
        "w2": rng.standard_normal((2, 2)) * 0.5,
        "b2": rng.standard_normal(2) * 0.1,
    }
    rho = {k: rng.normal(-1.0, 0.3, size=v.shape) for k, v in mu.items()}
    eps = [{k: rng.standard_normal(v.shape) for k, v in mu.items()} for _ in range(2)]

    def loss_of(mu, rho):
        return bbb_elbo_and_grad(mu, rho, X, y, prior_std=0.8, kl_weight=0.3, eps_draws=eps)[0]

    _, grad_mu, grad_rho = bbb_elbo_and_grad(mu, rho, X, y, 0.8, 0.3, eps)
    h = 1e-6
    worst = 0.0
    for params, grads in ((mu, grad_mu), (rho, grad_rho)):
        for key, arr in params.items():
            flat = arr.ravel()
            fd = np.zeros_like(flat)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                lp = loss_of(mu, rho)
                flat[i] = orig - h
                lm = loss_of(mu, rho)
                flat[i] = orig
                fd[i] = (lp - lm) / (2 * h)
            worst = max(worst, rel_err(grads[key].ravel(), fd).max())
    assert worst < 1e-3


def test_train_bbb_maximum_likelihood_limit(toy_separable):
    # kl_weight 0 and tiny initial sigma behaves like plain ML training
    X, y = toy_separable
    cfg = TrainConfig(epochs=500, batch_size=4, learning_rate=0.5, hidden_size=8,
                      seed=3, kl_weight=0.0, sigma_init=1e-4)
    model = train_bbb(X, y, 2, cfg)
    mean_model = classifiers.MlpModel(model.mu["w1"], model.mu["b1"], model.mu["w2"],
                                      model.mu["b2"], 0.0, 0.0, 0)
    assert (batch_probs(mean_model, X).argmax(axis=1) == y).all()


def test_train_bbb_deterministic_and_sigma_positive(toy_separable):
    X, y = toy_separable
    cfg = TrainConfig(epochs=15, batch_size=2, hidden_size=4, seed=21)
    a = train_bbb(X, y, 2, cfg)
    b = train_bbb(X, y, 2, cfg)
    for key in a.mu:
        assert np.array_equal(a.mu[key], b.mu[key])
        assert np.array_equal(a.rho[key], b.rho[key])
        assert (a.sigma(key) > 0).all()


# -- ensemble ----------------------------------------------------------

def test_train_ensemble_members_differ(toy_separable):
    X, y = toy_separable
    cfg = TrainConfig(epochs=5, batch_size=4, hidden_size=4, seed=2)
    ens = train_ensemble(X, y, 2, cfg, m=5)
    assert len(ens.members) == 5
    for i in range(5):
        for j in range(i + 1, 5):
            assert not np.array_equal(ens.members[i].w1, ens.members[j].w1)
    again = train_ensemble(X, y, 2, cfg, m=5)
    for a, b in zip(ens.members, again.members):
        assert np.array_equal(a.w1, b.w1)


def test_train_ensemble_needs_two(toy_separable):
    X, y = toy_separable
    with pytest.raises(ValueError):
        train_ensemble(X, y, 2, TrainConfig(epochs=1), m=1)


# -- predictive sampling ------------------------------------------------

def fv(indices, weights, dim):
    return FeatureVector(np.array(indices, dtype=np.int32), np.array(weights), dim)


@pytest.fixture(scope="module")
def small_mlp(toy_separable):
    X, y = toy_separable
    return train_mlp(X, y, 2, TrainConfig(epochs=50, batch_size=4, hidden_size=8, seed=1))


def test_predict_samples_baseline_single_row(small_mlp):
    s = predict_samples(small_mlp, fv([0], [1.0], 2), "baseline", T=50)
    assert s.probs.shape == (1, 2)
    assert s.provenance == "baseline"


def test_predict_samples_mcd_no_dropout_equals_baseline(toy_separable):
    X, y = toy_separable
    model = train_mlp(X, y, 2, TrainConfig(epochs=20, batch_size=4, hidden_size=8,
                                           dropout_rate=0.0, seed=4))
    x = fv([0, 1], [0.6, 0.8], 2)
    mcd = predict_samples(model, x, "mcd", T=7, seed=123)
    base = predict_samples(model, x, "baseline")
    assert np.allclose(mcd.probs, np.repeat(base.probs, 7, axis=0), atol=1e-12)


def test_predict_samples_mcd_varies_and_is_seeded(small_mlp):
    x = fv([0, 1], [0.6, 0.8], 2)
    a = predict_samples(small_mlp, x, "mcd", T=50, seed=5)
    b = predict_samples(small_mlp, x, "mcd", T=50, seed=5)
    c = predict_samples(small_mlp, x, "mcd", T=50, seed=6)
    assert a.probs.shape == (50, 2)
    assert np.array_equal(a.probs, b.probs)
    assert not np.array_equal(a.probs, c.probs)
    assert np.allclose(a.probs.sum(axis=1), 1.0, atol=1e-9)


def test_predict_samples_ensemble_row_per_member(toy_separable):
    X, y = toy_separable
    ens = train_ensemble(X, y, 2, TrainConfig(epochs=5, batch_size=4, hidden_size=4, seed=0), m=5)
    s = predict_samples(ens, fv([0], [1.0], 2), "ensemble", T=50)
    assert s.probs.shape == (5, 2)  # T forced to M


def test_predict_samples_bbb_small_sigma_is_deterministic(toy_separable):
    X, y = toy_separable
    rng = np.random.default_rng(8)
    mu = {
        "w1": rng.standard_normal((2, 4)),
        "b1": rng.standard_normal(4),
        "w2": rng.standard_normal((4, 2)),
        "b2": rng.standard_normal(2),
    }
    rho_tiny = {k: np.full(v.shape, math.log(math.expm1(1e-12))) for k, v in mu.items()}
    model = BbbModel(mu, rho_tiny, prior_std=1.0, kl_weight=0.1, seed=0)
    x = fv([0, 1], [0.6, 0.8], 2)
    s = predict_samples(model, x, "bbb", T=20, seed=3)
    mean_model = classifiers.MlpModel(mu["w1"], mu["b1"], mu["w2"], mu["b2"], 0.0, 0.0, 0)
    expect = predict_samples(mean_model, x, "baseline").probs[0]
    assert np.allclose(s.probs, expect[None, :], atol=1e-6)


def test_predict_samples_mode_model_mismatch(small_mlp, toy_separable):
    X, y = toy_separable
    x = fv([0], [1.0], 2)
    with pytest.raises(ValueError):
        predict_samples(small_mlp, x, "bbb")
    with pytest.raises(ValueError):
        predict_samples(small_mlp, x, "ensemble")
    ens = train_ensemble(X, y, 2, TrainConfig(epochs=1, hidden_size=4), m=2)
    with pytest.raises(ValueError):
        predict_samples(ens, x, "mcd")
    with pytest.raises(ValueError):
        predict_samples(small_mlp, x, "nope")
    with pytest.raises(ValueError):
        predict_samples(small_mlp, x, "mcd", T=0)


# -- persistence ---------------------------------------------------------

def test_save_load_roundtrip_mlp(tmp_path, small_mlp):
    vocab = Vocabulary({"aa": 0, "bb": 1}, {"aa": 2, "bb": 1}, 3)
    path = tmp_path / "model.json"
    classifiers.save_model(path, ModelBundle("mlp", small_mlp, vocab, ["neg", "pos"]))
    loaded = classifiers.load_model(path)
    assert loaded.kind == "mlp"
    assert np.array_equal(loaded.model.w1, small_mlp.w1)
    assert np.abs(loaded.model.w2 - small_mlp.w2).max() < 1e-12
    assert loaded.vocab.index == vocab.index
    assert loaded.vocab.document_frequency == vocab.document_frequency
    assert loaded.class_names == ["neg", "pos"]


def test_save_load_roundtrip_bbb(tmp_path, toy_separable):
    X, y = toy_separable
    model = train_bbb(X, y, 2, TrainConfig(epochs=3, hidden_size=4, seed=1))
    path = tmp_path / "bbb.json"
    classifiers.save_model(path, ModelBundle("bbb", model))
    loaded = classifiers.load_model(path).model
    for key in model.mu:
        assert np.array_equal(loaded.mu[key], model.mu[key])
        assert np.array_equal(loaded.rho[key], model.rho[key])
    assert loaded.kl_weight == model.kl_weight


def test_save_load_roundtrip_ensemble(tmp_path, toy_separable):
    X, y = toy_separable
    ens = train_ensemble(X, y, 2, TrainConfig(epochs=2, hidden_size=4, seed=3), m=3)
    path = tmp_path / "ens.json"
    classifiers.save_model(path, ModelBundle("ensemble", ens))
    loaded = classifiers.load_model(path).model
    assert len(loaded.members) == 3
    for a, b in zip(loaded.members, ens.members):
        assert np.array_equal(a.w1, b.w1)


def test_load_rejects_unknown_version(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"format_version": 99, "kind": "mlp"}')
    with pytest.raises(ValueError, match="version"):
        classifiers.load_model(path)
