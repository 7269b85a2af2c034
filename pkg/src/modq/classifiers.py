"""Uncertainty-aware text classifiers on TF-IDF features.

Three model families, all single-hidden-layer MLPs over sparse inputs:

* `MlpModel` — dropout MLP; serves both the deterministic-softmax baseline
  and Monte Carlo dropout (dropout kept on at inference, T passes).
* `BbbModel` — diagonal-Gaussian variational posterior over every weight,
  trained by minimizing KL(q||prior)*kl_weight + expected NLL via the
  reparameterization trick; inference draws fresh weights per pass.
* `EnsembleModel` — M independently seeded MLPs whose softmax outputs are
  the per-pass samples.

Training is plain mini-batch gradient descent with momentum 0.9 and a
fixed learning rate so that a (config, seed, data) triple fixes the
trained weights bit-for-bit.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from modq import kernels
from modq.corpus import CsrMatrix, FeatureVector, Vocabulary
from modq.uncertainty import PredictiveSamples

MOMENTUM = 0.9
MODEL_FORMAT_VERSION = 1


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 0.5
    hidden_size: int = 64
    dropout_rate: float = 0.4
    l2_penalty: float = 1e-5
    seed: int = 0
    # Bayes-by-backprop only
    kl_weight: float | None = None  # None -> 1/num_batches
    prior_std: float = 1.0
    sigma_init: float = 0.05
    samples_per_step: int = 1

    def validate(self) -> None:
        if min(self.epochs, self.batch_size, self.hidden_size, self.samples_per_step) < 1:
            raise ValueError("epochs, batch_size, hidden_size, samples_per_step must be >= 1")
        if self.learning_rate <= 0 or self.prior_std <= 0 or self.sigma_init <= 0:
            raise ValueError("learning_rate, prior_std, sigma_init must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.l2_penalty < 0:
            raise ValueError("l2_penalty must be >= 0")
        if self.kl_weight is not None and self.kl_weight < 0:
            raise ValueError("kl_weight must be >= 0")


@dataclass
class MlpModel:
    w1: np.ndarray  # (V, H)
    b1: np.ndarray  # (H,)
    w2: np.ndarray  # (H, C)
    b2: np.ndarray  # (C,)
    dropout_rate: float
    l2_penalty: float
    seed: int
    loss_history: list[float] = field(default_factory=list)

    @property
    def num_classes(self) -> int:
        return self.w2.shape[1]


@dataclass
class BbbModel:
    """Variational parameters; sigma = softplus(rho) keeps stds positive."""

    mu: dict[str, np.ndarray]  # keys w1, b1, w2, b2
    rho: dict[str, np.ndarray]
    prior_std: float
    kl_weight: float
    seed: int
    loss_history: list[float] = field(default_factory=list)

    def sigma(self, name: str) -> np.ndarray:
        return _softplus(self.rho[name])

    @property
    def num_classes(self) -> int:
        return self.mu["w2"].shape[1]


@dataclass
class EnsembleModel:
    members: list[MlpModel]

    @property
    def num_classes(self) -> int:
        return self.members[0].num_classes


def softmax(logits: np.ndarray) -> np.ndarray:
    """Stable softmax (max subtraction); rows of a 2-D input are treated
    as independent logit vectors."""
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise ValueError("softmax input must be finite")
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def gaussian_kl(mu, sigma, prior_sigma):
    """KL(N(mu, sigma^2) || N(0, prior_sigma^2)), elementwise on arrays."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma <= 0) or np.any(np.asarray(prior_sigma) <= 0):
        raise ValueError("sigma and prior_sigma must be positive")
    out = (sigma**2 + mu**2) / (2.0 * prior_sigma**2) - 0.5 + np.log(prior_sigma / sigma)
    return float(out) if out.ndim == 0 else out


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def _softplus_inv(y: float) -> float:
    return math.log(math.expm1(y))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def _take_rows(X: CsrMatrix, rows: np.ndarray) -> CsrMatrix:
    starts, ends = X.indptr[rows], X.indptr[rows + 1]
    counts = ends - starts
    indptr = np.zeros(len(rows) + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    gather = np.concatenate([np.arange(s, e) for s, e in zip(starts, ends)]) if len(rows) else np.zeros(0, dtype=np.int64)
    gather = gather.astype(np.int64)
    return CsrMatrix(indptr, X.indices[gather], X.data[gather], (len(rows), X.shape[1]))


def _check_training_inputs(X: CsrMatrix, y: np.ndarray, num_classes: int) -> None:
    if X.shape[0] == 0:
        raise ValueError("empty training set")
    if X.shape[1] == 0:
        raise ValueError("feature dimension is zero")
    if len(y) != X.shape[0]:
        raise ValueError("label count does not match row count")
    if num_classes < 2 or np.any(y < 0) or np.any(y >= num_classes):
        raise ValueError("labels out of range")


def mlp_loss_and_grad(
    params: dict[str, np.ndarray],
    X: CsrMatrix,
    y: np.ndarray,
    l2_penalty: float,
    dropout_rate: float = 0.0,
    masks: tuple[np.ndarray, np.ndarray] | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean cross-entropy + l2*sum(w^2) and its exact gradients.

    `masks` fixes the dropout draws (data mask over the CSR nnz entries,
    hidden mask of shape (batch, H)); deterministic given them, which is
    what the finite-difference tests rely on.
    """
    w1, b1, w2, b2 = params["w1"], params["b1"], params["w2"], params["b2"]
    n = X.shape[0]
    keep = 1.0 - dropout_rate
    if masks is not None:
        data_mask, hidden_mask = masks
        data = X.data * data_mask / keep
    else:
        hidden_mask = None
        data = X.data

    a1 = kernels.csr_matmul(X.indptr, X.indices, data, w1) + b1
    h = np.maximum(a1, 0.0)
    h_drop = h * hidden_mask / keep if hidden_mask is not None else h
    logits = h_drop @ w2 + b2
    probs = softmax(logits)

    eps = np.finfo(np.float64).tiny
    nll = -np.log(np.maximum(probs[np.arange(n), y], eps)).mean()
    loss = nll + l2_penalty * (float((w1**2).sum()) + float((w2**2).sum()))

    dlogits = probs
    dlogits[np.arange(n), y] -= 1.0
    dlogits /= n
    grads = {
        "w2": h_drop.T @ dlogits + 2.0 * l2_penalty * w2,
        "b2": dlogits.sum(axis=0),
    }
    dh = dlogits @ w2.T
    if hidden_mask is not None:
        dh = dh * hidden_mask / keep
    da1 = dh * (a1 > 0)
    grads["w1"] = kernels.csr_t_matmul(X.indptr, X.indices, data, da1, X.shape[1]) + 2.0 * l2_penalty * w1
    grads["b1"] = da1.sum(axis=0)
    return float(loss), grads


def _init_mlp_params(rng: np.random.Generator, dim: int, hidden: int, num_classes: int) -> dict[str, np.ndarray]:
    return {
        "w1": rng.standard_normal((dim, hidden)) / math.sqrt(dim),
        "b1": np.zeros(hidden),
        "w2": rng.standard_normal((hidden, num_classes)) / math.sqrt(hidden),
        "b2": np.zeros(num_classes),
    }


def _epoch_batches(rng: np.random.Generator, n: int, batch_size: int):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def train_mlp(X: CsrMatrix, y: np.ndarray, num_classes: int, cfg: TrainConfig) -> MlpModel:
    """Train the dropout MLP; deterministic for a fixed (cfg, data)."""
    cfg.validate()
    _check_training_inputs(X, y, num_classes)
    rng = np.random.default_rng(cfg.seed)
    params = _init_mlp_params(rng, X.shape[1], cfg.hidden_size, num_classes)
    velocity = {k: np.zeros_like(v) for k, v in params.items()}
    history = []
    for _ in range(cfg.epochs):
        epoch_losses = []
        for rows in _epoch_batches(rng, X.shape[0], cfg.batch_size):
            batch = _take_rows(X, rows)
            if cfg.dropout_rate > 0.0:
                masks = (
                    (rng.random(len(batch.data)) >= cfg.dropout_rate).astype(np.float64),
                    (rng.random((len(rows), cfg.hidden_size)) >= cfg.dropout_rate).astype(np.float64),
                )
            else:
                masks = None
            loss, grads = mlp_loss_and_grad(
                params, batch, y[rows], cfg.l2_penalty, cfg.dropout_rate, masks
            )
            epoch_losses.append(loss)
            for k in params:
                velocity[k] = MOMENTUM * velocity[k] - cfg.learning_rate * grads[k]
                params[k] += velocity[k]
        history.append(float(np.mean(epoch_losses)))
    return MlpModel(
        params["w1"], params["b1"], params["w2"], params["b2"],
        cfg.dropout_rate, cfg.l2_penalty, cfg.seed, history,
    )


def train_ensemble(X: CsrMatrix, y: np.ndarray, num_classes: int, cfg: TrainConfig, m: int = 5) -> EnsembleModel:
    """Train M MLPs with seeds cfg.seed + i; members are independent."""
    if m < 2:
        raise ValueError("ensemble needs M >= 2 members")
    return EnsembleModel([
        train_mlp(X, y, num_classes, replace(cfg, seed=cfg.seed + i)) for i in range(m)
    ])


def bbb_elbo_and_grad(
    mu: dict[str, np.ndarray],
    rho: dict[str, np.ndarray],
    X: CsrMatrix,
    y: np.ndarray,
    prior_std: float,
    kl_weight: float,
    eps_draws: list[dict[str, np.ndarray]],
) -> tuple[float, dict[str, np.ndarray], dict[str, np.ndarray]]:
    """Per-batch ELBO objective kl_weight*KL + mean NLL and its gradients.

    `eps_draws` holds one standard-normal draw per parameter tensor per
    Monte Carlo sample (common random numbers make the objective a
    deterministic function of mu/rho, so finite differences apply).
    """
    sigma = {k: _softplus(rho[k]) for k in rho}
    sig_grad = {k: _sigmoid(rho[k]) for k in rho}

    kl_terms = [gaussian_kl(mu[k], sigma[k], prior_std) for k in sorted(mu)]
    kl_total = float(sum(t.sum() for t in kl_terms))

    grad_mu = {k: kl_weight * mu[k] / prior_std**2 for k in mu}
    grad_rho = {
        k: kl_weight * (sigma[k] / prior_std**2 - 1.0 / sigma[k]) * sig_grad[k] for k in rho
    }

    nll_total = 0.0
    for eps in eps_draws:
        weights = {k: mu[k] + sigma[k] * eps[k] for k in mu}
        nll, wgrads = mlp_loss_and_grad(weights, X, y, l2_penalty=0.0)
        nll_total += nll
        scale = 1.0 / len(eps_draws)
        for k in mu:
            grad_mu[k] += scale * wgrads[k]
            grad_rho[k] += scale * wgrads[k] * eps[k] * sig_grad[k]
    loss = kl_weight * kl_total + nll_total / len(eps_draws)
    return float(loss), grad_mu, grad_rho


def _draw_eps(rng: np.random.Generator, mu: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    # fixed key order pins the RNG stream
    return {k: rng.standard_normal(mu[k].shape) for k in ("w1", "b1", "w2", "b2")}


def train_bbb(X: CsrMatrix, y: np.ndarray, num_classes: int, cfg: TrainConfig) -> BbbModel:
    """Train the Bayes-by-backprop MLP; sigma stays positive throughout."""
    cfg.validate()
    _check_training_inputs(X, y, num_classes)
    rng = np.random.default_rng(cfg.seed)
    mu = _init_mlp_params(rng, X.shape[1], cfg.hidden_size, num_classes)
    rho_init = _softplus_inv(cfg.sigma_init)
    rho = {k: np.full_like(v, rho_init) for k, v in mu.items()}

    num_batches = math.ceil(X.shape[0] / cfg.batch_size)
    kl_weight = cfg.kl_weight if cfg.kl_weight is not None else 1.0 / num_batches

    vel_mu = {k: np.zeros_like(v) for k, v in mu.items()}
    vel_rho = {k: np.zeros_like(v) for k, v in rho.items()}
    history = []
    for _ in range(cfg.epochs):
        epoch_losses = []
        for rows in _epoch_batches(rng, X.shape[0], cfg.batch_size):
            batch = _take_rows(X, rows)
            eps_draws = [_draw_eps(rng, mu) for _ in range(cfg.samples_per_step)]
            loss, grad_mu, grad_rho = bbb_elbo_and_grad(
                mu, rho, batch, y[rows], cfg.prior_std, kl_weight, eps_draws
            )
            epoch_losses.append(loss)
            for k in mu:
                vel_mu[k] = MOMENTUM * vel_mu[k] - cfg.learning_rate * grad_mu[k]
                mu[k] += vel_mu[k]
                vel_rho[k] = MOMENTUM * vel_rho[k] - cfg.learning_rate * grad_rho[k]
                rho[k] += vel_rho[k]
        history.append(float(np.mean(epoch_losses)))
    return BbbModel(mu, rho, cfg.prior_std, kl_weight, cfg.seed, history)


def _forward_dense_rows(x_weights: np.ndarray, w1_rows: np.ndarray, b1, w2, b2) -> np.ndarray:
    """Forward for one sparse input against (possibly batched) dense weights."""
    a1 = x_weights @ w1_rows + b1
    h = np.maximum(a1, 0.0)
    return softmax(h @ w2 + b2)


def _mlp_single_pass(model: MlpModel, x: FeatureVector) -> np.ndarray:
    return _forward_dense_rows(x.weights, model.w1[x.indices], model.b1, model.w2, model.b2)


def predict_samples(
    model: MlpModel | BbbModel | EnsembleModel,
    x: FeatureVector,
    mode: str,
    T: int = 50,
    seed: int = 0,
) -> PredictiveSamples:
    """T class-probability rows for one input under the given mode.

    baseline: one deterministic pass (T forced to 1, dropout off).
    mcd: T passes with fresh dropout masks.
    bbb: T passes with fresh weight draws from the posterior.
    ensemble: one row per member (T forced to M).
    """
    if T < 1:
        raise ValueError("T must be >= 1")

    if mode == "baseline":
        if not isinstance(model, MlpModel):
            raise ValueError("baseline mode needs an MlpModel")
        return PredictiveSamples(_mlp_single_pass(model, x)[None, :], "baseline")

    if mode == "mcd":
        if not isinstance(model, MlpModel):
            raise ValueError("mcd mode needs an MlpModel")
        rng = np.random.default_rng(seed)
        keep = 1.0 - model.dropout_rate
        sub = model.w1[x.indices]  # (nnz, H)
        in_mask = (rng.random((T, len(x.indices))) >= model.dropout_rate) / keep
        hid_mask = (rng.random((T, model.b1.shape[0])) >= model.dropout_rate) / keep
        a1 = (in_mask * x.weights) @ sub + model.b1
        h = np.maximum(a1, 0.0) * hid_mask
        return PredictiveSamples(softmax(h @ model.w2 + model.b2), "mcd")

    if mode == "bbb":
        if not isinstance(model, BbbModel):
            raise ValueError("bbb mode needs a BbbModel")
        rng = np.random.default_rng(seed)
        mu, sig = model.mu, {k: model.sigma(k) for k in model.mu}
        nnz = len(x.indices)
        hidden = mu["b1"].shape[0]
        # only the w1 rows that meet nonzero input entries need sampling
        e_w1 = rng.standard_normal((T, nnz, hidden))
        e_b1 = rng.standard_normal((T, hidden))
        e_w2 = rng.standard_normal((T, *mu["w2"].shape))
        e_b2 = rng.standard_normal((T, *mu["b2"].shape))
        w1 = mu["w1"][x.indices] + sig["w1"][x.indices] * e_w1
        b1 = mu["b1"] + sig["b1"] * e_b1
        w2 = mu["w2"] + sig["w2"] * e_w2
        b2 = mu["b2"] + sig["b2"] * e_b2
        a1 = np.einsum("n,tnh->th", x.weights, w1) + b1
        h = np.maximum(a1, 0.0)
        logits = np.einsum("th,thc->tc", h, w2) + b2
        return PredictiveSamples(softmax(logits), "bbb")

    if mode == "ensemble":
        if not isinstance(model, EnsembleModel):
            raise ValueError("ensemble mode needs an EnsembleModel")
        rows = np.stack([_mlp_single_pass(member, x) for member in model.members])
        return PredictiveSamples(rows, "ensemble")

    raise ValueError(f"unknown mode {mode!r}")


# --- persistence ---------------------------------------------------------

def _arrays_to_json(arrays: dict[str, np.ndarray]) -> dict:
    return {k: {"shape": list(v.shape), "data": v.ravel().tolist()} for k, v in arrays.items()}


def _arrays_from_json(blob: dict) -> dict[str, np.ndarray]:
    return {k: np.array(v["data"], dtype=np.float64).reshape(v["shape"]) for k, v in blob.items()}


@dataclass
class ModelBundle:
    kind: str  # mlp | bbb | ensemble
    model: MlpModel | BbbModel | EnsembleModel
    vocab: Vocabulary | None = None
    class_names: list[str] | None = None


def save_model(path: str | Path, bundle: ModelBundle) -> None:
    """Write a model bundle as one JSON document (weights round-trip to
    < 1e-12 per entry; in practice exactly, via repr-precision floats)."""
    doc: dict = {"format_version": MODEL_FORMAT_VERSION, "kind": bundle.kind}
    m = bundle.model
    if bundle.kind == "mlp":
        assert isinstance(m, MlpModel)
        doc["arrays"] = _arrays_to_json({"w1": m.w1, "b1": m.b1, "w2": m.w2, "b2": m.b2})
        doc["config"] = {"dropout_rate": m.dropout_rate, "l2_penalty": m.l2_penalty, "seed": m.seed}
    elif bundle.kind == "bbb":
        assert isinstance(m, BbbModel)
        doc["arrays"] = _arrays_to_json({f"mu_{k}": v for k, v in m.mu.items()} | {f"rho_{k}": v for k, v in m.rho.items()})
        doc["config"] = {"prior_std": m.prior_std, "kl_weight": m.kl_weight, "seed": m.seed}
    elif bundle.kind == "ensemble":
        assert isinstance(m, EnsembleModel)
        doc["members"] = [
            {
                "arrays": _arrays_to_json({"w1": mm.w1, "b1": mm.b1, "w2": mm.w2, "b2": mm.b2}),
                "config": {"dropout_rate": mm.dropout_rate, "l2_penalty": mm.l2_penalty, "seed": mm.seed},
            }
            for mm in m.members
        ]
    else:
        raise ValueError(f"unknown model kind {bundle.kind!r}")
    if bundle.vocab is not None:
        tokens = sorted(bundle.vocab.index, key=bundle.vocab.index.get)
        doc["vocab"] = {
            "tokens": tokens,
            "document_frequency": [bundle.vocab.document_frequency[t] for t in tokens],
            "corpus_size": bundle.vocab.corpus_size,
        }
    if bundle.class_names is not None:
        doc["class_names"] = bundle.class_names
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def _mlp_from_json(blob: dict) -> MlpModel:
    arrays = _arrays_from_json(blob["arrays"])
    cfg = blob["config"]
    return MlpModel(arrays["w1"], arrays["b1"], arrays["w2"], arrays["b2"],
                    cfg["dropout_rate"], cfg["l2_penalty"], cfg["seed"])


def load_model(path: str | Path) -> ModelBundle:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format_version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {doc.get('format_version')!r}")
    kind = doc["kind"]
    if kind == "mlp":
        model: MlpModel | BbbModel | EnsembleModel = _mlp_from_json(doc)
    elif kind == "bbb":
        arrays = _arrays_from_json(doc["arrays"])
        mu = {k[3:]: v for k, v in arrays.items() if k.startswith("mu_")}
        rho = {k[4:]: v for k, v in arrays.items() if k.startswith("rho_")}
        cfg = doc["config"]
        model = BbbModel(mu, rho, cfg["prior_std"], cfg["kl_weight"], cfg["seed"])
    elif kind == "ensemble":
        model = EnsembleModel([_mlp_from_json(b) for b in doc["members"]])
    else:
        raise ValueError(f"unknown model kind {kind!r}")
    vocab = None
    if "vocab" in doc:
        v = doc["vocab"]
        vocab = Vocabulary(
            {t: i for i, t in enumerate(v["tokens"])},
            dict(zip(v["tokens"], v["document_frequency"])),
            v["corpus_size"],
        )
    return ModelBundle(kind, model, vocab, doc.get("class_names"))
