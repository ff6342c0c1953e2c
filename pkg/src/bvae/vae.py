"""Bernoulli VAE built on :mod:`bvae.nn`, with the closed-form "preinit" variant.

Layer order used everywhere (gradients, optimizer state, checkpoints)::

    encoder hidden..., mu, log_var, decoder hidden..., output

Seeding: ``fit`` derives two independent streams from ``TrainConfig.seed``
through ``SeedSequence(seed, spawn_key=(0,))`` (minibatch order and latent
noise) and ``spawn_key=(1,)`` (evaluation noise, replayed identically every
epoch so curves are comparable across epochs).
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import nn
from .closedform import ClosedFormSolution
from .datagen import BinaryDataset, check_binary
from .elbo import ElboTerms, kl_diag_gaussian, softplus
from .errors import ArchitectureError, ConfigurationError, PreconditionError, TrainingError

log = logging.getLogger(__name__)

VARIANTS = ("plain", "preinit")


@dataclass(frozen=True)
class VaeArchitecture:
    encoder_hidden: tuple[int, ...]
    latent_dim: int
    decoder_hidden: tuple[int, ...] = ()
    variant: str = "plain"
    canonical: bool = False

    def __post_init__(self):
        object.__setattr__(self, "encoder_hidden", tuple(int(w) for w in self.encoder_hidden))
        object.__setattr__(self, "decoder_hidden", tuple(int(w) for w in self.decoder_hidden))
        if self.latent_dim < 1:
            raise ArchitectureError(f"latent_dim must be >= 1, got {self.latent_dim}")
        if self.variant not in VARIANTS:
            raise ArchitectureError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if any(w < 1 for w in self.encoder_hidden + self.decoder_hidden):
            raise ArchitectureError("hidden widths must be positive")
        if self.canonical and self.decoder_hidden:
            raise ArchitectureError("the canonical architecture has no decoder hidden layers")

    def validate(self, d: int) -> None:
        if self.canonical and (not self.encoder_hidden or self.encoder_hidden[-1] < d):
            raise ArchitectureError(
                f"canonical architecture needs a last encoder layer of width >= d={d}"
            )

    @classmethod
    def canonical_for(cls, d: int, latent_dim: int = 2, variant: str = "plain",
                      first_hidden: int = 2000) -> "VaeArchitecture":
        """``x(d) -> E1(first_hidden) -> E2(d) -> z -> xhat(d)``."""
        return cls((first_hidden, d), latent_dim, (), variant, canonical=True)

    @classmethod
    def deep(cls, latent_dim: int = 2, variant: str = "plain",
             encoder_hidden=(2000, 1000), decoder_hidden=(1000, 2000)) -> "VaeArchitecture":
        return cls(tuple(encoder_hidden), latent_dim, tuple(decoder_hidden), variant, canonical=False)

    def with_variant(self, variant: str) -> "VaeArchitecture":
        return VaeArchitecture(self.encoder_hidden, self.latent_dim, self.decoder_hidden,
                               variant, self.canonical)


@dataclass
class VaeModel:
    encoder_layers: list
    mu_layer: nn.LayerParams
    log_var_layer: nn.LayerParams
    decoder_layers: list
    output_layer: nn.LayerParams
    architecture: VaeArchitecture
    d: int

    def layers(self) -> list:
        return [*self.encoder_layers, self.mu_layer, self.log_var_layer,
                *self.decoder_layers, self.output_layer]

    def copy(self) -> "VaeModel":
        return VaeModel(
            [l.copy() for l in self.encoder_layers], self.mu_layer.copy(),
            self.log_var_layer.copy(), [l.copy() for l in self.decoder_layers],
            self.output_layer.copy(), self.architecture, self.d,
        )

    def checkpoint_groups(self) -> dict:
        return {"encoder": self.encoder_layers, "mu": [self.mu_layer],
                "log_var": [self.log_var_layer], "decoder": self.decoder_layers,
                "output": [self.output_layer]}


def build_model(arch: VaeArchitecture, d: int, rng: np.random.Generator) -> VaeModel:
    """He-initialised model; the log-variance layer is trainable at this point."""
    if d < 1:
        raise ArchitectureError(f"data dimension must be positive, got {d}")
    arch.validate(d)
    widths = [d, *arch.encoder_hidden]
    encoder = [nn.he_init(a, b, rng, "relu") for a, b in zip(widths, widths[1:])]
    h = widths[-1]
    mu = nn.he_init(h, arch.latent_dim, rng, "linear")
    log_var = nn.he_init(h, arch.latent_dim, rng, "linear")
    dwidths = [arch.latent_dim, *arch.decoder_hidden]
    decoder = [nn.he_init(a, b, rng, "relu") for a, b in zip(dwidths, dwidths[1:])]
    output = nn.he_init(dwidths[-1], d, rng, "sigmoid")
    return VaeModel(encoder, mu, log_var, decoder, output, arch, d)


def apply_preinit(model: VaeModel, sol: ClosedFormSolution) -> VaeModel:
    """Copy of ``model`` with the closed-form last layers and a frozen log-variance.

    The mu-layer gets ``Sigma_z W^T`` on its first d inputs and the matching
    bias; the output layer gets ``W`` on its first kappa inputs and bias
    ``b``; surplus input columns are zero.  The log-variance layer becomes a
    non-trainable constant ``log diag Sigma_z``.
    """
    d, k = model.d, model.architecture.latent_dim
    if sol.W_hat.shape != (d, k):
        raise ArchitectureError(f"solution has W of shape {sol.W_hat.shape}, model needs {(d, k)}")
    width = model.mu_layer.fan_in
    if width < d:
        raise ArchitectureError(f"last encoder width {width} < d={d}; cannot place the encoder optimum")
    out_in = model.output_layer.fan_in
    if out_in < k:
        raise ArchitectureError(f"output layer has {out_in} inputs < latent dim {k}")

    new = model.copy()
    new.architecture = model.architecture.with_variant("preinit")

    We = np.zeros((k, width))
    We[:, :d] = sol.encoder_weights()
    new.mu_layer = nn.LayerParams(We, sol.encoder_bias(), "linear", True)

    Wd = np.zeros((d, out_in))
    Wd[:, :k] = sol.W_hat
    new.output_layer = nn.LayerParams(Wd, sol.b_hat.copy(), "sigmoid", True)

    new.log_var_layer = nn.LayerParams(
        np.zeros((k, width)), np.log(np.diag(sol.Sigma_z_hat)), "linear", trainable=False
    )
    return new


@dataclass
class VaeCache:
    x: np.ndarray
    eps: np.ndarray
    mu: np.ndarray
    log_var: np.ndarray
    p: np.ndarray
    recon_samples: np.ndarray
    enc: nn.ForwardCache
    mu_c: nn.ForwardCache
    lv_c: nn.ForwardCache
    dec: nn.ForwardCache


def forward_elbo(model: VaeModel, x_batch, rng: np.random.Generator | None = None,
                 mc_samples: int = 1, eps=None, mu_override=None) -> tuple[ElboTerms, VaeCache]:
    """Negative ELBO of a batch with ``z = mu + exp(log_var / 2) * eps``.

    ``eps`` (shape (S, B, k)) replaces the random draw; ``mu_override``
    replaces the encoder mean.  Both are test hooks.
    """
    x = np.asarray(x_batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.d:
        raise PreconditionError(f"batch must have shape (B, {model.d}), got {x.shape}")
    B, k = x.shape[0], model.architecture.latent_dim
    h, enc_c = nn.forward(model.encoder_layers, x)
    mu, mu_c = nn.forward([model.mu_layer], h)
    lv, lv_c = nn.forward([model.log_var_layer], h)
    if mu_override is not None:
        mu = np.asarray(mu_override, dtype=np.float64).reshape(B, k)
    if eps is None:
        if rng is None:
            raise PreconditionError("either rng or eps is required")
        eps = rng.standard_normal((mc_samples, B, k))
    eps = np.asarray(eps, dtype=np.float64)
    if eps.ndim == 2:
        eps = eps[None]
    S = eps.shape[0]
    z = (mu + np.exp(0.5 * lv) * eps).reshape(S * B, k)
    p, dec_c = nn.forward([*model.decoder_layers, model.output_layer], z)
    logits = dec_c.preacts[-1].reshape(S, B, model.d)
    recon_samples = np.sum(x * logits - softplus(logits), axis=-1)  # (S, B)
    recon = float(np.mean(recon_samples))
    kl = float(np.mean(kl_diag_gaussian(mu, lv)))
    terms = ElboTerms(recon=recon, kl=kl, neg_elbo=kl - recon)
    cache = VaeCache(x, eps, mu, lv, p.reshape(S, B, model.d), recon_samples,
                     enc_c, mu_c, lv_c, dec_c)
    return terms, cache


def backward_elbo(model: VaeModel, cache: VaeCache) -> list:
    """Gradients of the batch negative ELBO, in :meth:`VaeModel.layers` order."""
    x, eps, mu, lv = cache.x, cache.eps, cache.mu, cache.log_var
    S, B, _ = eps.shape
    g_logits = ((cache.p - x) / (S * B)).reshape(S * B, model.d)
    dec_grads, dz = nn.backward([*model.decoder_layers, model.output_layer], cache.dec,
                                g_logits, wrt_preactivation=True)
    dz = dz.reshape(eps.shape)
    sigma = np.exp(0.5 * lv)
    d_mu = dz.sum(axis=0) + mu / B
    d_lv = 0.5 * sigma * (dz * eps).sum(axis=0) + 0.5 * (np.exp(lv) - 1.0) / B
    mu_grads, dh_mu = nn.backward([model.mu_layer], cache.mu_c, d_mu)
    lv_grads, dh_lv = nn.backward([model.log_var_layer], cache.lv_c, d_lv)
    enc_grads, _ = nn.backward(model.encoder_layers, cache.enc, dh_mu + dh_lv)
    return [*enc_grads, *mu_grads, *lv_grads, *dec_grads]


def loss_and_grads(model: VaeModel, x_batch, rng=None, mc_samples: int = 1, eps=None):
    terms, cache = forward_elbo(model, x_batch, rng, mc_samples, eps)
    return terms, backward_elbo(model, cache)


def average_neg_elbo(model: VaeModel, X, rng: np.random.Generator,
                     mc_samples: int = 1, chunk: int = 1000) -> float:
    """Negative average ELBO over all rows of X (forward only)."""
    X = np.asarray(X, dtype=np.float64)
    total = 0.0
    for start in range(0, X.shape[0], chunk):
        xb = X[start:start + chunk]
        terms, _ = forward_elbo(model, xb, rng, mc_samples)
        total += terms.neg_elbo * xb.shape[0]
    return total / X.shape[0]


def split_train_test(data, ratio: float = 2 / 3, seed: int = 0) -> tuple[BinaryDataset, BinaryDataset]:
    """Seeded row partition; the train part has ``ceil(ratio * N)`` rows."""
    if isinstance(data, BinaryDataset):
        X, config = data.X, data.config
    else:
        X, config = check_binary(data), None
    N = X.shape[0]
    if N < 3:
        raise PreconditionError(f"need at least 3 rows to split, got {N}")
    if not 0 < ratio < 1:
        raise ConfigurationError(f"split ratio must lie in (0, 1), got {ratio}")
    n_train = math.ceil(Fraction(ratio).limit_denominator(10**6) * N)
    n_train = min(max(n_train, 1), N - 1)
    perm = np.random.Generator(np.random.PCG64(seed)).permutation(N)
    tr, te = np.sort(perm[:n_train]), np.sort(perm[n_train:])
    return BinaryDataset(X[tr], config), BinaryDataset(X[te], config)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 400
    batch_size: int = 100
    lr: float = 1e-4
    split_ratio: float = 2 / 3
    seed: int = 0
    mc_samples: int = 1

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigurationError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if not 0 < self.split_ratio < 1:
            raise ConfigurationError("split_ratio must lie in (0, 1)")
        if self.mc_samples < 1:
            raise ConfigurationError("mc_samples must be >= 1")
        if not self.lr > 0:
            raise ConfigurationError("lr must be positive")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_neg_elbo: float
    test_neg_elbo: float
    wall_ms: float


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)
    model: VaeModel | None = field(default=None, repr=False)

    def train_losses(self) -> np.ndarray:
        return np.array([r.train_neg_elbo for r in self.records])

    def test_losses(self) -> np.ndarray:
        return np.array([r.test_neg_elbo for r in self.records])


def _rows(data) -> np.ndarray:
    X = data.X if isinstance(data, BinaryDataset) else data
    return np.asarray(X, dtype=np.float64)


def fit(model: VaeModel, train, test, config: TrainConfig) -> TrainLog:
    """Minibatch Adam on the negative ELBO; updates ``model`` in place."""
    Xtr, Xte = _rows(train), _rows(test)
    if Xtr.shape[1] != model.d or Xte.shape[1] != model.d:
        raise PreconditionError(f"data width must equal model d={model.d}")
    seq = np.random.SeedSequence(config.seed)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seq.entropy, spawn_key=(0,))))
    eval_seq = np.random.SeedSequence(seq.entropy, spawn_key=(1,))
    layers = model.layers()
    opt = nn.adam_init(layers, lr=config.lr)
    logbook = TrainLog(model=model)
    n = Xtr.shape[0]
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        for bi, start in enumerate(range(0, n, config.batch_size)):
            xb = Xtr[order[start:start + config.batch_size]]
            terms, grads = loss_and_grads(model, xb, rng, config.mc_samples)
            if not math.isfinite(terms.neg_elbo):
                raise TrainingError(
                    f"non-finite loss {terms.neg_elbo} at epoch {epoch}, batch {bi}",
                    epoch=epoch, batch=bi,
                )
            nn.adam_step(opt, layers, grads)
        eval_rng = np.random.Generator(np.random.PCG64(eval_seq))
        train_loss = average_neg_elbo(model, Xtr, eval_rng, config.mc_samples)
        test_loss = average_neg_elbo(model, Xte, eval_rng, config.mc_samples)
        if not (math.isfinite(train_loss) and math.isfinite(test_loss)):
            raise TrainingError(f"non-finite evaluation loss at epoch {epoch}", epoch=epoch)
        wall = (time.perf_counter() - t0) * 1000.0
        logbook.records.append(EpochRecord(epoch, train_loss, test_loss, wall))
        log.debug("epoch %d train %.4f test %.4f (%.0f ms)", epoch, train_loss, test_loss, wall)
    return logbook
