"""Training loops: fixed-SNR end-to-end training, gated training with domain
randomization over channel quality, and the cross-entropy baseline."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .autodiff import constant
from .channel import equalized_noise_batch, snr_db_to_sigma2
from .data import ImageBatch, build_membership
from .errors import ConfigurationError
from .losses import RateParams, cross_entropy, mse_loss, one_hot, rate_reduction
from .models import (ClassifierHead, DecoderConfig, EncoderConfig, GateConfig,
                     GateNet, build_decoder, build_encoder, gate_forward,
                     gated_encode, normalize_features, relaxed_mask)
from .subspace import SubspaceModel, classify_batch, fit_subspaces

log = logging.getLogger(__name__)


@dataclass
class ChannelConfig:
    model: str = "awgn"          # awgn | rayleigh | rician | none
    rician_k: float = 1.0

    def __post_init__(self):
        if self.model not in ("awgn", "rayleigh", "rician", "none"):
            raise ConfigurationError(f"unknown channel model {self.model!r}")


@dataclass
class TrainConfig:
    learning_rate: float = 1.5e-4
    batch_size: int = 2048
    epochs: int = 10
    snr_db: float = 10.0
    snr_range_db: tuple = (-3.0, 21.0)
    seed: int = 0
    eps2: float = 0.5
    beta: float = 1.0
    sigma_sampling: str = "linear"    # linear | db
    bins: int = 8
    gate_penalty: float = 0.1        # weight of the transmitted-dimension cost
    corrected_discretization: bool = False

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 0:
            raise ConfigurationError("rate/batch/epochs must be positive")
        if self.snr_range_db[0] > self.snr_range_db[1]:
            raise ConfigurationError("snr range must be nonempty")
        if self.sigma_sampling not in ("linear", "db"):
            raise ConfigurationError("sigma_sampling must be 'linear' or 'db'")

    def rate_params(self):
        return RateParams(eps2=self.eps2, beta=self.beta)

    def sigma2_range(self):
        """Equivalent-noise-power span induced by the dB range."""
        lo_db, hi_db = self.snr_range_db
        return (snr_db_to_sigma2(hi_db), snr_db_to_sigma2(lo_db))


class Adam:
    """Adam with the standard defaults (beta1=0.9, beta2=0.999)."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self):
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            m += (1.0 - self.beta1) * (p.grad - m)
            v += (1.0 - self.beta2) * (p.grad ** 2 - v)
            p.data -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


@dataclass
class History:
    epochs: list = field(default_factory=list)
    loss: list = field(default_factory=list)
    rate_reduction: list = field(default_factory=list)
    mse: list = field(default_factory=list)
    accuracy: list = field(default_factory=list)
    activated_ratio: list = field(default_factory=list)

    def append(self, epoch, loss, dr=float("nan"), mse=float("nan"),
               acc=float("nan"), ratio=float("nan")):
        self.epochs.append(epoch)
        self.loss.append(loss)
        self.rate_reduction.append(dr)
        self.mse.append(mse)
        self.accuracy.append(acc)
        self.activated_ratio.append(ratio)

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["epoch", "loss", "rate_reduction", "mse",
                        "accuracy", "activated_ratio"])
            for row in zip(self.epochs, self.loss, self.rate_reduction,
                           self.mse, self.accuracy, self.activated_ratio):
                w.writerow(row)


@dataclass
class TrainedJscc:
    encoder: object
    decoder: object
    gate: GateNet
    gate_cfg: GateConfig
    channel: ChannelConfig
    config: TrainConfig
    history: History
    subspace: SubspaceModel = None

    @property
    def symbols(self):
        return self.encoder.cfg.out_dim // 2


def _snapshot(params):
    return [p.data.copy() for p in params]


def _restore(params, snap):
    for p, s in zip(params, snap):
        p.data = s.copy()


def _equalized_noise(channel: ChannelConfig, snr_db, n, b, rng):
    if channel.model == "none":
        return np.zeros((n, 2 * b)), np.zeros(n)
    return equalized_noise_batch(channel.model, snr_db, n, b, rng,
                                 rician_k=channel.rician_k)


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def train_jscc(data: ImageBatch, enc_cfg: EncoderConfig, dec_cfg: DecoderConfig,
               channel: ChannelConfig, cfg: TrainConfig):
    """Fixed-SNR end-to-end training of encoder and decoder.

    Per step: encode, power-normalize, transmit, equalize, decode, then the
    unified loss (negated rate reduction plus beta-weighted MSE). Weights use
    normal initialization; a non-finite loss aborts with the last-good state.
    """
    rng = np.random.default_rng(cfg.seed)
    encoder = build_encoder(enc_cfg, rng)
    decoder = build_decoder(dec_cfg, rng)
    params = encoder.parameters() + decoder.parameters()
    opt = Adam(params, cfg.learning_rate)
    rate_params = cfg.rate_params()
    b = enc_cfg.out_dim // 2
    flat = data.flat()
    history = History()
    good = _snapshot(params)

    for epoch in range(cfg.epochs):
        ep_loss, ep_dr, ep_mse, n_steps = 0.0, 0.0, 0.0, 0
        for idx in _batches(data.n, cfg.batch_size, rng):
            x = constant(flat[idx])
            feats = encoder(x)
            xhat = normalize_features(feats, b)
            noise, _ = _equalized_noise(channel, cfg.snr_db, len(idx), b, rng)
            ybar = xhat + constant(noise)
            shat = decoder(ybar)
            membership = build_membership(data.labels[idx], data.num_classes)
            dr = rate_reduction(ybar.T, membership, rate_params)
            mse = mse_loss(x, shat)
            loss = -dr + rate_params.beta * mse
            if not np.isfinite(loss.data):
                log.error("non-finite loss at epoch %d; restoring last-good "
                          "parameters", epoch)
                _restore(params, good)
                return TrainedJscc(encoder, decoder, None, None, channel, cfg,
                                   history)
            opt.zero_grad()
            loss.backward()
            opt.step()
            ep_loss += loss.item()
            ep_dr += dr.item()
            ep_mse += mse.item()
            n_steps += 1
        good = _snapshot(params)
        if n_steps:
            history.append(epoch, ep_loss / n_steps, ep_dr / n_steps,
                           ep_mse / n_steps)
    return TrainedJscc(encoder, decoder, None, None, channel, cfg, history)


def discretize_sigma(sigma2, sigma2_range, bins, corrected=False):
    """Snap a sampled noise power to its bin midpoint.

    The default follows the published mapping verbatim, whose floor argument
    ignores the range minimum; `corrected=True` subtracts it so bins align for
    ranges not starting at zero. Out-of-range inputs clamp with a log entry.
    """
    lo, hi = sigma2_range
    if lo >= hi:
        raise ConfigurationError("sigma2 range must be increasing")
    if sigma2 < lo or sigma2 > hi:
        log.warning("sigma2 %.4g outside [%.4g, %.4g]; clamped", sigma2, lo, hi)
        sigma2 = min(max(sigma2, lo), hi)
    span = hi - lo
    arg = (sigma2 - lo) if corrected else sigma2
    tilde = span / (2.0 * bins) + (span / bins) * np.floor(arg * bins / span)
    top = span / (2.0 * bins) + (span / bins) * (bins - 1)
    if corrected:
        tilde += lo
        top += lo
    return float(min(tilde, top))


def train_gated(data: ImageBatch, enc_cfg: EncoderConfig, dec_cfg: DecoderConfig,
                gate_cfg: GateConfig, channel: ChannelConfig, cfg: TrainConfig):
    """Domain-randomized training of encoder, decoder, and gate.

    Each epoch draws one equivalent noise power from the configured span,
    discretizes it to a bin midpoint, masks the encoder output through the
    relaxed gate, and trains end to end. Gate weights are clamped nonnegative
    after every step. A small transmitted-dimension cost (cfg.gate_penalty
    times the mean relaxed mask) gives the gate pressure to prune.
    """
    rng = np.random.default_rng(cfg.seed)
    encoder = build_encoder(enc_cfg, rng, last_bias=False)
    decoder = build_decoder(dec_cfg, rng)
    gate = GateNet(gate_cfg, enc_cfg.out_dim, rng)
    params = encoder.parameters() + decoder.parameters() + gate.parameters()
    opt = Adam(params, cfg.learning_rate)
    rate_params = cfg.rate_params()
    flat = data.flat()
    history = History()
    good = _snapshot(params)
    lo, hi = cfg.sigma2_range()

    for epoch in range(cfg.epochs):
        if cfg.sigma_sampling == "linear":
            sigma2 = rng.uniform(lo, hi)
        else:
            sigma2 = snr_db_to_sigma2(rng.uniform(*cfg.snr_range_db))
        tilde = discretize_sigma(sigma2, (lo, hi), cfg.bins,
                                 cfg.corrected_discretization)
        state = gate_forward(tilde, gate, gate_cfg)
        soft = relaxed_mask(tilde, gate, gate_cfg)
        active_symbols = max(1, int(np.ceil(state.active / 2)))

        ep_loss, ep_dr, ep_mse, n_steps = 0.0, 0.0, 0.0, 0
        for idx in _batches(data.n, cfg.batch_size, rng):
            x = constant(flat[idx])
            feats = gated_encode(x, encoder, soft)
            xhat = normalize_features(feats, active_symbols)
            noise = np.sqrt(tilde / 2.0) * rng.standard_normal(
                (len(idx), enc_cfg.out_dim))
            ybar = xhat + constant(noise * state.mask)
            shat = decoder(ybar)
            membership = build_membership(data.labels[idx], data.num_classes)
            dr = rate_reduction(ybar.T, membership, rate_params)
            mse = mse_loss(x, shat)
            loss = -dr + rate_params.beta * mse + cfg.gate_penalty * soft.mean()
            if not np.isfinite(loss.data):
                log.error("non-finite loss at epoch %d; restoring last-good "
                          "parameters", epoch)
                _restore(params, good)
                return TrainedJscc(encoder, decoder, gate, gate_cfg, channel,
                                   cfg, history)
            opt.zero_grad()
            loss.backward()
            opt.step()
            gate.clamp_weights()
            ep_loss += loss.item()
            ep_dr += dr.item()
            ep_mse += mse.item()
            n_steps += 1
        good = _snapshot(params)
        state = gate_forward(tilde, gate, gate_cfg)
        if n_steps:
            history.append(epoch, ep_loss / n_steps, ep_dr / n_steps,
                           ep_mse / n_steps, ratio=state.ratio)
    return TrainedJscc(encoder, decoder, gate, gate_cfg, channel, cfg, history)


def train_cross_entropy_baseline(data: ImageBatch, enc_cfg: EncoderConfig,
                                 head_hidden, channel: ChannelConfig,
                                 cfg: TrainConfig):
    """Label-fitting baseline: same channel pipeline, softmax head, CE loss."""
    rng = np.random.default_rng(cfg.seed)
    encoder = build_encoder(enc_cfg, rng)
    head = ClassifierHead(enc_cfg.out_dim, head_hidden, data.num_classes, rng)
    params = encoder.parameters() + head.parameters()
    opt = Adam(params, cfg.learning_rate)
    b = enc_cfg.out_dim // 2
    flat = data.flat()
    onehots = one_hot(data.labels, data.num_classes)
    history = History()
    good = _snapshot(params)

    for epoch in range(cfg.epochs):
        ep_loss, ep_acc, n_steps = 0.0, 0.0, 0
        for idx in _batches(data.n, cfg.batch_size, rng):
            x = constant(flat[idx])
            xhat = normalize_features(encoder(x), b)
            noise, _ = _equalized_noise(channel, cfg.snr_db, len(idx), b, rng)
            z = head(xhat + constant(noise))
            loss = cross_entropy(z, onehots[idx])
            if not np.isfinite(loss.data):
                log.error("non-finite CE loss at epoch %d; restoring", epoch)
                _restore(params, good)
                return encoder, head, history
            opt.zero_grad()
            loss.backward()
            opt.step()
            ep_loss += loss.item()
            ep_acc += float(np.mean(np.argmax(z.data, axis=1)
                                    == data.labels[idx]))
            n_steps += 1
        good = _snapshot(params)
        if n_steps:
            history.append(epoch, ep_loss / n_steps, acc=ep_acc / n_steps)
    return encoder, head, history


# -- deployment-side evaluation ------------------------------------------------

def received_features(trained: TrainedJscc, batch: ImageBatch, snr_db, rng,
                      sigma2_eq=None):
    """Equalized feature matrix [N, 2b] a receiver would see at `snr_db`.

    For gated models the mask is computed from the raw equivalent noise power
    (no discretization at inference), shared by both endpoints.
    """
    flat = batch.flat()
    b = trained.symbols
    x = constant(flat)
    if trained.gate is None:
        xhat = normalize_features(trained.encoder(x), b)
        noise, _ = _equalized_noise(trained.channel, snr_db, batch.n, b, rng)
        return xhat.data + noise
    sigma2 = sigma2_eq if sigma2_eq is not None else snr_db_to_sigma2(snr_db)
    state = gate_forward(sigma2, trained.gate, trained.gate_cfg)
    active_symbols = max(1, int(np.ceil(state.active / 2)))
    feats = gated_encode(x, trained.encoder, state.mask)
    xhat = normalize_features(feats, active_symbols)
    noise = np.sqrt(sigma2 / 2.0) * rng.standard_normal(flat.shape[:1] + (2 * b,))
    return xhat.data + noise * state.mask


def fit_feature_classifier(trained: TrainedJscc, data: ImageBatch, snr_db, rng,
                           policy=("fixed", 10)):
    """Fit the nearest-subspace classifier on received (equalized) training
    features at the given SNR, matching the deployment condition."""
    feats = received_features(trained, data, snr_db, rng)
    trained.subspace = fit_subspaces(feats, data.labels, policy)
    return trained.subspace


@dataclass
class EvalResult:
    psnr: float
    ssim: float
    accuracy: float
    activated_ratio: float


def evaluate(trained: TrainedJscc, test: ImageBatch, snr_db, rng,
             subspace: SubspaceModel = None):
    """PSNR / SSIM / accuracy of a trained model at one evaluation SNR."""
    from .losses import ssim_tensor
    from .metrics import psnr as psnr_fn

    subspace = subspace or trained.subspace
    feats = received_features(trained, test, snr_db, rng)
    shat = trained.decoder(constant(feats)).data
    flat = test.flat()
    p = float(np.mean([psnr_fn(flat[i], shat[i]) for i in range(test.n)]))
    s = float(ssim_tensor(constant(flat), constant(shat)).data.mean())
    acc = float("nan")
    if subspace is not None:
        preds = classify_batch(feats, subspace)
        acc = float(np.mean(preds == test.labels))
    ratio = float("nan")
    if trained.gate is not None:
        state = gate_forward(snr_db_to_sigma2(snr_db), trained.gate,
                             trained.gate_cfg)
        ratio = state.ratio
    return EvalResult(psnr=p, ssim=s, accuracy=acc, activated_ratio=ratio)
