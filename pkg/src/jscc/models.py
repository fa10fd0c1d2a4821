"""Encoder, decoder, classifier head, and the channel-adaptive gate, plus the
checkpoint container.

Desk-scale presets use dense layers on flattened (or downsampled) images; the
"table1-mnist" / "table2-cifar" presets mirror the full-scale convolutional
shapes at reduced channel width.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, constant, conv2d, conv2d_transpose
from .errors import (ConfigurationError, ContractError, DegenerateInputError,
                     NormalizationError, ShapeError)

log = logging.getLogger(__name__)


def _normal_init(rng, shape, scale=None):
    fan_in = shape[0] if len(shape) == 2 else int(np.prod(shape[:-1]))
    scale = scale or 1.0 / np.sqrt(fan_in)
    return rng.normal(0.0, scale, size=shape)


class Dense:
    """Fully connected layer; input [N, in] -> [N, out]."""

    def __init__(self, in_dim, out_dim, rng, bias=True):
        self.w = Tensor(_normal_init(rng, (in_dim, out_dim)))
        self.b = Tensor(np.zeros(out_dim)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = x @ self.w
        return out + self.b if self.b is not None else out

    def parameters(self):
        return [self.w] + ([self.b] if self.b is not None else [])


class Standardize:
    """Per-feature affine standardization; batch moments are treated as
    constants during training and frozen running moments at evaluation."""

    def __init__(self, dim, momentum=0.1, eps=1e-5):
        self.gamma = Tensor(np.ones(dim))
        self.beta = Tensor(np.zeros(dim))
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)
        self.momentum = momentum
        self.eps = eps
        self.training = True

    def __call__(self, x: Tensor) -> Tensor:
        flat = x.data.reshape(-1, x.shape[-1])
        if self.training:
            mu, var = flat.mean(axis=0), flat.var(axis=0)
            self.running_mean += self.momentum * (mu - self.running_mean)
            self.running_var += self.momentum * (var - self.running_var)
        else:
            mu, var = self.running_mean, self.running_var
        scale = 1.0 / np.sqrt(var + self.eps)
        return (x - constant(mu)) * constant(scale) * self.gamma + self.beta

    def parameters(self):
        return [self.gamma, self.beta]


@dataclass
class EncoderConfig:
    preset: str = "desk-mlp"           # desk-mlp | table1-mnist | table2-cifar
    input_shape: tuple = (8, 8, 1)
    hidden: tuple = (256,)
    out_dim: int = 40                  # 2b, must be even
    lrelu_slope: float = 0.2

    def __post_init__(self):
        if self.out_dim % 2 != 0:
            raise ConfigurationError(
                f"encoder output dim must be even, got {self.out_dim}")

    @property
    def input_dim(self):
        return int(np.prod(self.input_shape))


@dataclass
class DecoderConfig:
    preset: str = "desk-mlp"
    output_shape: tuple = (8, 8, 1)
    hidden: tuple = (256,)
    in_dim: int = 40
    lrelu_slope: float = 0.2

    @property
    def output_dim(self):
        return int(np.prod(self.output_shape))


class MLPEncoder:
    """Dense encoder: flattened [0,1] pixels -> feature vector of length 2b.

    `last_bias=False` is used by the gated variant, whose final layer is a
    pure row-normalized linear map.
    """

    def __init__(self, cfg: EncoderConfig, rng, last_bias=True):
        self.cfg = cfg
        dims = [cfg.input_dim, *cfg.hidden]
        self.hidden_layers = [Dense(dims[i], dims[i + 1], rng)
                              for i in range(len(dims) - 1)]
        self.last = Dense(dims[-1], cfg.out_dim, rng, bias=last_bias)
        self.slope = cfg.lrelu_slope

    def penultimate(self, x: Tensor) -> Tensor:
        h = x * 2.0 - 1.0   # [0,1] pixels -> [-1,1]
        for layer in self.hidden_layers:
            h = layer(h).lrelu(self.slope)
        return h

    def __call__(self, x: Tensor) -> Tensor:
        return self.last(self.penultimate(x))

    def parameters(self):
        ps = []
        for layer in self.hidden_layers:
            ps += layer.parameters()
        return ps + self.last.parameters()


class MLPDecoder:
    """Dense decoder: features -> [0,1] pixels via a tanh head."""

    def __init__(self, cfg: DecoderConfig, rng):
        self.cfg = cfg
        dims = [cfg.in_dim, *cfg.hidden, cfg.output_dim]
        self.layers = [Dense(dims[i], dims[i + 1], rng)
                       for i in range(len(dims) - 1)]
        self.slope = cfg.lrelu_slope

    def __call__(self, y: Tensor) -> Tensor:
        h = y
        for layer in self.layers[:-1]:
            h = layer(h).lrelu(self.slope)
        return (self.layers[-1](h).tanh() + 1.0) * 0.5

    def parameters(self):
        ps = []
        for layer in self.layers:
            ps += layer.parameters()
        return ps


class ConvEncoder:
    """Reduced-width convolutional encoder mirroring the 32x32 presets:
    three stride-2 stages then a valid 4x4 convolution to a 1x1 feature map."""

    def __init__(self, cfg: EncoderConfig, rng, channels=(8, 16, 32)):
        h, w, c = cfg.input_shape
        if (h, w) != (32, 32):
            raise ConfigurationError("conv presets expect 32x32 inputs")
        self.cfg = cfg
        self.slope = cfg.lrelu_slope
        chain = [c, *channels]
        self.convs = [Tensor(_normal_init(rng, (4, 4, chain[i], chain[i + 1])))
                      for i in range(3)]
        self.norms = [None, Standardize(channels[1]), Standardize(channels[2])]
        self.head = Tensor(_normal_init(rng, (4, 4, channels[2], cfg.out_dim)))

    def __call__(self, x: Tensor) -> Tensor:
        h = x * 2.0 - 1.0
        for w, norm in zip(self.convs, self.norms):
            h = conv2d(h, w, stride=2, pad=1)
            if norm is not None:
                h = norm(h)
            h = h.lrelu(self.slope)
        h = conv2d(h, self.head, stride=1, pad=0)      # 4x4 -> 1x1
        return h.reshape(h.shape[0], self.cfg.out_dim)

    def parameters(self):
        ps = list(self.convs) + [self.head]
        for norm in self.norms:
            if norm is not None:
                ps += norm.parameters()
        return ps

    def set_training(self, training):
        for norm in self.norms:
            if norm is not None:
                norm.training = training


class ConvDecoder:
    """Transposed-convolutional decoder mirroring ConvEncoder."""

    def __init__(self, cfg: DecoderConfig, rng, channels=(32, 16, 8)):
        h, w, c = cfg.output_shape
        if (h, w) != (32, 32):
            raise ConfigurationError("conv presets expect 32x32 outputs")
        self.cfg = cfg
        self.head = Tensor(_normal_init(rng, (4, 4, channels[0], cfg.in_dim)))
        chain = [*channels, c]
        self.deconvs = [Tensor(_normal_init(rng, (4, 4, chain[i + 1], chain[i])))
                        for i in range(3)]
        self.norms = [Standardize(channels[1]), Standardize(channels[2]), None]

    def __call__(self, y: Tensor) -> Tensor:
        h = y.reshape(y.shape[0], 1, 1, self.cfg.in_dim)
        h = conv2d_transpose(h, self.head, stride=1, pad=0,
                             out_hw=(4, 4)).relu()
        for w, norm in zip(self.deconvs[:-1], self.norms[:-1]):
            h = conv2d_transpose(h, w, stride=2, pad=1)
            h = norm(h).relu()
        h = conv2d_transpose(h, self.deconvs[-1], stride=2, pad=1)
        return (h.tanh() + 1.0) * 0.5

    def parameters(self):
        ps = [self.head] + list(self.deconvs)
        for norm in self.norms:
            if norm is not None:
                ps += norm.parameters()
        return ps

    def set_training(self, training):
        for norm in self.norms:
            if norm is not None:
                norm.training = training


def build_encoder(cfg: EncoderConfig, rng, last_bias=True):
    if cfg.preset == "desk-mlp":
        return MLPEncoder(cfg, rng, last_bias=last_bias)
    if cfg.preset in ("table1-mnist", "table2-cifar"):
        return ConvEncoder(cfg, rng)
    raise ConfigurationError(f"unknown encoder preset {cfg.preset!r}")


def build_decoder(cfg: DecoderConfig, rng):
    if cfg.preset == "desk-mlp":
        return MLPDecoder(cfg, rng)
    if cfg.preset in ("table1-mnist", "table2-cifar"):
        return ConvDecoder(cfg, rng)
    raise ConfigurationError(f"unknown decoder preset {cfg.preset!r}")


class ClassifierHead:
    """Receiver-side label predictor for the cross-entropy baseline."""

    def __init__(self, in_dim, hidden, num_classes, rng, slope=0.2):
        dims = [in_dim, *hidden, num_classes]
        self.layers = [Dense(dims[i], dims[i + 1], rng)
                       for i in range(len(dims) - 1)]
        self.slope = slope

    def __call__(self, y: Tensor) -> Tensor:
        h = y
        for layer in self.layers[:-1]:
            h = layer(h).lrelu(self.slope)
        return self.layers[-1](h).softmax(axis=1)

    def parameters(self):
        ps = []
        for layer in self.layers:
            ps += layer.parameters()
        return ps


# -- power normalization inside the training graph ----------------------------

def normalize_features(x: Tensor, symbols: int) -> Tensor:
    """Per-sample scaling to sqrt(symbols) * x / ||x|| in the real layout, so
    each transmitted vector carries exactly `symbols` units of power."""
    norm2 = (x * x).sum(axis=1, keepdims=True)
    if np.any(norm2.data <= 0):
        raise DegenerateInputError("zero feature vector cannot be normalized")
    return x * (norm2 * (1.0 / symbols)) ** -0.5


# -- channel-adaptive gate -----------------------------------------------------

@dataclass
class GateConfig:
    hidden: tuple = (32,)
    threshold: float = 0.5
    temperature: float = 0.1
    min_active: int = 1
    sigma2_range: tuple = (0.00794, 1.9953)   # [-3, 21] dB span
    bins: int = 8
    head: str = "sigmoid"                     # sigmoid | linear
    rescale_input: bool = True

    def __post_init__(self):
        if self.head not in ("sigmoid", "linear"):
            raise ConfigurationError("head must be 'sigmoid' or 'linear'")
        if self.head == "sigmoid" and not 0.0 < self.threshold < 1.0:
            raise ConfigurationError("threshold must lie in (0,1)")
        if self.temperature <= 0:
            raise ConfigurationError("temperature must be positive")
        if self.sigma2_range[0] >= self.sigma2_range[1]:
            raise ConfigurationError("sigma2 range must be increasing")
        if self.bins < 1:
            raise ConfigurationError("bins must be >= 1")
        if self.min_active < 1:
            raise ConfigurationError("min_active must be >= 1")


@dataclass
class GateState:
    scores: np.ndarray        # raw gate outputs in [0,1]^{2b}
    mask: np.ndarray          # hard binary mask
    active: int
    ratio: float


class GateNet:
    """Monotone MLP from equivalent noise power to per-dimension scores.

    Nonnegative weights plus monotone activations make every score
    non-decreasing in the (rescaled) noise power; the sigmoid head keeps
    scores in [0,1] so the threshold is meaningful.
    """

    def __init__(self, cfg: GateConfig, out_dim, rng):
        self.cfg = cfg
        dims = [1, *cfg.hidden, out_dim]
        self.layers = [Dense(dims[i], dims[i + 1], rng)
                       for i in range(len(dims) - 1)]
        for layer in self.layers:
            layer.w.data = np.abs(layer.w.data)

    def _rescale(self, sigma2_eq):
        if not self.cfg.rescale_input:
            return sigma2_eq
        lo, hi = self.cfg.sigma2_range
        t = (sigma2_eq - lo) / (hi - lo)
        if t < 0 or t > 1:
            log.warning("sigma2_eq %.4g outside gate range [%.4g, %.4g]; clamped",
                        sigma2_eq, lo, hi)
            t = min(max(t, 0.0), 1.0)
        return t

    def scores(self, sigma2_eq) -> Tensor:
        h = constant(np.array([[self._rescale(float(sigma2_eq))]]))
        for layer in self.layers[:-1]:
            h = layer(h).relu()
        h = self.layers[-1](h)
        return h.sigmoid() if self.cfg.head == "sigmoid" else h

    def parameters(self):
        ps = []
        for layer in self.layers:
            ps += layer.parameters()
        return ps

    def clamp_weights(self):
        """Project weight matrices back onto the nonnegative orthant (biases
        are unconstrained; constants do not affect monotonicity)."""
        for layer in self.layers:
            np.maximum(layer.w.data, 0.0, out=layer.w.data)


def gate_forward(sigma2_eq, gate: GateNet, cfg: GateConfig) -> GateState:
    """Hard mask: dimension i is active iff its score exceeds the threshold;
    if all fall below, the single top-scoring dimension is switched on."""
    scores = gate.scores(sigma2_eq).data.ravel()
    mask = (scores > cfg.threshold).astype(np.float64)
    if mask.sum() < cfg.min_active:
        top = np.argsort(-scores, kind="stable")[:cfg.min_active]
        mask[top] = 1.0
    active = int(mask.sum())
    return GateState(scores=scores, mask=mask, active=active,
                     ratio=active / len(mask))


def relaxed_mask(sigma2_eq, gate: GateNet, cfg: GateConfig) -> Tensor:
    """Training-time differentiable surrogate sigmoid((g - threshold)/tau)."""
    g = gate.scores(sigma2_eq)
    return ((g - cfg.threshold) * (1.0 / cfg.temperature)).sigmoid()


def row_normalized_weight(w: Tensor) -> Tensor:
    """Unit-normalize each output unit's weight vector (the rows of the
    output-major weight matrix), differentiably."""
    norm2 = (w * w).sum(axis=0, keepdims=True)
    if np.any(norm2.data <= 0):
        raise NormalizationError("zero row in encoder output weight matrix")
    return w * norm2 ** -0.5


def gated_encode(x: Tensor, encoder: MLPEncoder, mask) -> Tensor:
    """Mask the row-normalized final layer's output; `mask` may be a hard
    numpy mask (evaluation) or a relaxed Tensor (training)."""
    if encoder.last.b is not None:
        raise ContractError("gated encoder must use a bias-free final layer")
    pen = encoder.penultimate(x)
    w_tilde = row_normalized_weight(encoder.last.w)
    feats = pen @ w_tilde
    if isinstance(mask, Tensor):
        return feats * mask
    return feats * constant(np.asarray(mask).reshape(1, -1))


# -- checkpoint container ------------------------------------------------------

CHECKPOINT_VERSION = 1


def config_fingerprint(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def save_checkpoint(path, named_params: dict, config: dict):
    """Versioned binary container of named parameter blocks."""
    meta = {"version": CHECKPOINT_VERSION,
            "fingerprint": config_fingerprint(config),
            "config": config}
    arrays = {f"param/{k}": np.asarray(v.data if isinstance(v, Tensor) else v)
              for k, v in named_params.items()}
    np.savez(path, __meta__=np.frombuffer(
        json.dumps(meta, default=str).encode(), dtype=np.uint8), **arrays)


def load_checkpoint(path, expected_config: dict = None):
    with np.load(path) as z:
        meta = json.loads(bytes(z["__meta__"]).decode())
        if meta["version"] != CHECKPOINT_VERSION:
            raise ContractError(f"unsupported checkpoint version {meta['version']}")
        if expected_config is not None:
            expected = config_fingerprint(expected_config)
            if meta["fingerprint"] != expected:
                raise ContractError(
                    f"checkpoint fingerprint {meta['fingerprint']} does not "
                    f"match expected {expected}")
        params = {k[len("param/"):]: z[k] for k in z.files
                  if k.startswith("param/")}
    return params, meta


def named_parameters(model, prefix):
    return {f"{prefix}.{i}": p for i, p in enumerate(model.parameters())}


def restore_parameters(model, params: dict, prefix):
    own = model.parameters()
    for i, p in enumerate(own):
        key = f"{prefix}.{i}"
        if key not in params:
            raise ContractError(f"checkpoint missing parameter {key}")
        if params[key].shape != p.data.shape:
            raise ShapeError(
                f"{key}: checkpoint shape {params[key].shape} != {p.data.shape}")
        p.data = params[key].astype(p.data.dtype)
