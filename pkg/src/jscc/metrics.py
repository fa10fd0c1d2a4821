"""Evaluation metrics (PSNR, activated ratio) and the capacity-gated
separate source/channel coding baseline with a pluggable toy codec."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.fft import dctn, idctn

from .autodiff import constant
from .errors import (BaselineError, ConfigurationError, DependencyError,
                     ShapeError)
from .models import GateState, normalize_features


def psnr(s, s_hat, max_val=1.0):
    """10 log10(MAX^2 / MSE) in dB; identical images give +inf."""
    s = np.asarray(s, dtype=np.float64)
    s_hat = np.asarray(s_hat, dtype=np.float64)
    if s.shape != s_hat.shape:
        raise ShapeError(f"shape mismatch {s.shape} vs {s_hat.shape}")
    if max_val <= 0:
        raise ConfigurationError("max_val must be positive")
    mse = float(np.mean((s - s_hat) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(max_val ** 2 / mse))


def capacity(snr_db):
    """Channel capacity log2(1 + SNR) in bits/symbol."""
    if not np.isfinite(snr_db):
        raise ConfigurationError("snr_db must be finite")
    return float(np.log2(1.0 + 10.0 ** (snr_db / 10.0)))


def max_rate(omega, ratio):
    """Capacity-achieving source rate in bits/pixel at compression ratio b/B."""
    if not 0.0 < ratio <= 1.0:
        raise ConfigurationError(f"compression ratio must be in (0,1], got {ratio}")
    return float(ratio * omega)


def activated_ratio(state: GateState):
    return state.active / len(state.mask)


# -- toy transform codec -------------------------------------------------------

def _zigzag_order(n=8):
    idx = sorted(((i, j) for i in range(n) for j in range(n)),
                 key=lambda ij: (ij[0] + ij[1], ij[1] if (ij[0] + ij[1]) % 2 else ij[0]))
    return np.array(idx)


_ZIGZAG = _zigzag_order()
_HEADER_BITS = 16  # per-image side information (config index, scaling)


@dataclass
class CodecStream:
    codes: np.ndarray     # quantized coefficients [num_blocks, keep]
    keep: int
    step: float
    shape: tuple
    rate: float           # estimated bits/pixel


class ToyTransformCodec:
    """8x8 block-transform codec: zigzag coefficient truncation plus uniform
    quantization, with rate measured as an empirical-entropy size estimate.

    Not a production codec; it only needs a monotone rate-distortion knob and
    a genuine minimum achievable rate.
    """

    # smallest config still reconstructs recognizably; the rate floor it
    # induces is what produces a genuine cliff when capacity drops below it
    keeps = (15, 21, 28, 36, 45, 64)
    steps = (0.25, 0.1, 0.05, 0.02)

    def _blocks(self, image):
        image = np.asarray(image, dtype=np.float64)
        if image.ndim == 2:
            image = image[..., None]
        h, w, c = image.shape
        if h % 8 or w % 8:
            raise ConfigurationError(f"image size {h}x{w} not a multiple of 8")
        blocks = image.reshape(h // 8, 8, w // 8, 8, c)
        blocks = blocks.transpose(0, 2, 4, 1, 3).reshape(-1, 8, 8)
        return blocks, image.shape

    def _rate_of(self, codes, num_pixels):
        values, counts = np.unique(codes, return_counts=True)
        p = counts / counts.sum()
        entropy = float(-(p * np.log2(p)).sum())
        return (entropy * codes.size + _HEADER_BITS) / num_pixels

    def _encode_config(self, image, keep, step):
        blocks, shape = self._blocks(image)
        coef = dctn(blocks, axes=(1, 2), norm="ortho")
        rows, cols = _ZIGZAG[:keep, 0], _ZIGZAG[:keep, 1]
        codes = np.rint(coef[:, rows, cols] / step).astype(np.int64)
        num_pixels = int(np.prod(shape))
        return CodecStream(codes=codes, keep=keep, step=step, shape=shape,
                           rate=self._rate_of(codes, num_pixels))

    def available_rates(self, image):
        """All achievable (rate, keep, step) triples for this image."""
        out = []
        for keep in self.keeps:
            for step in self.steps:
                stream = self._encode_config(image, keep, step)
                out.append((stream.rate, keep, step))
        return sorted(out)

    def min_rate(self, image):
        return self.available_rates(image)[0][0]

    def encode(self, image, target_rate):
        """Largest achievable rate not exceeding the target."""
        feasible = [r for r in self.available_rates(image) if r[0] <= target_rate]
        if not feasible:
            raise BaselineError(
                f"no codec configuration fits rate {target_rate:.3f}")
        rate, keep, step = feasible[-1]
        return self._encode_config(image, keep, step)

    def decode(self, stream: CodecStream):
        h, w, c = stream.shape
        rows, cols = _ZIGZAG[:stream.keep, 0], _ZIGZAG[:stream.keep, 1]
        coef = np.zeros((stream.codes.shape[0], 8, 8))
        coef[:, rows, cols] = stream.codes * stream.step
        blocks = idctn(coef, axes=(1, 2), norm="ortho")
        image = blocks.reshape(h // 8, w // 8, c, 8, 8) \
                      .transpose(0, 3, 1, 4, 2).reshape(h, w, c)
        return np.clip(image, 0.0, 1.0)


@dataclass
class SsccConfig:
    ratio: float = 0.316                       # b/B
    codec: object = field(default_factory=ToyTransformCodec)

    def __post_init__(self):
        if not 0.0 < self.ratio <= 1.0:
            raise ConfigurationError(f"ratio must be in (0,1], got {self.ratio}")


def sscc_transmit(image, snr_db, cfg: SsccConfig, rng):
    """Capacity-gated separate-coding transmission of one image.

    Below the codec's rate floor the recovery collapses to a uniform-random
    image (cliff behavior); otherwise the codec runs at the largest rate not
    exceeding the capacity-derived budget, with error-free transport assumed.
    The floor boundary counts as success (inclusive).
    """
    image = np.asarray(image, dtype=np.float64)
    r_max = max_rate(capacity(snr_db), cfg.ratio)
    if cfg.codec.min_rate(image) > r_max:
        return rng.uniform(0.0, 1.0, size=image.shape)
    return cfg.codec.decode(cfg.codec.encode(image, r_max))


def sscc_classify(image_hat, encoder, model, symbols):
    """Classify a separately-coded reconstruction through the learned feature
    pipeline: a noiseless encoder pass followed by nearest-subspace lookup."""
    from .subspace import classify

    if encoder is None or model is None:
        raise DependencyError("sscc_classify needs a trained encoder and a "
                              "fitted subspace model")
    flat = np.asarray(image_hat, dtype=np.float64).reshape(1, -1)
    feats = normalize_features(encoder(constant(flat)), symbols).data[0]
    return classify(feats, model)
