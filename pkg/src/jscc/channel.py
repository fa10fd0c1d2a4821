"""Block-fading channel simulation: symbol packing, power normalization,
channel draws, transmission, and equalization.

All randomness flows through explicit numpy Generators; the channel itself is
non-trainable but gradient-transparent (received features differ from the
transmitted ones by an additive constant once equalized).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (ConfigurationError, DeepFadeError, DegenerateInputError,
                     LayoutError)

DEEP_FADE_EPS = 1e-6


def pack(features: np.ndarray) -> np.ndarray:
    """Map 2b reals to b complex symbols: first half real parts, second half
    imaginary parts."""
    features = np.asarray(features)
    if features.shape[-1] % 2 != 0:
        raise LayoutError(f"feature length {features.shape[-1]} is odd")
    b = features.shape[-1] // 2
    return features[..., :b] + 1j * features[..., b:]


def unpack(symbols: np.ndarray) -> np.ndarray:
    """Inverse of pack (bit-exact round trip)."""
    return np.concatenate([symbols.real, symbols.imag], axis=-1)


def normalize_power(symbols: np.ndarray) -> np.ndarray:
    """Scale to sqrt(b) * x / ||x|| so the average per-symbol power is exactly 1."""
    symbols = np.asarray(symbols, dtype=complex)
    b = symbols.shape[-1]
    norm = np.linalg.norm(symbols, axis=-1, keepdims=True)
    if np.any(norm == 0):
        raise DegenerateInputError("cannot normalize a zero symbol vector")
    return np.sqrt(b) * symbols / norm


@dataclass
class ChannelRealization:
    """One block-fading draw; h is constant across all symbols of one image."""

    h: complex
    model: str
    sigma2: float
    noise: np.ndarray  # complex, length b

    @property
    def sigma2_eq(self):
        """Equivalent post-equalization noise power sigma^2 / |h|^2."""
        return self.sigma2 / abs(self.h) ** 2


def snr_db_to_sigma2(snr_db: float) -> float:
    """Noise power for unit average symbol power."""
    return float(10.0 ** (-snr_db / 10.0))


def sigma2_to_snr_db(sigma2: float) -> float:
    return float(-10.0 * np.log10(sigma2))


def draw_channel(model, snr_db, num_symbols, rng,
                 rician_k=1.0) -> ChannelRealization:
    """Draw one block-fading realization.

    awgn: h = 1. rayleigh: h complex Gaussian with E|h|^2 = 1.
    rician(K): deterministic line-of-sight sqrt(K/(K+1)) plus scattered
    component of power 1/(K+1), so E|h|^2 = 1.
    """
    if not np.isfinite(snr_db):
        raise ConfigurationError(f"snr_db must be finite, got {snr_db}")
    sigma2 = snr_db_to_sigma2(snr_db)
    if model == "awgn":
        h = 1.0 + 0.0j
    elif model == "rayleigh":
        h = complex(rng.normal(0, np.sqrt(0.5)), rng.normal(0, np.sqrt(0.5)))
    elif model == "rician":
        if rician_k < 0:
            raise ConfigurationError(f"rician K must be >= 0, got {rician_k}")
        scatter = complex(rng.normal(0, np.sqrt(0.5)),
                          rng.normal(0, np.sqrt(0.5)))
        h = np.sqrt(rician_k / (rician_k + 1)) + \
            np.sqrt(1.0 / (rician_k + 1)) * scatter
    else:
        raise ConfigurationError(f"unknown channel model {model!r}")
    noise = np.sqrt(sigma2 / 2) * (rng.standard_normal(num_symbols)
                                   + 1j * rng.standard_normal(num_symbols))
    return ChannelRealization(h=h, model=model, sigma2=sigma2, noise=noise)


def transmit(symbols, ch: ChannelRealization):
    """y = h x + n, exactly."""
    symbols = np.asarray(symbols)
    if symbols.shape[-1] != ch.noise.shape[-1]:
        raise LayoutError(
            f"symbol count {symbols.shape[-1]} != noise length {ch.noise.shape[-1]}")
    return ch.h * symbols + ch.noise


def equalize(received, ch: ChannelRealization):
    """y / h = x + n/h; undefined in a deep fade."""
    if abs(ch.h) < DEEP_FADE_EPS:
        raise DeepFadeError(f"|h| = {abs(ch.h):.3e} below {DEEP_FADE_EPS}")
    return np.asarray(received) / ch.h


def draw_channel_avoid_fade(model, snr_db, num_symbols, rng, rician_k=1.0,
                            max_redraws=100, log=None):
    """Training-time draw that redraws on a deep fade instead of erroring."""
    for _ in range(max_redraws):
        ch = draw_channel(model, snr_db, num_symbols, rng, rician_k)
        if abs(ch.h) >= DEEP_FADE_EPS:
            return ch
        if log is not None:
            log.append(f"deep fade redraw at {snr_db} dB")
    raise DeepFadeError("exceeded deep-fade redraw budget")


def equalized_noise_batch(model, snr_db, n_images, b, rng, rician_k=1.0,
                          log=None):
    """Per-image equalized noise in the 2b-real layout.

    Each image gets one independent block-fading draw; the returned matrix
    [n_images, 2b] is what the receiver sees added to the normalized features
    after equalization. Also returns the per-image equivalent noise powers.
    """
    rows = np.empty((n_images, 2 * b))
    sigma2_eq = np.empty(n_images)
    for i in range(n_images):
        ch = draw_channel_avoid_fade(model, snr_db, b, rng, rician_k, log=log)
        rows[i] = unpack(ch.noise / ch.h)
        sigma2_eq[i] = ch.sigma2_eq
    return rows, sigma2_eq
