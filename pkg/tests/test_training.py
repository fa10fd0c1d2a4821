"""Training loops: determinism, noise-power discretization, gated training
invariants, and the cross-entropy baseline."""

import numpy as np
import pytest

from jscc.data import load_mnist_3class_8x8, make_synthetic_subspace
from jscc.errors import ConfigurationError
from jscc.models import DecoderConfig, EncoderConfig, GateConfig
from jscc.training import (ChannelConfig, TrainConfig, discretize_sigma,
                           evaluate, fit_feature_classifier,
                           train_cross_entropy_baseline, train_gated,
                           train_jscc)

ENC = EncoderConfig(input_shape=(8, 8, 1), hidden=(64,), out_dim=20)
DEC = DecoderConfig(output_shape=(8, 8, 1), hidden=(64,), in_dim=20)
AWGN = ChannelConfig("awgn")


def small_cfg(**kw):
    base = dict(learning_rate=3e-3, batch_size=64, epochs=3, snr_db=10.0,
                seed=0)
    base.update(kw)
    return TrainConfig(**base)


class TestDiscretization:
    def test_worked_values(self):
        assert discretize_sigma(0.3, (0.0, 1.0), 4) == 0.375
        assert discretize_sigma(0.0, (0.0, 1.0), 4) == 0.125
        assert discretize_sigma(0.999, (0.0, 1.0), 4) == 0.875

    def test_error_bound_zero_based_range(self):
        lo, hi, k = 0.0, 2.0, 8
        xs = np.linspace(lo, hi, 10 ** 4)
        errs = [abs(discretize_sigma(float(x), (lo, hi), k) - x) for x in xs]
        assert max(errs) <= (hi - lo) / (2 * k) + 1e-12

    def test_outputs_are_midpoints(self):
        lo, hi, k = 0.0, 1.0, 8
        mids = {lo + (hi - lo) * (2 * i + 1) / (2 * k) for i in range(k)}
        for x in np.linspace(lo, hi, 500):
            out = discretize_sigma(float(x), (lo, hi), k)
            assert any(abs(out - m) <= 1e-12 for m in mids)

    def test_single_bin_degenerate(self):
        for x in (0.0, 0.4, 1.0):
            assert discretize_sigma(x, (0.0, 1.0), 1) == 0.5

    def test_corrected_variant_shifted_range(self):
        # verbatim mapping misaligns when the range does not start at zero;
        # the corrected variant bins relative to the range minimum
        out = discretize_sigma(1.1, (1.0, 2.0), 4, corrected=True)
        assert np.isclose(out, 1.125)

    def test_bad_range(self):
        with pytest.raises(ConfigurationError):
            discretize_sigma(0.5, (1.0, 1.0), 4)


class TestFixedTraining:
    def test_zero_epochs_unchanged(self):
        train, _ = load_mnist_3class_8x8(None, 60, 30, seed=0)
        trained = train_jscc(train, ENC, DEC, AWGN, small_cfg(epochs=0))
        rng = np.random.default_rng(0)
        from jscc.models import build_decoder, build_encoder
        fresh_enc = build_encoder(ENC, rng)
        fresh_dec = build_decoder(DEC, rng)
        for a, b in zip(trained.encoder.parameters() +
                        trained.decoder.parameters(),
                        fresh_enc.parameters() + fresh_dec.parameters()):
            assert np.array_equal(a.data, b.data)

    def test_loss_decreases(self):
        train, _ = make_synthetic_subspace(3, 60, 16, 2, 0.02, seed=0)
        enc = EncoderConfig(input_shape=(16, 1, 1), hidden=(64,), out_dim=10)
        dec = DecoderConfig(output_shape=(16, 1, 1), hidden=(64,), in_dim=10)
        trained = train_jscc(train, enc, dec, AWGN,
                             small_cfg(epochs=40, batch_size=180))
        assert trained.history.loss[-1] < trained.history.loss[0]

    def test_deterministic_histories(self):
        train, _ = load_mnist_3class_8x8(None, 120, 30, seed=0)
        a = train_jscc(train, ENC, DEC, AWGN, small_cfg())
        b = train_jscc(train, ENC, DEC, AWGN, small_cfg())
        assert a.history.loss == b.history.loss
        for pa, pb in zip(a.encoder.parameters(), b.encoder.parameters()):
            assert np.array_equal(pa.data, pb.data)

    def test_bad_config(self):
        with pytest.raises(ConfigurationError):
            TrainConfig(learning_rate=0.0)
        with pytest.raises(ConfigurationError):
            TrainConfig(sigma_sampling="loglinear")


class TestGatedTraining:
    def test_gate_weights_stay_nonnegative(self):
        train, _ = load_mnist_3class_8x8(None, 120, 30, seed=0)
        gate_cfg = GateConfig()
        trained = train_gated(train, ENC, DEC, gate_cfg, AWGN,
                              small_cfg(epochs=5))
        for layer in trained.gate.layers:
            assert np.all(layer.w.data >= 0.0)

    def test_activated_ratio_non_decreasing(self):
        from jscc.models import gate_forward
        train, _ = load_mnist_3class_8x8(None, 200, 30, seed=0)
        gate_cfg = GateConfig()
        trained = train_gated(train, ENC, DEC, gate_cfg, AWGN,
                              small_cfg(epochs=20))
        lo, hi = gate_cfg.sigma2_range
        ratios = [gate_forward(s, trained.gate, gate_cfg).ratio
                  for s in np.linspace(lo, hi, 25)]
        assert all(b >= a - 1e-12 for a, b in zip(ratios, ratios[1:]))

    def test_deterministic(self):
        train, _ = load_mnist_3class_8x8(None, 120, 30, seed=0)
        gate_cfg = GateConfig()
        a = train_gated(train, ENC, DEC, gate_cfg, AWGN, small_cfg(epochs=4))
        b = train_gated(train, ENC, DEC, gate_cfg, AWGN, small_cfg(epochs=4))
        assert a.history.loss == b.history.loss


class TestCrossEntropyBaseline:
    def test_separable_data_high_accuracy(self):
        train, _ = make_synthetic_subspace(3, 60, 16, 2, 0.02, seed=0)
        enc = EncoderConfig(input_shape=(16, 1, 1), hidden=(64,), out_dim=10)
        _, _, history = train_cross_entropy_baseline(
            train, enc, (32,), AWGN,
            small_cfg(epochs=100, batch_size=180, snr_db=20.0))
        assert history.accuracy[-1] >= 0.99

    def test_deterministic(self):
        train, _ = load_mnist_3class_8x8(None, 120, 30, seed=0)
        _, _, h1 = train_cross_entropy_baseline(train, ENC, (16,), AWGN,
                                                small_cfg())
        _, _, h2 = train_cross_entropy_baseline(train, ENC, (16,), AWGN,
                                                small_cfg())
        assert h1.loss == h2.loss


class TestEvaluation:
    def test_evaluate_fields(self):
        train, test = load_mnist_3class_8x8(None, 200, 60, seed=0)
        trained = train_jscc(train, ENC, DEC, AWGN, small_cfg(epochs=5))
        fit_feature_classifier(trained, train, 10.0,
                               np.random.default_rng(1))
        res = evaluate(trained, test, 10.0, np.random.default_rng(2))
        assert np.isfinite(res.psnr)
        assert -1.0 <= res.ssim <= 1.0
        assert 0.0 <= res.accuracy <= 1.0
        assert np.isnan(res.activated_ratio)   # no gate on fixed models
