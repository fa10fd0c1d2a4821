"""Acceptance gate: ten criteria covering gradients, rate-reduction
invariants, the channel, end-to-end training, gating, label corruption,
the separate-coding cliff, noise discretization, and feature geometry.

Each criterion records one pass/fail line (printed in the terminal summary)
and asserts at its stated tolerance.
"""

import dataclasses
import time

import numpy as np
import pytest

from jscc.autodiff import Tensor, constant
from jscc.channel import (draw_channel, equalize, normalize_power,
                          sigma2_to_snr_db, transmit)
from jscc.data import (CorruptionConfig, build_membership, corrupt_labels,
                       load_mnist_3class_8x8)
from jscc.losses import (RateParams, coding_rate, cross_entropy, mse_loss,
                         one_hot, rate_reduction, ssim_loss, unified_loss)
from jscc.metrics import SsccConfig, capacity, psnr, sscc_transmit
from jscc.models import (DecoderConfig, EncoderConfig, GateConfig,
                         gate_forward, normalize_features)
from jscc.training import (ChannelConfig, TrainConfig, discretize_sigma,
                           evaluate, fit_feature_classifier,
                           train_cross_entropy_baseline, train_gated,
                           train_jscc)

from conftest import numeric_grad, rel_err

RESULTS = []

P = RateParams(eps2=0.5)
AWGN = ChannelConfig("awgn")
ENC = EncoderConfig(input_shape=(8, 8, 1), hidden=(256,), out_dim=40)
DEC = DecoderConfig(output_shape=(8, 8, 1), hidden=(256,), in_dim=40)


def desk_cfg(**kw):
    base = dict(learning_rate=3e-3, batch_size=128, epochs=10, snr_db=10.0,
                seed=0)
    base.update(kw)
    return TrainConfig(**base)


def record(num, ok, detail):
    RESULTS.append(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'} — {detail}")
    assert ok, RESULTS[-1]


@pytest.fixture(scope="module")
def toy_data():
    return load_mnist_3class_8x8(None, 1500, 300, seed=0)


@pytest.fixture(scope="module")
def toy_model(toy_data):
    """Criterion-4 training run, shared with criterion 10."""
    train, _ = toy_data
    start = time.perf_counter()
    trained = train_jscc(train, ENC, DEC, AWGN, desk_cfg())
    fit_feature_classifier(trained, train, 10.0, np.random.default_rng(1))
    return trained, time.perf_counter() - start


def test_criterion_1_gradient_suite():
    """Backward gradients of every loss match central finite differences
    (64-bit, step 1e-5) to rel err <= 1e-4 on 100 random instances each."""
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    worst = {}

    def check(name, tensor, make):
        make().backward()
        analytic = tensor.grad.copy()
        num = numeric_grad(lambda: make().item(), tensor.data, h=1e-5)
        err = rel_err(analytic, num)
        worst[name] = max(worst.get(name, 0.0), err)

    for _ in range(100):
        m = int(rng.integers(2, 17))
        n = int(rng.integers(4, 33))
        j = int(rng.integers(2, 4))
        labels = rng.integers(0, j, size=n)
        labels[:j] = np.arange(j)            # keep every class populated
        pi = build_membership(labels, j)
        y = Tensor(rng.standard_normal((m, n)))
        check("rate_reduction", y, lambda: rate_reduction(y, pi, P))

        s = constant(rng.uniform(size=(4, 12)))
        shat = Tensor(rng.uniform(0.05, 0.95, size=(4, 12)))
        check("mse", shat, lambda: mse_loss(s, shat))
        check("ssim", shat, lambda: ssim_loss(s, shat))

        yu = Tensor(rng.standard_normal((m, n)))
        su = constant(rng.uniform(size=(n, 8)))
        shu = Tensor(rng.uniform(size=(n, 8)))
        def unified():
            return unified_loss(yu, pi, su, shu, P)
        check("unified_y", yu, unified)
        check("unified_shat", shu, unified)

        logits = Tensor(rng.standard_normal((6, j)))
        onehot = one_hot(rng.integers(0, j, size=6), j)
        check("cross_entropy", logits,
              lambda: cross_entropy(logits.softmax(), onehot))

    elapsed = time.perf_counter() - start
    peak = max(worst.values())
    record(1, peak <= 1e-4 and elapsed < 120,
           f"gradient suite: worst rel err {peak:.2e} (tol 1e-4), "
           f"{elapsed:.1f} s (< 120 s)")


def test_criterion_2_rate_reduction_invariants():
    """Nonnegativity on 1000 random instances, J=1 collapse, rotation
    invariance, and the worked log-det values to 1e-9."""
    rng = np.random.default_rng(1)
    min_dr = np.inf
    for _ in range(1000):
        m = int(rng.integers(1, 9))
        n = int(rng.integers(2, 17))
        j = int(rng.integers(1, 4))
        y = constant(rng.standard_normal((m, n)))
        pi = build_membership(rng.integers(0, j, size=n), j)
        min_dr = min(min_dr, rate_reduction(y, pi, P).item())

    y1 = constant(rng.standard_normal((4, 9)))
    single = abs(rate_reduction(y1, build_membership(np.zeros(9, int), 1),
                                P).item())

    y2 = rng.standard_normal((4, 12))
    q, _ = np.linalg.qr(rng.standard_normal((4, 4)))
    rot = abs(coding_rate(constant(y2), P).item()
              - coding_rate(constant(q @ y2), P).item())

    vals = [
        abs(coding_rate(constant(np.array([[1.0]])), P).item()
            - 0.5 * np.log(3)),
        abs(coding_rate(constant(np.eye(2)), P).item() - np.log(3)),
        abs(coding_rate(constant(np.eye(2)), P).item()
            - rate_reduction(constant(np.eye(2)), build_membership([0, 1], 2),
                             P).item() - 0.5 * np.log(5)),
        abs(rate_reduction(constant(np.eye(2)), build_membership([0, 1], 2),
                           P).item() - (np.log(3) - 0.5 * np.log(5))),
    ]
    ok = (min_dr >= -1e-9 and single <= 1e-12 and rot <= 1e-8
          and max(vals) <= 1e-9)
    record(2, ok, f"rate invariants: min dR {min_dr:.2e} (>= -1e-9), "
           f"rotation err {rot:.2e} (<= 1e-8), worked values off by "
           f"{max(vals):.2e} (<= 1e-9)")


def test_criterion_3_channel_suite():
    """Power constraint to 1e-9, exact equalization, unit mean-square fading
    gain within 2% over 1e5 draws."""
    start = time.perf_counter()
    rng = np.random.default_rng(2)
    power_err = 0.0
    for _ in range(200):
        b = int(rng.integers(2, 40))
        x = rng.standard_normal(b) + 1j * rng.standard_normal(b)
        xhat = normalize_power(x)
        power_err = max(power_err,
                        abs(np.sum(np.abs(xhat) ** 2) / b - 1.0))

    eq_err = 0.0
    for _ in range(200):
        ch = draw_channel("rayleigh", 10.0, 16, rng)
        ch = dataclasses.replace(ch, noise=np.zeros(16, dtype=complex))
        x = normalize_power(rng.standard_normal(16)
                            + 1j * rng.standard_normal(16))
        eq_err = max(eq_err,
                     float(np.max(np.abs(equalize(transmit(x, ch), ch) - x))))

    ray = np.mean([abs(draw_channel("rayleigh", 0.0, 0, rng).h) ** 2
                   for _ in range(10 ** 5)])
    ric = np.mean([abs(draw_channel("rician", 0.0, 0, rng, rician_k=1.0).h) ** 2
                   for _ in range(10 ** 5)])
    elapsed = time.perf_counter() - start
    ok = (power_err <= 1e-9 and eq_err <= 1e-12
          and 0.98 <= ray <= 1.02 and 0.98 <= ric <= 1.02 and elapsed < 60)
    record(3, ok, f"channel suite: power err {power_err:.2e} (<= 1e-9), "
           f"equalization err {eq_err:.2e}, E|h|^2 rayleigh {ray:.4f} / "
           f"rician {ric:.4f} (within 2%), {elapsed:.1f} s (< 60 s)")


def test_criterion_4_toy_training(toy_data, toy_model):
    """10 epochs at 10 dB: accuracy >= 0.90, PSNR >= untrained + 5 dB,
    deterministic per seed, < 5 min on one core."""
    train, test = toy_data
    trained, train_time = toy_model
    start = time.perf_counter()
    res = evaluate(trained, test, 10.0, np.random.default_rng(2))

    rng0 = np.random.default_rng(0)
    untrained = train_jscc(train, ENC, DEC, AWGN, desk_cfg(epochs=0))
    base = evaluate(untrained, test, 10.0, np.random.default_rng(2))

    rerun = train_jscc(train, ENC, DEC, AWGN, desk_cfg())
    deterministic = rerun.history.loss == trained.history.loss and all(
        np.array_equal(a.data, b.data)
        for a, b in zip(rerun.encoder.parameters(),
                        trained.encoder.parameters()))
    elapsed = train_time + time.perf_counter() - start
    gain = res.psnr - base.psnr
    ok = (res.accuracy >= 0.90 and gain >= 5.0 and deterministic
          and elapsed < 300)
    record(4, ok, f"toy training: accuracy {res.accuracy:.3f} (>= 0.90), "
           f"PSNR gain {gain:.1f} dB (>= 5), deterministic={deterministic}, "
           f"{elapsed:.1f} s (< 300 s)")


def test_criterion_5_channel_aware_benefit(toy_data):
    """Training with the 0 dB channel in-graph beats noiseless training by
    >= 1 dB PSNR at 0 dB, across 3 seeds."""
    train, test = toy_data
    margins = []
    for seed in (0, 1, 2):
        aware = train_jscc(train, ENC, DEC, AWGN, desk_cfg(snr_db=0.0,
                                                           seed=seed))
        blind = train_jscc(train, ENC, DEC, ChannelConfig("none"),
                           desk_cfg(snr_db=0.0, seed=seed))
        blind.channel = AWGN        # evaluate both under the real channel
        pa = evaluate(aware, test, 0.0, np.random.default_rng(seed)).psnr
        pb = evaluate(blind, test, 0.0, np.random.default_rng(seed)).psnr
        margins.append(pa - pb)
    ok = all(m >= 1.0 for m in margins)
    record(5, ok, "channel-aware benefit: margins "
           + ", ".join(f"{m:.2f}" for m in margins) + " dB (each >= 1 dB)")


def test_criterion_6_gated_suite(toy_data):
    """After gated training over [-3, 21] dB: activated ratio non-decreasing
    in noise power on a 25-point grid, strictly lower at 21 dB than at -3 dB,
    and accuracy within 5 points of fixed models at every grid SNR."""
    train, test = toy_data
    gate_cfg = GateConfig()
    gated = train_gated(train, ENC, DEC, gate_cfg, AWGN, desk_cfg(epochs=60))
    lo, hi = gate_cfg.sigma2_range
    grid = np.linspace(lo, hi, 25)
    ratios = [gate_forward(s, gated.gate, gate_cfg).ratio for s in grid]
    monotone = all(b >= a for a, b in zip(ratios, ratios[1:]))
    strict = ratios[0] < ratios[-1]   # grid[0] is the low-noise (21 dB) end

    worst_gap = -np.inf
    for sigma2 in grid:
        snr = sigma2_to_snr_db(sigma2)
        fixed = train_jscc(train, ENC, DEC, AWGN, desk_cfg(snr_db=snr))
        fit_feature_classifier(fixed, train, snr, np.random.default_rng(11))
        acc_fixed = evaluate(fixed, test, snr, np.random.default_rng(12)).accuracy
        fit_feature_classifier(gated, train, snr, np.random.default_rng(11))
        acc_gated = evaluate(gated, test, snr, np.random.default_rng(12)).accuracy
        worst_gap = max(worst_gap, acc_fixed - acc_gated)
    ok = monotone and strict and worst_gap <= 0.05
    record(6, ok, f"gated suite: ratio monotone={monotone}, "
           f"ratio 21 dB {ratios[0]:.2f} < -3 dB {ratios[-1]:.2f}, "
           f"worst accuracy gap {worst_gap:.3f} (<= 0.05)")


def test_criterion_7_label_corruption(toy_data):
    """At LCR = 0.5, rate-reduction + nearest-subspace accuracy >= the
    cross-entropy baseline, across 3 seeds."""
    train, test = toy_data
    results = []
    for seed in (0, 1, 2):
        labels = corrupt_labels(train.labels, CorruptionConfig(0.5, seed),
                                train.num_classes)
        corrupted = dataclasses.replace(train, labels=labels)
        rr = train_jscc(corrupted, ENC, DEC, AWGN, desk_cfg(seed=seed))
        fit_feature_classifier(rr, corrupted, 10.0,
                               np.random.default_rng(seed + 100))
        acc_rr = evaluate(rr, test, 10.0,
                          np.random.default_rng(seed + 200)).accuracy

        encoder, head, _ = train_cross_entropy_baseline(
            corrupted, ENC, (64,), AWGN, desk_cfg(seed=seed))
        rng = np.random.default_rng(seed + 200)
        xhat = normalize_features(encoder(constant(test.flat())), 20)
        noise = np.sqrt(0.1 / 2.0) * rng.standard_normal((test.n, 40))
        z = head(xhat + constant(noise))
        acc_ce = float(np.mean(np.argmax(z.data, axis=1) == test.labels))
        results.append((acc_rr, acc_ce))
    ok = all(rr >= ce for rr, ce in results)
    record(7, ok, "label corruption at LCR 0.5: "
           + ", ".join(f"RR {rr:.3f} vs CE {ce:.3f}" for rr, ce in results)
           + " (RR >= CE each seed)")


def test_criterion_8_sscc_cliff(toy_data):
    """SSCC PSNR jumps >= 5 dB across its rate threshold while JSCC changes
    <= 2 dB over the same 3 dB interval; capacity(0 dB) = 1 exactly."""
    train, test = toy_data
    cfg = SsccConfig(ratio=0.316)
    # locate the threshold interval on the -3:3:21 grid from the rate floor
    r_min = float(np.mean([cfg.codec.min_rate(test.pixels[i])
                           for i in range(50)]))
    thr_db = 10.0 * np.log10(2.0 ** (r_min / cfg.ratio) - 1.0)
    grid = np.arange(-3.0, 22.0, 3.0)
    below = float(grid[grid <= thr_db][-1])
    above = below + 3.0

    rng = np.random.default_rng(3)
    def sscc_mean_psnr(snr):
        vals = [min(psnr(test.pixels[i],
                         sscc_transmit(test.pixels[i], snr, cfg, rng)), 60.0)
                for i in range(60)]
        return float(np.mean(vals))
    jump = sscc_mean_psnr(above) - sscc_mean_psnr(below)

    jscc = train_jscc(train, ENC, DEC, AWGN, desk_cfg(snr_db=below))
    pa = evaluate(jscc, test, below, np.random.default_rng(7)).psnr
    pb = evaluate(jscc, test, above, np.random.default_rng(7)).psnr
    step = abs(pb - pa)
    cap = capacity(0.0)
    ok = jump >= 5.0 and step <= 2.0 and cap == 1.0
    record(8, ok, f"sscc cliff over [{below:.0f}, {above:.0f}] dB: "
           f"sscc jump {jump:.1f} dB (>= 5), jscc step {step:.1f} dB (<= 2), "
           f"capacity(0 dB) = {cap} (== 1)")


def test_criterion_9_discretization():
    """The three worked noise-power discretization examples reproduce
    exactly; quantization error <= span/(2k) over a 1e4-point sweep."""
    exact = (discretize_sigma(0.3, (0.0, 1.0), 4) == 0.375
             and discretize_sigma(0.0, (0.0, 1.0), 4) == 0.125
             and discretize_sigma(0.999, (0.0, 1.0), 4) == 0.875)
    lo, hi, k = 0.0, 1.0, 8
    xs = np.linspace(lo, hi, 10 ** 4)
    max_err = max(abs(discretize_sigma(float(x), (lo, hi), k) - x)
                  for x in xs)
    bound = (hi - lo) / (2 * k)
    ok = exact and max_err <= bound + 1e-15
    record(9, ok, f"discretization: worked examples exact={exact}, max "
           f"quantization error {max_err:.4f} (<= {bound})")


def test_criterion_10_feature_geometry(toy_data, toy_model):
    """After criterion-4 training, classes occupy near-independent
    subspaces: mean |cos| between cross-class features <= 0.1 and mean
    within-class leading-subspace energy fraction >= 0.8."""
    train, _ = toy_data
    trained, _ = toy_model
    feats = normalize_features(trained.encoder(constant(train.flat())),
                               20).data
    unit = feats / np.linalg.norm(feats, axis=1, keepdims=True)
    cross = []
    for a in range(train.num_classes):
        for b in range(a + 1, train.num_classes):
            cos = unit[train.labels == a] @ unit[train.labels == b].T
            cross.append(np.abs(cos).mean())
    mean_cos = float(np.mean(cross))

    energies = []
    for j in range(train.num_classes):
        block = feats[train.labels == j]
        s = np.linalg.svd(block - block.mean(axis=0), compute_uv=False)
        energies.append(float((s[:10] ** 2).sum() / (s ** 2).sum()))
    mean_energy = float(np.mean(energies))
    ok = mean_cos <= 0.1 and mean_energy >= 0.8
    record(10, ok, f"feature geometry: cross-class |cos| {mean_cos:.3f} "
           f"(<= 0.1), leading-subspace energy {mean_energy:.3f} (>= 0.8)")
