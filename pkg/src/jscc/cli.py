"""Command-line experiment runner: configuration, desk-scale studies, and
results emission (CSV plus static SVG plots)."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field, replace

import numpy as np

from .data import (CorruptionConfig, corrupt_labels, load_mnist_3class_8x8,
                   make_synthetic_subspace)
from .errors import JsccError, ValidationError
from .metrics import SsccConfig, psnr, sscc_classify, sscc_transmit
from .models import (DecoderConfig, EncoderConfig, GateConfig,
                     named_parameters, save_checkpoint)
from .training import (ChannelConfig, TrainConfig, evaluate,
                       fit_feature_classifier, train_cross_entropy_baseline,
                       train_gated, train_jscc)

log = logging.getLogger(__name__)

RESULT_COLUMNS = ["snr_db", "channel", "psnr", "ssim", "accuracy",
                  "activated_ratio", "seed"]

# key -> (type, default); unknown keys are rejected by validate_config
CONFIG_SCHEMA = {
    "preset": (str, "mnist-3class-8x8"),
    "channel": (str, "awgn"),
    "snr_grid": (str, "-3:3:21"),
    "snr_db": (float, 10.0),
    "seeds": (str, "0"),
    "out": (str, "results"),
    "epochs": (int, 10),
    "batch_size": (int, 128),
    "learning_rate": (float, 3e-3),
    "eps2": (float, 0.5),
    "beta": (float, 1.0),
    "threshold": (float, 0.5),
    "temperature": (float, 0.1),
    "bins": (int, 8),
    "rician_k": (float, 1.0),
    "gate_penalty": (float, 0.1),
    "lcr_grid": (str, "0,0.1,0.3,0.5"),
    "ratio": (float, 0.316),
    "data_dir": (str, ""),
    "train_n": (int, 1500),
    "test_n": (int, 300),
    "checkpoint": (str, ""),
}


@dataclass
class ExperimentSpec:
    kind: str = ""
    preset: str = "mnist-3class-8x8"
    channel: str = "awgn"
    snr_grid: list = field(default_factory=lambda: [-3.0, 0.0, 3.0, 6.0, 9.0,
                                                    12.0, 15.0, 18.0, 21.0])
    snr_db: float = 10.0
    seeds: list = field(default_factory=lambda: [0])
    out: str = "results"
    epochs: int = 10
    batch_size: int = 128
    learning_rate: float = 3e-3
    eps2: float = 0.5
    beta: float = 1.0
    threshold: float = 0.5
    temperature: float = 0.1
    bins: int = 8
    rician_k: float = 1.0
    gate_penalty: float = 0.1
    lcr_grid: list = field(default_factory=lambda: [0.0, 0.1, 0.3, 0.5])
    ratio: float = 0.316
    data_dir: str = ""
    train_n: int = 1500
    test_n: int = 300
    checkpoint: str = ""


def parse_snr_grid(text):
    """Expand "start:step:stop" (inclusive) or a comma list into floats."""
    text = text.replace("−", "-").strip()
    if ":" in text:
        start, step, stop = (float(x) for x in text.split(":"))
        if step <= 0:
            raise ValidationError([f"snr grid step must be positive: {text}"])
        count = int(np.floor((stop - start) / step + 1e-9)) + 1
        return [start + i * step for i in range(count)]
    return [float(x) for x in text.split(",") if x.strip()]


def validate_config(path=None, overrides=None) -> ExperimentSpec:
    """Read a plain key = value config file, fill defaults, reject unknowns."""
    raw = {}
    if path:
        with open(path) as f:
            for lineno, line in enumerate(f, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ValidationError([f"line {lineno}: expected key = value"])
                key, value = (part.strip() for part in line.split("=", 1))
                raw[key] = value
    raw.update(overrides or {})

    problems = [f"unknown key {k!r}" for k in raw if k not in CONFIG_SCHEMA]
    values = {}
    for key, (typ, default) in CONFIG_SCHEMA.items():
        if key in raw:
            try:
                values[key] = typ(raw[key])
            except (TypeError, ValueError):
                problems.append(f"key {key!r}: cannot parse {raw[key]!r} as "
                                f"{typ.__name__}")
        else:
            values[key] = default
    if not problems:
        if values["eps2"] <= 0:
            problems.append("eps2 must be positive")
        if values["beta"] < 0:
            problems.append("beta must be nonnegative")
        if values["epochs"] < 0:
            problems.append("epochs must be nonnegative")
    if problems:
        raise ValidationError(problems)

    spec = ExperimentSpec(**{k: v for k, v in values.items()
                             if k not in ("snr_grid", "seeds", "lcr_grid")})
    spec.snr_grid = parse_snr_grid(values["snr_grid"])
    spec.seeds = [int(s) for s in str(values["seeds"]).split(",") if s.strip()]
    spec.lcr_grid = [float(x) for x in str(values["lcr_grid"]).split(",")
                     if x.strip()]
    if not spec.snr_grid:
        raise ValidationError(["snr grid is empty"])
    return spec


def load_dataset(spec: ExperimentSpec, seed):
    if spec.preset == "mnist-3class-8x8":
        return load_mnist_3class_8x8(spec.data_dir or None, spec.train_n,
                                     spec.test_n, seed=seed)
    if spec.preset == "synthetic-subspace":
        train, _ = make_synthetic_subspace(3, spec.train_n // 3, 16, 2,
                                           0.02, seed)
        test, _ = make_synthetic_subspace(3, spec.test_n // 3, 16, 2,
                                          0.02, seed + 1)
        return train, test
    raise ValidationError([f"unknown preset {spec.preset!r}"])


def model_configs(spec: ExperimentSpec, batch):
    shape = batch.pixels.shape[1:]
    pixel_count = int(np.prod(shape))
    b = max(1, round(spec.ratio * pixel_count))
    enc = EncoderConfig(input_shape=tuple(shape), hidden=(256,), out_dim=2 * b)
    dec = DecoderConfig(output_shape=tuple(shape), hidden=(256,), in_dim=2 * b)
    return enc, dec


def train_cfg(spec: ExperimentSpec, seed, snr_db=None, **extra):
    return TrainConfig(learning_rate=spec.learning_rate,
                       batch_size=spec.batch_size, epochs=spec.epochs,
                       snr_db=spec.snr_db if snr_db is None else snr_db,
                       snr_range_db=(min(spec.snr_grid), max(spec.snr_grid)),
                       seed=seed, eps2=spec.eps2, beta=spec.beta,
                       bins=spec.bins, gate_penalty=spec.gate_penalty, **extra)


def channel_cfg(spec: ExperimentSpec):
    return ChannelConfig(model=spec.channel, rician_k=spec.rician_k)


def _write_csv(path, columns, rows):
    with open(path, "w") as f:
        f.write(",".join(columns) + "\n")
        for row in rows:
            f.write(",".join(_fmt(v) for v in row) + "\n")


def _fmt(v):
    if isinstance(v, float):
        if np.isinf(v):
            return "inf"
        return f"{v:.6f}"
    return str(v)


def _plot_metrics(rows, out_dir, x_index=0, x_label="snr_db",
                  metrics=(("psnr", 2), ("ssim", 3), ("accuracy", 4),
                           ("activated_ratio", 5))):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    for name, col in metrics:
        xs = [r[x_index] for r in rows]
        ys = [r[col] for r in rows]
        if all(isinstance(y, float) and np.isnan(y) for y in ys):
            continue
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.plot(xs, ys, marker="o")
        ax.set_xlabel(x_label)
        ax.set_ylabel(name)
        ax.grid(True, alpha=0.3)
        fig.tight_layout()
        fig.savefig(os.path.join(out_dir, f"{name}_vs_{x_label}.svg"))
        plt.close(fig)


def _snapshot_config(spec: ExperimentSpec, out_dir):
    with open(os.path.join(out_dir, "config_snapshot.txt"), "w") as f:
        for key in CONFIG_SCHEMA:
            value = getattr(spec, key)
            if isinstance(value, list):
                value = ",".join(str(v) for v in value)
            f.write(f"{key} = {value}\n")
        f.write(f"# kind = {spec.kind}\n")


def _train_fixed(spec, seed, snr_db, train, fit_rng):
    enc_cfg, dec_cfg = model_configs(spec, train)
    trained = train_jscc(train, enc_cfg, dec_cfg, channel_cfg(spec),
                         train_cfg(spec, seed, snr_db))
    fit_feature_classifier(trained, train, snr_db, fit_rng)
    return trained


def cmd_train(spec: ExperimentSpec):
    rows = []
    for seed in spec.seeds:
        rng = np.random.default_rng(seed + 1000)
        train, test = load_dataset(spec, seed)
        trained = _train_fixed(spec, seed, spec.snr_db, train, rng)
        res = evaluate(trained, test, spec.snr_db, rng)
        rows.append([spec.snr_db, spec.channel, res.psnr, res.ssim,
                     res.accuracy, res.activated_ratio, seed])
        trained.history.to_csv(os.path.join(spec.out, f"history_seed{seed}.csv"))
        enc_cfg, dec_cfg = model_configs(spec, train)
        params = {**named_parameters(trained.encoder, "encoder"),
                  **named_parameters(trained.decoder, "decoder")}
        save_checkpoint(os.path.join(spec.out, f"model_seed{seed}.npz"),
                        params, {"encoder": str(enc_cfg), "decoder": str(dec_cfg),
                                 "snr_db": spec.snr_db, "seed": seed})
    _write_csv(os.path.join(spec.out, "results.csv"), RESULT_COLUMNS, rows)
    return rows


def cmd_sweep(spec: ExperimentSpec):
    """One row per (snr, seed): train at each grid SNR and evaluate there."""
    rows = []
    for seed in spec.seeds:
        train, test = load_dataset(spec, seed)
        for snr in spec.snr_grid:
            rng = np.random.default_rng(seed + 1000)
            trained = _train_fixed(spec, seed, snr, train, rng)
            res = evaluate(trained, test, snr, rng)
            rows.append([snr, spec.channel, res.psnr, res.ssim, res.accuracy,
                         res.activated_ratio, seed])
    _write_csv(os.path.join(spec.out, "results.csv"), RESULT_COLUMNS, rows)
    _plot_metrics(rows, spec.out)
    return rows


def cmd_eval(spec: ExperimentSpec):
    """Evaluate one trained model (gated, trained here) across the grid."""
    rows = []
    for seed in spec.seeds:
        train, test = load_dataset(spec, seed)
        enc_cfg, dec_cfg = model_configs(spec, train)
        gate_cfg = GateConfig(threshold=spec.threshold,
                              temperature=spec.temperature, bins=spec.bins)
        trained = train_gated(train, enc_cfg, dec_cfg, gate_cfg,
                              channel_cfg(spec), train_cfg(spec, seed))
        for snr in spec.snr_grid:
            rng = np.random.default_rng(seed + 1000)
            fit_feature_classifier(trained, train, snr, rng)
            res = evaluate(trained, test, snr, rng)
            rows.append([snr, spec.channel, res.psnr, res.ssim, res.accuracy,
                         res.activated_ratio, seed])
    _write_csv(os.path.join(spec.out, "results.csv"), RESULT_COLUMNS, rows)
    _plot_metrics(rows, spec.out)
    return rows


def cmd_corrupt_study(spec: ExperimentSpec):
    """Paired accuracies (rate-reduction vs cross-entropy) across LCRs."""
    columns = ["lcr", "seed", "accuracy_rate_reduction",
               "accuracy_cross_entropy"]
    rows = []
    for seed in spec.seeds:
        train, test = load_dataset(spec, seed)
        for lcr in spec.lcr_grid:
            corrupted = train.subset(slice(None))
            corrupted.labels = corrupt_labels(
                train.labels, CorruptionConfig(lcr=lcr, seed=seed),
                train.num_classes)
            rng = np.random.default_rng(seed + 1000)
            trained = _train_fixed(spec, seed, spec.snr_db, corrupted, rng)
            acc_rr = evaluate(trained, test, spec.snr_db, rng).accuracy

            enc_cfg, _ = model_configs(spec, train)
            encoder, head, _ = train_cross_entropy_baseline(
                corrupted, enc_cfg, (64,), channel_cfg(spec),
                train_cfg(spec, seed))
            acc_ce = _ce_accuracy(encoder, head, test, spec, seed)
            rows.append([lcr, seed, acc_rr, acc_ce])
    _write_csv(os.path.join(spec.out, "corruption.csv"), columns, rows)
    _plot_metrics(rows, spec.out, x_index=0, x_label="lcr",
                  metrics=(("accuracy_rate_reduction", 2),
                           ("accuracy_cross_entropy", 3)))
    return rows


def _ce_accuracy(encoder, head, test, spec, seed):
    from .autodiff import constant
    from .models import normalize_features
    from .training import _equalized_noise

    rng = np.random.default_rng(seed + 2000)
    b = encoder.cfg.out_dim // 2
    xhat = normalize_features(encoder(constant(test.flat())), b)
    noise, _ = _equalized_noise(channel_cfg(spec), spec.snr_db, test.n, b, rng)
    z = head(xhat + constant(noise))
    return float(np.mean(np.argmax(z.data, axis=1) == test.labels))


def cmd_sscc_compare(spec: ExperimentSpec):
    """JSCC vs the capacity-gated separate-coding baseline across the grid.

    The classification of separately-coded reconstructions runs through the
    encoder trained at the evaluation SNR; that choice is recorded in the
    output metadata.
    """
    columns = ["snr_db", "channel", "scheme", "psnr", "accuracy", "seed"]
    sscc_cfg = SsccConfig(ratio=spec.ratio)
    rows = []
    for seed in spec.seeds:
        train, test = load_dataset(spec, seed)
        for snr in spec.snr_grid:
            rng = np.random.default_rng(seed + 1000)
            trained = _train_fixed(spec, seed, snr, train, rng)
            res = evaluate(trained, test, snr, rng)
            rows.append([snr, spec.channel, "jscc", res.psnr, res.accuracy,
                         seed])
            psnrs, hits = [], 0
            for i in range(test.n):
                recon = sscc_transmit(test.pixels[i], snr, sscc_cfg, rng)
                psnrs.append(psnr(test.pixels[i], recon))
                pred = sscc_classify(recon, trained.encoder, trained.subspace,
                                     trained.symbols)
                hits += int(pred == test.labels[i])
            rows.append([snr, spec.channel, "sscc", float(np.mean(psnrs)),
                        hits / test.n, seed])
    _write_csv(os.path.join(spec.out, "sscc_compare.csv"), columns, rows)
    with open(os.path.join(spec.out, "sscc_metadata.json"), "w") as f:
        json.dump({"classifier_encoder": "trained at evaluation SNR",
                   "ratio": spec.ratio}, f, indent=2)
    jscc_rows = [r for r in rows if r[2] == "jscc"]
    _plot_metrics(jscc_rows, spec.out,
                  metrics=(("psnr_jscc", 3), ("accuracy_jscc", 4)))
    return rows


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "corrupt-study": cmd_corrupt_study,
    "sscc-compare": cmd_sscc_compare,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="jscc",
        description="Desk-scale joint source-channel coding experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="key = value config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--snr", default=None, help="SNR grid, e.g. -3:3:21")
        p.add_argument("--channel", default=None,
                       choices=["awgn", "rayleigh", "rician"])
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    overrides = {}
    if args.seed is not None:
        overrides["seeds"] = str(args.seed)
    if args.out is not None:
        overrides["out"] = args.out
    if args.snr is not None:
        overrides["snr_grid"] = args.snr
    if args.channel is not None:
        overrides["channel"] = args.channel
    try:
        spec = validate_config(args.config, overrides)
        spec.kind = args.command
        os.makedirs(spec.out, exist_ok=True)
        _snapshot_config(spec, spec.out)
        COMMANDS[args.command](spec)
    except JsccError as exc:
        logging.basicConfig()
        log.error("run failed: %s", exc)
        out = overrides.get("out", CONFIG_SCHEMA["out"][1])
        try:
            os.makedirs(out, exist_ok=True)
            with open(os.path.join(out, "run.log"), "a") as f:
                f.write(f"error: {exc}\n")
        except OSError:
            pass
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
