"""Command-line entry point: train / eval / quantize / simulate.

Configuration is flat key=value text; precedence is preset defaults <
config file < command-line settings. Every run echoes its resolved
configuration next to its outputs so it can be reproduced from the
output directory alone. Metrics go to <out>/metrics.csv; timing columns
stay at 0.0 unless --wall-clock is given, keeping default runs
byte-reproducible.
"""

import argparse
import os
import sys
import time

import numpy as np

from . import datasets, hwsim, metrics, quant, training
from .errors import SpikebpError, ValidationError
from .models import get_preset
from .training import TrainConfig, evaluate_ct, evaluate_dc, fit

CONFIG_KEYS = {
    "preset", "epochs", "batch_size", "lr_start", "lr_end", "theta", "seed",
    "T_train", "loss_target", "reset_grad", "dropout",
    "train_n", "test_n", "grid", "steps", "trials", "bits",
}

_INT_KEYS = {"epochs", "batch_size", "seed", "T_train", "train_n", "test_n",
             "grid", "steps", "trials", "bits"}
_FLOAT_KEYS = {"lr_start", "lr_end", "theta"}

DATA_DEFAULTS = {"train_n": 5000, "test_n": 1000, "grid": 16,
                 "steps": 16, "trials": 20, "bits": 7}


def parse_config_file(path):
    """Flat key=value lines; '#' starts a comment; unknown keys rejected."""
    values = {}
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValidationError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, val = line.partition("=")
            values[key.strip()] = val.strip()
    return values


def _coerce(key, value):
    if key not in CONFIG_KEYS:
        raise ValidationError(f"unknown configuration key {key!r}")
    if isinstance(value, str):
        if key in _INT_KEYS:
            return int(value)
        if key in _FLOAT_KEYS:
            return float(value)
        if key == "dropout":
            return tuple(float(v) for v in value.split(",") if v.strip())
    return value


def resolve_config(preset_name, file_values=None, overrides=None):
    """Merge preset defaults < config file < command-line overrides."""
    preset = get_preset(preset_name)
    values = {
        "preset": preset.name,
        "epochs": preset.epochs,
        "batch_size": preset.batch_size,
        "lr_start": preset.lr_start,
        "lr_end": preset.lr_end,
        "theta": preset.theta,
        "T_train": preset.T_train,
        "loss_target": preset.loss_target,
        "reset_grad": preset.reset_grad,
        "dropout": preset.dropout,
        "seed": 0,
    }
    values.update(DATA_DEFAULTS)
    if preset.data == "moving-bar":
        values.update(train_n=2000, test_n=500)
    for source in (file_values or {}), (overrides or {}):
        for key, val in source.items():
            values[key] = _coerce(key, val)
    return values


def write_resolved_config(values, out_dir):
    path = os.path.join(out_dir, "resolved_config.txt")
    with open(path, "w") as f:
        for key in sorted(values):
            val = values[key]
            if isinstance(val, tuple):
                val = ",".join(repr(v) for v in val)
            f.write(f"{key}={val}\n")
    return path


def _train_config(values):
    return TrainConfig(
        preset=values["preset"], epochs=values["epochs"],
        batch_size=values["batch_size"], lr_start=values["lr_start"],
        lr_end=values["lr_end"], theta=values["theta"],
        dropout=tuple(values["dropout"]), T_train=values["T_train"],
        loss_target=values["loss_target"], reset_grad=values["reset_grad"],
        seed=values["seed"],
    )


def load_train_data(preset, values, data_dir):
    """Materialize (train_data, test_data) for a preset's data source."""
    if preset.data == "digits-proxy":
        split = datasets.digits_proxy_split(values["train_n"], values["test_n"],
                                            seed=values["seed"])
        tr = datasets.images_to_matrix(split.train)
        te = datasets.images_to_matrix(split.test)
        return (tr[0], tr[1]), (te[0], te[1], te[2])
    if preset.data == "mnist":
        if not data_dir:
            raise FileNotFoundError("preset needs --data-dir with MNIST IDX files")
        split = datasets.mnist_split(data_dir)
        tr = datasets.images_to_matrix(split.train)
        te = datasets.images_to_matrix(split.test)
        return (tr[0], tr[1]), (te[0], te[1], te[2])
    if preset.data == "moving-bar":
        (train_seqs, train_labels), (test_seqs, test_labels) = datasets.moving_bar_split(
            values["train_n"], values["test_n"], values["T_train"], values["grid"],
            seed=values["seed"],
        )
        return ((datasets.stack_frames(train_seqs), train_labels),
                (datasets.stack_frames(test_seqs), test_labels))
    if preset.data == "nmnist":
        if not data_dir:
            raise FileNotFoundError("preset needs --data-dir with N-MNIST event files")
        train = datasets_nmnist(data_dir, "train", values)
        test = datasets_nmnist(data_dir, "test", values)
        return train, test
    raise ValidationError(f"unknown data source {preset.data!r}")


def datasets_nmnist(data_dir, split, values):
    """Load an N-MNIST-style directory tree (split/<digit>/*.bin) and bin the
    on-events of the first 100 ms into T_train frames, adding the
    reverse-played copies for the motion task."""
    from .encoding import bin_events_to_frames, load_aer_events, reverse_time_augment

    root = None
    for cand in (split, split.capitalize()):
        p = os.path.join(data_dir, cand)
        if os.path.isdir(p):
            root = p
            break
    if root is None:
        raise FileNotFoundError(f"no {split!r} directory under {data_dir}")
    T = values["T_train"]
    seqs, digit_labels = [], []
    for digit in range(10):
        ddir = os.path.join(root, str(digit))
        if not os.path.isdir(ddir):
            continue
        for name in sorted(os.listdir(ddir)):
            events = load_aer_events(os.path.join(ddir, name))
            seq = bin_events_to_frames(events, T, window_us=100_000, polarity="on",
                                       width=34)
            seq.direction = "down"  # first saccade: digits move downward
            seqs.append(seq)
            digit_labels.append(digit)
    if not seqs:
        raise FileNotFoundError(f"no event files found under {root}")
    all_seqs = seqs + [reverse_time_augment(s) for s in seqs]
    digit_labels = np.array(digit_labels + digit_labels)
    motion = np.array([datasets.DIRECTION_LABELS[s.direction] for s in all_seqs])
    labels = np.stack([digit_labels, motion], axis=1)
    return datasets.stack_frames(all_seqs), labels


def _checkpoint_path(out_dir, cfg):
    return os.path.join(out_dir, f"{cfg.preset}-seed{cfg.seed}.spkc")


def cmd_train(args):
    file_values = parse_config_file(args.config) if args.config else {}
    overrides = dict(kv.split("=", 1) for kv in args.set or [])
    for flag in ("epochs", "seed", "batch_size"):
        val = getattr(args, flag)
        if val is not None:
            overrides[flag] = val
    values = resolve_config(args.preset, file_values, overrides)
    os.makedirs(args.out, exist_ok=True)
    write_resolved_config(values, args.out)
    cfg = _train_config(values)
    preset = get_preset(cfg.preset)
    train_data, _ = load_train_data(preset, values, args.data_dir)

    t0 = time.perf_counter()
    result = fit(cfg, train_data, groups=preset.output_groups or None)
    if args.wall_clock:
        elapsed = time.perf_counter() - t0
        for r in result.records:
            r.wall_clock_s = elapsed
    ckpt = _checkpoint_path(args.out, cfg)
    training.save_checkpoint(
        result.model,
        {"preset": cfg.preset, "epoch": cfg.epochs - 1, "seed": cfg.seed,
         "config_hash": cfg.hash()},
        ckpt,
    )
    metrics.write_metrics(result.records, os.path.join(args.out, "metrics.csv"))
    print(f"trained {cfg.preset} for {cfg.epochs} epochs; "
          f"final loss {result.history[-1]:.4f}; checkpoint {ckpt}")
    return 0


def _load_model_for_eval(args, values):
    if args.checkpoint:
        path = args.checkpoint
    else:
        run_dir = args.run_dir or args.out
        path = os.path.join(run_dir, f"{values['preset']}-seed{values['seed']}.spkc")
    model, meta = training.load_checkpoint(path)
    preset = get_preset(meta.get("preset", values["preset"]))
    return model, meta, preset


def cmd_eval(args):
    overrides = dict(kv.split("=", 1) for kv in args.set or [])
    if args.steps is not None:
        overrides["steps"] = args.steps
    if args.trials is not None:
        overrides["trials"] = args.trials
    if args.seed is not None:
        overrides["seed"] = args.seed
    values = resolve_config(args.preset, None, overrides)
    os.makedirs(args.out, exist_ok=True)
    write_resolved_config(values, args.out)
    model, meta, preset = _load_model_for_eval(args, values)
    _, test_data = load_train_data(preset, values, args.data_dir)
    run_id = f"eval-{preset.name}-seed{values['seed']}"
    records = []
    if preset.kind == "dc":
        pixels, labels = test_data[0], test_data[1]
        ids = test_data[2] if len(test_data) > 2 else None
        accs = evaluate_dc(model, pixels, labels, T_eval=values["steps"],
                           n_trials=values["trials"], seed=values["seed"],
                           sample_ids=ids,
                           accumulate="counts" if args.count_votes else "potentials")
        for t, acc in enumerate(accs, start=1):
            records.append(metrics.MetricsRecord(run_id, "eval", t, "accuracy", acc))
        summary = f"accuracy@T={values['steps']}: {accs[-1]:.4f}"
    else:
        frames, labels = test_data
        groups = preset.output_groups
        if labels.ndim == 1:
            labels = labels[:, None]
        accs = evaluate_ct(model, frames, labels, groups, T_eval=values["steps"])
        names = [f"group{gi}" for gi in range(len(groups))]
        if len(groups) == 2:
            names = ["digit", "motion"]
        for gi, name in enumerate(names):
            for t in range(accs.shape[1]):
                records.append(metrics.MetricsRecord(
                    run_id, "eval", t + 1, f"accuracy_{name}", accs[gi, t]))
        summary = "; ".join(
            f"{name} accuracy@T={accs.shape[1]}: {accs[gi, -1]:.4f}"
            for gi, name in enumerate(names)
        )
    metrics.write_metrics(records, os.path.join(args.out, "metrics.csv"))
    print(summary)
    return 0


def _encoded_eval_spikes(preset, values, test_data, seed):
    """Fixed single-step spike encoding shared by the float/integer paths."""
    if preset.kind == "dc":
        pixels, labels = test_data[0], test_data[1]
        rng = np.random.default_rng([seed, 0xE11C])
        spikes = training.bernoulli_batch(pixels, rng).astype(np.uint8)
        return spikes, labels
    frames, labels = test_data
    if labels.ndim > 1:
        labels = labels[:, -1]
    return frames, labels


def cmd_quantize(args):
    overrides = dict(kv.split("=", 1) for kv in args.set or [])
    if args.bits is not None:
        overrides["bits"] = args.bits
    if args.seed is not None:
        overrides["seed"] = args.seed
    values = resolve_config(args.preset, None, overrides)
    os.makedirs(args.out, exist_ok=True)
    write_resolved_config(values, args.out)
    model, meta, preset = _load_model_for_eval(args, values)
    qmodel = quant.quantize_model(model, values["bits"], preset.kind)
    qpath = os.path.join(args.out, f"{preset.name}-q{values['bits']}.spkq")
    quant.save_quantized(qmodel, qpath, meta={"preset": preset.name,
                                              "source": args.checkpoint or ""})
    run_id = f"quantize-{preset.name}-seed{values['seed']}"
    records = []
    if args.sweep:
        _, test_data = load_train_data(preset, values, args.data_dir)
        inputs, labels = _encoded_eval_spikes(preset, values, test_data,
                                              values["seed"])
        group = preset.output_groups[-1] if preset.kind == "ct" else None
        rows = quant.precision_sweep(model, inputs, labels,
                                     bits_list=range(2, 9), kind=preset.kind,
                                     group=group)
        for bits, acc in rows:
            records.append(metrics.MetricsRecord(run_id, "quantize", bits,
                                                 "accuracy", acc))
        print("; ".join(f"B={b}: {a:.4f}" for b, a in rows))
    metrics.write_metrics(records, os.path.join(args.out, "metrics.csv"))
    print(f"quantized model written to {qpath}")
    return 0


def parse_coeffs_file(path):
    fields = {f: None for f in ("row_fetch_nj", "accumulate_nj", "fire_check_nj",
                                "idle_nj", "frequency_mhz")}
    for key, val in parse_config_file_any(path).items():
        if key not in fields:
            raise ValidationError(f"unknown energy coefficient {key!r}")
        fields[key] = float(val)
    return hwsim.EnergyCoefficients(**{k: v for k, v in fields.items()
                                       if v is not None})


def parse_config_file_any(path):
    """key=value parse without the CONFIG_KEYS restriction."""
    values = {}
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValidationError(f"{path}:{lineno}: expected key=value")
            key, _, val = line.partition("=")
            values[key.strip()] = val.strip()
    return values


def cmd_simulate(args):
    qmodel = quant.load_quantized(args.model)
    coeffs = parse_coeffs_file(args.coeffs) if args.coeffs else hwsim.EnergyCoefficients()
    os.makedirs(args.out, exist_ok=True)
    preset = get_preset(args.preset) if args.preset else None
    seed = args.seed if args.seed is not None else 0

    if preset is not None and preset.data == "moving-bar":
        seqs, labels = datasets.moving_bar_dataset(args.samples, args.steps,
                                                   int(np.sqrt(qmodel.n_in)), seed)
        frame_sets = [s.frames for s in seqs]
    elif preset is not None and preset.data == "nmnist":
        if not args.data_dir:
            raise FileNotFoundError("preset needs --data-dir with event files")
        values = resolve_config(preset.name, None, {"seed": seed})
        frames, _ = datasets_nmnist(args.data_dir, "test", values)
        frame_sets = [frames[i, :args.steps] for i in range(min(args.samples,
                                                                len(frames)))]
    elif preset is not None and preset.data in ("digits-proxy", "mnist"):
        values = resolve_config(preset.name, None, {"seed": seed})
        _, test_data = load_train_data(preset, values, args.data_dir)
        pixels = test_data[0][:args.samples]
        rng = np.random.default_rng([seed, 0x51E0])
        frame_sets = [training.bernoulli_batch(pixels[i:i + 1], rng)
                      .astype(np.uint8).repeat(args.steps, axis=0)[:args.steps]
                      for i in range(len(pixels))]
    else:
        rng = np.random.default_rng([seed, 0x51E0])
        frame_sets = [
            (rng.random((args.steps, qmodel.n_in)) < args.density).astype(np.uint8)
            for _ in range(args.samples)
        ]

    totals = hwsim.ActivityCounters(n_layers=len(qmodel.layers))
    total_cycles = 0
    trace_path = None
    for i, frames in enumerate(frame_sets):
        result = hwsim.pipeline_simulate(qmodel, frames,
                                         collect_trace=(args.trace and i == 0))
        total_cycles += result.counters.total_cycles
        for name in ("weight_row_fetches", "accumulate_ops", "fire_checks",
                     "stall_cycles", "idle_cycles"):
            getattr(totals, name)[:] += getattr(result.counters, name)
        for li in range(totals.n_layers):
            totals.active_counts[li].extend(result.counters.active_counts[li])
        if result.trace is not None:
            trace_path = os.path.join(args.out, "trace.tsv")
            hwsim.write_trace(result.trace, trace_path)
    totals.total_cycles = total_cycles

    steps = args.steps * len(frame_sets)
    fan_ins = [l.n_in for l in qmodel.layers]
    sparsity = hwsim.report_sparsity(totals, fan_ins, steps)
    energy = hwsim.estimate_energy(totals, coeffs)
    run_id = f"simulate-seed{seed}"
    records = [
        metrics.MetricsRecord(run_id, "simulate", 0, "total_cycles", total_cycles),
        metrics.MetricsRecord(run_id, "simulate", 0, "energy_nj", energy.total_nj),
        metrics.MetricsRecord(run_id, "simulate", 0, "wall_time_us", energy.wall_time_us),
        metrics.MetricsRecord(run_id, "simulate", 0, "sparsity", sparsity["aggregate"]),
    ]
    for li, frac in enumerate(sparsity["per_layer"]):
        records.append(metrics.MetricsRecord(run_id, "simulate", li,
                                             f"sparsity_layer{li}", frac))
    metrics.write_metrics(records, os.path.join(args.out, "metrics.csv"))
    msg = (f"{len(frame_sets)} samples x {args.steps} steps: {total_cycles} cycles, "
           f"{energy.total_nj:.1f} nJ (illustrative coefficients), "
           f"aggregate input sparsity {sparsity['aggregate']:.3f}")
    if trace_path:
        msg += f"; trace: {trace_path}"
    print(msg)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="spikebp",
        description="Train, quantize, and simulate discrete-time spiking networks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a preset model")
    p_train.add_argument("--preset", required=True)
    p_train.add_argument("--config", help="flat key=value config file")
    p_train.add_argument("--set", action="append", metavar="KEY=VALUE")
    p_train.add_argument("--epochs", type=int)
    p_train.add_argument("--seed", type=int)
    p_train.add_argument("--batch-size", type=int, dest="batch_size")
    p_train.add_argument("--data-dir")
    p_train.add_argument("--out", default="runs/train")
    p_train.add_argument("--wall-clock", action="store_true",
                         help="record real elapsed time in metrics (breaks "
                              "byte-reproducibility)")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="accuracy vs accumulated time steps")
    p_eval.add_argument("--preset", required=True)
    p_eval.add_argument("--checkpoint")
    p_eval.add_argument("--run-dir", help="directory holding the train output")
    p_eval.add_argument("--steps", type=int)
    p_eval.add_argument("--trials", type=int)
    p_eval.add_argument("--seed", type=int)
    p_eval.add_argument("--count-votes", action="store_true",
                        help="classify by output spike counts instead of potentials")
    p_eval.add_argument("--set", action="append", metavar="KEY=VALUE")
    p_eval.add_argument("--data-dir")
    p_eval.add_argument("--out", default="runs/eval")
    p_eval.set_defaults(func=cmd_eval)

    p_q = sub.add_parser("quantize", help="fixed-point quantization + sweep")
    p_q.add_argument("--preset", required=True)
    p_q.add_argument("--checkpoint")
    p_q.add_argument("--run-dir")
    p_q.add_argument("--bits", type=int)
    p_q.add_argument("--sweep", action="store_true",
                     help="evaluate accuracy for every width in [2, 8]")
    p_q.add_argument("--seed", type=int)
    p_q.add_argument("--set", action="append", metavar="KEY=VALUE")
    p_q.add_argument("--data-dir")
    p_q.add_argument("--out", default="runs/quantize")
    p_q.set_defaults(func=cmd_quantize)

    p_sim = sub.add_parser("simulate", help="cycle-level pipeline simulation")
    p_sim.add_argument("--model", required=True, help="quantized model file")
    p_sim.add_argument("--preset", help="draw inputs from this preset's data")
    p_sim.add_argument("--samples", type=int, default=8)
    p_sim.add_argument("--steps", type=int, default=16)
    p_sim.add_argument("--density", type=float, default=0.1,
                       help="spike density for random inputs (no preset)")
    p_sim.add_argument("--seed", type=int)
    p_sim.add_argument("--coeffs", help="energy coefficients key=value file")
    p_sim.add_argument("--trace", action="store_true",
                       help="write a per-cycle trace of the first sample")
    p_sim.add_argument("--data-dir")
    p_sim.add_argument("--out", default="runs/simulate")
    p_sim.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (SpikebpError, FileNotFoundError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
