"""Command line front end: synth-data, train, attack, bench, sweep, plot-data.

Option resolution order, lowest to highest: built-in defaults, a flat
``key = value`` config file, environment variables prefixed ``FRECW_``,
then explicit flags. Every run prints its fully resolved configuration
(seed included) before doing any work.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import evaluation
from .attacks import ATTACK_NAMES, AttackConfig
from .forecasters import (
    Checkpoint,
    CheckpointError,
    load_checkpoint,
    make_forecaster,
    save_checkpoint,
    train,
)

ENV_PREFIX = "FRECW_"

CSV_NAMES = {
    "etth1": "ETTh1.csv",
    "etth2": "ETTh2.csv",
    "ettm1": "ETTm1.csv",
    "ettm2": "ETTm2.csv",
    "weather": "weather.csv",
    "ecl": "electricity.csv",
}


class CliError(Exception):
    """User-facing failure; exits with status 2."""


def _parse_value(raw, kind):
    if kind is bool:
        lowered = str(raw).strip().lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise CliError(f"cannot parse boolean value {raw!r}")
    return kind(raw)


def _load_config_file(path):
    values = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot read config file {path}: {exc}") from None
    for i, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise CliError(f"{path}:{i}: expected 'key = value', got {line!r}")
        key, _, value = stripped.partition("=")
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def _resolve(args, spec):
    """Merge defaults, config file, environment, and flags for one command.

    ``spec`` maps option dest -> (type, default). Returns a plain dict.
    """
    file_values = {}
    if getattr(args, "config", None):
        file_values = _load_config_file(args.config)
    resolved = {}
    for dest, (kind, default) in spec.items():
        value = default
        if dest in file_values:
            value = _parse_value(file_values[dest], kind)
        env_key = ENV_PREFIX + dest.upper()
        if env_key in os.environ:
            value = _parse_value(os.environ[env_key], kind)
        flag = getattr(args, dest, None)
        if flag is not None:
            value = flag
        resolved[dest] = value
    return resolved


def _print_config(command, resolved):
    parts = " ".join(f"{k}={resolved[k]}" for k in sorted(resolved))
    print(f"run-config [{command}]: {parts}")


def _csv_path(resolved):
    if resolved.get("csv"):
        path = Path(resolved["csv"])
    else:
        name = CSV_NAMES.get(resolved["dataset"])
        if name is None:
            raise CliError(f"unknown dataset preset {resolved['dataset']!r}")
        path = Path(resolved["data_dir"]) / name
    if not path.exists():
        raise CliError(f"dataset CSV not found: {path}")
    return path


def _prepare(resolved, input_len, horizon):
    """Load, split, normalize with train stats, and window all three splits."""
    series = data_mod.load_csv(_csv_path(resolved))
    train_s, val_s, test_s = data_mod.split(series, resolved["dataset"])
    stats = data_mod.fit_zscore(train_s)
    norm = [data_mod.apply_zscore(s, stats) for s in (train_s, val_s, test_s)]
    return norm, stats


def _attack_config(resolved):
    return AttackConfig(
        epsilon=resolved["epsilon"],
        alpha=resolved["alpha"],
        n_iter=resolved["n_iter"],
        lr=resolved["lr"],
        mode=resolved["mode"],
        target_scale=resolved["target_scale"],
        freq_variant=resolved["freq_variant"],
        seed=resolved["seed"],
        c=resolved["c"],
    )


def _load_model_for(resolved):
    try:
        ckpt = load_checkpoint(resolved["checkpoint"])
    except (OSError, CheckpointError) as exc:
        raise CliError(str(exc)) from None
    return ckpt


def _eval_windows(resolved, ckpt):
    model = ckpt.model
    (train_s, _val_s, test_s), stats = _prepare_with_check(resolved, ckpt)
    stride = resolved["stride"] if resolved["stride"] else model.horizon
    windows = data_mod.make_windows(
        test_s, model.input_len, model.horizon, stride=stride
    )
    if not windows:
        raise CliError(
            f"test split too short for input_len={model.input_len}, "
            f"horizon={model.horizon}"
        )
    return windows


def _prepare_with_check(resolved, ckpt):
    splits, stats = _prepare(resolved, ckpt.model.input_len, ckpt.model.horizon)
    if ckpt.norm_stats is not None and not ckpt.norm_stats.close_to(stats):
        raise CliError(
            "normalization statistics of the checkpoint do not match this "
            "dataset; train and attack must use the same CSV and preset"
        )
    return splits, stats


COMMON_DATA_SPEC = {
    "dataset": (str, "etth1"),
    "csv": (str, ""),
    "data_dir": (str, "data"),
    "seed": (int, 0),
}

ATTACK_SPEC = {
    **COMMON_DATA_SPEC,
    "checkpoint": (str, "model.ckpt"),
    "mode": (str, "targeted"),
    "epsilon": (float, 0.25),
    "alpha": (float, 0.6),
    "n_iter": (int, None),
    "lr": (float, 0.01),
    "target_scale": (float, 0.1),
    "freq_variant": (str, "algorithm1"),
    "c": (float, 1.0),
    "stride": (int, 0),
    "jobs": (int, 1),
}


def cmd_synth_data(args):
    spec = {
        "dataset": (str, "etth1"),
        "out": (str, ""),
        "seed": (int, 0),
        "rows": (int, 0),
        "data_dir": (str, "data"),
    }
    resolved = _resolve(args, spec)
    _print_config("synth-data", resolved)
    if resolved["dataset"] not in data_mod.PRESETS:
        raise CliError(f"unknown dataset preset {resolved['dataset']!r}")
    out = resolved["out"]
    if not out:
        Path(resolved["data_dir"]).mkdir(parents=True, exist_ok=True)
        out = str(Path(resolved["data_dir"]) / CSV_NAMES[resolved["dataset"]])
    series = data_mod.ett_like(
        resolved["dataset"],
        seed=resolved["seed"],
        n_steps=resolved["rows"] or None,
    )
    data_mod.write_csv(series, out)
    print(f"wrote {series.n_steps} rows x {series.n_channels} channels to {out}")
    return 0


def cmd_train(args):
    spec = {
        **COMMON_DATA_SPEC,
        "model": (str, "linear"),
        "channel_mode": (str, "shared"),
        "input_len": (int, 336),
        "horizon": (int, 96),
        "epochs": (int, 20),
        "lr": (float, 1e-3),
        "batch_size": (int, 64),
        "train_stride": (int, 1),
        "out": (str, "model.ckpt"),
    }
    resolved = _resolve(args, spec)
    _print_config("train", resolved)
    (train_s, val_s, test_s), stats = _prepare(
        resolved, resolved["input_len"], resolved["horizon"]
    )
    L, T = resolved["input_len"], resolved["horizon"]
    train_w = data_mod.make_windows(train_s, L, T, stride=resolved["train_stride"])
    val_w = data_mod.make_windows(val_s, L, T, stride=resolved["train_stride"])
    if not train_w:
        raise CliError(f"train split too short for input_len={L}, horizon={T}")
    model = make_forecaster(
        resolved["model"], L, T, train_s.n_channels,
        channel_mode=resolved["channel_mode"], seed=resolved["seed"],
    )
    model, history = train(
        model, train_w, val_w,
        epochs=resolved["epochs"], lr=resolved["lr"],
        batch_size=resolved["batch_size"], seed=resolved["seed"],
    )
    for h in history:
        print(
            f"epoch {h.epoch:3d}  train_mse={h.train_mse:.6f}  "
            f"val_mae={h.val_mae:.6f}  val_mse={h.val_mse:.6f}"
        )
    test_w = data_mod.make_windows(test_s, L, T, stride=T)
    if test_w:
        maes, mses = [], []
        for w in test_w:
            f = model.forward(w.input)
            maes.append(evaluation.mae(f, w.truth))
            mses.append(evaluation.mse(f, w.truth))
        print(
            f"test: mae={float(np.mean(maes)):.6f} mse={float(np.mean(mses)):.6f} "
            f"({len(test_w)} windows)"
        )
    save_checkpoint(
        Checkpoint(model=model, norm_stats=stats,
                   dataset=resolved["dataset"], seed=resolved["seed"]),
        resolved["out"],
    )
    print(f"checkpoint written to {resolved['out']}")
    return 0


def cmd_attack(args):
    spec = {**ATTACK_SPEC, "attack": (str, "frecw"), "out": (str, "report.jsonl")}
    resolved = _resolve(args, spec)
    _print_config("attack", resolved)
    if resolved["attack"] not in ATTACK_NAMES:
        raise CliError(
            f"unknown attack {resolved['attack']!r}; "
            f"valid names: {', '.join(ATTACK_NAMES)}"
        )
    ckpt = _load_model_for(resolved)
    windows = _eval_windows(resolved, ckpt)
    config = _attack_config(resolved)
    reports = evaluation.run_benchmark(
        ckpt.model, windows, [resolved["attack"]], config,
        dataset=resolved["dataset"], jobs=resolved["jobs"],
    )
    evaluation.export_report(reports, resolved["out"])
    for r in reports:
        print(
            f"{r.attack}: mae_to_target={r.mae_to_target:.4f} "
            f"mse_to_target={r.mse_to_target:.4f} "
            f"mae_to_truth={r.mae_to_truth:.4f} mse_to_truth={r.mse_to_truth:.4f} "
            f"linf={r.mean_linf:.4f}"
        )
    print(f"report written to {resolved['out']}")
    return 0


def cmd_bench(args):
    spec = {**ATTACK_SPEC, "out_prefix": (str, "bench")}
    resolved = _resolve(args, spec)
    _print_config("bench", resolved)
    ckpt = _load_model_for(resolved)
    windows = _eval_windows(resolved, ckpt)
    config = _attack_config(resolved)
    reports = evaluation.run_benchmark(
        ckpt.model, windows, list(ATTACK_NAMES), config,
        dataset=resolved["dataset"], jobs=resolved["jobs"],
    )
    structured = resolved["out_prefix"] + ".jsonl"
    table = resolved["out_prefix"] + ".txt"
    evaluation.export_report(reports, structured)
    evaluation.export_report(reports, table, format="table-text")
    print(evaluation.format_table(reports), end="")
    print(f"reports written to {structured} and {table}")
    return 0


def _parse_grid(raw):
    try:
        values = tuple(float(v) for v in str(raw).split(",") if v.strip() != "")
    except ValueError:
        raise CliError(f"malformed grid {raw!r}; expected comma-separated numbers") from None
    if not values:
        raise CliError(f"malformed grid {raw!r}; expected comma-separated numbers")
    if any(b <= a for a, b in zip(values, values[1:])):
        raise CliError(f"grid must be strictly increasing: {raw!r}")
    return values


def cmd_sweep(args):
    spec = {
        **ATTACK_SPEC,
        "attack": (str, "frecw"),
        "param": (str, "alpha"),
        "grid": (str, "0.2,0.4,0.6,0.8"),
        "out": (str, "sweep.jsonl"),
    }
    resolved = _resolve(args, spec)
    _print_config("sweep", resolved)
    if resolved["param"] not in ("alpha", "epsilon"):
        raise CliError(f"sweep param must be alpha or epsilon, got {resolved['param']!r}")
    grid = _parse_grid(resolved["grid"])
    ckpt = _load_model_for(resolved)
    windows = _eval_windows(resolved, ckpt)
    config = _attack_config(resolved)
    result = evaluation.sweep(
        resolved["param"], grid, config, ckpt.model, windows,
        attack=resolved["attack"], dataset=resolved["dataset"],
        jobs=resolved["jobs"],
    )
    evaluation.export_report(result.reports, resolved["out"])
    for value, report in zip(result.grid, result.reports):
        print(
            f"{result.parameter}={value}: mae_to_target={report.mae_to_target:.4f} "
            f"mae_to_truth={report.mae_to_truth:.4f}"
        )
    print(f"sweep written to {resolved['out']}")
    return 0


def cmd_plot_data(args):
    spec = {
        **ATTACK_SPEC,
        "attack": (str, "frecw"),
        "window": (int, 0),
        "top_k": (int, 30),
        "out": (str, "plotdata.jsonl"),
    }
    resolved = _resolve(args, spec)
    _print_config("plot-data", resolved)
    ckpt = _load_model_for(resolved)
    windows = _eval_windows(resolved, ckpt)
    idx = resolved["window"]
    if not 0 <= idx < len(windows):
        raise CliError(f"window index {idx} out of range (0..{len(windows) - 1})")
    window = windows[idx]
    config = _attack_config(resolved)
    from .attacks import run_attack

    result, _ = run_attack(resolved["attack"], ckpt.model, window, config)
    try:
        evaluation.spectrum_dump(
            window, result.x_adv, ckpt.model, resolved["top_k"], resolved["out"],
            target_scale=config.target_scale,
        )
    except ValueError as exc:
        raise CliError(str(exc)) from None
    print(f"series and spectra written to {resolved['out']}")
    return 0


def _add_common(p):
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--dataset", choices=sorted(data_mod.PRESETS))
    p.add_argument("--csv", help="explicit dataset CSV path")
    p.add_argument("--data-dir", dest="data_dir")


def _add_attack_flags(p):
    p.add_argument("--checkpoint")
    p.add_argument("--mode", choices=["targeted", "non-targeted"])
    p.add_argument("--epsilon", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--n-iter", dest="n_iter", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--target-scale", dest="target_scale", type=float)
    p.add_argument("--freq-variant", dest="freq_variant",
                   choices=["algorithm1", "eq7"])
    p.add_argument("--c", type=float)
    p.add_argument("--stride", type=int)
    p.add_argument("--jobs", type=int)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="frecw",
        description="Adversarial attacks on time series forecasters.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="generate a benchmark-shaped CSV")
    _add_common(p)
    p.add_argument("--out")
    p.add_argument("--rows", type=int)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train", help="train a forecaster and write a checkpoint")
    _add_common(p)
    p.add_argument("--model", choices=["linear", "mlp"])
    p.add_argument("--channel-mode", dest="channel_mode",
                   choices=["shared", "per-channel"])
    p.add_argument("--input-len", dest="input_len", type=int)
    p.add_argument("--horizon", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--train-stride", dest="train_stride", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("attack", help="run one attack over the test windows")
    _add_common(p)
    _add_attack_flags(p)
    p.add_argument("--attack", choices=list(ATTACK_NAMES))
    p.add_argument("--out")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("bench", help="run the full attack grid plus baseline")
    _add_common(p)
    _add_attack_flags(p)
    p.add_argument("--out-prefix", dest="out_prefix")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("sweep", help="sweep alpha or epsilon over a grid")
    _add_common(p)
    _add_attack_flags(p)
    p.add_argument("--attack", choices=list(ATTACK_NAMES))
    p.add_argument("--param", choices=["alpha", "epsilon"])
    p.add_argument("--grid")
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("plot-data", help="dump series and spectra for one window")
    _add_common(p)
    _add_attack_flags(p)
    p.add_argument("--attack", choices=list(ATTACK_NAMES))
    p.add_argument("--window", type=int)
    p.add_argument("--top-k", dest="top_k", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_plot_data)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entrypoint():
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
