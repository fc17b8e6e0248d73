"""Metrics, benchmark orchestration, parameter sweeps, and report files.

Benchmarks attack every window of a prepared split, average per-window
metrics with a deterministic ordered reduction, and always include a
no-attack baseline row. Reports serialize to line-delimited JSON or to a
fixed-width text table with one MAE/MSE column pair per attack.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import attacks as attacks_mod
from . import engine, spectral
from .attacks import ATTACK_NAMES, AttackConfig, run_attack

__all__ = [
    "mae",
    "mse",
    "AttackReport",
    "SweepResult",
    "run_benchmark",
    "sweep",
    "export_report",
    "load_reports",
    "format_table",
    "spectrum_dump",
    "BASELINE_NAME",
]

BASELINE_NAME = "noattack"
REPORT_SCHEMA_VERSION = 1

ATTACK_LABELS = {
    BASELINE_NAME: "NoAttack",
    "fgsm": "FGSM",
    "pgd": "PGD",
    "cw": "C&W",
    "frecw": "Fre-CW",
}


def mae(a, b):
    """Mean absolute error over all elements."""
    av, bv = engine.as_array(a), engine.as_array(b)
    if av.shape != bv.shape:
        raise ValueError(f"mae: shape mismatch {av.shape} vs {bv.shape}")
    return float(np.abs(av - bv).mean())


def mse(a, b):
    """Mean squared error over all elements."""
    av, bv = engine.as_array(a), engine.as_array(b)
    if av.shape != bv.shape:
        raise ValueError(f"mse: shape mismatch {av.shape} vs {bv.shape}")
    d = av - bv
    return float((d * d).mean())


@dataclass(frozen=True)
class AttackReport:
    """Aggregate metrics of one attack over one prepared dataset."""

    dataset: str
    model_kind: str
    attack: str
    mode: str
    config: dict
    mae_to_target: float
    mse_to_target: float
    mae_to_truth: float
    mse_to_truth: float
    mean_linf: float
    mean_l2: float
    n_windows: int
    wall_time: float

    def __post_init__(self):
        metrics = (
            self.mae_to_target,
            self.mse_to_target,
            self.mae_to_truth,
            self.mse_to_truth,
            self.mean_linf,
            self.mean_l2,
        )
        if any(not np.isfinite(m) or m < 0 for m in metrics):
            raise ValueError(f"report metrics must be finite and >= 0: {metrics}")
        if self.n_windows < 1:
            raise ValueError("report needs at least one window")


@dataclass(frozen=True)
class SweepResult:
    """One benchmark report per grid value of a single swept parameter."""

    parameter: str
    grid: tuple
    reports: tuple

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.grid, self.grid[1:])):
            raise ValueError(f"sweep grid must be strictly increasing: {self.grid}")


@dataclass
class WindowOutcome:
    """Per-window numbers kept so aggregates stay a plain arithmetic mean."""

    mae_to_target: float
    mse_to_target: float
    mae_to_truth: float
    mse_to_truth: float
    linf: float
    l2: float
    loss_trace: list = field(default_factory=list)


def _attack_window(model, window, name, config):
    target = attacks_mod.resolve_target(window, config)
    if name == BASELINE_NAME:
        x_adv = window.input
        linf = l2 = 0.0
        trace = []
    else:
        result, target = run_attack(name, model, window, config)
        x_adv = result.x_adv
        linf, l2 = result.perturbation_linf, result.perturbation_l2
        trace = result.loss_trace
    forecast = model.forward(x_adv)
    return WindowOutcome(
        mae_to_target=mae(forecast, target),
        mse_to_target=mse(forecast, target),
        mae_to_truth=mae(forecast, window.truth),
        mse_to_truth=mse(forecast, window.truth),
        linf=linf,
        l2=l2,
        loss_trace=trace,
    )


def attack_outcomes(model, windows, name, config, jobs=1):
    """Attack every window; outcomes are collected in window order no matter
    how many worker threads run."""
    if not windows:
        raise ValueError("no windows to attack")
    if jobs <= 1:
        return [_attack_window(model, w, name, config) for w in windows]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        futures = [
            pool.submit(_attack_window, model, w, name, config) for w in windows
        ]
        return [f.result() for f in futures]


def _aggregate(dataset, model, name, config, outcomes, wall):
    return AttackReport(
        dataset=dataset,
        model_kind=model.kind,
        attack=name,
        mode=config.mode,
        config=_config_snapshot(config, name),
        mae_to_target=float(np.mean([o.mae_to_target for o in outcomes])),
        mse_to_target=float(np.mean([o.mse_to_target for o in outcomes])),
        mae_to_truth=float(np.mean([o.mae_to_truth for o in outcomes])),
        mse_to_truth=float(np.mean([o.mse_to_truth for o in outcomes])),
        mean_linf=float(np.mean([o.linf for o in outcomes])),
        mean_l2=float(np.mean([o.l2 for o in outcomes])),
        n_windows=len(outcomes),
        wall_time=wall,
    )


def _config_snapshot(config, name):
    snap = asdict(config)
    if name != BASELINE_NAME:
        snap["n_iter"] = config.iterations(name)
    return snap


def run_benchmark(model, windows, attack_names, config, dataset="dataset",
                  jobs=1, include_baseline=True):
    """One report per attack (baseline first) over the given windows."""
    if not windows:
        raise ValueError("run_benchmark: empty window set")
    for name in attack_names:
        if name not in ATTACK_NAMES:
            raise ValueError(
                f"unknown attack {name!r}; valid names: {', '.join(ATTACK_NAMES)}"
            )
    names = ([BASELINE_NAME] if include_baseline else []) + list(attack_names)
    reports = []
    for name in names:
        start = time.perf_counter()
        outcomes = attack_outcomes(model, windows, name, config, jobs=jobs)
        wall = time.perf_counter() - start
        reports.append(_aggregate(dataset, model, name, config, outcomes, wall))
    return reports


def sweep(parameter, grid, config, model, windows, attack="frecw",
          dataset="dataset", jobs=1):
    """Rerun one attack across a grid of alpha or epsilon values."""
    if parameter not in ("alpha", "epsilon"):
        raise ValueError(f"sweep parameter must be alpha or epsilon, got {parameter!r}")
    values = tuple(float(v) for v in grid)
    if not values:
        raise ValueError("sweep: empty grid")
    reports = []
    for v in values:
        cfg = replace(config, **{parameter: v})
        start = time.perf_counter()
        outcomes = attack_outcomes(model, windows, attack, cfg, jobs=jobs)
        wall = time.perf_counter() - start
        reports.append(_aggregate(dataset, model, attack, cfg, outcomes, wall))
    return SweepResult(parameter=parameter, grid=values, reports=tuple(reports))


# -- report files ---------------------------------------------------------------


def export_report(reports, path, format="structured"):
    """Write reports to ``path`` as JSON lines or as a text table."""
    reports = list(reports)
    if not reports:
        raise ValueError("export_report: nothing to export")
    if format == "structured":
        text = "\n".join(
            json.dumps({"schema_version": REPORT_SCHEMA_VERSION, **asdict(r)})
            for r in reports
        ) + "\n"
    elif format == "table-text":
        text = format_table(reports)
    else:
        raise ValueError(f"unknown report format {format!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def load_reports(path):
    reports = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            rec.pop("schema_version", None)
            reports.append(AttackReport(**rec))
    return reports


def format_table(reports):
    """Row per dataset, one MAE/MSE column pair per attack.

    Targeted rows report errors against the target sequence, non-targeted
    rows against the truth, so the table reads like the usual attack grids.
    """
    order = []
    for r in reports:
        if r.attack not in order:
            order.append(r.attack)
    datasets = []
    for r in reports:
        if r.dataset not in datasets:
            datasets.append(r.dataset)
    by_key = {(r.dataset, r.attack): r for r in reports}
    header = ["dataset"]
    for name in order:
        label = ATTACK_LABELS.get(name, name)
        header += [f"{label} MAE", f"{label} MSE"]
    lines = ["\t".join(header)]
    for ds in datasets:
        cells = [ds]
        for name in order:
            r = by_key.get((ds, name))
            if r is None:
                cells += ["-", "-"]
                continue
            if r.mode == "targeted":
                cells += [f"{r.mae_to_target:.3f}", f"{r.mse_to_target:.3f}"]
            else:
                cells += [f"{r.mae_to_truth:.3f}", f"{r.mse_to_truth:.3f}"]
        lines.append("\t".join(cells))
    return "\n".join(lines) + "\n"


# -- series/spectrum dumps -------------------------------------------------------


def spectrum_dump(window, x_adv, model, top_k, path, target_scale=0.1):
    """Dump the six series around one attacked window plus their leading
    DFT magnitudes, as one JSON record per series and per spectrum."""
    series = {
        "x": window.input.array,
        "x_adv": engine.as_array(x_adv),
        "forecast_clean": model.forward(window.input).array,
        "forecast_adv": model.forward(x_adv).array,
        "truth": window.truth.array,
        "target": attacks_mod.build_target(window.truth, target_scale).array,
    }
    min_len = min(arr.shape[0] for arr in series.values())
    if top_k > min_len:
        raise ValueError(
            f"top_k={top_k} exceeds the shortest series length {min_len}"
        )
    records = []
    for name, arr in series.items():
        records.append(
            {
                "record": "series",
                "name": name,
                "length": arr.shape[0],
                "channels": arr.shape[1],
                "values": arr.tolist(),
            }
        )
    for name, arr in series.items():
        mags = spectral.dft(arr).magnitudes()[:top_k]
        records.append(
            {
                "record": "spectrum",
                "name": name,
                "top_k": top_k,
                "magnitudes": mags.tolist(),
            }
        )
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
    return records
