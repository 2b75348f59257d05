"""Experiment orchestration: single runs, FedCD-vs-FedAvg comparisons, sweeps."""

from __future__ import annotations

import csv
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels
from .config import ExperimentConfig, apply_overrides
from .data import (
    build_device_shards,
    gen_synthetic_classes,
    hierarchical_specs,
    hypergeometric_specs,
    load_csv_dataset,
)
from .engine import ConfigError, run_simulation
from .metrics import write_round_csv, write_summary
from .seeding import stream

log = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "FEDCD_OUTPUT_ROOT"
SWEEP_PARAMS = {
    "bias": "data.bias",
    "quantization_bits": "training.quant_bits",
    "score_window": "simulation.score_window",
}


def output_dir(cfg: ExperimentConfig, override=None) -> Path:
    out = Path(override if override is not None else cfg.output.dir)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not out.is_absolute():
        out = Path(root) / out
    return out


def build_shards(cfg: ExperimentConfig):
    """Global dataset plus one shard per device; returns ``(shards, n_classes)``."""
    d = cfg.data
    if d.source == "csv":
        g = load_csv_dataset(d.csv_path)
    else:
        g = gen_synthetic_classes(d.n_classes, d.feature_dim, d.per_class, d.spread,
                                  stream(cfg.seed, "data"))
    if d.scheme == "hierarchical":
        specs = hierarchical_specs(
            n_classes=g.n_classes, n_meta=d.n_meta,
            devices_per_archetype=d.devices_per_archetype, bias=d.bias,
            bias_range=tuple(d.bias_range), seed=cfg.seed,
        )
    else:
        specs = hypergeometric_specs(d.hyper_N, d.hyper_Ks, d.hyper_n, d.devices_per_archetype)
    if len(specs) != cfg.n_devices:
        raise ConfigError(
            f"data.n_classes: dataset has {g.n_classes} classes, expected {d.n_classes}"
        )
    try:
        shards = build_device_shards(g, specs, d.samples_per_device, d.val_frac, d.test_frac, cfg.seed)
    except ValueError as exc:
        raise ConfigError(f"data.samples_per_device: {exc}") from None
    return shards, g.n_classes


def shard_digest(shards) -> str:
    import hashlib

    h = hashlib.sha256()
    for s in shards:
        h.update(s.digest().encode())
    return h.hexdigest()


def run_experiment(cfg: ExperimentConfig, out_dir, shards=None, n_classes=None) -> dict:
    """Run one simulation and write ``rounds.csv`` and ``summary.json`` into ``out_dir``."""
    out_dir = Path(out_dir)
    if shards is None:
        shards, n_classes = build_shards(cfg)
    sim_cfg = cfg.simulation_config()
    t0 = time.perf_counter()

    def progress(state, rm):
        if rm.round % 10 == 0 or rm.round == sim_cfg.total_rounds:
            perf = np.mean([d.performance for d in rm.devices])
            log.info("%s round %d: mean acc %.3f, alive models %d",
                     cfg.strategy, rm.round, perf, rm.alive_models_total)

    state, metrics = run_simulation(sim_cfg, shards, n_classes, on_round=progress)
    runtime = time.perf_counter() - t0
    write_round_csv(out_dir / "rounds.csv", metrics, wall_time=cfg.output.wall_time)
    extra = {
        "strategy": cfg.strategy,
        "n_devices": cfg.n_devices,
        "shard_digest": shard_digest(shards),
        "kernel_backend": kernels.BACKEND,
    }
    if cfg.output.wall_time:
        extra["runtime_s"] = runtime
    return write_summary(out_dir / "summary.json", cfg.to_dict(), metrics, extra)


def run_compare(cfg: ExperimentConfig, out_dir) -> dict:
    """Same shards and seed under FedCD and FedAvg; writes both runs and ``compare.json``."""
    out_dir = Path(out_dir)
    shards, n_classes = build_shards(cfg)
    cd = apply_overrides(cfg, {"strategy": "fedcd"})
    avg = apply_overrides(cfg, {"strategy": "fedavg"})
    s_cd = run_experiment(cd, out_dir / "fedcd", shards, n_classes)
    s_avg = run_experiment(avg, out_dir / "fedavg", shards, n_classes)
    arch = sorted(set(s_cd["final_accuracy_by_archetype"]) | set(s_avg["final_accuracy_by_archetype"]))
    delta = {
        a: s_cd["final_accuracy_by_archetype"].get(a, 0.0) - s_avg["final_accuracy_by_archetype"].get(a, 0.0)
        for a in arch
    }
    osc_cd, osc_avg = s_cd["oscillation_last_window"], s_avg["oscillation_last_window"]
    result = {
        "accuracy_delta_by_archetype": delta,
        "mean_accuracy_delta": s_cd["final_mean_accuracy"] - s_avg["final_mean_accuracy"],
        "oscillation_fedcd": osc_cd,
        "oscillation_fedavg": osc_avg,
        "oscillation_ratio": (osc_cd / osc_avg) if osc_avg else None,
        "shard_digest_fedcd": s_cd["shard_digest"],
        "shard_digest_fedavg": s_avg["shard_digest"],
    }
    (out_dir / "compare.json").write_text(json.dumps(result, indent=2) + "\n")
    return result


def _sweep_one(args):
    cfg, out = args
    return run_experiment(cfg, out), metrics_from_csv(Path(out) / "rounds.csv")


def metrics_from_csv(path):
    """Per-round aggregates (mean accuracy, alive models, mean score stddev, uplink)."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    per_round = {}
    for r in rows:
        per_round.setdefault(int(r["round"]), []).append(r)
    out = []
    for rnd in sorted(per_round):
        rs = per_round[rnd]
        out.append({
            "round": rnd,
            "mean_test_accuracy": float(np.mean([float(r["test_accuracy"]) for r in rs])),
            "alive_models_total": int(rs[0]["alive_models_total"]),
            "mean_score_stddev": float(np.mean([float(r["score_stddev"]) for r in rs])),
            "bytes_uplinked": int(rs[0]["bytes_uplinked"]),
        })
    return out


def run_sweep(cfg: ExperimentConfig, param: str, values: Sequence, out_dir, jobs: int = 1) -> dict:
    """One run per value under a shared seed, plus an aggregated ``sweep.csv``."""
    if param not in SWEEP_PARAMS:
        raise ConfigError(f"unknown sweep parameter {param!r}; choose from {sorted(SWEEP_PARAMS)}")
    out_dir = Path(out_dir)
    jobs_list = []
    for v in values:
        run_cfg = apply_overrides(cfg, {SWEEP_PARAMS[param]: v})
        jobs_list.append((run_cfg, out_dir / f"{param}={v}"))
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            results = list(pool.map(_sweep_one, jobs_list))
    else:
        results = [_sweep_one(j) for j in jobs_list]

    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["param", "value", "round", "mean_test_accuracy", "alive_models_total",
                    "mean_score_stddev", "bytes_uplinked"])
        for v, (_, per_round) in zip(values, results):
            for r in per_round:
                w.writerow([param, v, r["round"], f"{r['mean_test_accuracy']:.6f}",
                            r["alive_models_total"], f"{r['mean_score_stddev']:.6f}",
                            r["bytes_uplinked"]])
    summary = {
        "param": param,
        "values": list(values),
        "runs": {
            str(v): {k: s[k] for k in ("final_mean_accuracy", "final_alive_models",
                                       "rounds_to_convergence", "total_uplink_bytes",
                                       "oscillation_last_window")}
            for v, (s, _) in zip(values, results)
        },
    }
    (out_dir / "sweep_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return summary
