"""Per-round metrics, the round CSV and the run summary."""

from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .engine import RoundMetrics

CSV_COLUMNS = (
    "round", "device_id", "archetype", "best_model_id", "best_score", "test_accuracy",
    "alive_models_device", "alive_models_total", "score_stddev", "bytes_uplinked", "wall_ms",
)
CONVERGENCE_WINDOW = 10
CONVERGENCE_TOL = 0.01


def oscillation(series: Sequence[Sequence[float]], window: int) -> float:
    """Mean absolute round-to-round change over the last ``window`` rounds.

    ``series[r][d]`` is device ``d``'s performance at round ``r``. The result
    is averaged over devices and over the ``window`` most recent differences.
    """
    arr = np.asarray(series, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.shape[0] < 2:
        raise ValueError("need at least two rounds to measure oscillation")
    if window < 1:
        raise ValueError("window must be >= 1")
    diffs = np.abs(np.diff(arr, axis=0))[-window:]
    return float(diffs.mean())


def score_stddev_avg(scores: np.ndarray) -> float:
    """Mean over devices of the population stddev of that device's alive scores."""
    out = []
    for row in np.asarray(scores):
        alive = row[row > 0]
        out.append(float(np.std(alive)) if len(alive) > 1 else 0.0)
    return float(np.mean(out)) if out else 0.0


def _f(x: float) -> str:
    return f"{x:.6f}"


def _r6(x: float) -> float:
    return float(_f(x))


def write_round_csv(path, metrics: Iterable[RoundMetrics], wall_time: bool = False) -> Path:
    """One row per (round, device), sorted.

    ``wall_ms`` is written as 0 unless ``wall_time`` is set, which keeps
    files from repeated runs byte-identical.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for rm in sorted(metrics, key=lambda m: m.round):
            for d in sorted(rm.devices, key=lambda d: d.device_id):
                w.writerow([
                    rm.round, d.device_id, d.archetype, d.best_model_id,
                    _f(d.best_score), _f(d.performance), d.alive_models,
                    rm.alive_models_total, _f(d.score_stddev), rm.bytes_uplinked,
                    _f(rm.wall_ms if wall_time else 0.0),
                ])
    return path


def read_round_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for k in ("round", "device_id", "best_model_id", "alive_models_device",
                  "alive_models_total", "bytes_uplinked"):
            r[k] = int(r[k])
        for k in ("best_score", "test_accuracy", "score_stddev", "wall_ms"):
            r[k] = float(r[k])
    return rows


def performance_matrix(rows: Sequence[dict]) -> tuple[list[int], np.ndarray]:
    """Rounds and a (rounds, devices) matrix of test accuracy from CSV rows."""
    rounds = sorted({r["round"] for r in rows})
    devices = sorted({r["device_id"] for r in rows})
    ri = {r: i for i, r in enumerate(rounds)}
    di = {d: i for i, d in enumerate(devices)}
    mat = np.zeros((len(rounds), len(devices)))
    for r in rows:
        mat[ri[r["round"]], di[r["device_id"]]] = r["test_accuracy"]
    return rounds, mat


def rounds_to_convergence(rounds: Sequence[int], perf: np.ndarray,
                          window: int = CONVERGENCE_WINDOW, tol: float = CONVERGENCE_TOL):
    """First round whose trailing ``window``-round oscillation is below ``tol``.

    Returns None when no such round exists.
    """
    for end in range(window + 1, len(rounds) + 1):
        if oscillation(perf[:end], window) < tol:
            return int(rounds[end - 1])
    return None


def summarize_rows(rows: Sequence[dict]) -> dict:
    """Summary statistics computed from (possibly re-parsed) CSV rows."""
    if not rows:
        return {
            "final_accuracy_by_archetype": {}, "final_mean_accuracy": None,
            "rounds_to_convergence": None, "final_alive_models": 0,
            "total_uplink_bytes": 0, "oscillation_last_window": None,
        }
    rounds, perf = performance_matrix(rows)
    last = rounds[-1]
    final = [r for r in rows if r["round"] == last]
    by_arch = defaultdict(list)
    for r in final:
        by_arch[r["archetype"]].append(r["test_accuracy"])
    uplink = {}
    for r in rows:
        uplink[r["round"]] = r["bytes_uplinked"]
    window = min(CONVERGENCE_WINDOW, len(rounds) - 1)
    return {
        "final_accuracy_by_archetype": {k: float(np.mean(v)) for k, v in sorted(by_arch.items())},
        "final_mean_accuracy": float(np.mean([r["test_accuracy"] for r in final])),
        "rounds_to_convergence": rounds_to_convergence(rounds, perf),
        "final_alive_models": int(final[0]["alive_models_total"]),
        "total_uplink_bytes": int(sum(uplink.values())),
        "oscillation_last_window": oscillation(perf, window) if window >= 1 else None,
    }


def metrics_to_rows(metrics: Iterable[RoundMetrics]) -> list[dict]:
    """The rows :func:`write_round_csv` would write, already at CSV precision."""
    rows = []
    for rm in metrics:
        for d in rm.devices:
            rows.append({
                "round": rm.round, "device_id": d.device_id, "archetype": d.archetype,
                "best_model_id": d.best_model_id, "best_score": _r6(d.best_score),
                "test_accuracy": _r6(d.performance), "alive_models_device": d.alive_models,
                "alive_models_total": rm.alive_models_total,
                "score_stddev": _r6(d.score_stddev), "bytes_uplinked": rm.bytes_uplinked,
            })
    return rows


def _clean(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def write_summary(path, config: dict, metrics: Sequence[RoundMetrics], extra: dict | None = None) -> dict:
    """Write the run summary as JSON and return it.

    Statistics are computed from CSV-precision values so that re-parsing the
    round CSV reproduces them exactly.
    """
    summary = {"config": config}
    summary.update(summarize_rows(metrics_to_rows(metrics)))
    if extra:
        summary.update(extra)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_clean(summary), indent=2, sort_keys=False) + "\n")
    return summary
