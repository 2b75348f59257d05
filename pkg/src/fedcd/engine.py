"""FedCD round loop: score-weighted aggregation, milestone cloning and deletion.

FedAvg is the degenerate configuration with no milestones: a single global
model whose per-device score is pinned at 1, so aggregation is a plain mean.
"""

from __future__ import annotations

import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import DeviceShard
from .model import (
    MlpSpec,
    ModelWeights,
    QuantizationSpec,
    evaluate_accuracy,
    init_weights,
    quantize_weights,
    sgd_train,
)
from .seeding import stream

SIGMA_EPS = 1e-9
CLONE_FLOOR = 0.5
STRATEGIES = ("fedcd", "fedavg")
# "global": score the freshly aggregated models; "local": score each device's own update
SCORE_SOURCES = ("global", "local")
# which milestones give a single-model device's clone CLONE_FLOOR instead of 1 - 1 = 0
CLONE_FLOORS = ("first", "all")


class ConfigError(ValueError):
    """Invalid simulation or experiment configuration."""


@dataclass
class SimulationConfig:
    n_devices: int = 30
    devices_per_round: int = 15
    local_epochs: int = 1
    total_rounds: int = 50
    milestones: tuple[int, ...] = (5, 15, 25, 30)
    score_window: int = 3
    late_prune_round: int = 20
    late_prune_threshold: float = 0.3
    score_noise_std: float = 0.0
    quant_bits: int = 0
    lr: float = 0.05
    batch_size: int = 32
    hidden: tuple[int, ...] = (32,)
    activation: str = "relu"
    seed: int = 0
    strategy: str = "fedcd"
    score_source: str = "global"
    clone_floor: str = "first"
    workers: int = 1

    def __post_init__(self):
        self.milestones = tuple(sorted(int(m) for m in self.milestones))
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy: must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.strategy == "fedavg":
            self.milestones = ()
        if self.n_devices < 1:
            raise ConfigError("n_devices: must be >= 1")
        if not 1 <= self.devices_per_round <= self.n_devices:
            raise ConfigError("devices_per_round: must satisfy 1 <= K <= n_devices")
        if self.local_epochs < 1:
            raise ConfigError("local_epochs: must be >= 1")
        if self.total_rounds < 1:
            raise ConfigError("total_rounds: must be >= 1")
        if self.score_window < 1:
            raise ConfigError("score_window: must be >= 1")
        if any(m < 1 or m > self.total_rounds for m in self.milestones):
            raise ConfigError(f"milestones: must lie in [1, {self.total_rounds}]")
        if len(set(self.milestones)) != len(self.milestones):
            raise ConfigError("milestones: duplicate rounds")
        if self.score_source not in SCORE_SOURCES:
            raise ConfigError(f"score_source: must be one of {SCORE_SOURCES}")
        if self.clone_floor not in CLONE_FLOORS:
            raise ConfigError(f"clone_floor: must be one of {CLONE_FLOORS}")
        if self.workers < 1:
            raise ConfigError("workers: must be >= 1")
        if self.score_noise_std < 0:
            raise ConfigError("score_noise_std: must be >= 0")
        if self.lr <= 0:
            raise ConfigError("lr: must be > 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size: must be >= 1")
        try:
            QuantizationSpec(self.quant_bits)
        except ValueError as exc:
            raise ConfigError(f"quant_bits: {exc}") from None

    @property
    def quantization(self) -> QuantizationSpec:
        return QuantizationSpec(self.quant_bits)


@dataclass
class ModelEntry:
    weights: ModelWeights
    parent_id: int | None
    created_round: int
    alive: bool = True


@dataclass
class ModelRegistry:
    entries: dict[int, ModelEntry] = field(default_factory=dict)
    # size of the id space: every id below this was either created or skipped
    total_created: int = 0

    def alive_ids(self) -> list[int]:
        return sorted(m for m, e in self.entries.items() if e.alive)


@dataclass
class CloneEvent:
    round: int
    parent: int
    clone: int
    device: int
    parent_score: float
    clone_score: float  # before row normalization


@dataclass
class DeviceMetrics:
    device_id: int
    archetype: str
    best_model_id: int
    best_score: float
    performance: float
    alive_models: int
    score_stddev: float


@dataclass
class RoundMetrics:
    round: int
    devices: list[DeviceMetrics]
    alive_models_total: int
    created_models_total: int
    bytes_uplinked: int
    wall_ms: float
    participants: tuple[int, ...] = ()


@dataclass
class SimState:
    config: SimulationConfig
    spec: MlpSpec
    shards: list[DeviceShard]
    registry: ModelRegistry
    scores: np.ndarray  # (n_devices, total_created); 0 = deleted for that device
    histories: dict[tuple[int, int], deque]
    round: int = 0
    clone_log: list[CloneEvent] = field(default_factory=list)
    milestones_passed: int = 0


def model_spec_for(config: SimulationConfig, shards: Sequence[DeviceShard]) -> MlpSpec:
    dim = shards[0].train.features.shape[1]
    n_classes = 1 + max(
        int(max(s.train.labels.max(), s.val.labels.max(), s.test.labels.max())) for s in shards
    )
    return MlpSpec((dim, *config.hidden, max(n_classes, 2)), config.activation)


def init_simulation(
    config: SimulationConfig, shards: Sequence[DeviceShard], n_classes: int | None = None
) -> SimState:
    if len(shards) != config.n_devices:
        raise ConfigError(f"n_devices: config says {config.n_devices}, got {len(shards)} shards")
    spec = model_spec_for(config, shards)
    if n_classes is not None:
        spec = MlpSpec((spec.layer_sizes[0], *config.hidden, n_classes), config.activation)
    w0 = init_weights(spec, stream(config.seed, "init"))
    registry = ModelRegistry({0: ModelEntry(w0, None, 0)}, total_created=1)
    scores = np.ones((config.n_devices, 1))
    return SimState(config, spec, list(shards), registry, scores, {})


def select_round_devices(state: SimState, rng: np.random.Generator) -> list[int]:
    cfg = state.config
    picked = rng.choice(cfg.n_devices, size=cfg.devices_per_round, replace=False)
    return sorted(int(i) for i in picked)


def local_train_and_eval(device: int, state: SimState) -> dict[int, tuple[ModelWeights, float]]:
    """Train every model the device still scores, from the current global weights."""
    cfg = state.config
    shard = state.shards[device]
    out = {}
    for m in np.flatnonzero(state.scores[device] > 0):
        m = int(m)
        rng = stream(cfg.seed, "train", state.round + 1, device, m)
        w = sgd_train(
            state.registry.entries[m].weights, shard.train,
            cfg.local_epochs, cfg.lr, cfg.batch_size, rng,
        )
        w = quantize_weights(w, cfg.quantization)
        out[m] = (w, evaluate_accuracy(w, shard.val))
    return out


def aggregate_model(
    m: int, updates: dict[int, ModelWeights], scores: np.ndarray
) -> ModelWeights | None:
    """Score-weighted mean of the device updates for model ``m``.

    Sums run in ascending device order. Returns None when no contributing
    device has a positive score (the model keeps its weights).
    """
    devices = sorted(i for i in updates if scores[i, m] > 0)
    if not devices:
        return None
    spec = updates[devices[0]].spec
    num = np.zeros(spec.n_params)
    den = 0.0
    for i in devices:
        c = float(scores[i, m])
        num += c * updates[i].params
        den += c
    return ModelWeights(spec, num / den)


def _normalize_row(row: np.ndarray) -> None:
    alive = row > 0
    if alive.any():
        row[alive] = row[alive] / row[alive].sum()


def update_scores(state: SimState, devices: Sequence[int]) -> None:
    """Recompute normalized mean-accuracy scores for ``devices`` in place."""
    cfg = state.config
    for i in devices:
        row = state.scores[i]
        alive = np.flatnonzero(row > 0)
        s = np.empty(len(alive))
        for j, m in enumerate(alive):
            hist = state.histories.get((i, int(m)))
            s[j] = float(np.mean(hist)) if hist else row[m]
        if cfg.score_noise_std > 0:
            rng = stream(cfg.seed, "noise", state.round, i)
            s = np.maximum(s + rng.normal(0.0, cfg.score_noise_std, size=len(s)), 0.0)
        total = s.sum()
        row[alive] = s / total if total > 0 else 1.0 / len(alive)


def _top_two(row: np.ndarray, alive: np.ndarray) -> set[int]:
    # highest score first, lowest id among ties
    order = sorted(alive, key=lambda m: (-row[m], m))
    return {int(m) for m in order[:2]}


def prune_device_models(state: SimState) -> None:
    """Standard-deviation deletion plus the late two-model rule, per device."""
    cfg = state.config
    r = state.round
    for row in state.scores:
        alive = np.flatnonzero(row > 0)
        if len(alive) >= 3:
            vals = row[alive]
            sigma = float(np.std(vals))
            if sigma > SIGMA_EPS:
                top = vals.max()
                keep = _top_two(row, alive)
                for m in alive:
                    if int(m) not in keep and top - row[m] >= sigma:
                        row[m] = 0.0
        alive = np.flatnonzero(row > 0)
        if r > cfg.late_prune_round and len(alive) == 2:
            a, b = alive
            low = b if (row[b], -b) < (row[a], -a) else a
            if row[low] <= cfg.late_prune_threshold:
                row[low] = 0.0
        _normalize_row(row)


def garbage_collect(state: SimState) -> list[int]:
    """Mark models no device scores as dead; returns the ids removed."""
    removed = []
    for m in state.registry.alive_ids():
        if not np.any(state.scores[:, m] > 0):
            state.registry.entries[m].alive = False
            removed.append(m)
    return removed


def clone_models(state: SimState) -> list[int]:
    """Clone every alive model as id ``M + m`` and double ``M``.

    A device scoring the parent at ``c`` gives the clone ``1 - c``. At the
    first milestone (or every milestone with ``clone_floor="all"``) a device
    holding only the parent, so ``c == 1``, gives the clone ``CLONE_FLOOR``
    instead of 0. Rows are then renormalized. Ids of dead parents are skipped,
    so ``M`` still doubles.
    """
    reg = state.registry
    M = reg.total_created
    n_alive = (state.scores > 0).sum(axis=1)
    new_scores = np.zeros((state.scores.shape[0], 2 * M))
    new_scores[:, :M] = state.scores
    created = []
    for m in reg.alive_ids():
        clone = M + m
        reg.entries[clone] = ModelEntry(reg.entries[m].weights.copy(), m, state.round)
        created.append(clone)
        for i in np.flatnonzero(state.scores[:, m] > 0):
            cp = float(state.scores[i, m])
            floor = state.milestones_passed == 0 or state.config.clone_floor == "all"
            cs = CLONE_FLOOR if (floor and n_alive[i] == 1 and cp == 1.0) else 1.0 - cp
            new_scores[i, clone] = cs
            state.clone_log.append(CloneEvent(state.round, m, clone, int(i), cp, cs))
    reg.total_created = 2 * M
    for row in new_scores:
        _normalize_row(row)
    state.scores = new_scores
    state.milestones_passed += 1
    return created


def best_model(state: SimState, device: int) -> int:
    row = state.scores[device]
    alive = np.flatnonzero(row > 0)
    if not len(alive):
        raise RuntimeError(f"device {device} has no alive models")
    return int(min(alive, key=lambda m: (-row[m], m)))


def device_performance(state: SimState, device: int) -> float:
    """Test accuracy of the device's highest-scoring model."""
    m = best_model(state, device)
    return evaluate_accuracy(state.registry.entries[m].weights, state.shards[device].test)


def _collect_metrics(state: SimState, uplink: int, wall_ms: float, participants) -> RoundMetrics:
    devices = []
    cache: dict[tuple[int, int], float] = {}
    for i, shard in enumerate(state.shards):
        row = state.scores[i]
        alive = row[row > 0]
        m = best_model(state, i)
        key = (m, i)
        if key not in cache:
            cache[key] = evaluate_accuracy(state.registry.entries[m].weights, shard.test)
        devices.append(DeviceMetrics(
            device_id=i,
            archetype=shard.archetype.tag,
            best_model_id=m,
            best_score=float(row[m]),
            performance=cache[key],
            alive_models=int(len(alive)),
            score_stddev=float(np.std(alive)) if len(alive) > 1 else 0.0,
        ))
    return RoundMetrics(
        round=state.round,
        devices=devices,
        alive_models_total=len(state.registry.alive_ids()),
        created_models_total=state.registry.total_created,
        bytes_uplinked=uplink,
        wall_ms=wall_ms,
        participants=tuple(participants),
    )


def run_round(state: SimState) -> RoundMetrics:
    """Advance the simulation by one round, mutating ``state``."""
    cfg = state.config
    if state.round >= cfg.total_rounds:
        raise RuntimeError("simulation already ran all configured rounds")
    t0 = time.perf_counter()
    r = state.round + 1
    participants = select_round_devices(state, stream(cfg.seed, "select", r))

    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            results = dict(zip(participants, pool.map(
                lambda i: local_train_and_eval(i, state), participants)))
    else:
        results = {i: local_train_and_eval(i, state) for i in participants}

    payload = cfg.quantization.payload_bytes(state.spec.n_params)
    uplink = sum(payload * len(res) for res in results.values())

    for m in state.registry.alive_ids():
        updates = {i: res[m][0] for i, res in results.items() if m in res}
        new_w = aggregate_model(m, updates, state.scores)
        if new_w is not None:
            state.registry.entries[m].weights = new_w

    state.round = r
    if cfg.strategy == "fedcd":
        for i in participants:
            for m, (_, acc) in results[i].items():
                if cfg.score_source == "global":
                    acc = evaluate_accuracy(state.registry.entries[m].weights, state.shards[i].val)
                state.histories.setdefault((i, m), deque(maxlen=cfg.score_window)).append(acc)
        update_scores(state, participants)
        prune_device_models(state)
        garbage_collect(state)
        if r in cfg.milestones:
            clone_models(state)

    wall_ms = (time.perf_counter() - t0) * 1000.0
    return _collect_metrics(state, uplink, wall_ms, participants)


def run_simulation(config: SimulationConfig, shards: Sequence[DeviceShard],
                   n_classes: int | None = None, on_round=None):
    """Run all rounds; returns ``(final_state, [RoundMetrics, ...])``."""
    state = init_simulation(config, shards, n_classes)
    metrics = []
    for _ in range(config.total_rounds):
        rm = run_round(state)
        metrics.append(rm)
        if on_round is not None:
            on_round(state, rm)
    return state, metrics
