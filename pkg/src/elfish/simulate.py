"""Discrete-event federated-learning simulator.

A fleet of simulated devices trains a shared model on partitioned data
under one of four collaboration schemes:

  sync     every device trains the full model each cycle; the clock
           advances by the slowest device's estimated cycle time and the
           server averages all updates uniformly.
  async    each device loops independently on the full model; the global
           model is updated per arrival with a staleness-discounted blend
           and the clock is event driven.
  st_only  devices over budget train masked sub-models (soft training), but
           the server still applies a plain uniform average.
  elfish   soft training plus mask-aware, structure/loss-weighted
           aggregation.

All time comes from the consumption model (no real sleeping), so runs are
fast and bit-reproducible: identical configs (including seed) produce
identical logs. An opt-in thread pool trains devices of one cycle in
parallel; updates are merged in device-id order so logs do not depend on
scheduling.
"""
from __future__ import annotations

import csv
import heapq
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import data as datamod
from .aggregation import (AggregationWeights, DeviceUpdate, aggregate,
                          async_apply, async_mix_coefficient, compute_alphas,
                          weighted_average, ALPHA_SCHEMES)
from .errors import ConfigError
from .masking import (ContributionMap, MaskBudget, SoftTrainPolicy, full_budget,
                      select_mask, soft_train_cycle)
from .nn import ModelSpec, WeightState, init_weights, lenet_spec, model_from_config, predict
from .profiling import DeviceProfile, TrainConfig, full_keep_counts, model_time

SCHEMES = ("sync", "async", "st_only", "elfish")
SCHEMA_VERSION = 1

CAPABLE = "capable"
STRAGGLER = "straggler"


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DatasetConfig:
    kind: str = "blobs"            # blobs | digits
    samples: int = 5000
    classes: int = 10
    image_size: int = 8
    channels: int = 1
    separation: float = 3.0
    noise: float = 1.0
    label_noise: float = 0.0
    test_fraction: float = 0.2

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class LocalTrainConfig:
    batch_size: int = 32
    learning_rate: float = 0.05
    epochs_per_cycle: int = 1
    weight_bytes: int = 4
    activation_bytes: int = 4

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class AggregationConfig:
    # structure weighting keeps the combined scheme's round-to-round
    # variance low; loss_structure is available but jitters (local losses
    # fluctuate per shard draw and the inverse-loss weights follow)
    alpha_scheme: str = "structure"
    staleness_discount: float = 0.7
    base_mix: float = 1.0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class EvaluationConfig:
    trailing_window: int = 20
    target_accuracies: tuple[float, ...] = (0.5, 0.6, 0.7, 0.8, 0.9)

    def to_dict(self) -> dict:
        return {"trailing_window": self.trailing_window,
                "target_accuracies": list(self.target_accuracies)}


@dataclass(frozen=True)
class DeviceEntry:
    label: str
    profile: DeviceProfile

    def __post_init__(self):
        if self.label not in (CAPABLE, STRAGGLER):
            raise ConfigError(f"device label must be capable|straggler, got {self.label!r}")


@dataclass
class FleetConfig:
    devices: list[DeviceEntry]
    scheme: str = "elfish"
    rounds: int = 60
    seed: int = 0
    partition: str = "iid"
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    train: LocalTrainConfig = field(default_factory=LocalTrainConfig)
    policy: SoftTrainPolicy = field(default_factory=SoftTrainPolicy)
    aggregation: AggregationConfig = field(default_factory=AggregationConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    model: ModelSpec | None = None
    threads: int = 1

    def resolved_model(self) -> ModelSpec:
        if self.model is not None:
            return self.model
        return lenet_spec(image_size=self.dataset.image_size,
                          input_channels=self.dataset.channels,
                          classes=self.dataset.classes)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "scheme": self.scheme,
            "rounds": self.rounds,
            "seed": self.seed,
            "partition": self.partition,
            "threads": self.threads,
            "dataset": self.dataset.to_dict(),
            "train": self.train.to_dict(),
            "policy": self.policy.to_dict(),
            "aggregation": self.aggregation.to_dict(),
            "evaluation": self.evaluation.to_dict(),
            "model": self.resolved_model().to_dict(),
            "devices": [{"label": d.label, "profile": d.profile.to_dict()}
                        for d in self.devices],
        }


def fleet_config_from_dict(raw: dict) -> FleetConfig:
    """Parse and validate a fleet configuration dictionary (see README)."""
    try:
        version = raw.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {version}")
        devices = [DeviceEntry(d["label"], DeviceProfile.from_dict(d["profile"]))
                   for d in raw["devices"]]
        cfg = FleetConfig(
            devices=devices,
            scheme=raw.get("scheme", "elfish"),
            rounds=int(raw.get("rounds", 60)),
            seed=int(raw.get("seed", 0)),
            partition=raw.get("partition", "iid"),
            dataset=DatasetConfig(**raw.get("dataset", {})),
            train=LocalTrainConfig(**raw.get("train", {})),
            policy=SoftTrainPolicy.from_dict(raw.get("policy", {})),
            aggregation=AggregationConfig(**raw.get("aggregation", {})),
            evaluation=EvaluationConfig(
                trailing_window=int(raw.get("evaluation", {}).get("trailing_window", 20)),
                target_accuracies=tuple(raw.get("evaluation", {})
                                        .get("target_accuracies", (0.5, 0.6, 0.7, 0.8, 0.9)))),
            model=model_from_config(raw["model"]) if "model" in raw else None,
            threads=int(raw.get("threads", 1)),
        )
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed fleet config: {exc}") from exc
    _validate_fleet(cfg)
    return cfg


def _validate_fleet(cfg: FleetConfig) -> None:
    if not cfg.devices:
        raise ConfigError("fleet needs at least one device")
    if cfg.scheme not in SCHEMES:
        raise ConfigError(f"unknown scheme {cfg.scheme!r}; known: {SCHEMES}")
    if cfg.rounds < 1:
        raise ConfigError("rounds must be >= 1")
    if cfg.partition not in ("iid", "noniid_shards"):
        raise ConfigError(f"unknown partition mode {cfg.partition!r}")
    if cfg.aggregation.alpha_scheme not in ALPHA_SCHEMES:
        raise ConfigError(f"unknown alpha scheme {cfg.aggregation.alpha_scheme!r}")
    if cfg.threads < 1:
        raise ConfigError("threads must be >= 1")


# ---------------------------------------------------------------------------
# Logs
# ---------------------------------------------------------------------------

@dataclass
class CycleRecord:
    cycle: int
    clock_seconds: float
    accuracy: float
    device_losses: list
    kept_fractions: list
    masked_counts: list
    alphas: list
    arrival_device: int | None = None
    staleness: int | None = None

    def to_dict(self) -> dict:
        return {
            "cycle": self.cycle,
            "clock_seconds": self.clock_seconds,
            "accuracy": self.accuracy,
            "device_losses": self.device_losses,
            "kept_fractions": self.kept_fractions,
            "masked_counts": self.masked_counts,
            "alphas": self.alphas,
            "arrival_device": self.arrival_device,
            "staleness": self.staleness,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CycleRecord":
        return cls(**d)


@dataclass
class ExperimentLog:
    scheme: str
    seed: int
    device_labels: list[str]
    config: dict
    records: list[CycleRecord]
    summary: dict
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "scheme": self.scheme,
            "seed": self.seed,
            "device_labels": self.device_labels,
            "config": self.config,
            "records": [r.to_dict() for r in self.records],
            "summary": self.summary,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentLog":
        return cls(scheme=d["scheme"], seed=d["seed"],
                   device_labels=list(d["device_labels"]), config=d["config"],
                   records=[CycleRecord.from_dict(r) for r in d["records"]],
                   summary=d["summary"], schema_version=d["schema_version"])

    def save_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load_json(cls, path) -> "ExperimentLog":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def save_csv(self, path) -> None:
        """Flat per-cycle table for plotting."""
        n = len(self.device_labels)
        header = (["cycle", "clock_seconds", "accuracy", "arrival_device", "staleness"]
                  + [f"loss_{i}" for i in range(n)]
                  + [f"kept_fraction_{i}" for i in range(n)]
                  + [f"alpha_{i}" for i in range(n)])
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for r in self.records:
                row = [r.cycle, r.clock_seconds, r.accuracy,
                       "" if r.arrival_device is None else r.arrival_device,
                       "" if r.staleness is None else r.staleness]
                for values in (r.device_losses, r.kept_fractions, r.alphas):
                    row.extend("" if v is None else v for v in values)
                writer.writerow(row)

    def accuracies(self) -> np.ndarray:
        return np.array([r.accuracy for r in self.records])

    def clocks(self) -> np.ndarray:
        return np.array([r.clock_seconds for r in self.records])


def time_to_accuracy(log: ExperimentLog, threshold: float) -> float | None:
    """Simulated seconds until the global model first reaches the threshold."""
    for r in log.records:
        if r.accuracy >= threshold:
            return r.clock_seconds
    return None


def _summarize(records: list[CycleRecord], eval_cfg: EvaluationConfig) -> dict:
    acc = np.array([r.accuracy for r in records])
    window = min(eval_cfg.trailing_window, len(acc))
    trailing = acc[-window:]
    targets = {}
    for t in eval_cfg.target_accuracies:
        hit = next((r.clock_seconds for r in records if r.accuracy >= t), None)
        targets[f"{t:.2f}"] = hit
    return {
        "cycles": len(records),
        "total_clock_seconds": records[-1].clock_seconds if records else 0.0,
        "final_accuracy": float(acc[-1]) if len(acc) else 0.0,
        "best_accuracy": float(acc.max()) if len(acc) else 0.0,
        "trailing_window": window,
        "trailing_mean_accuracy": float(trailing.mean()) if window else 0.0,
        "trailing_accuracy_variance": float(trailing.var()) if window else 0.0,
        "time_to_accuracy_seconds": targets,
    }


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def evaluate_global(spec: ModelSpec, weights: WeightState, test_x: np.ndarray,
                    test_y: np.ndarray) -> float:
    """Top-1 accuracy; argmax ties resolve to the lowest class index."""
    if len(test_y) == 0:
        raise ValueError("test set is empty")
    logits = predict(spec, weights, test_x)
    return float(np.mean(np.argmax(logits, axis=1) == test_y))


# ---------------------------------------------------------------------------
# The experiment driver
# ---------------------------------------------------------------------------

@dataclass
class _DeviceState:
    index: int
    label: str
    profile: DeviceProfile
    shard_x: np.ndarray
    shard_y: np.ndarray
    train_cfg: TrainConfig
    budget: MaskBudget
    cycle_seconds: float
    full_seconds: float
    rng: np.random.Generator
    contrib: ContributionMap | None = None


def _make_dataset(cfg: DatasetConfig, seed) -> tuple[np.ndarray, np.ndarray]:
    if cfg.kind == "blobs":
        return datamod.make_blob_dataset(
            cfg.samples, cfg.classes, cfg.image_size, cfg.channels,
            cfg.separation, cfg.noise, cfg.label_noise, seed)
    if cfg.kind == "digits":
        return datamod.load_digits_dataset(cfg.samples, seed)
    raise ConfigError(f"unknown dataset kind {cfg.kind!r}")


def _prepare(cfg: FleetConfig):
    _validate_fleet(cfg)
    spec = cfg.resolved_model()
    root = np.random.SeedSequence(cfg.seed)
    data_seed, init_seed, *device_seeds = root.spawn(2 + len(cfg.devices))
    data_rng = np.random.default_rng(data_seed)

    x, y = _make_dataset(cfg.dataset, data_rng)
    (train_x, train_y), (test_x, test_y) = datamod.train_test_split(
        x, y, cfg.dataset.test_fraction, data_rng)
    shards = datamod.partition_data((train_x, train_y), len(cfg.devices),
                                    cfg.partition, data_rng)

    global_weights = init_weights(spec, np.random.default_rng(init_seed))

    soft = cfg.scheme in ("st_only", "elfish")
    devices = []
    for i, entry in enumerate(cfg.devices):
        idx = shards[i]
        steps = math.ceil(len(idx) / cfg.train.batch_size) * cfg.train.epochs_per_cycle
        tcfg = TrainConfig(cfg.train.batch_size, steps,
                           cfg.train.weight_bytes, cfg.train.activation_bytes)
        full_est = model_time(spec, full_keep_counts(spec), entry.profile, tcfg)
        if soft:
            from .masking import solve_mask_budget
            budget = solve_mask_budget(spec, entry.profile, tcfg, cfg.policy)
            cycle_seconds = model_time(spec, budget.keep_counts, entry.profile, tcfg).time
        else:
            budget = full_budget(spec)
            cycle_seconds = full_est.time
        devices.append(_DeviceState(
            index=i, label=entry.label, profile=entry.profile,
            shard_x=train_x[idx], shard_y=train_y[idx], train_cfg=tcfg,
            budget=budget, cycle_seconds=cycle_seconds, full_seconds=full_est.time,
            rng=np.random.default_rng(device_seeds[i])))
    return spec, global_weights, devices, (test_x, test_y)


def _train_device(spec: ModelSpec, dev: _DeviceState, global_weights: WeightState,
                  cfg: FleetConfig):
    return soft_train_cycle(
        spec, global_weights, (dev.shard_x, dev.shard_y), dev.budget, dev.contrib,
        cfg.policy, dev.rng, lr=cfg.train.learning_rate,
        batch_size=cfg.train.batch_size, epochs_per_cycle=cfg.train.epochs_per_cycle)


def _run_rounds(cfg: FleetConfig, spec: ModelSpec, global_weights: WeightState,
                devices: list[_DeviceState], test) -> list[CycleRecord]:
    test_x, test_y = test
    records = []
    clock = 0.0
    period = max(d.cycle_seconds for d in devices)
    pool = ThreadPoolExecutor(max_workers=cfg.threads) if cfg.threads > 1 else None
    try:
        for cycle in range(1, cfg.rounds + 1):
            if pool is not None:
                results = list(pool.map(
                    lambda d: _train_device(spec, d, global_weights, cfg), devices))
            else:
                results = [_train_device(spec, d, global_weights, cfg) for d in devices]
            for dev, res in zip(devices, results):
                dev.contrib = res.contributions
            updates = [DeviceUpdate(dev.index, res.weights, res.mask, res.mean_loss,
                                    dev.budget.kept_fraction)
                       for dev, res in zip(devices, results)]
            if cfg.scheme == "sync":
                alphas = compute_alphas(updates, "uniform")
                global_weights = aggregate(global_weights, updates, alphas)
            elif cfg.scheme == "st_only":
                alphas = compute_alphas(updates, "uniform")
                global_weights = weighted_average(updates, alphas)
            else:  # elfish
                alphas = compute_alphas(updates, cfg.aggregation.alpha_scheme)
                global_weights = aggregate(global_weights, updates, alphas)
            clock += period
            acc = evaluate_global(spec, global_weights, test_x, test_y)
            records.append(CycleRecord(
                cycle=cycle, clock_seconds=clock, accuracy=acc,
                device_losses=[res.mean_loss for res in results],
                kept_fractions=[dev.budget.kept_fraction for dev in devices],
                masked_counts=[res.mask.total_masked for res in results],
                alphas=list(alphas.values)))
    finally:
        if pool is not None:
            pool.shutdown()
    return records


def _run_async(cfg: FleetConfig, spec: ModelSpec, global_weights: WeightState,
               devices: list[_DeviceState], test) -> list[CycleRecord]:
    """Event-driven loop: every device trains the full model from its last
    fetched snapshot; arrivals blend into the global model immediately.

    Runs rounds * n_devices arrival events, which matches the total local
    training effort of the round-based schemes.
    """
    test_x, test_y = test
    records = []
    n = len(devices)
    snapshots = [global_weights.copy() for _ in range(n)]
    fetched_version = [0] * n
    global_version = 0
    heap = [(dev.full_seconds, dev.index) for dev in devices]
    heapq.heapify(heap)
    total_events = cfg.rounds * n
    for event in range(1, total_events + 1):
        finish, i = heapq.heappop(heap)
        dev = devices[i]
        res = _train_device(spec, dev, snapshots[i], cfg)
        dev.contrib = res.contributions
        update = DeviceUpdate(i, res.weights, res.mask, res.mean_loss, 1.0,
                              staleness=global_version - fetched_version[i])
        mix = async_mix_coefficient(update,
                                    staleness_discount=cfg.aggregation.staleness_discount,
                                    base_mix=cfg.aggregation.base_mix)
        global_weights = async_apply(global_weights, update,
                                     staleness_discount=cfg.aggregation.staleness_discount,
                                     base_mix=cfg.aggregation.base_mix)
        global_version += 1
        acc = evaluate_global(spec, global_weights, test_x, test_y)
        losses: list = [None] * n
        losses[i] = res.mean_loss
        alphas: list = [None] * n
        alphas[i] = mix
        records.append(CycleRecord(
            cycle=event, clock_seconds=finish, accuracy=acc,
            device_losses=losses,
            kept_fractions=[1.0] * n,
            masked_counts=[0] * n,
            alphas=alphas, arrival_device=i, staleness=update.staleness))
        snapshots[i] = global_weights.copy()
        fetched_version[i] = global_version
        heapq.heappush(heap, (finish + dev.full_seconds, i))
    return records


def run_experiment(cfg: FleetConfig) -> ExperimentLog:
    """Run one federated experiment and return its full log."""
    spec, global_weights, devices, test = _prepare(cfg)
    if cfg.scheme == "async":
        records = _run_async(cfg, spec, global_weights, devices, test)
    else:
        records = _run_rounds(cfg, spec, global_weights, devices, test)
    return ExperimentLog(
        scheme=cfg.scheme, seed=cfg.seed,
        device_labels=[d.label for d in cfg.devices],
        config=cfg.to_dict(), records=records,
        summary=_summarize(records, cfg.evaluation))


# ---------------------------------------------------------------------------
# Fleet construction helpers
# ---------------------------------------------------------------------------

# Straggler severity tiers: (full-cycle slowdown vs. the capable cycle,
# workload budget as a fraction of the full-model workload, memory budget
# as a fraction of the full-model footprint).
STRAGGLER_TIERS = {
    1: (1.29, 0.335, 0.885),
    2: (1.49, 0.287, 0.527),
    3: (1.70, 0.263, 0.351),
    4: (2.13, 0.215, 0.386),
}


def desk_fleet(spec: ModelSpec, samples_per_device: int, train: LocalTrainConfig,
               *, capable: int = 2, straggler_tiers: Sequence[int] = (1, 2),
               capable_seconds: float = 60.0, overhead: float = 0.5,
               budget_slack: float = 1.05) -> list[DeviceEntry]:
    """Build a small heterogeneous fleet around a target capable-cycle time.

    Capable devices finish the full model in capable_seconds and carry loose
    budgets; stragglers are slowed down by their tier ratio and budgeted so
    the full model violates time (and usually workload/memory) limits while
    a masked sub-model fits. Every straggler's time budget equals the
    capable cycle time.
    """
    from .profiling import device_for_cycle_time, neuron_memory, neuron_workload

    steps = math.ceil(samples_per_device / train.batch_size) * train.epochs_per_cycle
    tcfg = TrainConfig(train.batch_size, steps, train.weight_bytes, train.activation_bytes)
    full_w = sum(l.neurons * neuron_workload(l, tcfg) for l in spec.layers)
    full_m = sum(l.neurons * neuron_memory(l, tcfg) for l in spec.layers)

    fleet = []
    for _ in range(capable):
        fleet.append(DeviceEntry(CAPABLE, device_for_cycle_time(
            spec, tcfg, capable_seconds, fixed_overhead=overhead,
            time_budget=capable_seconds * budget_slack)))
    for tier in straggler_tiers:
        slowdown, workload_ratio, memory_ratio = STRAGGLER_TIERS[tier]
        base = device_for_cycle_time(spec, tcfg, capable_seconds * slowdown,
                                     fixed_overhead=overhead)
        fleet.append(DeviceEntry(STRAGGLER, DeviceProfile(
            compute_bandwidth=base.compute_bandwidth,
            mem_bandwidth=base.mem_bandwidth,
            secondary_mem_bandwidth=base.secondary_mem_bandwidth,
            main_memory_capacity=memory_ratio * full_m,
            workload_capacity=workload_ratio * full_w / capable_seconds,
            time_budget=capable_seconds,
            fixed_overhead=overhead)))
    return fleet
