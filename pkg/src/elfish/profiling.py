"""Training-consumption models: workload (FLOPs), memory (bytes), time (s).

The per-neuron cost of layer i with an input feature map of h x w x c and
an r x s kernel, trained for N_b minibatches of m_b samples, is

    workload  W = 2 * N_b * m_b * r * s * c * h * w          [FLOPs]
    memory    M = 2 * (B_f * r * s * c) + m_b * B_a * h * w  [bytes]
    time      T = W / C_cpu + N_b * M / V_mc                 [seconds]

where the leading 2 in W counts the backward pass as a second forward, the
leading 2 in M counts gradients next to weights, B_f / B_a are weight /
activation element sizes in bytes, C_cpu is the device's effective compute
bandwidth and V_mc its main-memory bandwidth.

Whole-model estimates sum per-neuron values over the neurons actually kept
in each layer. A kept neuron's input count is the KEPT count of the
previous layer (masked channels cost nothing), so shrinking every layer by
a fraction p shrinks compute roughly by p^2. Whole-model time adds a
secondary-memory penalty for the part of M that exceeds the device's main
memory, plus a fixed per-cycle overhead:

    T = W / C_cpu + N_b * (M / V_mc + max(M - b_M, 0) / V_sm) + O_T

Device parameters (1/C_cpu, 1/V_mc, 1/V_sm, O_T) can be recovered from
measured cycle times by linear least squares; see fit_device_params.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import SpecError
from .nn import ModelSpec, LayerSpec

_ELEMENT_BYTES = (2, 4, 8)


@dataclass(frozen=True)
class TrainConfig:
    """Minibatch geometry and element sizes for one training cycle."""

    minibatch_size: int
    minibatch_count: int
    weight_bytes: int = 4
    activation_bytes: int = 4

    def __post_init__(self):
        if self.minibatch_size < 0 or self.minibatch_count < 0:
            raise ValueError("minibatch size/count must be non-negative")
        if self.weight_bytes not in _ELEMENT_BYTES or self.activation_bytes not in _ELEMENT_BYTES:
            raise ValueError(f"element sizes must be one of {_ELEMENT_BYTES} bytes")

    def to_dict(self) -> dict:
        return {
            "minibatch_size": self.minibatch_size,
            "minibatch_count": self.minibatch_count,
            "weight_bytes": self.weight_bytes,
            "activation_bytes": self.activation_bytes,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**{k: int(v) for k, v in d.items()})


@dataclass(frozen=True)
class DeviceProfile:
    """Fitted hardware parameters plus per-cycle resource budgets.

    workload_capacity is a rate (FLOP/s); the per-cycle workload budget is
    workload_capacity * time_budget, since per-cycle workloads are amounts.
    """

    compute_bandwidth: float        # FLOP/s
    mem_bandwidth: float            # main memory, bytes/s
    secondary_mem_bandwidth: float  # secondary storage, bytes/s
    main_memory_capacity: float     # bytes
    workload_capacity: float        # FLOP/s
    time_budget: float              # seconds per cycle
    fixed_overhead: float           # seconds per cycle

    def __post_init__(self):
        for name in ("compute_bandwidth", "mem_bandwidth", "secondary_mem_bandwidth",
                     "main_memory_capacity", "workload_capacity", "time_budget",
                     "fixed_overhead"):
            value = getattr(self, name)
            if not (value > 0.0) or not math.isfinite(value):
                raise ValueError(f"device parameter {name} must be positive and finite")
        if self.secondary_mem_bandwidth > self.mem_bandwidth:
            raise ValueError("secondary memory cannot be faster than main memory")

    @property
    def workload_budget(self) -> float:
        """Per-cycle workload budget in FLOPs."""
        return self.workload_capacity * self.time_budget

    def to_dict(self) -> dict:
        return {
            "compute_bandwidth": self.compute_bandwidth,
            "mem_bandwidth": self.mem_bandwidth,
            "secondary_mem_bandwidth": self.secondary_mem_bandwidth,
            "main_memory_capacity": self.main_memory_capacity,
            "workload_capacity": self.workload_capacity,
            "time_budget": self.time_budget,
            "fixed_overhead": self.fixed_overhead,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DeviceProfile":
        return cls(**{k: float(v) for k, v in d.items()})


@dataclass(frozen=True)
class ConsumptionEstimate:
    """Whole-model consumption with per-layer breakdowns.

    layer_time excludes the secondary-memory and fixed-overhead terms,
    which are whole-model quantities; time == sum(layer_time)
    + overflow_seconds + fixed_overhead.
    """

    workload: int
    memory: int
    time: float
    layer_workload: tuple[int, ...]
    layer_memory: tuple[int, ...]
    layer_time: tuple[float, ...]
    overflow_seconds: float
    fixed_overhead: float

    def to_dict(self) -> dict:
        return {
            "workload_flops": self.workload,
            "memory_bytes": self.memory,
            "time_seconds": self.time,
            "layer_workload_flops": list(self.layer_workload),
            "layer_memory_bytes": list(self.layer_memory),
            "layer_time_seconds": list(self.layer_time),
            "overflow_seconds": self.overflow_seconds,
            "fixed_overhead_seconds": self.fixed_overhead,
        }


# ---------------------------------------------------------------------------
# Per-neuron and whole-model estimators
# ---------------------------------------------------------------------------

def neuron_workload(layer: LayerSpec, cfg: TrainConfig, *,
                    input_channels: int | None = None) -> int:
    """FLOPs to train one neuron of this layer for one cycle.

    input_channels overrides the layer's declared input count, which is how
    masked sub-models are priced (a kept neuron only convolves kept inputs).
    """
    c = layer.input_channels if input_channels is None else input_channels
    return (2 * cfg.minibatch_count * cfg.minibatch_size
            * layer.kernel_rows * layer.kernel_cols
            * c * layer.input_rows * layer.input_cols)


def neuron_memory(layer: LayerSpec, cfg: TrainConfig, *,
                  input_channels: int | None = None) -> int:
    """Bytes of training state for one neuron: weights+gradients, activations."""
    c = layer.input_channels if input_channels is None else input_channels
    weights = cfg.weight_bytes * layer.kernel_rows * layer.kernel_cols * c
    activations = cfg.minibatch_size * cfg.activation_bytes * layer.input_rows * layer.input_cols
    return 2 * weights + activations


def neuron_time(layer: LayerSpec, dev: DeviceProfile, cfg: TrainConfig, *,
                input_channels: int | None = None) -> float:
    """Seconds to train one neuron of this layer for one cycle."""
    w = neuron_workload(layer, cfg, input_channels=input_channels)
    m = neuron_memory(layer, cfg, input_channels=input_channels)
    return w / dev.compute_bandwidth + cfg.minibatch_count * (m / dev.mem_bandwidth)


def full_keep_counts(spec: ModelSpec) -> tuple[int, ...]:
    return spec.neuron_counts


def model_time(spec: ModelSpec, keep_counts: Sequence[int], dev: DeviceProfile,
               cfg: TrainConfig) -> ConsumptionEstimate:
    """Consumption of the sub-model that keeps keep_counts[i] neurons per layer.

    Layer i's kept neurons are priced against keep_counts[i-1] input
    channels (the first layer always sees the full data channels).
    """
    keep = tuple(int(k) for k in keep_counts)
    if len(keep) != len(spec.layers):
        raise SpecError(f"keep_counts has {len(keep)} entries for {len(spec.layers)} layers")
    for i, (k, layer) in enumerate(zip(keep, spec.layers)):
        if not 1 <= k <= layer.neurons:
            raise SpecError(f"keep_counts[{i}]={k} outside [1, {layer.neurons}]")

    lw, lm, lt = [], [], []
    for i, layer in enumerate(spec.layers):
        inputs = layer.input_channels if i == 0 else keep[i - 1]
        w = keep[i] * neuron_workload(layer, cfg, input_channels=inputs)
        m = keep[i] * neuron_memory(layer, cfg, input_channels=inputs)
        lw.append(w)
        lm.append(m)
        lt.append(w / dev.compute_bandwidth + cfg.minibatch_count * (m / dev.mem_bandwidth))
    workload = sum(lw)
    memory = sum(lm)
    overflow_bytes = max(memory - dev.main_memory_capacity, 0.0)
    overflow = cfg.minibatch_count * overflow_bytes / dev.secondary_mem_bandwidth
    time = math.fsum(lt) + overflow + dev.fixed_overhead
    return ConsumptionEstimate(workload, memory, time, tuple(lw), tuple(lm), tuple(lt),
                               overflow, dev.fixed_overhead)


def keep_counts_for_fraction(spec: ModelSpec, fraction: float) -> tuple[int, ...]:
    """Uniform keep fraction, rounded half-up, at least one neuron per layer."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("keep fraction must lie in (0, 1]")
    return tuple(max(1, min(n, int(math.floor(fraction * n + 0.5))))
                 for n in spec.neuron_counts)


def keep_fraction_sweep(spec: ModelSpec, dev: DeviceProfile, cfg: TrainConfig,
                        fractions: Sequence[float] = tuple(f / 10 for f in range(1, 11)),
                        ) -> list[tuple[float, ConsumptionEstimate]]:
    """Estimate consumption at each uniform keep fraction (default 10%..100%)."""
    return [(f, model_time(spec, keep_counts_for_fraction(spec, f), dev, cfg))
            for f in fractions]


# ---------------------------------------------------------------------------
# Device parameter fitting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Measurement:
    """One observed training cycle for a (model, keep_counts) pair."""

    spec: ModelSpec
    keep_counts: tuple[int, ...]
    train: TrainConfig
    seconds: float
    memory_bytes: int | None = None


@dataclass(frozen=True)
class FitReport:
    predicted: tuple[float, ...]
    residuals: tuple[float, ...]
    relative_errors: tuple[float, ...]
    rmse: float
    max_relative_error: float
    clamped_secondary_bandwidth: bool


def _fit_features(m: Measurement, main_memory_capacity: float) -> tuple[float, float, float]:
    lw, lm = 0, 0
    for i, layer in enumerate(m.spec.layers):
        inputs = layer.input_channels if i == 0 else m.keep_counts[i - 1]
        lw += m.keep_counts[i] * neuron_workload(layer, m.train, input_channels=inputs)
        lm += m.keep_counts[i] * neuron_memory(layer, m.train, input_channels=inputs)
    overflow = max(lm - main_memory_capacity, 0.0)
    return float(lw), float(m.train.minibatch_count * lm), float(m.train.minibatch_count * overflow)


def fit_device_params(measurements: Sequence[Measurement], *,
                      main_memory_capacity: float,
                      time_budget: float | None = None,
                      workload_capacity: float | None = None,
                      ) -> tuple[DeviceProfile, FitReport]:
    """Least-squares fit of (1/C_cpu, 1/V_mc, 1/V_sm, O_T) on measured times.

    Needs at least four measurements whose feature rows span the full
    parameter space; in particular, at least one measurement must exceed
    main_memory_capacity or the secondary bandwidth is unidentifiable.
    Rows are weighted by 1/observed so the fit minimizes relative error,
    which is the right loss for multiplicative measurement noise. Budgets
    are not fitted; they default to the slowest observed cycle
    (time_budget) and the fitted compute bandwidth (workload_capacity).
    """
    if len(measurements) < 4:
        raise ValueError(f"need at least 4 measurements, got {len(measurements)}")
    rows = np.array([[*_fit_features(m, main_memory_capacity), 1.0] for m in measurements])
    observed = np.array([m.seconds for m in measurements], dtype=float)
    if np.linalg.matrix_rank(rows) < 4:
        raise ValueError("insufficient measurement diversity: the fit system is rank-deficient "
                         "(vary model shapes, keep fractions, and memory overflow)")
    row_weights = 1.0 / np.maximum(np.abs(observed), 1e-12)
    theta, *_ = np.linalg.lstsq(rows * row_weights[:, None], observed * row_weights,
                                rcond=None)
    inv_c, inv_vmc, inv_vsm, overhead = theta
    if inv_c <= 0 or inv_vmc <= 0 or inv_vsm <= 0:
        raise ValueError("fit produced non-positive bandwidth estimates; "
                         "measurements are too noisy or too uniform")

    compute = 1.0 / inv_c
    vmc = 1.0 / inv_vmc
    vsm = 1.0 / inv_vsm
    clamped = vsm > vmc
    if clamped:
        vsm = vmc
    profile = DeviceProfile(
        compute_bandwidth=compute,
        mem_bandwidth=vmc,
        secondary_mem_bandwidth=vsm,
        main_memory_capacity=main_memory_capacity,
        workload_capacity=workload_capacity if workload_capacity is not None else compute,
        time_budget=time_budget if time_budget is not None else float(observed.max()),
        fixed_overhead=max(float(overhead), 1e-9),
    )
    predicted = rows @ theta
    residuals = observed - predicted
    rel = np.abs(residuals) / np.maximum(np.abs(observed), 1e-12)
    report = FitReport(tuple(predicted), tuple(residuals), tuple(rel),
                       float(np.sqrt(np.mean(residuals ** 2))), float(rel.max()), clamped)
    return profile, report


def read_measurements_csv(path, specs: Mapping[str, ModelSpec],
                          train: TrainConfig) -> list[Measurement]:
    """Load a measurement log.

    Columns: spec_id, keep_fraction, observed_seconds[, observed_bytes].
    keep_fraction is applied uniformly across layers.
    """
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"spec_id", "keep_fraction", "observed_seconds"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ValueError(f"measurement CSV must have columns {sorted(required)}")
        for row in reader:
            spec_id = row["spec_id"]
            if spec_id not in specs:
                raise ValueError(f"unknown spec_id {spec_id!r} in measurement log")
            spec = specs[spec_id]
            keep = keep_counts_for_fraction(spec, float(row["keep_fraction"]))
            raw_bytes = row.get("observed_bytes")
            out.append(Measurement(
                spec=spec, keep_counts=keep, train=train,
                seconds=float(row["observed_seconds"]),
                memory_bytes=int(raw_bytes) if raw_bytes not in (None, "") else None))
    return out


# ---------------------------------------------------------------------------
# Device construction helpers
# ---------------------------------------------------------------------------

def device_for_cycle_time(spec: ModelSpec, cfg: TrainConfig, target_seconds: float, *,
                          mem_bandwidth: float = 25e9,
                          secondary_mem_bandwidth: float | None = None,
                          main_memory_capacity: float = 1e15,
                          fixed_overhead: float = 1.0,
                          time_budget: float | None = None,
                          workload_capacity: float | None = None,
                          ) -> DeviceProfile:
    """Solve for the compute bandwidth that makes the full model take
    target_seconds per cycle; useful for constructing simulated fleets."""
    vsm = mem_bandwidth if secondary_mem_bandwidth is None else secondary_mem_bandwidth
    lw, lm = 0, 0
    for i, layer in enumerate(spec.layers):
        lw += layer.neurons * neuron_workload(layer, cfg)
        lm += layer.neurons * neuron_memory(layer, cfg)
    overflow = max(lm - main_memory_capacity, 0.0)
    transfer = cfg.minibatch_count * (lm / mem_bandwidth + overflow / vsm)
    compute_seconds = target_seconds - fixed_overhead - transfer
    if compute_seconds <= 0:
        raise ValueError(f"target {target_seconds}s is not reachable: transfer plus overhead "
                         f"already take {transfer + fixed_overhead:.3f}s")
    compute = lw / compute_seconds
    return DeviceProfile(
        compute_bandwidth=compute,
        mem_bandwidth=mem_bandwidth,
        secondary_mem_bandwidth=vsm,
        main_memory_capacity=main_memory_capacity,
        workload_capacity=workload_capacity if workload_capacity is not None else compute,
        time_budget=time_budget if time_budget is not None else target_seconds,
        fixed_overhead=fixed_overhead,
    )
