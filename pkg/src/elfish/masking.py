"""Resource-aware soft-training: mask budgets, neuron selection, local cycles.

A straggler cannot finish a full-model training cycle inside its budgets,
so a per-layer masked fraction is chosen such that the kept sub-model fits
all three of them (time, memory, workload). The specific neurons to mask
rotate every cycle: the top contributors from the previous cycle are always
kept, the rest of the kept set is sampled uniformly, and masked neurons are
recovered from the global model at the start of the next cycle.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleBudgetError, SpecError
from .nn import (ModelSpec, NeuronMask, WeightState, backward, check_weights,
                 forward, sgd_step)
from .profiling import DeviceProfile, TrainConfig, model_time, neuron_time

LAYER_WEIGHTING_MODES = ("time", "uniform")


@dataclass(frozen=True)
class SoftTrainPolicy:
    """Knobs for mask selection and the budget search.

    keep_top_fraction: share of each kept set reserved for the neurons with
      the highest contribution from the previous cycle; the remainder is
      sampled uniformly.
    search_step: grid step for the masked-fraction search.
    mask_cap: per-layer masked fraction never exceeds this.
    layer_weighting: "time" masks expensive layers harder (weights scale
      with each layer's share of training time); "uniform" masks every
      layer by the same fraction.
    """

    keep_top_fraction: float = 0.5
    seed: int = 0
    search_step: float = 0.01
    mask_cap: float = 0.9
    layer_weighting: str = "time"

    def __post_init__(self):
        if not 0.0 <= self.keep_top_fraction <= 1.0:
            raise ValueError("keep_top_fraction must lie in [0, 1]")
        if not 0.0 < self.search_step <= 0.5:
            raise ValueError("search_step must lie in (0, 0.5]")
        if not 0.0 < self.mask_cap < 1.0:
            raise ValueError("mask_cap must lie in (0, 1)")
        if self.layer_weighting not in LAYER_WEIGHTING_MODES:
            raise ValueError(f"layer_weighting must be one of {LAYER_WEIGHTING_MODES}")

    def to_dict(self) -> dict:
        return {
            "keep_top_fraction": self.keep_top_fraction,
            "seed": self.seed,
            "search_step": self.search_step,
            "mask_cap": self.mask_cap,
            "layer_weighting": self.layer_weighting,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SoftTrainPolicy":
        return cls(**d)


@dataclass(frozen=True)
class MaskBudget:
    """Solved per-layer masking plan.

    keep_counts[i] neurons of layer i train this cycle; the other
    layer_sizes[i] - keep_counts[i] are masked. global_fraction is the grid
    point the solver settled on and layer_weights are the per-layer
    multipliers applied to it.
    """

    global_fraction: float
    masked_fractions: tuple[float, ...]
    keep_counts: tuple[int, ...]
    layer_sizes: tuple[int, ...]
    layer_weights: tuple[float, ...]

    @property
    def kept_fraction(self) -> float:
        return sum(self.keep_counts) / sum(self.layer_sizes)

    @property
    def masked_counts(self) -> tuple[int, ...]:
        return tuple(n - k for n, k in zip(self.layer_sizes, self.keep_counts))

    def is_full(self) -> bool:
        return self.keep_counts == self.layer_sizes

    def to_dict(self) -> dict:
        return {
            "global_fraction": self.global_fraction,
            "masked_fractions": list(self.masked_fractions),
            "keep_counts": list(self.keep_counts),
            "layer_sizes": list(self.layer_sizes),
            "layer_weights": list(self.layer_weights),
        }


def full_budget(spec: ModelSpec) -> MaskBudget:
    """Degenerate budget that keeps every neuron (capable device)."""
    sizes = spec.neuron_counts
    return MaskBudget(0.0, tuple(0.0 for _ in sizes), sizes, sizes,
                      tuple(1.0 for _ in sizes))


@dataclass(frozen=True)
class ContributionMap:
    """Per-neuron update magnitudes from the last completed cycle."""

    values: tuple[np.ndarray, ...]
    cycle_index: int = 0

    def __post_init__(self):
        for i, u in enumerate(self.values):
            if not np.all(np.isfinite(u)) or np.any(u < 0):
                raise ValueError(f"layer {i}: contributions must be finite and non-negative")


def neuron_contributions(prev: WeightState, cur: WeightState,
                         cycle_index: int = 0) -> ContributionMap:
    """L2 norm of each neuron's parameter change between two weight states.

    Covers the neuron's full weight slice plus its bias. Neurons that were
    masked for the whole interval come out exactly zero.
    """
    if len(prev.weights) != len(cur.weights):
        raise SpecError("weight states have different layer counts")
    values = []
    for i, (wp, wc) in enumerate(zip(prev.weights, cur.weights)):
        if wp.shape != wc.shape or prev.biases[i].shape != cur.biases[i].shape:
            raise SpecError(f"layer {i}: weight state shapes do not match")
        dw = (wc - wp).reshape(wc.shape[0], -1)
        db = cur.biases[i] - prev.biases[i]
        values.append(np.sqrt((dw ** 2).sum(axis=1) + db ** 2))
    return ContributionMap(tuple(values), cycle_index)


# ---------------------------------------------------------------------------
# Budget solver
# ---------------------------------------------------------------------------

def _layer_weights(spec: ModelSpec, dev: DeviceProfile, cfg: TrainConfig,
                   mode: str) -> tuple[float, ...]:
    sizes = spec.neuron_counts
    if mode == "uniform":
        return tuple(1.0 for _ in sizes)
    times = [neuron_time(layer, dev, cfg) for layer in spec.layers]
    layer_totals = [n * t for n, t in zip(sizes, times)]
    total = sum(layer_totals)
    if total <= 0.0:
        return tuple(1.0 for _ in sizes)
    raw = [share / total * len(sizes) for share in layer_totals]
    # rescale so the neuron-weighted mean multiplier is 1, which keeps the
    # overall masked share equal to the global fraction (before capping)
    scale = sum(sizes) / sum(w * n for w, n in zip(raw, sizes))
    return tuple(w * scale for w in raw)


def _keep_counts_at(spec: ModelSpec, weights: tuple[float, ...], fraction: float,
                    cap: float) -> tuple[tuple[int, ...], tuple[float, ...]]:
    keeps, fractions = [], []
    for n, w in zip(spec.neuron_counts, weights):
        f = min(w * fraction, cap)
        masked = min(int(math.floor(f * n + 1e-9)), n - 1)
        keeps.append(n - masked)
        fractions.append(f)
    return tuple(keeps), tuple(fractions)


def _violations(est, dev: DeviceProfile) -> dict:
    out = {}
    if est.time > dev.time_budget:
        out["time"] = (est.time, dev.time_budget)
    if est.memory > dev.main_memory_capacity:
        out["memory"] = (est.memory, dev.main_memory_capacity)
    if est.workload > dev.workload_budget:
        out["workload"] = (est.workload, dev.workload_budget)
    return out


def solve_mask_budget(spec: ModelSpec, dev: DeviceProfile, cfg: TrainConfig,
                      policy: SoftTrainPolicy = SoftTrainPolicy()) -> MaskBudget:
    """Smallest masked fraction on the search grid whose kept sub-model
    satisfies the device's time, memory, and workload budgets.

    Scans fractions 0, step, 2*step, ... and re-prices the kept sub-model
    with model_time at every step, so the returned plan is feasible by
    direct re-evaluation and grid-minimal by construction. Raises
    InfeasibleBudgetError when even the most masked sub-model (per-layer
    fraction capped at policy.mask_cap, at least one neuron per layer)
    violates a budget.
    """
    weights = _layer_weights(spec, dev, cfg, policy.layer_weighting)
    step = policy.search_step
    k = 0
    prev_keeps = None
    while True:
        fraction = k * step
        keeps, fractions = _keep_counts_at(spec, weights, fraction, policy.mask_cap)
        if keeps != prev_keeps:  # identical keep counts cannot change feasibility
            est = model_time(spec, keeps, dev, cfg)
            bad = _violations(est, dev)
            if not bad:
                return MaskBudget(fraction, fractions, keeps, spec.neuron_counts, weights)
            prev_keeps = keeps
        saturated = all(f >= policy.mask_cap or n - kc >= n - 1
                        for f, n, kc in zip(fractions, spec.neuron_counts, keeps))
        if saturated:
            detail = ", ".join(f"{name}: {got:.4g} > budget {budget:.4g}"
                               for name, (got, budget) in bad.items())
            raise InfeasibleBudgetError(
                f"device infeasible: even the maximally masked sub-model violates "
                f"its budgets ({detail})", bad)
        k += 1


# ---------------------------------------------------------------------------
# Mask selection and the local training cycle
# ---------------------------------------------------------------------------

def select_mask(budget: MaskBudget, contrib: ContributionMap | None,
                policy: SoftTrainPolicy, rng: np.random.Generator) -> NeuronMask:
    """Pick the kept set per layer and return its complement as the mask.

    Kept set = the ceil(keep_top_fraction * keep) neurons with the highest
    contribution (ties broken by lower index), plus a uniform sample of the
    remainder. With no contribution map (first cycle) the whole kept set is
    sampled uniformly. Fully kept layers consume no randomness.
    """
    masked_sets = []
    for i, (n, keep) in enumerate(zip(budget.layer_sizes, budget.keep_counts)):
        if keep >= n:
            masked_sets.append(())
            continue
        if contrib is None:
            kept = rng.choice(n, size=keep, replace=False)
        else:
            u = np.asarray(contrib.values[i])
            if u.shape != (n,):
                raise ValueError(f"layer {i}: contribution map has {u.shape} entries "
                                 f"for {n} neurons")
            top_count = math.ceil(policy.keep_top_fraction * keep)
            order = np.argsort(-u, kind="stable")  # stable: ties keep lower index first
            top = order[:top_count]
            rest = order[top_count:]
            extra = rng.choice(rest, size=keep - top_count, replace=False) \
                if keep > top_count else np.empty(0, dtype=int)
            kept = np.concatenate([top, extra])
        mask = np.setdiff1d(np.arange(n), kept)
        masked_sets.append(tuple(int(j) for j in mask))
    return NeuronMask(tuple(masked_sets))


@dataclass
class SoftTrainResult:
    weights: WeightState
    mask: NeuronMask
    contributions: ContributionMap
    mean_loss: float
    kept_fraction: float


def soft_train_cycle(spec: ModelSpec, global_weights: WeightState, shard,
                     budget: MaskBudget, contrib: ContributionMap | None,
                     policy: SoftTrainPolicy, rng: np.random.Generator, *,
                     lr: float, batch_size: int,
                     epochs_per_cycle: int = 1) -> SoftTrainResult:
    """One local training cycle: recover, mask, train, report contributions.

    The device starts from a full copy of the global model (recovery), masks
    the budgeted neurons, then runs epochs_per_cycle of minibatch SGD.
    Masked neurons never move, so their returned values equal the incoming
    global values bit for bit.
    """
    check_weights(spec, global_weights)
    if batch_size < 1 or epochs_per_cycle < 1:
        raise ValueError("batch_size and epochs_per_cycle must be >= 1")
    x, y = shard
    x = np.asarray(x, dtype=float)
    y = np.asarray(y)
    if len(x) == 0:
        raise ValueError("shard is empty")

    local = global_weights.copy()
    mask = select_mask(budget, contrib, policy, rng)
    losses = []
    for _ in range(epochs_per_cycle):
        perm = rng.permutation(len(x))
        for start in range(0, len(x), batch_size):
            take = perm[start:start + batch_size]
            loss, cache = forward(spec, local, mask, (x[take], y[take]))
            grads = backward(spec, local, mask, cache)
            local = sgd_step(local, grads, lr)
            losses.append(loss)

    next_cycle = 1 if contrib is None else contrib.cycle_index + 1
    contributions = neuron_contributions(global_weights, local, next_cycle)
    return SoftTrainResult(local, mask, contributions, float(np.mean(losses)),
                           budget.kept_fraction)
