"""Server-side parameter aggregation for full and soft-trained models.

Three weighting schemes are provided: uniform, structure (proportional to
each device's kept-neuron fraction), and loss_structure (kept fraction over
local loss), the default for the combined scheme. Aggregation is mask
aware: for each neuron, only the devices that actually trained it are
averaged (with their weights renormalized over that subset); a neuron no
device trained keeps its current global value. Averaging stale global
copies back into trained neurons would dilute every update, since masked
neurons are recovered from the global model and return unchanged.

A staleness-discounted blend covers the asynchronous baseline, and a small
calculator evaluates the contraction factor of the convergence bound for a
given straggler weight.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import SpecError
from .nn import NeuronMask, WeightState

ALPHA_SCHEMES = ("uniform", "structure", "loss_structure")
_LOSS_EPS = 1e-6


@dataclass(frozen=True)
class DeviceUpdate:
    """One device's contribution to an aggregation cycle."""

    device_id: int
    weights: WeightState
    mask: NeuronMask
    local_loss: float
    kept_fraction: float
    staleness: int = 0

    def __post_init__(self):
        if not 0.0 < self.kept_fraction <= 1.0:
            raise ValueError(f"kept_fraction must lie in (0, 1], got {self.kept_fraction}")
        if not math.isfinite(self.local_loss):
            raise ValueError("local_loss must be finite")
        if self.staleness < 0:
            raise ValueError("staleness must be >= 0")


@dataclass(frozen=True)
class AggregationWeights:
    """Per-device weights, non-negative, summing to one."""

    device_ids: tuple[int, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.device_ids) != len(self.values) or not self.values:
            raise ValueError("device_ids and values must align and be non-empty")
        if any(v < 0 for v in self.values):
            raise ValueError("aggregation weights must be non-negative")
        if abs(sum(self.values) - 1.0) > 1e-12:
            raise ValueError(f"aggregation weights sum to {sum(self.values)!r}, expected 1")

    def for_device(self, device_id: int) -> float:
        return self.values[self.device_ids.index(device_id)]


def compute_alphas(updates: Sequence[DeviceUpdate],
                   scheme: str = "loss_structure") -> AggregationWeights:
    """Aggregation weights for a set of updates under the given scheme."""
    if not updates:
        raise ValueError("cannot aggregate an empty update set")
    if scheme not in ALPHA_SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; known: {ALPHA_SCHEMES}")
    if scheme == "uniform":
        raw = np.ones(len(updates))
    elif scheme == "structure":
        raw = np.array([u.kept_fraction for u in updates])
    else:
        raw = np.array([u.kept_fraction / (u.local_loss + _LOSS_EPS) for u in updates])
        if np.any(raw < 0):
            raise ValueError("loss_structure weights require losses > -1e-6")
    values = raw / raw.sum()
    values = values / values.sum()  # second pass pins the sum to 1.0 exactly
    return AggregationWeights(tuple(u.device_id for u in updates), tuple(values))


def _check_consistent(reference: WeightState, updates: Sequence[DeviceUpdate]) -> None:
    for u in updates:
        if len(u.weights.weights) != len(reference.weights):
            raise SpecError(f"device {u.device_id}: update has wrong layer count")
        for i, (w, r) in enumerate(zip(u.weights.weights, reference.weights)):
            if w.shape != r.shape or u.weights.biases[i].shape != reference.biases[i].shape:
                raise SpecError(f"device {u.device_id}: layer {i} shapes do not match")
        if len(u.mask.masked) != len(reference.weights):
            raise SpecError(f"device {u.device_id}: mask has wrong layer count")


def aggregate(global_weights: WeightState, updates: Sequence[DeviceUpdate],
              alphas: AggregationWeights) -> WeightState:
    """Mask-aware weighted average of device updates into a new global model.

    Per neuron, the average runs over the devices that did not mask it,
    with their alphas renormalized over that subset. Neurons masked by
    every device retain the current global values. Updates are processed
    in device-id order so the result is independent of arrival order.
    """
    if not updates:
        raise ValueError("cannot aggregate an empty update set")
    if sorted(alphas.device_ids) != sorted(u.device_id for u in updates):
        raise ValueError("alphas and updates cover different device ids")
    _check_consistent(global_weights, updates)

    ordered = sorted(updates, key=lambda u: u.device_id)
    weight_of = {u.device_id: alphas.for_device(u.device_id) for u in ordered}

    out = global_weights.copy()
    n_layers = len(global_weights.weights)
    for layer in range(n_layers):
        n = global_weights.weights[layer].shape[0]
        stack_w = np.stack([u.weights.weights[layer] for u in ordered])
        stack_b = np.stack([u.weights.biases[layer] for u in ordered])
        trained = np.ones((len(ordered), n))
        for d, u in enumerate(ordered):
            idx = u.mask.masked[layer]
            if idx:
                trained[d, list(idx)] = 0.0
        coef = np.array([weight_of[u.device_id] for u in ordered])[:, None] * trained
        denom = coef.sum(axis=0)  # (n,)
        covered = denom > 0.0
        # normalizing per device first makes a singleton's share exactly 1.0,
        # so a neuron trained by one device takes its values bit for bit
        shares = coef / np.where(covered, denom, 1.0)[None, :]
        averaged_w = np.einsum("dn,dn...->n...", shares, stack_w)
        averaged_b = np.einsum("dn,dn->n", shares, stack_b)
        shape = (slice(None),) + (None,) * (stack_w.ndim - 2)
        out.weights[layer] = np.where(covered[shape], averaged_w,
                                      global_weights.weights[layer])
        out.biases[layer] = np.where(covered, averaged_b,
                                     global_weights.biases[layer])
    return out


def weighted_average(updates: Sequence[DeviceUpdate],
                     alphas: AggregationWeights) -> WeightState:
    """Plain weighted mean of full weight states, ignoring masks.

    This is the aggregation the soft-training-only baseline uses: masked
    neurons carry the stale global values they recovered from, and those
    values are averaged back in.
    """
    if not updates:
        raise ValueError("cannot aggregate an empty update set")
    ordered = sorted(updates, key=lambda u: u.device_id)
    coef = [alphas.for_device(u.device_id) for u in ordered]
    first = ordered[0].weights
    out_w = [np.zeros_like(w) for w in first.weights]
    out_b = [np.zeros_like(b) for b in first.biases]
    for c, u in zip(coef, ordered):
        for i in range(len(out_w)):
            out_w[i] += c * u.weights.weights[i]
            out_b[i] += c * u.weights.biases[i]
    return WeightState(out_w, out_b)


def async_apply(global_weights: WeightState, update: DeviceUpdate, *,
                staleness_discount: float, base_mix: float = 1.0) -> WeightState:
    """Blend one (possibly stale) update into the global model.

    The mix coefficient is base_mix * staleness_discount ** staleness, so
    updates trained against older globals move the model less.
    """
    if not 0.0 < staleness_discount <= 1.0:
        raise ValueError("staleness_discount must lie in (0, 1]")
    if not 0.0 <= base_mix <= 1.0:
        raise ValueError("base_mix must lie in [0, 1]")
    lam = base_mix * staleness_discount ** update.staleness
    ws = [(1.0 - lam) * g + lam * w
          for g, w in zip(global_weights.weights, update.weights.weights)]
    bs = [(1.0 - lam) * g + lam * b
          for g, b in zip(global_weights.biases, update.weights.biases)]
    return WeightState(ws, bs)


def async_mix_coefficient(update: DeviceUpdate, *, staleness_discount: float,
                          base_mix: float = 1.0) -> float:
    return base_mix * staleness_discount ** update.staleness


# ---------------------------------------------------------------------------
# Convergence-bound calculator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BoundParams:
    """Inputs to the convergence-bound calculator.

    The objective is assumed smooth (constant `smoothness`) and strongly
    convex (constant `strong_convexity`); gradient noise is bounded by
    variance_bound_1/2. variance_scale stands in for the unspecified
    constant in front of the variance term (only relative comparisons are
    meaningful).
    """

    smoothness: float
    strong_convexity: float
    step_size: float
    variance_bound_1: float
    variance_bound_2: float
    rounds: int
    initial_gap: float
    variance_scale: float = 1.0

    def __post_init__(self):
        if self.smoothness <= 0 or self.strong_convexity <= 0:
            raise ValueError("smoothness and strong_convexity must be positive")
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if self.step_size >= 1.0 / self.smoothness:
            raise ValueError("step_size must be smaller than 1/smoothness")
        if self.variance_bound_1 < 0 or self.variance_bound_2 < 0:
            raise ValueError("variance bounds must be non-negative")
        if self.rounds < 0 or self.initial_gap < 0 or self.variance_scale < 0:
            raise ValueError("rounds, initial_gap, variance_scale must be non-negative")


def convergence_bound(params: BoundParams, alpha: float) -> tuple[float, float]:
    """Contraction factor and optimality-gap bound after `rounds` updates.

    beta = 1 - alpha + alpha * (1 - step_size * strong_convexity); the bound
    is beta^T * initial_gap + (1 - beta^T) * variance_scale * (V1 + V2).
    alpha is the effective aggregation weight of the partially trained
    model: alpha -> 0 freezes the model (beta -> 1) and kills the variance
    term, alpha -> 1 contracts fastest but pays the full variance term.
    """
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    beta = 1.0 - alpha + alpha * (1.0 - params.step_size * params.strong_convexity)
    decay = beta ** params.rounds
    bound = decay * params.initial_gap + (1.0 - decay) * params.variance_scale * (
        params.variance_bound_1 + params.variance_bound_2)
    return beta, bound
