"""Minimal trainable neural network (conv + dense) with per-neuron masking.

A "neuron" is the smallest structural unit: one convolutional filter
(output channel) or one dense unit. Masking a neuron forces its output
channel to exactly zero for the duration of a training cycle, which in turn
makes every gradient of that neuron's parameters exactly zero, so masked
parameters are frozen rather than destroyed.

Conventions:
  - all math is float64; inputs are (batch, channels, rows, cols) arrays
  - conv layers run stride 1 with "same" zero padding, so a conv layer's
    declared input dims equal its output dims
  - a 2x2 / stride-2 max pool is inserted automatically between two layers
    whenever the next layer declares input dims equal to the floor-halved
    dims of the current output; equal dims mean no pooling
  - dense layers flatten their (channels, rows, cols) input volume in
    C-order, so a dense layer's flattened input length is
    input_channels * input_rows * input_cols
  - hidden layers use ReLU; the final layer must be dense and emits logits
    scored with mean softmax cross-entropy

All operations are pure functions on explicit state and are deterministic
given (weights, batch, mask).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import MaskError, NumericError, SpecError

CONV = "conv"
DENSE = "dense"


# ---------------------------------------------------------------------------
# Specs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LayerSpec:
    """One layer: its neuron count plus the geometry of its input.

    For dense layers the kernel is fixed at 1x1 and (input_rows, input_cols)
    describe the spatial footprint of the incoming feature map (1x1 when the
    previous layer is dense), so the flattened input length is always
    input_channels * input_rows * input_cols.
    """

    kind: str
    neurons: int
    kernel_rows: int = 1
    kernel_cols: int = 1
    input_rows: int = 1
    input_cols: int = 1
    input_channels: int = 1

    def __post_init__(self):
        if self.kind not in (CONV, DENSE):
            raise SpecError(f"unknown layer kind {self.kind!r}")
        for name in ("neurons", "kernel_rows", "kernel_cols",
                     "input_rows", "input_cols", "input_channels"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise SpecError(f"layer field {name} must be a positive integer, got {value!r}")
        if self.kind == DENSE and (self.kernel_rows != 1 or self.kernel_cols != 1):
            raise SpecError("dense layers must declare a 1x1 kernel")

    @property
    def fan_in(self) -> int:
        if self.kind == CONV:
            return self.input_channels * self.kernel_rows * self.kernel_cols
        return self.input_channels * self.input_rows * self.input_cols


@dataclass(frozen=True)
class ModelSpec:
    """An ordered stack of layers plus the number of output classes."""

    layers: tuple[LayerSpec, ...]
    class_count: int

    def __post_init__(self):
        if not self.layers:
            raise SpecError("model must have at least one layer")
        object.__setattr__(self, "layers", tuple(self.layers))
        if self.class_count < 2:
            raise SpecError("class_count must be >= 2")
        for i in range(1, len(self.layers)):
            if self.layers[i].input_channels != self.layers[i - 1].neurons:
                raise SpecError(
                    f"layer {i} declares {self.layers[i].input_channels} input channels "
                    f"but layer {i - 1} has {self.layers[i - 1].neurons} neurons")
        if self.layers[-1].neurons != self.class_count:
            raise SpecError("final layer's neuron count must equal class_count")

    @property
    def neuron_counts(self) -> tuple[int, ...]:
        return tuple(layer.neurons for layer in self.layers)

    @property
    def total_neurons(self) -> int:
        return sum(self.neuron_counts)

    def to_dict(self) -> dict:
        return {
            "class_count": self.class_count,
            "layers": [
                {
                    "kind": l.kind,
                    "neurons": l.neurons,
                    "kernel_rows": l.kernel_rows,
                    "kernel_cols": l.kernel_cols,
                    "input_rows": l.input_rows,
                    "input_cols": l.input_cols,
                    "input_channels": l.input_channels,
                }
                for l in self.layers
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        try:
            layers = tuple(LayerSpec(**entry) for entry in d["layers"])
            return cls(layers=layers, class_count=int(d["class_count"]))
        except (KeyError, TypeError) as exc:
            raise SpecError(f"malformed model spec: {exc}") from exc


def save_spec(spec: ModelSpec, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(spec.to_dict(), fh, indent=2)


def load_spec(path) -> ModelSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return ModelSpec.from_dict(json.load(fh))


def pooling_plan(spec: ModelSpec) -> tuple[bool, ...]:
    """Derive where 2x2 max pools sit and validate the geometry chain.

    pools[i] is True when layer i's activation is pooled before feeding
    layer i+1. Raises SpecError when consecutive layers declare dims that
    are neither equal nor exactly floor-halved.
    """
    layers = spec.layers
    pools = [False] * len(layers)
    out_c = layers[0].input_channels
    out_r, out_s = layers[0].input_rows, layers[0].input_cols
    for i, layer in enumerate(layers):
        if layer.input_channels != out_c:
            raise SpecError(f"layer {i}: expects {layer.input_channels} channels, receives {out_c}")
        declared = (layer.input_rows, layer.input_cols)
        if declared == (out_r, out_s):
            pass
        elif (i > 0 and layers[i - 1].kind == CONV
              and declared == (out_r // 2, out_s // 2)
              and out_r // 2 >= 1 and out_s // 2 >= 1):
            pools[i - 1] = True
        else:
            raise SpecError(
                f"layer {i}: declared {declared} input dims chain from neither "
                f"({out_r}, {out_s}) nor its floor-halved pool output")
        if layer.kind == CONV:
            out_c, out_r, out_s = layer.neurons, layer.input_rows, layer.input_cols
        else:
            out_c, out_r, out_s = layer.neurons, 1, 1
    if layers[-1].kind != DENSE:
        raise SpecError("final layer must be dense (class logits)")
    return tuple(pools)


# ---------------------------------------------------------------------------
# Weights and masks
# ---------------------------------------------------------------------------

@dataclass
class WeightState:
    """Per-layer weight tensors and bias vectors.

    Conv weights have shape (neurons, input_channels, kernel_rows,
    kernel_cols); dense weights have shape (neurons, flattened_input).
    Axis 0 always indexes neurons, which is what masking and contribution
    tracking rely on.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def copy(self) -> "WeightState":
        return WeightState([w.copy() for w in self.weights],
                           [b.copy() for b in self.biases])

    def all_finite(self) -> bool:
        return (all(np.all(np.isfinite(w)) for w in self.weights)
                and all(np.all(np.isfinite(b)) for b in self.biases))

    @property
    def parameter_count(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)


def weight_shapes(spec: ModelSpec) -> list[tuple[tuple[int, ...], tuple[int, ...]]]:
    shapes = []
    for layer in spec.layers:
        if layer.kind == CONV:
            w = (layer.neurons, layer.input_channels, layer.kernel_rows, layer.kernel_cols)
        else:
            w = (layer.neurons, layer.fan_in)
        shapes.append((w, (layer.neurons,)))
    return shapes


def init_weights(spec: ModelSpec, rng: np.random.Generator) -> WeightState:
    """He-initialized weights, zero biases."""
    pooling_plan(spec)
    ws, bs = [], []
    for layer, (wshape, bshape) in zip(spec.layers, weight_shapes(spec)):
        std = math.sqrt(2.0 / layer.fan_in)
        ws.append(rng.normal(0.0, std, size=wshape))
        bs.append(np.zeros(bshape))
    return WeightState(ws, bs)


def zeros_weights(spec: ModelSpec) -> WeightState:
    shapes = weight_shapes(spec)
    return WeightState([np.zeros(w) for w, _ in shapes], [np.zeros(b) for _, b in shapes])


def check_weights(spec: ModelSpec, state: WeightState) -> None:
    shapes = weight_shapes(spec)
    if len(state.weights) != len(shapes) or len(state.biases) != len(shapes):
        raise SpecError("weight state has wrong layer count for spec")
    for i, (wshape, bshape) in enumerate(shapes):
        if state.weights[i].shape != wshape or state.biases[i].shape != bshape:
            raise SpecError(
                f"layer {i}: weight shapes {state.weights[i].shape}/{state.biases[i].shape} "
                f"do not match spec {wshape}/{bshape}")
    if not state.all_finite():
        raise NumericError("weight state contains non-finite values")


def save_weights(state: WeightState, path) -> None:
    """Checkpoint as .npz: arrays w0..wN / b0..bN plus a shape header."""
    arrays = {}
    header = []
    for i, (w, b) in enumerate(zip(state.weights, state.biases)):
        arrays[f"w{i}"] = w
        arrays[f"b{i}"] = b
        header.append({"weight": list(w.shape), "bias": list(b.shape)})
    arrays["header"] = np.frombuffer(
        json.dumps({"layers": header}).encode("utf-8"), dtype=np.uint8)
    np.savez(path, **arrays)


def load_weights(path, spec: ModelSpec | None = None) -> WeightState:
    with np.load(path) as data:
        header = json.loads(bytes(data["header"]).decode("utf-8"))
        n = len(header["layers"])
        state = WeightState([data[f"w{i}"].astype(float) for i in range(n)],
                            [data[f"b{i}"].astype(float) for i in range(n)])
    if spec is not None:
        check_weights(spec, state)
    return state


@dataclass(frozen=True)
class NeuronMask:
    """Per-layer sets of neuron indices excluded from one training cycle."""

    masked: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "masked",
                           tuple(tuple(sorted(set(int(i) for i in idx))) for idx in self.masked))

    @property
    def total_masked(self) -> int:
        return sum(len(idx) for idx in self.masked)

    def masked_counts(self) -> tuple[int, ...]:
        return tuple(len(idx) for idx in self.masked)

    def is_empty(self) -> bool:
        return self.total_masked == 0


def empty_mask(spec: ModelSpec) -> NeuronMask:
    return NeuronMask(tuple(() for _ in spec.layers))


def check_mask(spec: ModelSpec, mask: NeuronMask) -> None:
    if len(mask.masked) != len(spec.layers):
        raise MaskError("mask layer count does not match spec")
    for i, (layer, idx) in enumerate(zip(spec.layers, mask.masked)):
        if idx and (idx[0] < 0 or idx[-1] >= layer.neurons):
            raise MaskError(f"layer {i}: mask indices out of range [0, {layer.neurons})")
        if len(idx) > layer.neurons - 1:
            raise MaskError(f"layer {i}: masking all {layer.neurons} neurons is not allowed")


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------

def _same_padding(k: int) -> tuple[int, int]:
    return (k - 1) // 2, k - 1 - (k - 1) // 2


def _conv_forward(x: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    r, s = w.shape[2], w.shape[3]
    pt, pb = _same_padding(r)
    pl, pr = _same_padding(s)
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (r, s), axis=(2, 3))
    # win: (m, c, H, W, r, s); contract over (c, r, s)
    z = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))  # (m, H, W, n)
    return np.ascontiguousarray(np.moveaxis(z, 3, 1)), xp


def _conv_backward(dz: np.ndarray, xp: np.ndarray, w: np.ndarray,
                   x_shape: tuple[int, ...]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    m, c, h, ww = x_shape
    r, s = w.shape[2], w.shape[3]
    win = np.lib.stride_tricks.sliding_window_view(xp, (r, s), axis=(2, 3))
    # dz: (m, n, H, W); win: (m, c, H, W, r, s)
    dw = np.tensordot(dz, win, axes=([0, 2, 3], [0, 2, 3]))  # (n, c, r, s)
    db = dz.sum(axis=(0, 2, 3))
    dxp = np.zeros_like(xp)
    for dr in range(r):
        for ds in range(s):
            contrib = np.tensordot(dz, w[:, :, dr, ds], axes=([1], [0]))  # (m, H, W, c)
            dxp[:, :, dr:dr + h, ds:ds + ww] += np.moveaxis(contrib, 3, 1)
    pt, _ = _same_padding(r)
    pl, _ = _same_padding(s)
    dx = dxp[:, :, pt:pt + h, pl:pl + ww]
    return dw, db, dx


def _pool_forward(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    m, c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    t = x[:, :, :h2 * 2, :w2 * 2].reshape(m, c, h2, 2, w2, 2)
    t = t.transpose(0, 1, 2, 4, 3, 5).reshape(m, c, h2, w2, 4)
    idx = t.argmax(axis=4)  # first max wins ties, deterministic
    out = np.take_along_axis(t, idx[..., None], axis=4)[..., 0]
    return out, idx


def _pool_backward(dout: np.ndarray, idx: np.ndarray, x_shape: tuple[int, ...]) -> np.ndarray:
    m, c, h, w = x_shape
    h2, w2 = h // 2, w // 2
    g = np.zeros((m, c, h2, w2, 4))
    np.put_along_axis(g, idx[..., None], dout[..., None], axis=4)
    g = g.reshape(m, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    dx = np.zeros(x_shape)
    dx[:, :, :h2 * 2, :w2 * 2] = g.reshape(m, c, h2 * 2, w2 * 2)
    return dx


@dataclass
class ForwardCache:
    """Activation record produced by forward(), consumed by backward()."""

    spec: ModelSpec
    mask: NeuronMask
    inputs: list          # activation entering each layer
    feeds: list           # conv: padded input; dense: flattened input
    pre_acts: list        # pre-activation after mask zeroing
    pool_idx: list        # argmax indices for pooled layers, else None
    probs: np.ndarray
    labels: np.ndarray
    loss: float


def _check_batch(spec: ModelSpec, batch) -> tuple[np.ndarray, np.ndarray]:
    try:
        x, y = batch
    except (TypeError, ValueError) as exc:
        raise SpecError("batch must be an (inputs, labels) pair") from exc
    x = np.asarray(x, dtype=float)
    y = np.asarray(y)
    first = spec.layers[0]
    expected = (first.input_channels, first.input_rows, first.input_cols)
    if x.ndim != 4 or x.shape[1:] != expected:
        raise SpecError(f"batch inputs have shape {x.shape}, expected (m, {expected[0]}, "
                        f"{expected[1]}, {expected[2]})")
    if not np.all(np.isfinite(x)):
        raise NumericError("batch inputs contain non-finite values")
    if y.shape != (x.shape[0],):
        raise SpecError(f"labels have shape {y.shape}, expected ({x.shape[0]},)")
    if not np.issubdtype(y.dtype, np.integer):
        raise SpecError("labels must be integers")
    if x.shape[0] == 0:
        raise SpecError("batch is empty")
    if y.min() < 0 or y.max() >= spec.class_count:
        raise SpecError(f"labels must lie in [0, {spec.class_count})")
    return x, y


def forward(spec: ModelSpec, weights: WeightState, mask: NeuronMask | None,
            batch) -> tuple[float, ForwardCache]:
    """Masked forward pass; returns (mean cross-entropy loss, cache).

    Masked neurons produce exactly zero output (bias included), so they
    contribute nothing downstream.
    """
    x, y = _check_batch(spec, batch)
    check_weights(spec, weights)
    mask = empty_mask(spec) if mask is None else mask
    check_mask(spec, mask)
    pools = pooling_plan(spec)

    inputs, feeds, pre_acts, pool_idx = [], [], [], []
    last = len(spec.layers) - 1
    for i, layer in enumerate(spec.layers):
        inputs.append(x)
        w, b = weights.weights[i], weights.biases[i]
        if layer.kind == CONV:
            z, xp = _conv_forward(x, w)
            z += b[None, :, None, None]
            feeds.append(xp)
        else:
            flat = x.reshape(x.shape[0], -1)
            feeds.append(flat)
            z = flat @ w.T + b[None, :]
        idx = mask.masked[i]
        if idx:
            z[:, list(idx)] = 0.0
        pre_acts.append(z)
        a = z if i == last else np.maximum(z, 0.0)
        if pools[i]:
            a, pidx = _pool_forward(a)
            pool_idx.append(pidx)
        else:
            pool_idx.append(None)
        x = a

    logits = x
    zmax = logits.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(logits - zmax).sum(axis=1))
    loss = float(np.mean(lse - logits[np.arange(len(y)), y]))
    probs = np.exp(logits - zmax)
    probs /= probs.sum(axis=1, keepdims=True)
    cache = ForwardCache(spec, mask, inputs, feeds, pre_acts, pool_idx, probs, y, loss)
    return loss, cache


def predict(spec: ModelSpec, weights: WeightState, x: np.ndarray,
            mask: NeuronMask | None = None) -> np.ndarray:
    """Logits for a batch of inputs (no cache, no labels)."""
    dummy = np.zeros(np.asarray(x).shape[0], dtype=int)
    _, cache = forward(spec, weights, mask, (x, dummy))
    return cache.pre_acts[-1]


def backward(spec: ModelSpec, weights: WeightState, mask: NeuronMask | None,
             cache: ForwardCache) -> WeightState:
    """Gradients of the cached loss w.r.t. every parameter.

    Gradients of masked neurons (weights and bias) are exactly zero.
    """
    mask = empty_mask(spec) if mask is None else mask
    if cache.spec != spec or cache.mask != mask:
        raise SpecError("stale or mismatched forward cache for this spec/mask")
    check_weights(spec, weights)
    if len(cache.pre_acts) != len(spec.layers):
        raise SpecError("stale forward cache: wrong layer count")
    pools = pooling_plan(spec)

    m = len(cache.labels)
    grad = cache.probs.copy()
    grad[np.arange(m), cache.labels] -= 1.0
    grad /= m

    gws: list = [None] * len(spec.layers)
    gbs: list = [None] * len(spec.layers)
    last = len(spec.layers) - 1
    for i in range(last, -1, -1):
        layer = spec.layers[i]
        z = cache.pre_acts[i]
        if cache.inputs[i].shape[0] != m:
            raise SpecError("stale forward cache: batch size mismatch")
        if pools[i]:
            grad = _pool_backward(grad, cache.pool_idx[i], z.shape)
        dz = grad.copy() if i == last else grad * (z > 0.0)
        idx = mask.masked[i]
        if idx:
            dz[:, list(idx)] = 0.0
        if layer.kind == CONV:
            dw, db, dx = _conv_backward(dz, cache.feeds[i], weights.weights[i],
                                        cache.inputs[i].shape)
        else:
            flat = cache.feeds[i]
            dw = dz.T @ flat
            db = dz.sum(axis=0)
            dx = (dz @ weights.weights[i]).reshape(cache.inputs[i].shape)
        gws[i], gbs[i] = dw, db
        grad = dx
    return WeightState(gws, gbs)


def sgd_step(weights: WeightState, gradients: WeightState, lr: float) -> WeightState:
    """Plain SGD: w <- w - lr * g. Rejects non-finite gradients."""
    if not (lr > 0.0 and math.isfinite(lr)):
        raise ValueError(f"learning rate must be positive and finite, got {lr}")
    if len(weights.weights) != len(gradients.weights):
        raise SpecError("gradient layer count does not match weights")
    for i, (w, g) in enumerate(zip(weights.weights, gradients.weights)):
        if w.shape != g.shape:
            raise SpecError(f"layer {i}: gradient shape {g.shape} != weight shape {w.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite weight gradient in layer {i}; aborting update")
    for i, (b, g) in enumerate(zip(weights.biases, gradients.biases)):
        if b.shape != g.shape:
            raise SpecError(f"layer {i}: bias gradient shape mismatch")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite bias gradient in layer {i}; aborting update")
    return WeightState([w - lr * g for w, g in zip(weights.weights, gradients.weights)],
                       [b - lr * g for b, g in zip(weights.biases, gradients.biases)])


def gradient_check(spec: ModelSpec, weights: WeightState, batch, eps: float = 1e-5,
                   *, mask: NeuronMask | None = None, samples: int = 200,
                   seed: int = 0, gradients: WeightState | None = None) -> float:
    """Max relative error between analytic and central-difference gradients.

    Checks a random sample of parameter coordinates (all of them when the
    model has fewer than `samples`). `gradients` overrides the analytic
    gradients, which lets callers verify externally produced values.
    """
    if not (1e-8 <= eps <= 1e-3):
        raise ValueError("eps must lie in [1e-8, 1e-3]")
    loss, cache = forward(spec, weights, mask, batch)
    analytic = backward(spec, weights, mask, cache) if gradients is None else gradients

    tensors = []
    for i in range(len(spec.layers)):
        tensors.append((weights.weights[i], analytic.weights[i]))
        tensors.append((weights.biases[i], analytic.biases[i]))
    coords = [(t, j) for t, (arr, _) in enumerate(tensors) for j in range(arr.size)]
    rng = np.random.default_rng(seed)
    if len(coords) > samples:
        chosen = rng.choice(len(coords), size=samples, replace=False)
        coords = [coords[k] for k in chosen]

    worst = 0.0
    for t, j in coords:
        arr, ana_arr = tensors[t]
        orig = arr.flat[j]
        arr.flat[j] = orig + eps
        lp, _ = forward(spec, weights, mask, batch)
        arr.flat[j] = orig - eps
        lm, _ = forward(spec, weights, mask, batch)
        arr.flat[j] = orig
        numeric = (lp - lm) / (2.0 * eps)
        ana = ana_arr.flat[j]
        rel = abs(ana - numeric) / max(abs(ana), abs(numeric), 1e-12)
        worst = max(worst, rel)
    return worst


# ---------------------------------------------------------------------------
# Model zoo
# ---------------------------------------------------------------------------

def lenet_spec(image_size: int = 8, input_channels: int = 1,
               conv_channels: Sequence[int] = (8, 16), dense_units: int = 32,
               classes: int = 10) -> ModelSpec:
    """Small 2-conv / 2-dense stack for desk-scale experiments."""
    c1, c2 = conv_channels
    half, quarter = image_size // 2, image_size // 4
    if quarter < 1:
        raise SpecError("image_size must be >= 4")
    layers = (
        LayerSpec(CONV, c1, 3, 3, image_size, image_size, input_channels),
        LayerSpec(CONV, c2, 3, 3, half, half, c1),
        LayerSpec(DENSE, dense_units, 1, 1, quarter, quarter, c2),
        LayerSpec(DENSE, classes, 1, 1, 1, 1, dense_units),
    )
    return ModelSpec(layers, classes)


def vgg13_cifar10(classes: int = 10) -> ModelSpec:
    """Standard 13-layer VGG configuration adapted to 32x32x3 inputs.

    Ten 3x3 conv layers in five width stages (64, 128, 256, 512, 512), a
    2x2 max pool after each stage, then dense 4096 / 4096 / classes. The
    final conv stage ends at 1x1, so the first dense layer sees 512 inputs.
    """
    stages = ((64, 32), (128, 16), (256, 8), (512, 4), (512, 2))
    layers = []
    prev = 3
    for width, size in stages:
        layers.append(LayerSpec(CONV, width, 3, 3, size, size, prev))
        layers.append(LayerSpec(CONV, width, 3, 3, size, size, width))
        prev = width
    layers.append(LayerSpec(DENSE, 4096, 1, 1, 1, 1, prev))
    layers.append(LayerSpec(DENSE, 4096, 1, 1, 1, 1, 4096))
    layers.append(LayerSpec(DENSE, classes, 1, 1, 1, 1, 4096))
    return ModelSpec(tuple(layers), classes)


def alexnet_cifar10(classes: int = 10) -> ModelSpec:
    """AlexNet-style stack adapted to 32x32x3 inputs (3x3 kernels)."""
    layers = (
        LayerSpec(CONV, 64, 3, 3, 32, 32, 3),
        LayerSpec(CONV, 192, 3, 3, 16, 16, 64),
        LayerSpec(CONV, 384, 3, 3, 8, 8, 192),
        LayerSpec(CONV, 256, 3, 3, 8, 8, 384),
        LayerSpec(CONV, 256, 3, 3, 8, 8, 256),
        LayerSpec(DENSE, 4096, 1, 1, 4, 4, 256),
        LayerSpec(DENSE, 4096, 1, 1, 1, 1, 4096),
        LayerSpec(DENSE, classes, 1, 1, 1, 1, 4096),
    )
    return ModelSpec(layers, classes)


MODEL_ZOO = {
    "lenet": lenet_spec,
    "vgg13_cifar10": vgg13_cifar10,
    "alexnet_cifar10": alexnet_cifar10,
}


def model_from_config(config: dict) -> ModelSpec:
    """Build a ModelSpec from {"name": ..., <kwargs>} or {"layers": [...]}."""
    if "layers" in config:
        return ModelSpec.from_dict(config)
    name = config.get("name")
    if name not in MODEL_ZOO:
        raise SpecError(f"unknown model name {name!r}; known: {sorted(MODEL_ZOO)}")
    kwargs = {k: v for k, v in config.items() if k != "name"}
    return MODEL_ZOO[name](**kwargs)
