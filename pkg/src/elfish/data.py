"""Desk-scale datasets and federated data partitioning.

Two dataset sources: a synthetic image-shaped Gaussian-template set whose
difficulty is controlled by template separation, sample noise, and label
noise, and the bundled scikit-learn 8x8 handwritten digits. Partitioning is
either IID (uniform random disjoint split) or label-skewed shards (sort by
label, cut into 2 * n_devices shards, deal two shards per device).
"""
from __future__ import annotations

import numpy as np


def _as_generator(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def make_blob_dataset(samples: int, classes: int = 10, image_size: int = 8,
                      channels: int = 1, separation: float = 3.0,
                      noise: float = 1.0, label_noise: float = 0.0,
                      seed=0) -> tuple[np.ndarray, np.ndarray]:
    """Class-balanced synthetic images around random class templates.

    Each class has a fixed random template scaled to norm `separation`;
    samples are the template plus isotropic Gaussian noise, and a
    `label_noise` fraction of labels is resampled uniformly.
    """
    if samples < classes:
        raise ValueError("need at least one sample per class")
    rng = _as_generator(seed)
    dim = channels * image_size * image_size
    templates = rng.standard_normal((classes, dim))
    templates *= separation / np.linalg.norm(templates, axis=1, keepdims=True)

    y = np.tile(np.arange(classes), samples // classes + 1)[:samples]
    y = y[rng.permutation(samples)]
    x = templates[y] + noise * rng.standard_normal((samples, dim))
    if label_noise > 0.0:
        flip = rng.random(samples) < label_noise
        y = y.copy()
        y[flip] = rng.integers(0, classes, size=int(flip.sum()))
    return x.reshape(samples, channels, image_size, image_size), y.astype(int)


def load_digits_dataset(samples: int | None = None,
                        seed=0) -> tuple[np.ndarray, np.ndarray]:
    """scikit-learn 8x8 handwritten digits, shuffled, values scaled to [0, 1]."""
    from sklearn.datasets import load_digits

    digits = load_digits()
    x = (digits.images / 16.0).reshape(-1, 1, 8, 8)
    y = digits.target.astype(int)
    rng = _as_generator(seed)
    order = rng.permutation(len(y))
    x, y = x[order], y[order]
    if samples is not None:
        if samples > len(y):
            raise ValueError(f"digits has only {len(y)} samples, requested {samples}")
        x, y = x[:samples], y[:samples]
    return x, y


def train_test_split(x: np.ndarray, y: np.ndarray, test_fraction: float,
                     seed=0) -> tuple[tuple[np.ndarray, np.ndarray],
                                      tuple[np.ndarray, np.ndarray]]:
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0, 1)")
    rng = _as_generator(seed)
    order = rng.permutation(len(y))
    n_test = max(1, int(round(test_fraction * len(y))))
    test, train = order[:n_test], order[n_test:]
    return (x[train], y[train]), (x[test], y[test])


def partition_data(dataset: tuple[np.ndarray, np.ndarray], n_devices: int,
                   mode: str, seed) -> list[np.ndarray]:
    """Split a dataset into per-device index arrays.

    "iid" permutes and deals near-equal slices. "noniid_shards" sorts by
    label, cuts the order into 2 * n_devices contiguous shards, and deals
    two randomly chosen shards to each device, giving every device a small
    set of labels. Deterministic for a given seed.
    """
    x, y = dataset
    n = len(y)
    if n_devices < 1:
        raise ValueError("need at least one device")
    rng = _as_generator(seed)
    if mode == "iid":
        if n < n_devices:
            raise ValueError(f"too few samples ({n}) for {n_devices} devices")
        order = rng.permutation(n)
        return [np.sort(part) for part in np.array_split(order, n_devices)]
    if mode == "noniid_shards":
        if n < 2 * n_devices:
            raise ValueError(f"too few samples ({n}) for {2 * n_devices} label shards")
        by_label = np.argsort(y, kind="stable")
        shards = np.array_split(by_label, 2 * n_devices)
        deal = rng.permutation(2 * n_devices)
        return [np.sort(np.concatenate([shards[deal[2 * d]], shards[deal[2 * d + 1]]]))
                for d in range(n_devices)]
    raise ValueError(f"unknown partition mode {mode!r}")
