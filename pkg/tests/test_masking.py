import numpy as np
import pytest

from elfish.errors import InfeasibleBudgetError
from elfish.masking import (ContributionMap, MaskBudget, SoftTrainPolicy,
                            full_budget, neuron_contributions, select_mask,
                            soft_train_cycle, solve_mask_budget)
from elfish.nn import (DENSE, LayerSpec, ModelSpec, NeuronMask, backward,
                       forward, init_weights, lenet_spec, sgd_step,
                       alexnet_cifar10, zeros_weights)
from elfish.profiling import DeviceProfile, TrainConfig, model_time, neuron_time


def two_layer_44():
    """Two dense layers of 4 neurons with full per-neuron times of 1 and 2."""
    spec = ModelSpec((LayerSpec(DENSE, 4, 1, 1, 1, 1, 2),
                      LayerSpec(DENSE, 4, 1, 1, 1, 1, 4)), 4)
    # per-neuron workload: layer0 = 2*1*1*2 = 4, layer1 = 2*1*1*4 = 8
    cfg = TrainConfig(minibatch_size=1, minibatch_count=1)
    dev = DeviceProfile(
        compute_bandwidth=4.0, mem_bandwidth=1e12, secondary_mem_bandwidth=1e12,
        main_memory_capacity=1e12, workload_capacity=1e12, time_budget=9.0,
        fixed_overhead=1e-9)
    return spec, dev, cfg


def loose_device(time_budget=1e9):
    return DeviceProfile(
        compute_bandwidth=1e9, mem_bandwidth=1e12, secondary_mem_bandwidth=1e12,
        main_memory_capacity=1e15, workload_capacity=1e12, time_budget=time_budget,
        fixed_overhead=1e-9)


# ---------------------------------------------------------------------------
# Budget solver
# ---------------------------------------------------------------------------

def test_full_model_within_budgets_returns_zero_fraction():
    spec = lenet_spec()
    cfg = TrainConfig(minibatch_size=32, minibatch_count=10)
    budget = solve_mask_budget(spec, loose_device(), cfg)
    assert budget.global_fraction == 0.0
    assert budget.keep_counts == spec.neuron_counts
    assert budget.is_full()


def test_solver_matches_brute_force_on_two_layer_model():
    """Per-neuron times (1, 2), budget 9, full-model time 12: brute force over
    the 0.01 grid gives fraction 0.25 with keep counts (3, 3)."""
    spec, dev, cfg = two_layer_44()
    times = [neuron_time(l, dev, cfg) for l in spec.layers]
    assert times == pytest.approx([1.0, 2.0], rel=1e-9)
    full = model_time(spec, (4, 4), dev, cfg)
    assert full.time == pytest.approx(12.0, rel=1e-9)

    policy = SoftTrainPolicy(layer_weighting="uniform")
    budget = solve_mask_budget(spec, dev, cfg, policy)
    assert budget.global_fraction == pytest.approx(0.25)
    assert budget.keep_counts == (3, 3)
    # the grid point below masks nothing (floor(0.24 * 4) = 0), so it stays
    # at the infeasible full model
    below, _ = _keep_at(spec, policy, 0.24)
    assert below == (4, 4)


def _keep_at(spec, policy, fraction):
    from elfish.masking import _keep_counts_at, _layer_weights
    weights = tuple(1.0 for _ in spec.layers)
    return _keep_counts_at(spec, weights, fraction, policy.mask_cap)


def test_solver_output_feasible_and_grid_minimal():
    spec = lenet_spec(image_size=8, conv_channels=(8, 16), dense_units=32)
    cfg = TrainConfig(minibatch_size=32, minibatch_count=40)
    full = model_time(spec, spec.neuron_counts, loose_device(), cfg)
    dev = DeviceProfile(
        compute_bandwidth=1e9, mem_bandwidth=1e12, secondary_mem_bandwidth=1e12,
        main_memory_capacity=0.6 * full.memory, workload_capacity=1e12,
        time_budget=0.5 * full.time, fixed_overhead=1e-9)
    policy = SoftTrainPolicy()
    budget = solve_mask_budget(spec, dev, cfg, policy)
    assert budget.global_fraction > 0.0
    est = model_time(spec, budget.keep_counts, dev, cfg)
    assert est.time <= dev.time_budget
    assert est.memory <= dev.main_memory_capacity
    assert est.workload <= dev.workload_budget

    from elfish.masking import _keep_counts_at
    prev_keep, _ = _keep_counts_at(spec, budget.layer_weights,
                                   budget.global_fraction - policy.search_step,
                                   policy.mask_cap)
    prev_est = model_time(spec, prev_keep, dev, cfg)
    assert (prev_est.time > dev.time_budget
            or prev_est.memory > dev.main_memory_capacity
            or prev_est.workload > dev.workload_budget)


def test_straggler_tier_two_fits_inside_capable_cycle():
    """A severe straggler profile on the AlexNet-style model: memory and
    workload budgets both bind, yet the solved sub-model meets the capable
    16-minute cycle."""
    spec = alexnet_cifar10()
    cfg = TrainConfig(minibatch_size=128, minibatch_count=391)
    capable_seconds = 16 * 60.0
    full = model_time(spec, spec.neuron_counts, loose_device(), cfg)
    # full cycle of 23.8 minutes on this straggler
    compute = full.workload / (23.8 * 60 - 2.0)
    dev = DeviceProfile(
        compute_bandwidth=compute, mem_bandwidth=25e9, secondary_mem_bandwidth=25e9,
        main_memory_capacity=150e6, workload_capacity=6e9,
        time_budget=capable_seconds, fixed_overhead=2.0)
    budget = solve_mask_budget(spec, dev, cfg)
    est = model_time(spec, budget.keep_counts, dev, cfg)
    assert est.time <= capable_seconds
    assert est.memory <= 150e6
    assert est.workload <= 6e9 * capable_seconds
    assert 0.0 < budget.kept_fraction < 1.0


def test_solver_raises_when_even_skeleton_violates():
    spec = lenet_spec()
    cfg = TrainConfig(minibatch_size=32, minibatch_count=40)
    dev = DeviceProfile(
        compute_bandwidth=1.0, mem_bandwidth=1e12, secondary_mem_bandwidth=1e12,
        main_memory_capacity=1e15, workload_capacity=1e12, time_budget=1e-6,
        fixed_overhead=1e-9)
    with pytest.raises(InfeasibleBudgetError, match="infeasible"):
        solve_mask_budget(spec, dev, cfg)


def test_time_weighting_masks_expensive_layers_harder():
    spec = lenet_spec(image_size=16, conv_channels=(8, 16), dense_units=32)
    cfg = TrainConfig(minibatch_size=32, minibatch_count=40)
    full = model_time(spec, spec.neuron_counts, loose_device(), cfg)
    dev = DeviceProfile(
        compute_bandwidth=1e9, mem_bandwidth=1e12, secondary_mem_bandwidth=1e12,
        main_memory_capacity=1e15, workload_capacity=1e12,
        time_budget=0.4 * full.time, fixed_overhead=1e-9)
    budget = solve_mask_budget(spec, dev, cfg, SoftTrainPolicy(layer_weighting="time"))
    times = [n * neuron_time(l, dev, cfg) for n, l in zip(spec.neuron_counts, spec.layers)]
    costly = int(np.argmax(times))
    cheap = int(np.argmin(times))
    assert budget.masked_fractions[costly] >= budget.masked_fractions[cheap]


# ---------------------------------------------------------------------------
# Contributions
# ---------------------------------------------------------------------------

def test_contributions_zero_when_unchanged():
    spec = lenet_spec()
    w = init_weights(spec, np.random.default_rng(0))
    contrib = neuron_contributions(w, w)
    assert all(np.all(u == 0.0) for u in contrib.values)


def test_contribution_l2_arithmetic():
    spec = ModelSpec((LayerSpec(DENSE, 2, 1, 1, 1, 1, 2),), 2)
    prev = zeros_weights(spec)
    cur = zeros_weights(spec)
    cur.weights[0][0] = (0.3, 0.4)
    contrib = neuron_contributions(prev, cur)
    assert contrib.values[0][0] == pytest.approx(0.5, rel=1e-12)
    assert contrib.values[0][1] == 0.0


def test_contribution_scaling_preserves_ranking():
    spec = lenet_spec()
    rng = np.random.default_rng(1)
    prev = init_weights(spec, rng)
    cur = init_weights(spec, rng)
    base = neuron_contributions(prev, cur)

    scaled = prev.copy()
    c = 3.0
    for i in range(len(prev.weights)):
        scaled.weights[i] = prev.weights[i] + c * (cur.weights[i] - prev.weights[i])
        scaled.biases[i] = prev.biases[i] + c * (cur.biases[i] - prev.biases[i])
    after = neuron_contributions(prev, scaled)
    for u0, u1 in zip(base.values, after.values):
        assert u1 == pytest.approx(c * u0, rel=1e-9)
        assert np.array_equal(np.argsort(u0), np.argsort(u1))


# ---------------------------------------------------------------------------
# Mask selection
# ---------------------------------------------------------------------------

def one_layer_budget(n, keep):
    return MaskBudget(0.0, (0.0,), (keep,), (n,), (1.0,))


def test_keep_all_top_is_fully_deterministic():
    budget = one_layer_budget(8, 5)
    contrib = ContributionMap((np.array([5.0, 1.0, 4.0, 2.0, 8.0, 0.5, 3.0, 6.0]),))
    policy = SoftTrainPolicy(keep_top_fraction=1.0)
    m1 = select_mask(budget, contrib, policy, np.random.default_rng(0))
    m2 = select_mask(budget, contrib, policy, np.random.default_rng(99))
    assert m1 == m2
    # the five highest contributions are indices 4, 7, 0, 2, 6
    assert m1.masked[0] == (1, 3, 5)


def test_ties_break_toward_lower_index():
    budget = one_layer_budget(4, 2)
    contrib = ContributionMap((np.array([1.0, 1.0, 1.0, 1.0]),))
    mask = select_mask(budget, contrib, SoftTrainPolicy(keep_top_fraction=1.0),
                       np.random.default_rng(0))
    assert mask.masked[0] == (2, 3)


def test_random_branch_has_exact_cardinality_and_varies_with_seed():
    budget = one_layer_budget(4, 3)
    contrib = ContributionMap((np.zeros(4),))
    policy = SoftTrainPolicy(keep_top_fraction=0.0)
    masks = {select_mask(budget, contrib, policy, np.random.default_rng(s)).masked[0]
             for s in range(6)}
    assert all(len(m) == 1 for m in masks)
    assert len(masks) > 1


def test_cold_start_samples_uniformly():
    budget = one_layer_budget(6, 3)
    policy = SoftTrainPolicy()
    m = select_mask(budget, None, policy, np.random.default_rng(0))
    assert len(m.masked[0]) == 3


def test_top_contributors_always_survive():
    rng = np.random.default_rng(2)
    budget = one_layer_budget(32, 16)
    policy = SoftTrainPolicy(keep_top_fraction=0.5)
    u = rng.random(32)
    for _ in range(25):
        contrib = ContributionMap((u,))
        mask = select_mask(budget, contrib, policy, rng)
        kept = sorted(set(range(32)) - set(mask.masked[0]))
        top8 = np.argsort(-u, kind="stable")[:8]
        assert set(top8).issubset(kept)
        # next cycle: kept neurons trained (fresh positive magnitude),
        # masked neurons recovered (zero update)
        new_u = np.zeros(32)
        new_u[kept] = rng.random(len(kept)) + 1e-9
        u = new_u


def test_rotation_covers_every_neuron():
    policy = SoftTrainPolicy(keep_top_fraction=0.5)
    for seed in range(10):
        rng = np.random.default_rng(seed)
        budget = one_layer_budget(32, 16)
        seen = set()
        contrib = None
        for _ in range(20):
            mask = select_mask(budget, contrib, policy, rng)
            kept = sorted(set(range(32)) - set(mask.masked[0]))
            seen.update(kept)
            u = np.zeros(32)
            u[kept] = rng.random(len(kept)) + 1e-9
            contrib = ContributionMap((u,))
        assert seen == set(range(32))


# ---------------------------------------------------------------------------
# The soft-training cycle
# ---------------------------------------------------------------------------

def make_shard(spec, n, seed):
    rng = np.random.default_rng(seed)
    first = spec.layers[0]
    x = rng.standard_normal((n, first.input_channels, first.input_rows, first.input_cols))
    y = rng.integers(0, spec.class_count, n)
    return x, y


def test_unmasked_cycle_equals_plain_local_training():
    spec = lenet_spec()
    global_w = init_weights(spec, np.random.default_rng(3))
    shard = make_shard(spec, 48, seed=4)
    policy = SoftTrainPolicy()
    res = soft_train_cycle(spec, global_w, shard, full_budget(spec), None, policy,
                           np.random.default_rng(7), lr=0.05, batch_size=16)
    assert res.mask.is_empty()

    # replay the same minibatch schedule by hand
    rng = np.random.default_rng(7)
    w = global_w.copy()
    x, y = shard
    perm = rng.permutation(len(x))
    for start in range(0, len(x), 16):
        take = perm[start:start + 16]
        _, cache = forward(spec, w, None, (x[take], y[take]))
        w = sgd_step(w, backward(spec, w, None, cache), 0.05)
    for a, b in zip(res.weights.weights, w.weights):
        assert np.array_equal(a, b)


def test_masked_neurons_keep_global_values_bit_for_bit():
    spec = lenet_spec()
    global_w = init_weights(spec, np.random.default_rng(5))
    shard = make_shard(spec, 64, seed=6)
    sizes = spec.neuron_counts
    budget = MaskBudget(0.5, (0.5,) * 4, tuple(max(1, n // 2) for n in sizes),
                        sizes, (1.0,) * 4)
    res = soft_train_cycle(spec, global_w, shard, budget, None, SoftTrainPolicy(),
                           np.random.default_rng(8), lr=0.05, batch_size=16)
    assert not res.mask.is_empty()
    for i, masked in enumerate(res.mask.masked):
        idx = list(masked)
        assert np.array_equal(res.weights.weights[i][idx], global_w.weights[i][idx])
        assert np.array_equal(res.weights.biases[i][idx], global_w.biases[i][idx])
        kept = sorted(set(range(sizes[i])) - set(masked))
        assert not np.array_equal(res.weights.weights[i][kept], global_w.weights[i][kept])
        # masked neurons report zero update magnitude; most kept ones moved
        # (an occasional dead unit legitimately stays put)
        assert np.all(res.contributions.values[i][idx] == 0.0)
        moved = res.contributions.values[i][kept] > 0.0
        assert moved.mean() > 0.5


def test_cycle_is_deterministic_given_seed():
    spec = lenet_spec()
    global_w = init_weights(spec, np.random.default_rng(9))
    shard = make_shard(spec, 32, seed=10)
    sizes = spec.neuron_counts
    budget = MaskBudget(0.3, (0.3,) * 4, tuple(max(1, int(0.7 * n)) for n in sizes),
                        sizes, (1.0,) * 4)
    a = soft_train_cycle(spec, global_w, shard, budget, None, SoftTrainPolicy(),
                         np.random.default_rng(11), lr=0.05, batch_size=8)
    b = soft_train_cycle(spec, global_w, shard, budget, None, SoftTrainPolicy(),
                         np.random.default_rng(11), lr=0.05, batch_size=8)
    assert a.mask == b.mask
    for wa, wb in zip(a.weights.weights, b.weights.weights):
        assert np.array_equal(wa, wb)
    assert a.mean_loss == b.mean_loss


def test_straggler_cycle_fits_budget_while_full_model_does_not():
    spec = lenet_spec()
    cfg = TrainConfig(minibatch_size=16, minibatch_count=20)
    full = model_time(spec, spec.neuron_counts, loose_device(), cfg)
    dev = DeviceProfile(
        compute_bandwidth=1e9, mem_bandwidth=1e12, secondary_mem_bandwidth=1e12,
        main_memory_capacity=1e15, workload_capacity=1e12,
        time_budget=0.55 * full.time, fixed_overhead=1e-9)
    assert model_time(spec, spec.neuron_counts, dev, cfg).time > dev.time_budget
    budget = solve_mask_budget(spec, dev, cfg)
    assert model_time(spec, budget.keep_counts, dev, cfg).time <= dev.time_budget
