"""Resource-aware federated learning at desk scale.

The package simulates heterogeneous edge fleets training a shared model:
a consumption profiler prices training cycles in FLOPs, bytes, and seconds;
a soft-training scheme masks budget-violating neurons per cycle so
stragglers keep up; and a mask-aware weighted aggregator merges the
resulting partial updates. Baselines (synchronized, asynchronous,
soft-training only) run in the same harness for comparison.
"""

from .errors import (ConfigError, InfeasibleBudgetError, MaskError,
                     NumericError, SpecError)
from .nn import (LayerSpec, ModelSpec, NeuronMask, WeightState, backward,
                 empty_mask, forward, gradient_check, init_weights,
                 lenet_spec, alexnet_cifar10, vgg13_cifar10, predict,
                 sgd_step, zeros_weights)
from .profiling import (ConsumptionEstimate, DeviceProfile, Measurement,
                        TrainConfig, device_for_cycle_time, fit_device_params,
                        keep_fraction_sweep, model_time, neuron_memory,
                        neuron_time, neuron_workload)
from .masking import (ContributionMap, MaskBudget, SoftTrainPolicy,
                      full_budget, neuron_contributions, select_mask,
                      soft_train_cycle, solve_mask_budget)
from .aggregation import (AggregationWeights, BoundParams, DeviceUpdate,
                          aggregate, async_apply, compute_alphas,
                          convergence_bound, weighted_average)
from .data import (load_digits_dataset, make_blob_dataset, partition_data,
                   train_test_split)
from .simulate import (DeviceEntry, ExperimentLog, FleetConfig,
                       evaluate_global, desk_fleet, run_experiment,
                       time_to_accuracy)

__version__ = "0.1.0"
