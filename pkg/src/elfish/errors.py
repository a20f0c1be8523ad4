"""Shared exception types for the elfish package."""


class SpecError(ValueError):
    """Invalid model/layer specification, or tensors that do not match one."""


class MaskError(ValueError):
    """Invalid neuron mask for a given model specification."""


class NumericError(RuntimeError):
    """Non-finite values encountered where finite math is required."""


class InfeasibleBudgetError(RuntimeError):
    """No masked fraction on the search grid satisfies the device budgets."""

    def __init__(self, message: str, violations: dict | None = None):
        super().__init__(message)
        self.violations = violations or {}


class ConfigError(ValueError):
    """Malformed or inconsistent run configuration."""
