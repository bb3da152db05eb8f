"""Multi-environment PDE forecasting: data generation, mixture-of-operator-experts
training with the frequency-enriched invariant objective, and zero-shot OOD evaluation."""

__version__ = "0.1.0"
