from .ntk import (
    NtkResult,
    condition_number_from_gram,
    gram_from_gradients,
    jacobi_eigenvalues,
    ntk_condition_number,
    per_sample_gradients,
)
from .regions import count_patterns, linear_regions
from .sensitivity import (
    ALL_METRICS,
    MetricVector,
    SensitivityReport,
    compute_metrics,
    percent_change,
    sensitivity_analysis,
)
from .zero_cost import LOSS_METRICS, hessian_vector_product, loss_based_scores

__all__ = [
    "NtkResult", "condition_number_from_gram", "gram_from_gradients", "jacobi_eigenvalues",
    "ntk_condition_number", "per_sample_gradients", "count_patterns", "linear_regions", "ALL_METRICS",
    "MetricVector", "SensitivityReport", "compute_metrics", "percent_change", "sensitivity_analysis",
    "LOSS_METRICS", "hessian_vector_product", "loss_based_scores",
]
