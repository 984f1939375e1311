from .kmeans import KMeansResult, kmeans, kmeans_plus_plus
from .sanitize import (
    PenultimateExtractor,
    RelabelConfig,
    SanitizationConfig,
    cluster_purity,
    cluster_relabel,
    loss_sanitize,
    majority_labels,
    retained_per_class,
    sanitization_keep,
)

DEFENSES = ("sanitize", "relabel")

__all__ = [
    "KMeansResult", "kmeans", "kmeans_plus_plus", "PenultimateExtractor", "RelabelConfig",
    "SanitizationConfig", "cluster_purity", "cluster_relabel", "loss_sanitize", "majority_labels",
    "retained_per_class", "sanitization_keep", "DEFENSES",
]
