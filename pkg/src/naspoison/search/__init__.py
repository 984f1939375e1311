from .diff import DiffSearchConfig, diff_search, drop_weakest
from .hybrid import HybridSearchConfig, hybrid_search, rank_normalize, select_candidate
from .result import SearchResult
from .train import BaselineResult, RetrainConfig, random_baseline, require_clean, retrain_from_scratch, train_instance
from .training_free import TfSearchConfig, tf_search

ALGORITHMS = ("diff", "training_free", "hybrid")

__all__ = [
    "DiffSearchConfig", "diff_search", "drop_weakest", "HybridSearchConfig", "hybrid_search",
    "rank_normalize", "select_candidate", "SearchResult", "BaselineResult", "RetrainConfig",
    "random_baseline", "require_clean", "retrain_from_scratch", "train_instance", "TfSearchConfig",
    "tf_search", "ALGORITHMS",
]
