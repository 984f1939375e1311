from .augment import AugmentationSpec, augment, hflip
from .dataset import (
    PIXEL_MAX,
    Dataset,
    Normalizer,
    SplitSpec,
    concat_datasets,
    denormalize,
    fit_normalizer,
    generate_synthetic,
    normalize,
    poison_count,
    split,
    split_indices,
)
from .idx import average_pool, load_idx, read_idx_images, read_idx_labels, write_idx_images, write_idx_labels
from .io import read_csv, write_csv

__all__ = [
    "AugmentationSpec", "augment", "hflip", "PIXEL_MAX", "Dataset", "Normalizer", "SplitSpec",
    "concat_datasets", "denormalize", "fit_normalizer", "generate_synthetic", "normalize",
    "poison_count", "split", "split_indices", "average_pool", "load_idx", "read_idx_images",
    "read_idx_labels", "write_idx_images", "write_idx_labels", "read_csv", "write_csv",
]
