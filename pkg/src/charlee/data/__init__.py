"""Dataset ingestion, normalization, splitting, masking, and the synthetic benchmark."""

from .core import (
    Dataset,
    SliceSpec,
    group_activity,
    keep_matrix,
    kept_channel_counts,
    mask_apply,
    mask_apply_batch,
    slice_boundaries,
    split_train_val,
    truncate,
    znormalize,
)
from .synthetic import (
    IDEAL_UTILIZATION,
    SyntheticSpec,
    class_prototypes,
    generate_synthetic,
    ideal_savings,
    ideal_table,
)
from .tsio import load_csv, load_ts, write_csv, write_ts

__all__ = [
    "Dataset",
    "IDEAL_UTILIZATION",
    "SliceSpec",
    "SyntheticSpec",
    "class_prototypes",
    "generate_synthetic",
    "ideal_savings",
    "ideal_table",
    "group_activity",
    "keep_matrix",
    "kept_channel_counts",
    "mask_apply_batch",
    "load_csv",
    "load_ts",
    "mask_apply",
    "slice_boundaries",
    "split_train_val",
    "truncate",
    "write_csv",
    "write_ts",
]
