"""Python bindings for the casnet_lab C++ core."""

import torch  # noqa: F401  loads libtorch before the extension

from ._core import (
    config_get,
    config_hash,
    config_keys,
    content_similarity,
    domain_gap_score,
    generate_dataset,
    load_manifest,
    metrics_from_predictions,
    pca,
    run_pipeline,
    transfer_styles,
)

__all__ = [
    "config_get",
    "config_hash",
    "config_keys",
    "content_similarity",
    "domain_gap_score",
    "generate_dataset",
    "load_manifest",
    "metrics_from_predictions",
    "pca",
    "run_pipeline",
    "transfer_styles",
]
