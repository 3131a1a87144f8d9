"""Chunked hybrid softmax/linear attention with a recurrent streaming form.

Thin wrapper over the C++ core; see the project README for the full CLI.
"""

from ._hyattn import (  # noqa: F401
    ChunkLayout,
    CostReport,
    FeatureMap,
    StreamSession,
    __version__,
    feature_map_apply,
    flops_hybrid,
    flops_softmax,
    hybrid_attention_full,
    linear_attention,
    make_feature_map,
    make_layout,
    partition_tokens,
    softmax_attention,
    train_distill_toy,
)

__all__ = [
    "ChunkLayout",
    "CostReport",
    "FeatureMap",
    "StreamSession",
    "__version__",
    "feature_map_apply",
    "flops_hybrid",
    "flops_softmax",
    "hybrid_attention_full",
    "linear_attention",
    "make_feature_map",
    "make_layout",
    "partition_tokens",
    "softmax_attention",
    "train_distill_toy",
]
