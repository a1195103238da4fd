"""Semantic clustering of log templates."""

from .cluster import (
    UNEMBEDDABLE,
    LogPattern,
    PatternSet,
    assign_online,
    cluster,
    compute_threshold,
    cosine,
    scores,
    select_representative,
    similarity_matrix,
)
from .embed import EmbeddingTable, template_vector, train_embeddings

__all__ = [
    "EmbeddingTable",
    "LogPattern",
    "PatternSet",
    "UNEMBEDDABLE",
    "assign_online",
    "cluster",
    "compute_threshold",
    "cosine",
    "scores",
    "select_representative",
    "similarity_matrix",
    "template_vector",
    "train_embeddings",
]
