from .enumeration import MAX_ENUM_N, TreeClass, canonical_shape, enumerate_trees, shapes
from .model import (
    MalformedTreeError,
    Rejected,
    TreeClassParams,
    Validation,
    WeightedTree,
    count_coord3,
    junction,
    line_momentum,
    reduce_weights,
    validate,
)

__all__ = [
    "MAX_ENUM_N",
    "MalformedTreeError",
    "Rejected",
    "TreeClass",
    "TreeClassParams",
    "Validation",
    "WeightedTree",
    "canonical_shape",
    "count_coord3",
    "enumerate_trees",
    "junction",
    "line_momentum",
    "reduce_weights",
    "shapes",
    "validate",
]
