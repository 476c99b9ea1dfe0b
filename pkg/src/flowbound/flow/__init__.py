from .counterterms import CountertermSeries
from .evaluator import (
    FlowRHS,
    SchwingerEvaluator,
    SchwingerRequest,
    SchwingerResult,
    UnsupportedDepth,
    request,
)
from .renormalize import (
    RenormalizationScheme,
    SingularResponse,
    fix_counterterms,
    renormalized_series,
    uv_ir_probe,
)
from .tree_level import quartic_trees, schwinger_tree_direct, tree_value

__all__ = [
    "CountertermSeries",
    "FlowRHS",
    "RenormalizationScheme",
    "SchwingerEvaluator",
    "SchwingerRequest",
    "SchwingerResult",
    "SingularResponse",
    "UnsupportedDepth",
    "fix_counterterms",
    "quartic_trees",
    "renormalized_series",
    "request",
    "schwinger_tree_direct",
    "tree_value",
    "uv_ir_probe",
]
