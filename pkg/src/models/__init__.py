"""
Data contracts for the BPTD toolkit
"""
from .core import (
    ActionMetadata,
    BinningMode,
    ColumnSchema,
    EventToken,
    IngestReport,
    MalformedLine,
    QuadClass,
    TimeBinning,
    Vocabulary,
    quadclass_of,
)
from .params import BPTDState, Hyperparams, ModelDims, TuckerFactors, TuckerLike
from .results import (
    AllocationCost,
    Assignments,
    ComparisonRow,
    GewekeResult,
    HeldOutMask,
    LatentSources,
    MaskSummary,
    PredictionResult,
)
from .tensors import CountTensor, TokenArrays, all_dyads

__all__ = [
    # Event data
    "ActionMetadata",
    "BinningMode",
    "ColumnSchema",
    "EventToken",
    "IngestReport",
    "MalformedLine",
    "QuadClass",
    "TimeBinning",
    "Vocabulary",
    "quadclass_of",
    "CountTensor",
    "TokenArrays",
    "all_dyads",
    # Parameters
    "BPTDState",
    "Hyperparams",
    "ModelDims",
    "TuckerFactors",
    "TuckerLike",
    # Results
    "AllocationCost",
    "Assignments",
    "ComparisonRow",
    "GewekeResult",
    "HeldOutMask",
    "LatentSources",
    "MaskSummary",
    "PredictionResult",
]
