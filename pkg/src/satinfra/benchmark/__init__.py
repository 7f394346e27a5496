from .cv import (
    DEFAULTS,
    MODEL_KINDS,
    CvResult,
    ModelSpec,
    default_specs,
    format_table,
    loocv_by_country,
    r_squared,
)
from .models import BaggedTrees, BoostedTrees, RegressionTree, Ridge, SingularSystemError, best_split, ridge_fit

__all__ = [
    "DEFAULTS",
    "MODEL_KINDS",
    "CvResult",
    "ModelSpec",
    "default_specs",
    "format_table",
    "loocv_by_country",
    "r_squared",
    "BaggedTrees",
    "BoostedTrees",
    "RegressionTree",
    "Ridge",
    "SingularSystemError",
    "best_split",
    "ridge_fit",
]
