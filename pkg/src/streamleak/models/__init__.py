"""Tree-ensemble classifiers and regressors, metrics and model selection."""
from .ensembles import (
    GradientBoostingClassifier,
    GradientBoostingRegressor,
    RandomForestClassifier,
    RandomForestRegressor,
)
from .metrics import (
    DegenerateTarget,
    MetricsReport,
    RegressionReport,
    accuracy,
    classification_report,
    confusion_matrix,
    mse,
    mse_scaled,
    r2_score,
    regression_report,
)
from .selection import (
    BOOSTED,
    PARAM_GRIDS,
    RANDOM_FOREST,
    SVM,
    ClassifierSpec,
    MissingTarget,
    TrainedModel,
    UnsupportedFamily,
    cv_table_csv,
    evaluate,
    evaluate_regressor,
    expand_grid,
    fit,
    fit_param_regressor,
    grid_search,
    stratified_kfold,
)
from .trees import DegenerateData, DimensionMismatch, NonFiniteFeature, Tree

__all__ = [name for name in dir() if not name.startswith("_")]
