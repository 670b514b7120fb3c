from .influence import InfluenceScores, SingularHessianError, compute_influences, exact_influence
from .estimators import (
    NuisanceEstimates, EstimateReport, RctEstimates,
    estimate_direct, fit_nuisances, estimate_aipw, estimate_rct, estimate_subset, estimate_full,
    comparison_table,
)
from .selection import (
    KGrid, KGridRow, OptimalSelection, KOutOfRangeError, SelectionFailedError,
    nested_subset, find_optimal_k, sensitivity_sweep,
)
from .calibration import (
    BiasModel, SamplingScoreModel, SourceMissingError,
    fit_sampling_score, fit_rlearner, fit_bias_model, calibrate_ec, pooled_controls,
)
