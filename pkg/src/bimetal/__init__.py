"""Regime analysis of multivariate gold-silver price series.

Three complementary views of the same weekly data:

* a SOM periodization of the full 14-dimensional quotation record,
* a two-regime Markov-switching autoregression of the spread between the
  highest and lowest gold-silver price, fitted by EM,
* penalized-contrast change-point detection on that spread, in mean or in
  mean and variance,

plus a pipeline/CLI that wires them together and cross-tabulates the views.
"""

from .changepoint import (
    SegCostTable,
    SegMode,
    Segmentation,
    detect,
    optimal_segmentation_for_k,
    segment_cost,
    select_num_segments,
)
from .data import (
    FeatureSet,
    FeatureVector,
    QuotationWeek,
    SpreadSeries,
    build_features,
    compute_spread,
    impute_missing,
    parse_dataset,
    write_dataset,
)
from .errors import (
    BimetalError,
    DataError,
    DegenerateModelError,
    ImputationError,
    MonotonicityError,
    NumericalError,
    ParseError,
    ValidationError,
)
from .pipeline import (
    AnalysisBundle,
    RunConfig,
    load_bundle,
    run_analyze,
    run_ingest,
    run_report,
    run_simulate,
)
from .regression import LinearMean, MlpMean, make_design
from .som import (
    MacroClassification,
    SomGrid,
    SomSchedule,
    best_matching_unit,
    bmu_indices,
    hac_macro_classes,
    periodize,
    quantization_error,
    train_som,
)
from .switching import (
    EmResult,
    MsParams,
    MsSpec,
    RegimeProbabilities,
    cross_tabulate,
    em_fit,
    hamilton_filter,
    kim_smoother,
    posterior_probabilities,
    simulate,
    stationary_distribution,
    transition_from_pq,
)

__version__ = "0.1.0"

__all__ = [
    "AnalysisBundle",
    "BimetalError",
    "DataError",
    "DegenerateModelError",
    "EmResult",
    "FeatureSet",
    "FeatureVector",
    "ImputationError",
    "LinearMean",
    "MacroClassification",
    "MlpMean",
    "MonotonicityError",
    "MsParams",
    "MsSpec",
    "NumericalError",
    "ParseError",
    "QuotationWeek",
    "RegimeProbabilities",
    "RunConfig",
    "SegCostTable",
    "SegMode",
    "Segmentation",
    "SomGrid",
    "SomSchedule",
    "SpreadSeries",
    "ValidationError",
    "__version__",
    "best_matching_unit",
    "bmu_indices",
    "build_features",
    "compute_spread",
    "cross_tabulate",
    "detect",
    "em_fit",
    "hac_macro_classes",
    "hamilton_filter",
    "impute_missing",
    "kim_smoother",
    "load_bundle",
    "make_design",
    "optimal_segmentation_for_k",
    "parse_dataset",
    "periodize",
    "posterior_probabilities",
    "quantization_error",
    "run_analyze",
    "run_ingest",
    "run_report",
    "run_simulate",
    "segment_cost",
    "select_num_segments",
    "simulate",
    "stationary_distribution",
    "train_som",
    "transition_from_pq",
    "write_dataset",
]
