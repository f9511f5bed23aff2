"""rangecollect: privacy-preserving numeric data collection via random
ranges — mechanisms, estimators, a survey service, and a CLI harness.
"""

from .core import (
    EMPTY_RANGE,
    FULL_LINE,
    NEG_INF,
    POS_INF,
    FidelityError,
    Interval,
    NoiseModel,
    NullRecord,
    Partition,
    PrivatizedRecord,
    Range,
    StepCDF,
    canonical_partition,
    noise_cdf,
    noise_partial_mean,
    partition_locate,
    range_contains,
    range_intersect,
    read_records,
    record_from_json,
    ring_partition,
    stepcdf_mass,
)
from .coverage import (
    CoverageReport,
    Unachievable,
    composition_bound_check,
    coverage_estimator_case1,
    design_anchor_for_coverage,
    individual_coverage,
    mechanism_coverage_mc,
)
from .estimation import (
    DegenerateSupport,
    NoData,
    NpmleResult,
    energy_distance,
    fit_logistic_mle,
    linear_functional,
    mean_estimator_case1,
    npmle,
    optimal_anchor_density,
)
from .mechanisms import (
    GaussianAnchors,
    GridDensityAnchors,
    InconsistentRecords,
    LogisticAnchors,
    MechanismConfig,
    MonotoneTransform,
    NonMonotone,
    ProgressiveParams,
    ProgressiveSession,
    SelectiveParams,
    SessionClosed,
    TwoGaussianMixture,
    UniformAnchors,
    batch_privatize,
    config_from_dict,
    ensemble,
    privatize,
    privatize_canonical,
    privatize_case1,
    privatize_ring,
    privatize_selective,
    progressive_step,
    pullback,
)
from .regression import (
    FitReport,
    IntervalRegressionDataset,
    KNNLearner,
    OLSLearner,
    conditional_mean_case1,
    conditional_mean_case2,
    fit_interval_regression,
    predict,
)

__version__ = "0.1.0"
