"""apoison: margin-preserving association poisoning for tabular data.

Attacks that steer the joint distribution of chosen feature pairs while
leaving every feature's marginal distribution intact, together with the
association metrics, baseline detectors, and desk-scale fit-and-sample
generators needed to measure what the attacks do and what they leave
behind.
"""

__version__ = "0.1.0"

from .binary_ap import (
    AblationSpec,
    BinaryAttackSpec,
    PoisonExtent,
    apply_ap_joint,
    epsilon_bounds,
    independence_epsilon,
    mix_ablation,
    negative_poison_binary_table,
    poison_binary_table,
    run_binary_attack,
)
from .continuous_ap import (
    ContinuousAttackSpec,
    MiCounterexample,
    build_mi_counterexample,
    delta_cov,
    pearson_ascent,
    pearson_descent,
    poison_continuous_table,
)
from .dataset import (
    DataTable,
    FeatureKind,
    StrataCounts,
    empirical_joint,
    load_table,
    partition_strata,
    save_table,
    select_split,
    split_table,
)
from .errors import (
    ApoisonError,
    ConfigError,
    DataError,
    DegenerateMarginalError,
    ExtentOutOfBoundsError,
    InfeasibleAttackError,
    ZeroVarianceError,
)
from .metrics import (
    AssociationReport,
    BinaryJoint,
    ContinuousPair,
    MwuResult,
    conditional_mi_binary,
    interaction_information_binary,
    knn_mi,
    mcc_binary,
    mi_binary,
    mwu_test,
    pcc,
)
from .multivariate_ap import (
    TargetVector,
    multivariate_attack,
    pairwise_ap_pass,
    strata_ap,
    xor_encode,
)
from .stealth import (
    DetectorBaseline,
    TolerancePolicy,
    build_baseline,
    end_to_end_demo,
    fit_toy_generator,
    run_detector,
    sample_toy_generator,
)
