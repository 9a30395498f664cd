"""Potential weights, implicit designs, and design diagnostics for linear estimators.

A linear regression estimator of a causal contrast can be rewritten as a
weighted sum of potential outcomes.  This package materializes those
weights, asks what assignment process (if any) would rationalize them as
a proper design, evaluates the estimand the regression actually targets,
and provides diagnostics and remedies when the implicit design misbehaves.
"""

from .catalog import (
    CatalogResult,
    ConditionCheck,
    FixedPointError,
    angrist_design,
    event_study_design,
    forbidden_interaction_check,
    fractional_linear_design,
    interacted_t_design,
    kline_design,
    multivalued_design,
    owfe_check,
    saturated_interacted_design,
    transplanted_ate_residual,
    twfe_covariate_condition,
    twfe_design,
    unbalanced_twfe_condition,
)
from .diagnostics import (
    BalanceStat,
    CalibrationBin,
    DiagnosticsReport,
    ProfileBin,
    ResetTest,
    calibration_csv,
    outcome_by_design_profile,
    profiles_csv,
    run_design_checklist,
)
from .estimand import (
    DecompositionTable,
    ImplicitEstimand,
    TwfeWeightTable,
    contamination_decomposition,
    implicit_estimand,
    twfe_weights,
)
from .estimators import (
    DivisionGuardError,
    IpwResult,
    PatchedDesign,
    TrimmedResult,
    ipw_estimate,
    patch_design,
    patched_estimate,
    trimmed_ate,
)
from .gram import (
    GramMatrix,
    SingularGramError,
    fwl_residualize,
    population_gram,
    reparametrize,
    sample_gram,
)
from .model import (
    DataFormatError,
    Design,
    Population,
    RegressionSpec,
    TreatmentSet,
    build_template,
    load_long_csv,
    panel_covariates,
    regressor_tensor,
    validate_population,
)
from .oracle import (
    ConsistencyCurve,
    JointDesign,
    ShiftTestResult,
    consistency_harness,
    evaluate_estimand,
    exact_estimand,
    exact_implicit_design,
    level_irrelevance_test,
    random_small_instance,
    simulate_assignment,
)
from .solver import (
    ImplicitDesignReport,
    MembershipReport,
    SolverOptions,
    binary_closed_form,
    check_candidate_design,
    solve_implicit_design,
)
from .weights import (
    PotentialWeightSet,
    WeightMatrixDiagnostic,
    estimator_weights,
    export_weights_csv,
    identification_strength,
    point_estimate,
    potential_weights,
)

__version__ = "0.1.0"

__all__ = [
    "BalanceStat",
    "CalibrationBin",
    "CatalogResult",
    "ConditionCheck",
    "ConsistencyCurve",
    "DataFormatError",
    "DecompositionTable",
    "Design",
    "DiagnosticsReport",
    "DivisionGuardError",
    "FixedPointError",
    "GramMatrix",
    "ImplicitDesignReport",
    "ImplicitEstimand",
    "IpwResult",
    "JointDesign",
    "MembershipReport",
    "PatchedDesign",
    "Population",
    "PotentialWeightSet",
    "ProfileBin",
    "RegressionSpec",
    "ResetTest",
    "ShiftTestResult",
    "SingularGramError",
    "SolverOptions",
    "TreatmentSet",
    "TrimmedResult",
    "TwfeWeightTable",
    "WeightMatrixDiagnostic",
    "__version__",
    "angrist_design",
    "binary_closed_form",
    "build_template",
    "calibration_csv",
    "check_candidate_design",
    "consistency_harness",
    "contamination_decomposition",
    "estimator_weights",
    "evaluate_estimand",
    "event_study_design",
    "exact_estimand",
    "exact_implicit_design",
    "export_weights_csv",
    "forbidden_interaction_check",
    "fractional_linear_design",
    "fwl_residualize",
    "identification_strength",
    "implicit_estimand",
    "interacted_t_design",
    "ipw_estimate",
    "kline_design",
    "level_irrelevance_test",
    "load_long_csv",
    "multivalued_design",
    "outcome_by_design_profile",
    "owfe_check",
    "panel_covariates",
    "patch_design",
    "patched_estimate",
    "point_estimate",
    "population_gram",
    "potential_weights",
    "profiles_csv",
    "random_small_instance",
    "regressor_tensor",
    "reparametrize",
    "run_design_checklist",
    "sample_gram",
    "saturated_interacted_design",
    "simulate_assignment",
    "solve_implicit_design",
    "transplanted_ate_residual",
    "trimmed_ate",
    "twfe_covariate_condition",
    "twfe_design",
    "twfe_weights",
    "unbalanced_twfe_condition",
    "validate_population",
]
