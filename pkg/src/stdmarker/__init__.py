"""Covariate-standardized biomarkers: common-ROC risk models, ROC curves and risk distributions."""
from .basis import BasisSpec, linear_closed_form_beta0, solve_constrained_beta0
from .dataset import Design, StudyDesign, StudySample, SubjectRecord, load_csv, write_csv
from .errors import (ConvergenceError, DataError, NonConcaveFitError, NumericalError,
                     SeparationError, StdMarkerError)
from .estimators import (EmlFit, Method, NonConcaveWarning, PiecewiseLinearRoc, RiskModelFit,
                         StepRoc, concavify, fit_cml, fit_eml, fit_nonparametric_aroc, fit_psl)
from .experiment import ExperimentConfig, ExperimentReport, run_experiment
from .glm import GlmFit, compute_offsets, fit_logistic_offset
from .hypotests import (TestResult, covariate_interaction_wald, test_roc_equality,
                        wald_test_covariate_effect, wilcoxon_rank_sum)
from .inference import (CiResult, RocEvaluation, bootstrap_percentile_ci, evaluate_roc, risk_at,
                        risk_cdf, risk_cdf_eml, roc_values)
from .simgen import (ControlDist, Population, Scenario, TruthTable, default_scenario, generate_sample,
                     load_scenario, scenario_truth)
from .standardize import (ReferenceSet, StandardizedSample, fit_reference,
                          frequency_matched_placement, placement_value, standardize_sample)

__version__ = "0.1.0"
