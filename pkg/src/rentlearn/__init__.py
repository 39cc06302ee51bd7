"""Learning-augmented ski rental.

Threshold policies fitted from (feature, season-length) samples, exact and
Monte Carlo competitive-ratio evaluation, worst-case robustness
certificates, and the adversarial constructions that show the fitters'
sample demands are necessary.
"""

from .core import (E_RATIO, ConstantPolicy, CrEstimate, Density,
                   FunctionPolicy, RandomizedPolicy, SampleSet,
                   ThresholdPolicy, cost_ratio, cost_ratio_array,
                   evaluate_policy, expected_ratio_randomized,
                   robustness_bound, worst_case_density, worst_case_ratio)
from .distributions import (CoreGrid, DeterministicLinear, Empirical1D,
                            FiniteMixture, JointDistribution,
                            LipschitzUniform, NoiseLowerBound, NoisyChannel,
                            PointMass, closeness_check, emd_1d, from_doc,
                            from_json, make_core_grid_lb, make_noise_lb,
                            sample_joint, unseen_core_strategies,
                            verify_lipschitz)
from .learners import (ErrorReport, LinearHypothesis, TrainResult,
                       center_bias, label_from_season, measure_errors,
                       register_feature_map, train_margin_linear,
                       vc_dim_margin)
from .policies import (RANDOMIZED_BRANCH_CUTOFF, ClassifierRenter,
                       ConstantThresholdRenter, CubeGridRenter,
                       CubeTablePolicy, MarginRenter, NoisyRenter,
                       PolicyClassifier, TwoValuePolicy,
                       classifier_from_policy, empirical_cr_curve,
                       fit_constant_threshold, margin_width_for_samples,
                       policy_from_doc, policy_from_json,
                       prescribed_sample_counts, rent_training_set,
                       threshold_grid)
from .analysis import (CoreGridCertificate, RealizabilityResult,
                       ReductionReport, ScalingResult, ScanResult,
                       ShatterInstance, WorstCaseScan,
                       common_threshold_instance, cr_scan,
                       lb_certify_core_grid, monte_carlo_cr,
                       realizability_check, realizability_check_bruteforce,
                       reduction_error_check, scaling_experiment,
                       shatter_cost, shattered_pair_instance,
                       worst_case_scan)

__version__ = "0.1.0"
