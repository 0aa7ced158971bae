"""Numerical toolkit for Polya frequency sequences and Efron-type monotonicity."""
from .density_core import (Density, DensityError, DensitySpec, Pmf, check_log_concave,
                           load_spec, make_density, make_pmf, tabulate)
from .efron_engine import (PhiSpec, conditional_curve, conditional_expectation_2d, convolve,
                           convolve_discrete, discrete_conditional, discrete_curve)
from .numerics import (OrderedTuple, QuadResult, QuadratureError, ScaledDet, det_sign_scaled,
                       integrate, sample_ordered_tuples)
from .polya_checks import (DetCheckReport, FunctionTuple, Sampling, andreief_check, check_gm_n,
                           check_pf_n)
from .theorem_suite import (HypothesisError, MonotonicityReport, Tolerances,
                            check_tilt_conditions, corollary_derivative_check,
                            verify_alpha_monotone, verify_convolution_stability,
                            verify_exp_tilt, verify_gm_preservation, verify_product_over_s,
                            verify_restricted_efron, verify_strong_efron)

__version__ = "0.1.0"
