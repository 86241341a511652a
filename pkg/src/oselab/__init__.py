"""Numerical Oseledets splittings, Lyapunov norms and Holder bounds for cocycles."""

from ._version import __version__
from .cocycle import (CocycleGenerator, ConjugatorField, coboundary_generator, constant_generator,
                      evaluate_generator, growth_rates, kuratowski_estimate,
                      operator_metric, propagated_holder_constant, rotation_conjugated_generator,
                      truncated_diagonal_generator, verify_cocycle_holder)
from .dynamics import (BasePoint, BaseSystem, circle_rotation, doubling_map, evaluate_map,
                       full_shift, metric, sample_points, toral_automorphism)
from .errors import CertificateFailure, ConfigError, NumericalFailure, OselabError
from .holder import (fit_holder_exponent, synthesize_l5_instance, theoretical_constants,
                     verify_filtration_holder, verify_main)
from .lyapunov_norms import (LyapunovNormField, build_regular_set, d_epsilon, lyapunov_norm,
                             regularity_functions)
from .oseledets import (LyapunovSpectrum, block_cocycle, filtration, lyapunov_spectrum,
                        oseledets_splitting)
from .scenario import Scenario, load_scenario
from .subspaces import DirectSum, Subspace, deviation, gap, graph_operator, hausdorff_distance

__all__ = [name for name in dir() if not name.startswith("_")]
