"""Barrier-certified region-of-attraction estimation for partially unknown systems.

Pipeline: Chebyshev preprocessing of non-polynomial terms (:mod:`bcroa.cheb`),
GP learning of the residual (:mod:`bcroa.gp`), SOS certification on top of a
home-grown SDP solver (:mod:`bcroa.sos`, :mod:`bcroa.sdp`) and the episode
loop (:mod:`bcroa.roa`).
"""

from .cheb import ApproximatedSystem, approximate_system, cheb_fit, cheb_to_monomial
from .config import RunConfig, load_config
from .errors import (ApproximationError, BcroaError, DimensionError, EmptySafeSetError,
                     EvaluationDomainError, ExprSyntaxError, GpFitError, SdpFormatError,
                     SosInfeasibleError, SystemValidationError, UnknownIdentifierError,
                     UnrepresentableMonomialError)
from .exprlang import SystemDefinition, eval_expr, load_system, parse_expr, parse_system
from .gp import Dataset, GpConfig, GpModel, confidence, delta_for_beta, fit, info_gain
from .poly import MonomialBasis, Polynomial, build_gram_map, gram_reconstruct, monomial_basis
from .roa import (EpisodeReport, RoaEstimate, assemble_learned_system, region_ops,
                  run_algorithm1, theorem2_bounds, validate_certificate)
from .sim import integrate, measure, select_sample
from .sos import alternate, step1_max_sublevel, step2_multipliers, step3_enlarge

__version__ = "0.1.0"
