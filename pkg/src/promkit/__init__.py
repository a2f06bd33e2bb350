"""Velocity recovery from multi-point phase-contrast measurements.

The package covers the full workflow: congruence arithmetic on wrapped
pair velocities, phase covariance models, the approximate-ML estimator
and its baselines, error and bound analysis, venc design, simulation,
spatially regularized post-processing, and a batch CLI.

Hot loops live in ``promkit.kernels`` with a numba backend and a pure
numpy fallback, selected by the PROMKIT_BACKEND environment variable.
"""

from .analysis import (MixtureComponent, crlb_velocity, estimate_distribution,
                       tube_label, unwrap_error_prob)
from .baselines import (GridSpec, complex_mle_grid, nco_estimate,
                        nco_objective, odv_estimate, odv_objective,
                        sdv_estimate)
from .config import (ESTIMATORS, CovarianceConfig, PostprocessConfig,
                     RunConfig, SimulationConfig, load_config, parse_config)
from .congruence import (EncodingScheme, VencSet, WrappedVelocities,
                         canonical_pairs, pair_products, rationalize,
                         symmetric_moments_from_vencs, unambiguous_range,
                         vencs_from_moments, wrap_to_range,
                         wrapped_displacement, wrapped_from_products)
from .containers import (ComplexImage, read_candidates, read_complex_image,
                         read_velocity_map, write_candidates,
                         write_complex_image, write_velocity_map)
from .covariance import (PhaseCovariance, SnrMatrix, cosine_similarity,
                         data_phase_cov, model_phase_cov, psd_project,
                         velocity_cov)
from .design import (CandidateReport, DesignResult, DesignSpec,
                     admissible_ratios, base_venc, design_three_point)
from .errors import (ConfigValidationError, ContainerFormatError,
                     DegenerateCovarianceError, DegenerateEncodingError,
                     InfeasibleDesignError, MaskedVoxelError,
                     NoFiniteRangeError, NonIdentifiableError, PromkitError,
                     SingularPairError, UndefinedSimilarityError,
                     UnsupportedGeometryError, ValidationError)
from .estimator import (CandidateSolution, PromModel, PromResult,
                        blue_weights, candidate_wrap_set, full_search_size,
                        neg_log_likelihood, prom_estimate, prom_from_wrapped,
                        spd_pseudo_inverse)
from .postprocess import (PromPlusResult, VelocityField,
                          coil_combined_magnitude, estimate_velocity_field,
                          loess_quadratic_fit, prom_plus)
from .simulate import (PhantomData, PhantomScore, RmseCurve, VesselPhantomSpec,
                       VoxelGroundTruth, monte_carlo_rmse, score_phantom_map,
                       synth_voxel, vessel_phantom, wrapped_errors)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # congruence
    "EncodingScheme", "VencSet", "WrappedVelocities", "canonical_pairs",
    "pair_products", "rationalize", "symmetric_moments_from_vencs",
    "unambiguous_range", "vencs_from_moments", "wrap_to_range",
    "wrapped_displacement", "wrapped_from_products",
    # covariance
    "SnrMatrix", "PhaseCovariance", "model_phase_cov", "data_phase_cov",
    "psd_project", "velocity_cov", "cosine_similarity",
    # estimator
    "PromModel", "PromResult", "CandidateSolution", "prom_estimate",
    "prom_from_wrapped", "neg_log_likelihood", "blue_weights",
    "candidate_wrap_set", "full_search_size", "spd_pseudo_inverse",
    # baselines
    "GridSpec", "sdv_estimate", "odv_estimate", "odv_objective",
    "nco_estimate", "nco_objective", "complex_mle_grid",
    # analysis
    "MixtureComponent", "tube_label", "estimate_distribution",
    "unwrap_error_prob", "crlb_velocity",
    # design
    "DesignSpec", "DesignResult", "CandidateReport", "design_three_point",
    "base_venc", "admissible_ratios",
    # simulation
    "VoxelGroundTruth", "synth_voxel", "VesselPhantomSpec", "PhantomData",
    "PhantomScore", "vessel_phantom", "score_phantom_map", "RmseCurve",
    "monte_carlo_rmse", "wrapped_errors",
    # postprocess
    "VelocityField", "coil_combined_magnitude", "estimate_velocity_field",
    "loess_quadratic_fit", "PromPlusResult", "prom_plus",
    # containers
    "ComplexImage", "read_complex_image", "write_complex_image",
    "read_velocity_map", "write_velocity_map", "read_candidates",
    "write_candidates",
    # config
    "RunConfig", "CovarianceConfig", "SimulationConfig", "PostprocessConfig",
    "load_config", "parse_config", "ESTIMATORS",
    # errors
    "PromkitError", "ValidationError", "ConfigValidationError",
    "ContainerFormatError", "InfeasibleDesignError",
    "DegenerateEncodingError", "UnsupportedGeometryError",
    "NoFiniteRangeError", "SingularPairError", "MaskedVoxelError",
    "DegenerateCovarianceError", "UndefinedSimilarityError",
    "NonIdentifiableError",
]
