"""hygroflow: humidity-deformation measurement from specimen scans.

Dense deformation fields between two scans of a specimen at different
humidity levels via masked Huber-TV optical flow with illumination
compensation, plus strain tensor fields, humidity-normalized
engineering coefficients with variance, and crack detection.
"""

from .errors import (ConfigError, DegenerateInputError, HygroflowError,
                     InvalidParameterError, MissingArtifactError,
                     SegmentationError)
from .estimator import HuberTVFlow
from .grids import (FlowField, area_resample, bilinear_sample, divergence,
                    downsample_mask_strict, gradient_forward, warp_bilinear)
from .preprocess import (AlignedPair, AlignedState, SegmentedScan, SpecimenScan,
                         align_and_crop, centroid_orientation, derotate,
                         erode_diamond, label_components, make_pair,
                         median_filter_mask, otsu_threshold, segment_object,
                         segment_scan, to_working_resolution, value_channel)
from .solver import (FlowResult, SolverParams, coarse_to_fine, data_residual,
                     energy, estimate_rotation, huber, pd_solve,
                     rerun_with_registration)
from .strain import (CoefficientProfile, StrainFields, coefficient_profile,
                     compute_strain, detect_cracks, green_strain, k_endpoint,
                     k_fields, k_profile, masked_axis_profile, projection_error,
                     small_strain)
from .synth import (AnalyticFlow, RectStain, RenderedPair, SynthCase,
                    build_case, case_names, compose_flows, endpoint_error,
                    render_pair, wood_texture)

__version__ = "0.1.0"

__all__ = [
    "HygroflowError", "InvalidParameterError", "DegenerateInputError",
    "SegmentationError", "ConfigError", "MissingArtifactError",
    "FlowField", "gradient_forward", "divergence", "bilinear_sample",
    "warp_bilinear", "area_resample", "downsample_mask_strict",
    "SpecimenScan", "SegmentedScan", "AlignedState", "AlignedPair",
    "to_working_resolution", "value_channel", "otsu_threshold",
    "median_filter_mask", "label_components", "segment_object",
    "centroid_orientation", "derotate", "erode_diamond", "align_and_crop",
    "make_pair", "segment_scan",
    "SolverParams", "FlowResult", "huber", "data_residual", "energy",
    "pd_solve", "coarse_to_fine", "estimate_rotation", "rerun_with_registration",
    "StrainFields", "CoefficientProfile", "small_strain", "green_strain",
    "compute_strain", "k_fields", "masked_axis_profile", "k_profile",
    "k_endpoint", "detect_cracks", "coefficient_profile", "projection_error",
    "AnalyticFlow", "RectStain", "RenderedPair", "SynthCase", "wood_texture",
    "render_pair", "endpoint_error", "compose_flows", "case_names", "build_case",
    "HuberTVFlow",
]
