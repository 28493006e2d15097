"""Diffeomorphic curve-and-landmark registration for 2-D face shapes."""

from .geometry import Curve, CurveCurrent, FaceShape, curve_scale, curve_to_current, resample_curve
from .kernels import (
    KernelConfig,
    currents_inner,
    currents_norm_sq,
    curve_discrepancy,
    gaussian_kernel,
    grad_curve_discrepancy,
    kernel_matrix,
)
from .flow import (
    Diffeomorphism,
    MomentaField,
    geodesic_shoot,
    integrate_flow,
    jacobian_probe,
    transport_points,
)
from .matching import (
    MatchConfig,
    MatchResult,
    landmark_discrepancy,
    match_curve,
    match_face,
    objective,
    objective_gradient,
    path_energy,
)
from .schemes import (
    AffineTransform,
    AnnotationScheme,
    affine_align,
    builtin_scheme,
    canonical_face,
    load_scheme,
    mean_face,
    subset_landmarks,
    synth_face,
)
from .metrics import MetricsReport, auc_ced, failure_rate, nme_curve, nme_landmark

__version__ = "0.1.0"
