"""Self-adaptive two-piece path-loss modeling and positioning for tunnels."""

from .estimator import (
    AnchorObservation,
    DegenerateFitError,
    FitOptions,
    FitResult,
    IdentifiabilityError,
    TrainingSet,
    evaluate_residuals,
    fit_from_training_set,
    fit_template,
    record_engagement,
)
from .locator import PositionEstimate, locate_one_bs, locate_two_bs, path_loss_from_rssi
from .model import (
    DegenerateModelError,
    FresnelParams,
    TemplateModel,
    TunnelGeometry,
    fresnel_break_point,
    invert_distance,
    normalize_pair,
    path_loss,
)
from .simulator import (
    ConvergenceTrace,
    Explicit,
    ReferenceScenario,
    Uniform,
    place_anchors,
    run_convergence,
    run_experiment_matrix,
    sample_iteration,
)

__version__ = "0.1.0"
