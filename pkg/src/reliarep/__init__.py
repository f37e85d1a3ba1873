"""Reliable representation learning with Laplacian structure and Gaussian uncertainty."""

from .bench import BenchConfig, SynthDataset, build_block_covariance, inject_noise, make_dataset
from .encoders import (
    EncoderModel,
    LinearHead,
    ObjectiveWeights,
    encode,
    fit_ridge_encoder,
    lipschitz_bound,
    smoothing_operator,
    train_representations,
    unified_objective,
)
from .graph import (
    StructureGraph,
    build_graph,
    connected_components,
    corrupt,
    laplacian,
    structure_regularizer,
)
from .reliability import ReliabilityReport, robustness, stability
from .selective import (
    RiskCoverageCurve,
    SoftmaxClassifier,
    ece,
    evaluate_classifier,
    optimal_selective_risk,
    risk_coverage_curve,
    train_softmax,
    uncertainty_score,
)
from .sweep import SweepConfig, SweepResult, run_sweep
from .uncertainty import (
    CoverageReport,
    GaussianRepr,
    chi2_quantile,
    coverage,
    mahalanobis_sq,
    phi,
    psi,
    structural_uncertainty_regularizer,
    uncertainty_regularizer,
)

__version__ = "0.1.0"
