"""Second-order (Dirichlet) and learned-confidence uncertainty estimation
for classifiers, with a misclassification / OOD / selective-classification
evaluation stack and a synthetic 2-D benchmark."""

from .config import VERSION as __version__
from .dirichlet import DirichletParams, Opinion
from .estimators import (
    ConfidenceHeadEstimator,
    EvidentialClassifier,
    MahalanobisDetector,
    TemperatureScaler,
)
from .measures import klos, klos_star
from .special import digamma, log_gamma, trigamma

__all__ = [
    "__version__",
    "DirichletParams",
    "Opinion",
    "EvidentialClassifier",
    "MahalanobisDetector",
    "TemperatureScaler",
    "ConfidenceHeadEstimator",
    "klos",
    "klos_star",
    "log_gamma",
    "digamma",
    "trigamma",
]
