"""provrec: recommend compatible analysis pipelines and datasets from execution provenance.

Execution provenance records (which pipeline ran on which files, with what
exit code) are attributed to datasets by content-hash matching, aggregated
into a sparse pipeline-by-dataset rating matrix, and completed with a
latent-factor model fit by alternating least squares.  Completed ratings
drive ranked recommendations and an ROC/AUC evaluation harness with an
expert-vote baseline.
"""

__version__ = "0.1.0"

from .provenance import (
    Attribution,
    AttributionReport,
    DatasetManifest,
    ExecutionTriplet,
    ProvenanceRecord,
    RejectedLine,
    TiePolicy,
    attribute_dataset,
    parse_manifests,
    parse_records,
    to_triplets,
)
from .matrix import ConflictPolicy, UtilityMatrix, aggregate, density
from .factorization import FactorModel, Prediction, TrainConfig, als_fit, objective, ridge_solve
from .recommend import Recommendation, classify, recommend_datasets, recommend_pipelines
from .evaluation import (
    ConfidenceComparison,
    EvaluationReport,
    ExpertSurvey,
    ExpertVote,
    RocPoint,
    SyntheticTruth,
    auc,
    confidence_comparison,
    cross_validate,
    expert_fraction,
    expert_roc,
    generate_synthetic,
    kfold_split,
    roc_curve,
)

__all__ = [
    "__version__",
    "Attribution",
    "AttributionReport",
    "ConflictPolicy",
    "ConfidenceComparison",
    "DatasetManifest",
    "EvaluationReport",
    "ExecutionTriplet",
    "ExpertSurvey",
    "ExpertVote",
    "FactorModel",
    "Prediction",
    "ProvenanceRecord",
    "Recommendation",
    "RejectedLine",
    "RocPoint",
    "SyntheticTruth",
    "TiePolicy",
    "TrainConfig",
    "UtilityMatrix",
    "aggregate",
    "als_fit",
    "attribute_dataset",
    "auc",
    "classify",
    "confidence_comparison",
    "cross_validate",
    "density",
    "expert_fraction",
    "expert_roc",
    "generate_synthetic",
    "kfold_split",
    "objective",
    "parse_manifests",
    "parse_records",
    "recommend_datasets",
    "recommend_pipelines",
    "ridge_solve",
    "roc_curve",
    "to_triplets",
]
