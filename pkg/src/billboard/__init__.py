"""billboard: a bidimensional leaderboard engine.

Generators and evaluation metrics are both first-class submissions: metrics
are ranked by correlation with human judgments, generators by the current
best metric, a sparse linear ensemble of metrics is refit automatically, and
a mixed-effects analysis quantifies how much each metric overrates machine
output over human output.
"""

from .builtin_metrics import BUILTIN_METRICS, chrf, sentence_bleu
from .datastore import (
    Board,
    BoardConfig,
    GeneratorSubmission,
    HumanJudgments,
    Instance,
    MetricSpec,
    Reference,
    ScoreTensor,
    Snapshot,
    TestSet,
    load_judgments,
    load_testset,
)
from .ensemble import (
    EnsembleModel,
    EnsembleRegistry,
    RegressionProblem,
    ablate_ensemble,
    build_ensemble,
    ensemble_score,
    lambda_max,
    lasso_fit,
    logo_cv,
    tune_lambda,
)
from .errors import (
    AnalysisError,
    BillboardError,
    BoardStateError,
    ConvergenceError,
    DegenerateMetricError,
    DuplicateSubmissionError,
    ProtocolError,
    ScoringError,
    SignatureCollisionError,
    ValidationError,
)
from .mixed_effects import MixedDesign, MixedEffectsFit, build_design, overrate_report, profiled_fit
from .runner import ProtocolBatch, ScoringRequest, orient, run_external, score_generator, score_one
from .service import RecomputeSummary, create_app, recompute
from .stats import (
    GeneratorRankingEntry,
    MetricRankingEntry,
    kendall_tau_b,
    pearson,
    rank_generators,
    rank_metrics,
    standardize,
)

__version__ = "0.1.0"
