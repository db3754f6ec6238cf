"""Execution-agreement reranking for LLM-sampled programs.

Sample candidate programs and executable checks for a natural-language
programming task, verify every program against every check in a sandboxed
runner pool, learn a confidence score from the agreement statistics, and emit
trust-calibrated rankings, precision/recall reports, and per-answer
certificates (the most selective check the proposed program passes).
"""

from .certify import Certificate, select_certificate
from .corpus import (
    FoldAssignment,
    Problem,
    ProgramSample,
    SpecKind,
    SpecSample,
    Verdict,
    VerificationMatrix,
    load_corpus,
    split_folds,
)
from .evaluation import (
    PRPoint,
    RankedProblem,
    auc,
    baseline_scores,
    max_f1,
    oracle_scores,
    pass_at_k,
    pass_at_k_n,
    pr_at_tau,
    pr_curve,
    rank_problem,
    recall_at_precision,
)
from .executor import ExecutorConfig, check_ground_truth, verify_problem
from .features import (
    FeatureVector,
    Standardizer,
    cluster_entropy,
    cluster_partition,
    feature_vector,
    fit_standardizer,
    problem_features,
    signature,
)
from .sampler import (
    CompletionClient,
    SamplerConfig,
    build_io_spec_prompt,
    build_program_prompt,
    build_relation_prompt,
    extract_io_tests,
    extract_relation_specs,
    sample_completions,
)
from .scorer import LogisticScorer, MLPScorer, TrainConfig, cross_validate, predict, train

__version__ = "0.1.0"

__all__ = [
    "Certificate",
    "CompletionClient",
    "ExecutorConfig",
    "FeatureVector",
    "FoldAssignment",
    "LogisticScorer",
    "MLPScorer",
    "PRPoint",
    "Problem",
    "ProgramSample",
    "RankedProblem",
    "SamplerConfig",
    "SpecKind",
    "SpecSample",
    "Standardizer",
    "TrainConfig",
    "Verdict",
    "VerificationMatrix",
    "auc",
    "baseline_scores",
    "build_io_spec_prompt",
    "build_program_prompt",
    "build_relation_prompt",
    "check_ground_truth",
    "cluster_entropy",
    "cluster_partition",
    "cross_validate",
    "extract_io_tests",
    "extract_relation_specs",
    "feature_vector",
    "fit_standardizer",
    "load_corpus",
    "max_f1",
    "oracle_scores",
    "pass_at_k",
    "pass_at_k_n",
    "pr_at_tau",
    "pr_curve",
    "predict",
    "problem_features",
    "rank_problem",
    "recall_at_precision",
    "sample_completions",
    "select_certificate",
    "signature",
    "split_folds",
    "train",
    "verify_problem",
]
