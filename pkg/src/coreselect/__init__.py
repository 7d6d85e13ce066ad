"""Training-free coreset selection over embedding dumps.

Picks class-balanced demonstration subsets by jointly minimizing a kernel
two-sample distance to the full dataset, an upper bound on prompt-shift
degradation, and the predictive variance of a prototype scorer, and ships the
matching evaluation harness (accuracy/F1/NLL/ECE, paraphrase and run
stability, hallucinated-mention rates, Wilcoxon significance).
"""

from .baselines import select_herding, select_knn, select_random
from .data import (
    Coreset,
    EmbeddingMatrix,
    LabeledDataset,
    PromptEmbeddingSet,
    generate_synthetic,
    load_dataset,
    read_embeddings,
    write_embeddings,
)
from .errors import (
    ConfigError,
    CoreselectError,
    DataError,
    FormatError,
    InsufficientDataError,
    IoError,
    NumericalError,
    ShapeError,
)
from .gaussians import EmidInputs, GaussianSummary, emid_upper, gaussian_js, gaussian_kl, summarize
from .kernels import (
    KernelConfig,
    MmdCache,
    median_heuristic_sigma,
    mmd_cache_build,
    mmd_cache_swap_delta,
    mmd_squared,
    rbf_kernel,
)
from .metrics import (
    EvalReport,
    accuracy_f1,
    chair,
    ece,
    nll,
    var_para,
    var_runs,
    wilcoxon_signed_rank,
)
from .optimizer import (
    ObjectiveContext,
    ObjectiveValue,
    ObjectiveWeights,
    SelectionResult,
    ablate,
    greedy_select,
    make_context,
    objective,
)
from .predictor import (
    ClassLogProbs,
    PredictorConfig,
    build_emid_inputs,
    predict,
    predict_batch,
    variance_term,
)

__version__ = "0.1.0"

__all__ = [
    "ClassLogProbs",
    "ConfigError",
    "Coreset",
    "CoreselectError",
    "DataError",
    "EmbeddingMatrix",
    "EmidInputs",
    "EvalReport",
    "FormatError",
    "GaussianSummary",
    "InsufficientDataError",
    "IoError",
    "KernelConfig",
    "LabeledDataset",
    "MmdCache",
    "NumericalError",
    "ObjectiveContext",
    "ObjectiveValue",
    "ObjectiveWeights",
    "PredictorConfig",
    "PromptEmbeddingSet",
    "SelectionResult",
    "ShapeError",
    "ablate",
    "accuracy_f1",
    "build_emid_inputs",
    "chair",
    "ece",
    "emid_upper",
    "gaussian_js",
    "gaussian_kl",
    "generate_synthetic",
    "greedy_select",
    "load_dataset",
    "make_context",
    "median_heuristic_sigma",
    "mmd_cache_build",
    "mmd_cache_swap_delta",
    "mmd_squared",
    "nll",
    "objective",
    "predict",
    "predict_batch",
    "rbf_kernel",
    "read_embeddings",
    "select_herding",
    "select_knn",
    "select_random",
    "summarize",
    "var_para",
    "var_runs",
    "variance_term",
    "wilcoxon_signed_rank",
    "write_embeddings",
]
