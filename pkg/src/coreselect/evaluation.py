"""Test-split evaluation harness shared by the CLI and the acceptance suite."""

from __future__ import annotations

import numpy as np

from .data import TEST, Coreset, LabeledDataset, PromptEmbeddingSet
from .errors import ConfigError
from .baselines import select_knn
from .metrics import accuracy_f1, chair, ece, nll, var_para
from .predictor import PredictorConfig, predict_batch

RESPONSE_TEMPLATE = "this tissue is {name}"

PER_SEED_METRICS = ("accuracy", "macro_f1", "nll", "ece", "var_para", "chairs", "chairi")


def _condition_prompts(prompts: PromptEmbeddingSet) -> tuple[np.ndarray, list[np.ndarray]]:
    original_mean = prompts.original.as_f64().mean(axis=0)
    paraphrase_rows = [row for row in prompts.paraphrases.as_f64()]
    return original_mean, paraphrase_rows


def _knn_predictions(
    dataset: LabeledDataset,
    queries: np.ndarray,
    shots_per_class: int,
    prompt,
    config: PredictorConfig,
) -> np.ndarray:
    rows = []
    for query in queries:
        coreset = select_knn(dataset, query, shots_per_class)
        rows.append(predict_batch(query[None, :], coreset, dataset, prompt, config)[0])
    return np.asarray(rows)


def evaluate_selection(
    dataset: LabeledDataset,
    prompts: PromptEmbeddingSet,
    predictor: PredictorConfig,
    ece_bins: int,
    coreset: Coreset | None = None,
    knn_shots: int | None = None,
) -> tuple[dict, np.ndarray]:
    """Run the predictor over the test split and compute all per-seed metrics.

    Exactly one of `coreset` (fixed selection) or `knn_shots` (query-local
    re-selection per test item) must be given. Returns the metric dict and the
    original-prompt prediction matrix, which the caller needs for the
    across-runs variance.
    """
    if (coreset is None) == (knn_shots is None):
        raise ConfigError("pass exactly one of coreset or knn_shots")
    test_idx = dataset.split_indices(TEST)
    if test_idx.size == 0:
        raise ConfigError("dataset has no test rows")
    queries = dataset.embeddings.as_f64()[test_idx]
    labels = dataset.labels[test_idx]
    original_mean, paraphrase_rows = _condition_prompts(prompts)

    def predictions(prompt):
        if coreset is not None:
            return predict_batch(queries, coreset, dataset, prompt, predictor)
        return _knn_predictions(dataset, queries, knn_shots, prompt, predictor)

    logp = predictions(original_mean)
    accuracy, macro_f1 = accuracy_f1(logp, labels)
    per_paraphrase = [predictions(row) for row in paraphrase_rows]

    predicted_names = [dataset.class_names[c] for c in logp.argmax(axis=1)]
    responses = [RESPONSE_TEMPLATE.format(name=name) for name in predicted_names]
    truth_terms = [{dataset.class_names[c]} for c in labels]
    chairs, chairi = chair(responses, truth_terms, dataset.class_names)

    values = {
        "accuracy": accuracy,
        "macro_f1": macro_f1,
        "nll": nll(logp, labels),
        "ece": ece(logp, labels, ece_bins),
        "var_para": var_para(per_paraphrase),
        "chairs": chairs,
        "chairi": chairi,
    }
    return values, logp


def aggregate_mean_std(values) -> dict:
    """Mean ± population standard deviation across seeds."""
    arr = np.asarray(values, dtype=np.float64)
    return {"mean": float(arr.mean()), "std": float(arr.std())}
