"""Prototype-softmax predictor standing in for a frozen scoring model.

The predictor turns a coreset into per-class prototypes (mean member
embedding) and scores queries by negative squared distance over a
temperature. Prompt influence is an additive coupled vector, so prompt
paraphrases causally shift responses when ``prompt_coupling > 0``. Also hosts
the predictive-variance regularizer and the adapter that converts probe
predictions into the distribution summaries of the prompt-shift bound.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from .data import PROBE, Coreset, LabeledDataset, PromptEmbeddingSet
from .errors import ConfigError
from .gaussians import EPS_FLOOR, EmidInputs, GaussianSummary, summarize

LABEL_SMOOTHING = 0.05

# Log-probability vector over classes, shape (n_classes,), logsumexp == 0.
ClassLogProbs = np.ndarray


@dataclass(frozen=True)
class PredictorConfig:
    """Softmax temperature and the scale of prompt influence on queries."""

    temperature: float
    prompt_coupling: float = 0.0

    def __post_init__(self) -> None:
        if not (np.isfinite(self.temperature) and self.temperature > 0):
            raise ConfigError(f"temperature must be positive and finite, got {self.temperature}")
        if not (np.isfinite(self.prompt_coupling) and self.prompt_coupling >= 0):
            raise ConfigError("prompt_coupling must be >= 0 and finite")


def project_prompt(prompt: np.ndarray, dim: int) -> np.ndarray:
    """Truncate or zero-pad a prompt vector to the embedding dimension."""
    v = np.asarray(prompt, dtype=np.float64).ravel()
    if v.size >= dim:
        return v[:dim]
    out = np.zeros(dim)
    out[: v.size] = v
    return out


def class_prototypes(member_embeddings: np.ndarray, member_labels: np.ndarray, n_classes: int) -> np.ndarray:
    """Per-class mean embeddings of the coreset members, shape (n_classes, d)."""
    member_embeddings = np.asarray(member_embeddings, dtype=np.float64)
    prototypes = np.empty((n_classes, member_embeddings.shape[1]))
    for c in range(n_classes):
        mask = member_labels == c
        if not mask.any():
            raise ConfigError(f"coreset has no member for class {c}")
        prototypes[c] = member_embeddings[mask].mean(axis=0)
    return prototypes


def _log_probs(queries: np.ndarray, prototypes: np.ndarray, prompt, config: PredictorConfig) -> np.ndarray:
    queries = np.asarray(queries, dtype=np.float64)
    if prompt is not None and config.prompt_coupling != 0.0:
        queries = queries + config.prompt_coupling * project_prompt(prompt, queries.shape[1])
    logits = -cdist(queries, prototypes, "sqeuclidean") / config.temperature
    return logits - logsumexp(logits, axis=1, keepdims=True)


def predict_batch(
    queries: np.ndarray,
    coreset: Coreset,
    dataset: LabeledDataset,
    prompt,
    config: PredictorConfig,
) -> np.ndarray:
    """Log-probabilities for a batch of queries, shape (n, n_classes)."""
    emb = dataset.embeddings.as_f64()
    prototypes = class_prototypes(emb[coreset.indices], dataset.labels[coreset.indices], dataset.n_classes)
    return _log_probs(np.atleast_2d(queries), prototypes, prompt, config)


def predict(query, coreset: Coreset, dataset: LabeledDataset, prompt, config: PredictorConfig) -> ClassLogProbs:
    """Normalized class log-probabilities for a single query."""
    return predict_batch(np.asarray(query, dtype=np.float64)[None, :], coreset, dataset, prompt, config)[0]


def _check_probe_indices(dataset: LabeledDataset, probe_indices) -> np.ndarray:
    idx = np.asarray(probe_indices, dtype=np.int64)
    if idx.size == 0:
        raise ConfigError("probe set is empty")
    if np.any(dataset.splits[idx] != PROBE):
        raise ConfigError("probe indices must lie in the probe split")
    return idx


def variance_term(
    coreset: Coreset,
    dataset: LabeledDataset,
    probe_indices,
    prompt,
    config: PredictorConfig,
) -> float:
    """Mean over probes of the population variance across classes of the log-probs."""
    idx = _check_probe_indices(dataset, probe_indices)
    logp = predict_batch(dataset.embeddings.as_f64()[idx], coreset, dataset, prompt, config)
    return float(np.var(logp, axis=1).mean())


def smoothed_one_hot(labels: np.ndarray, n_classes: int, smoothing: float = LABEL_SMOOTHING) -> np.ndarray:
    """Label-smoothed one-hot probability rows, shape (n, n_classes)."""
    labels = np.asarray(labels, dtype=np.int64)
    out = np.full((labels.size, n_classes), smoothing / n_classes)
    out[np.arange(labels.size), labels] += 1.0 - smoothing
    return out


def _prompt_summary(matrix, shrinkage: float) -> GaussianSummary:
    # Single-template prompt sets get a point summary with floor covariance.
    values = matrix.as_f64()
    if values.shape[0] >= 2:
        return summarize(values, shrinkage)
    return GaussianSummary(values[0], EPS_FLOOR * np.eye(values.shape[1]), 1)


def build_emid_inputs(
    coreset: Coreset,
    dataset: LabeledDataset,
    probe_indices,
    prompts: PromptEmbeddingSet,
    config: PredictorConfig,
    shrinkage: float = 0.1,
) -> EmidInputs:
    """Assemble the seven distribution summaries of the prompt-shift bound.

    Visual summaries are shared (the probe embeddings do not move under a text
    shift). Response distributions are prediction probability vectors over the
    probes under the mean original / mean paraphrase prompt; the ideal response
    is the label-smoothed one-hot of the probe ground truth.
    """
    idx = _check_probe_indices(dataset, probe_indices)
    if idx.size < 2:
        raise ConfigError("need at least 2 probe rows to summarize distributions")
    probe_rows = dataset.embeddings.as_f64()[idx]

    visual = summarize(probe_rows, shrinkage)
    text_p = _prompt_summary(prompts.original, shrinkage)
    text_q = _prompt_summary(prompts.paraphrases, shrinkage)

    original_mean = prompts.original.as_f64().mean(axis=0)
    paraphrase_mean = prompts.paraphrases.as_f64().mean(axis=0)
    logp_original = predict_batch(probe_rows, coreset, dataset, original_mean, config)
    logp_paraphrase = predict_batch(probe_rows, coreset, dataset, paraphrase_mean, config)
    response_p = summarize(np.exp(logp_original), shrinkage)
    response_q = summarize(np.exp(logp_paraphrase), shrinkage)
    response_ideal = summarize(smoothed_one_hot(dataset.labels[idx], dataset.n_classes), shrinkage)

    return EmidInputs(
        visual_p=visual,
        visual_q=visual,
        text_p=text_p,
        text_q=text_q,
        response_p=response_p,
        response_q=response_q,
        response_ideal=response_ideal,
    )
