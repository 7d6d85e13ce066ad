"""Evaluation metrics: classification quality, calibration, prediction
stability, hallucination counting, and the Wilcoxon signed-rank test."""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .errors import ConfigError, DataError, InsufficientDataError, ShapeError

DEFAULT_ECE_BINS = 15
_WILCOXON_EXACT_MAX = 12


@dataclass(frozen=True)
class EvalReport:
    """Aggregate metric values for one method × shot setting."""

    accuracy: float
    macro_f1: float
    nll: float
    ece: float
    var_para: float
    var_runs: float
    chairs: float | None = None
    chairi: float | None = None
    per_run_values: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        for name, value in (("accuracy", self.accuracy), ("macro_f1", self.macro_f1), ("ece", self.ece)):
            if not 0.0 <= value <= 1.0:
                raise DataError(f"{name} must lie in [0, 1], got {value}")
        if self.nll < 0.0:
            raise DataError(f"nll must be >= 0, got {self.nll}")
        if self.var_para < 0.0 or self.var_runs < 0.0:
            raise DataError("variance metrics must be >= 0")
        for name, value in (("chairs", self.chairs), ("chairi", self.chairi)):
            if value is not None and not 0.0 <= value <= 1.0:
                raise DataError(f"{name} must lie in [0, 1], got {value}")


def _prediction_matrix(predictions) -> np.ndarray:
    arr = np.asarray(predictions, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"predictions must be a list of class log-prob vectors, got shape {arr.shape}")
    return arr


def _check_lengths(predictions: np.ndarray, labels: np.ndarray) -> None:
    if predictions.shape[0] != labels.shape[0]:
        raise ShapeError(f"{predictions.shape[0]} predictions vs {labels.shape[0]} labels")
    if predictions.shape[0] < 1:
        raise ShapeError("need at least one item")


def accuracy_f1(predictions, labels) -> tuple[float, float]:
    """Accuracy and macro F1 (argmax ties go to the lowest class id).

    The macro mean runs over classes that appear in the labels; classes absent
    from the labels are excluded.
    """
    logp = _prediction_matrix(predictions)
    labels = np.asarray(labels, dtype=np.int64)
    _check_lengths(logp, labels)
    preds = logp.argmax(axis=1)
    accuracy = float((preds == labels).mean())
    f1_values = []
    for c in range(logp.shape[1]):
        if not np.any(labels == c):
            continue
        tp = int(np.sum((preds == c) & (labels == c)))
        fp = int(np.sum((preds == c) & (labels != c)))
        fn = int(np.sum((preds != c) & (labels == c)))
        f1_values.append(2.0 * tp / (2.0 * tp + fp + fn))
    return accuracy, float(np.mean(f1_values))


def nll(predictions, labels) -> float:
    """Mean negative log-probability of the true class."""
    logp = _prediction_matrix(predictions)
    labels = np.asarray(labels, dtype=np.int64)
    _check_lengths(logp, labels)
    return float(-logp[np.arange(labels.size), labels].mean())


def ece(predictions, labels, bins: int = DEFAULT_ECE_BINS) -> float:
    """Expected calibration error over equal-width, right-closed confidence bins.

    Confidence is the maximum class probability; bin b covers (b/B, (b+1)/B].
    """
    if bins < 1:
        raise ConfigError("bins must be >= 1")
    logp = _prediction_matrix(predictions)
    labels = np.asarray(labels, dtype=np.int64)
    _check_lengths(logp, labels)
    probs = np.exp(logp)
    confidence = probs.max(axis=1)
    correct = (logp.argmax(axis=1) == labels).astype(np.float64)
    # the small slack keeps exact bin edges in their right-closed bin
    bin_index = np.clip(np.ceil(confidence * bins - 1e-12).astype(np.int64) - 1, 0, bins - 1)
    total = 0.0
    n = labels.size
    for b in range(bins):
        mask = bin_index == b
        count = int(mask.sum())
        if count == 0:
            continue
        total += (count / n) * abs(correct[mask].mean() - confidence[mask].mean())
    return float(total)


def var_para(per_paraphrase_predictions) -> float:
    """Prediction variance under prompt paraphrases.

    Mean over queries of the mean over classes of the population variance,
    across paraphrases, of the class probability.
    """
    if len(per_paraphrase_predictions) < 2:
        raise ConfigError("need at least 2 paraphrases")
    stacks = [_prediction_matrix(p) for p in per_paraphrase_predictions]
    shape = stacks[0].shape
    if any(s.shape != shape for s in stacks):
        raise ShapeError("paraphrase prediction lists must be aligned")
    probs = np.exp(np.stack(stacks))  # (paraphrases, queries, classes)
    return float(np.var(probs, axis=0).mean())


def var_runs(per_run_predictions) -> float:
    """Population variance of the top-1 probability across runs, averaged over queries."""
    if len(per_run_predictions) < 2:
        raise ConfigError("need at least 2 runs")
    stacks = [_prediction_matrix(p) for p in per_run_predictions]
    shape = stacks[0].shape
    if any(s.shape != shape for s in stacks):
        raise ShapeError("run prediction lists must be aligned")
    top1 = np.exp(np.stack(stacks)).max(axis=2)  # (runs, queries)
    return float(np.var(top1, axis=0).mean())


def chair(responses, ground_truth_terms, vocabulary) -> tuple[float, float]:
    """Hallucinated-mention rates over free-text responses.

    A mention is any vocabulary term occurring in a response (case-insensitive,
    word boundaries); it is hallucinated when absent from that item's ground
    truth. Returns (share of responses with a hallucinated mention,
    hallucinated mentions / total mentions).
    """
    responses = list(responses)
    ground_truth_terms = list(ground_truth_terms)
    if len(responses) != len(ground_truth_terms):
        raise ShapeError("responses and ground-truth sets must be aligned")
    if not responses:
        return 0.0, 0.0
    patterns = [
        (term.lower(), re.compile(rf"\b{re.escape(term)}\b", re.IGNORECASE))
        for term in vocabulary
    ]
    total_mentions = 0
    hallucinated_mentions = 0
    flagged_responses = 0
    for text, truth in zip(responses, ground_truth_terms):
        truth_lower = {t.lower() for t in truth}
        mentions = 0
        hallucinated = 0
        for term_lower, pattern in patterns:
            count = len(pattern.findall(text))
            mentions += count
            if term_lower not in truth_lower:
                hallucinated += count
        total_mentions += mentions
        hallucinated_mentions += hallucinated
        if hallucinated > 0:
            flagged_responses += 1
    chairs = flagged_responses / len(responses)
    chairi = hallucinated_mentions / total_mentions if total_mentions else 0.0
    return float(chairs), float(chairi)


def _average_ranks(values: np.ndarray) -> np.ndarray:
    # ranks 1..n with ties averaged
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size, dtype=np.float64)
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _exact_two_sided_p(ranks: np.ndarray, w_observed: float) -> float:
    n = ranks.size
    total = float(ranks.sum())
    hits = 0
    for pattern in range(1 << n):
        w_plus = 0.0
        for k in range(n):
            if pattern >> k & 1:
                w_plus += ranks[k]
        if min(w_plus, total - w_plus) <= w_observed + 1e-12:
            hits += 1
    return hits / (1 << n)


def _approx_two_sided_p(ranks: np.ndarray, abs_diff: np.ndarray, w_observed: float) -> float:
    n = ranks.size
    mean_w = n * (n + 1) / 4.0
    _, tie_counts = np.unique(abs_diff, return_counts=True)
    tie_correction = float(np.sum(tie_counts.astype(np.float64) ** 3 - tie_counts)) / 48.0
    variance = n * (n + 1) * (2 * n + 1) / 24.0 - tie_correction
    z = (w_observed - mean_w + 0.5) / np.sqrt(variance)  # continuity correction
    return float(min(1.0, 2.0 * norm.cdf(z)))


def wilcoxon_signed_rank(a, b, method: str = "auto") -> tuple[float, float]:
    """Two-sided Wilcoxon signed-rank test over paired values.

    Zero differences are dropped; ties in |difference| get average ranks. The
    statistic is W = min(W⁺, W⁻). The p-value uses exact sign-pattern
    enumeration for n <= 12 and a normal approximation with tie and continuity
    corrections beyond that (`method` forces one path).

    Raises InsufficientDataError with fewer than 5 nonzero pairs.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeError("inputs must be equal-length 1-D sequences")
    if method not in ("auto", "exact", "approx"):
        raise ConfigError(f"unknown method {method!r}")
    diff = a - b
    diff = diff[diff != 0.0]
    n = diff.size
    if n < 5:
        raise InsufficientDataError(f"only {n} nonzero pairs, need at least 5")
    abs_diff = np.abs(diff)
    ranks = _average_ranks(abs_diff)
    w_plus = float(ranks[diff > 0].sum())
    w_minus = float(ranks[diff < 0].sum())
    w = min(w_plus, w_minus)
    if method == "exact" or (method == "auto" and n <= _WILCOXON_EXACT_MAX):
        p = _exact_two_sided_p(ranks, w)
    else:
        p = _approx_two_sided_p(ranks, abs_diff, w)
    return w, p
