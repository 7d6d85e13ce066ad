"""Gaussian summaries of empirical distributions and divergences between them.

Jensen-Shannon divergence between Gaussians has no closed form; the mixture
is moment-matched to a single Gaussian, which keeps the computation
deterministic and fast. The approximation is not guaranteed to stay below
ln 2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla

from .data import EmbeddingMatrix
from .errors import ConfigError, DataError, NumericalError, ShapeError

EPS_FLOOR = 1e-6
DEFAULT_SHRINKAGE = 0.1


@dataclass(frozen=True)
class GaussianSummary:
    """Mean vector and covariance matrix summarizing an empirical distribution."""

    mean: np.ndarray
    covariance: np.ndarray
    sample_count: int

    def __post_init__(self) -> None:
        # copy before freezing so callers' arrays stay writable
        mean = np.asarray(self.mean, dtype=np.float64).copy()
        cov = np.asarray(self.covariance, dtype=np.float64).copy()
        if mean.ndim != 1:
            raise ShapeError(f"mean must be a vector, got shape {mean.shape}")
        if cov.shape != (mean.size, mean.size):
            raise ShapeError(f"covariance shape {cov.shape} does not match mean dim {mean.size}")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
            raise DataError("summary holds non-finite components")
        if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-12):
            raise DataError("covariance must be symmetric within 1e-12")
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    @property
    def dim(self) -> int:
        return int(self.mean.size)


@dataclass(frozen=True)
class EmidInputs:
    """The seven distribution summaries feeding the prompt-shift upper bound."""

    visual_p: GaussianSummary
    visual_q: GaussianSummary
    text_p: GaussianSummary
    text_q: GaussianSummary
    response_p: GaussianSummary
    response_q: GaussianSummary
    response_ideal: GaussianSummary

    def __post_init__(self) -> None:
        if self.visual_p.dim != self.visual_q.dim:
            raise ShapeError("visual summaries must share one dim")
        if self.text_p.dim != self.text_q.dim:
            raise ShapeError("text summaries must share one dim")
        if not (self.response_p.dim == self.response_q.dim == self.response_ideal.dim):
            raise ShapeError("response summaries must share one dim")


def summarize(samples, shrinkage: float = DEFAULT_SHRINKAGE) -> GaussianSummary:
    """Mean and shrunk covariance of a sample matrix.

    The covariance is ``(1−λ)·S + λ·(tr(S)/d)·I + ε_floor·I`` with S the
    unbiased sample covariance, so the result is always well-conditioned.

    Args:
        samples: (n, d) array or EmbeddingMatrix, n >= 2.
        shrinkage: λ in [0, 1].
    """
    x = samples.as_f64() if isinstance(samples, EmbeddingMatrix) else np.asarray(samples, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"samples must be 2-D, got shape {x.shape}")
    n, d = x.shape
    if n < 2:
        raise ConfigError("summarize needs at least 2 samples")
    if not 0.0 <= shrinkage <= 1.0:
        raise ConfigError(f"shrinkage must lie in [0, 1], got {shrinkage}")
    mean = x.mean(axis=0)
    centered = x - mean
    s = centered.T @ centered / (n - 1)
    s = 0.5 * (s + s.T)
    eye = np.eye(d)
    cov = (1.0 - shrinkage) * s + shrinkage * (np.trace(s) / d) * eye + EPS_FLOOR * eye
    return GaussianSummary(mean, cov, n)


def _identical(p: GaussianSummary, q: GaussianSummary) -> bool:
    return p is q or (np.array_equal(p.mean, q.mean) and np.array_equal(p.covariance, q.covariance))


def _chol(cov: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    try:
        return np.linalg.cholesky(cov + EPS_FLOOR * np.eye(cov.shape[0]))
    except np.linalg.LinAlgError as exc:
        raise NumericalError("covariance not positive definite after regularization") from exc


def gaussian_kl(p: GaussianSummary, q: GaussianSummary) -> float:
    """Closed-form KL(p ‖ q) between Gaussian summaries, clamped at 0.

    Evaluated through Cholesky factors (no explicit inversion):
    ½ [ tr(Σq⁻¹Σp) + (μq−μp)ᵀ Σq⁻¹ (μq−μp) − d + ln det Σq − ln det Σp ].
    """
    if p.dim != q.dim:
        raise ShapeError(f"dim mismatch: {p.dim} vs {q.dim}")
    if _identical(p, q):
        return 0.0
    lp = _chol(p.covariance)
    lq = _chol(q.covariance)
    a = sla.solve_triangular(lq, lp, lower=True)
    trace_term = float(np.sum(a * a))
    z = sla.solve_triangular(lq, q.mean - p.mean, lower=True)
    quad = float(z @ z)
    logdet = 2.0 * float(np.log(np.diag(lq)).sum() - np.log(np.diag(lp)).sum())
    kl = 0.5 * (trace_term + quad - p.dim + logdet)
    return max(kl, 0.0)


def gaussian_js(p: GaussianSummary, q: GaussianSummary) -> float:
    """Jensen-Shannon divergence via the moment-matched mixture Gaussian.

    Builds M with μ_m = (μ_p + μ_q)/2 and the mixture's exact second moment
    (plus the ε floor), then returns ½ KL(p‖M) + ½ KL(q‖M). Symmetric, and
    exactly 0 on identical inputs.
    """
    if p.dim != q.dim:
        raise ShapeError(f"dim mismatch: {p.dim} vs {q.dim}")
    if _identical(p, q):
        return 0.0
    mean_m = 0.5 * (p.mean + q.mean)
    second = 0.5 * (p.covariance + np.outer(p.mean, p.mean)) + 0.5 * (
        q.covariance + np.outer(q.mean, q.mean)
    )
    cov_m = second - np.outer(mean_m, mean_m) + EPS_FLOOR * np.eye(p.dim)
    cov_m = 0.5 * (cov_m + cov_m.T)
    mixture = GaussianSummary(mean_m, cov_m, p.sample_count + q.sample_count)
    return 0.5 * gaussian_kl(p, mixture) + 0.5 * gaussian_kl(q, mixture)


def combine_divergences(visual_js: float, text_js: float, response_js: float, response_shifted_js: float) -> float:
    """Fractional-power sum: square roots for the two modality terms, fourth roots for the response terms."""
    return visual_js**0.5 + text_js**0.5 + response_js**0.25 + response_shifted_js**0.25


def emid_upper(inputs: EmidInputs) -> float:
    """Upper bound on the mutual-information degradation under a prompt shift.

    js(visual)^½ + js(text)^½ + js(ideal, response)^¼ + js(ideal, shifted response)^¼.
    Nonnegative; exactly 0 when every paired summary is identical.
    """
    return combine_divergences(
        gaussian_js(inputs.visual_p, inputs.visual_q),
        gaussian_js(inputs.text_p, inputs.text_q),
        gaussian_js(inputs.response_ideal, inputs.response_p),
        gaussian_js(inputs.response_ideal, inputs.response_q),
    )
