"""RBF kernel, bandwidth selection, and the squared-MMD estimator.

The estimator is the unbiased U-statistic: within-set expectations run over
ordered distinct pairs (diagonal excluded), the cross term over all pairs.
It can therefore be slightly negative on matching distributions. A swap cache
supports O(|full| + |subset|) re-evaluation of single-member replacements for
the greedy search.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .data import EmbeddingMatrix
from .errors import ConfigError, ShapeError

BANDWIDTH_FIXED = "fixed"
BANDWIDTH_MEDIAN = "median_heuristic"
_BANDWIDTH_RULES = (BANDWIDTH_FIXED, BANDWIDTH_MEDIAN)

_FF_BLOCK = 512  # row-block size for the one-off full-set kernel sum


@dataclass(frozen=True)
class KernelConfig:
    """RBF kernel configuration: k(a, b) = exp(-||a − b||² / 2σ²)."""

    sigma: float
    bandwidth_rule: str = BANDWIDTH_FIXED

    def __post_init__(self) -> None:
        if not (np.isfinite(self.sigma) and self.sigma > 0):
            raise ConfigError(f"sigma must be positive and finite, got {self.sigma}")
        if self.bandwidth_rule not in _BANDWIDTH_RULES:
            raise ConfigError(f"bandwidth_rule must be one of {_BANDWIDTH_RULES}")


def rbf_kernel(a: np.ndarray, b: np.ndarray, config: KernelConfig) -> float:
    """Kernel value for a single vector pair; symmetric, in (0, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 1 or a.shape != b.shape:
        raise ShapeError(f"kernel arguments must be equal-length vectors, got {a.shape} and {b.shape}")
    diff = a - b
    return float(np.exp(-(diff @ diff) / (2.0 * config.sigma * config.sigma)))


def _kernel_matrix(x: np.ndarray, y: np.ndarray, sigma: float) -> np.ndarray:
    return np.exp(-cdist(x, y, "sqeuclidean") / (2.0 * sigma * sigma))


def _kernel_to(points: np.ndarray, vec: np.ndarray, sigma: float) -> np.ndarray:
    # Single evaluation path reused by cache build and swap so that repeated
    # evaluations of the same pair are bit-identical.
    diff = points - vec
    sq = np.einsum("ij,ij->i", diff, diff)
    return np.exp(-sq / (2.0 * sigma * sigma))


def median_heuristic_sigma(data: EmbeddingMatrix, max_pairs: int = 10_000, seed: int = 0) -> float:
    """Median pairwise distance over a seeded pair subsample, divided by √2.

    Falls back to 1.0 when the median distance is zero (degenerate data).

    Args:
        data: Sample matrix, at least two rows.
        max_pairs: Upper bound on distinct pairs examined.
        seed: Seed for the pair subsample; ignored when all pairs fit.
    """
    x = data.as_f64()
    n = x.shape[0]
    if n < 2:
        raise ConfigError("median heuristic needs at least 2 rows")
    if max_pairs < 1:
        raise ConfigError("max_pairs must be >= 1")
    total = n * (n - 1) // 2
    if total <= max_pairs:
        left, right = np.triu_indices(n, k=1)
    else:
        rng = np.random.default_rng(seed & ((1 << 64) - 1))
        chosen: set[tuple[int, int]] = set()
        while len(chosen) < max_pairs:
            need = max_pairs - len(chosen)
            ii = rng.integers(0, n, size=2 * need + 8)
            jj = rng.integers(0, n, size=2 * need + 8)
            for a, b in zip(ii.tolist(), jj.tolist()):
                if a == b:
                    continue
                chosen.add((a, b) if a < b else (b, a))
                if len(chosen) == max_pairs:
                    break
        pairs = np.array(sorted(chosen), dtype=np.int64)
        left, right = pairs[:, 0], pairs[:, 1]
    distances = np.linalg.norm(x[left] - x[right], axis=1)
    median = float(np.median(distances))
    if median <= 0.0:
        return 1.0
    return median / math.sqrt(2.0)


def _check_two_sets(full: EmbeddingMatrix, subset: EmbeddingMatrix) -> tuple[np.ndarray, np.ndarray]:
    if full.dim != subset.dim:
        raise ShapeError(f"dim mismatch: full {full.dim} vs subset {subset.dim}")
    if full.rows < 2 or subset.rows < 2:
        raise ConfigError("both sets need at least 2 rows for the unbiased estimator")
    return full.as_f64(), subset.as_f64()


def mmd_squared(full: EmbeddingMatrix, subset: EmbeddingMatrix, config: KernelConfig) -> float:
    """Unbiased squared maximum mean discrepancy between two sample sets.

    Returns E[k(x,x')] + E[k(u,u')] − 2 E[k(x,u)] with within-set expectations
    over distinct pairs. Bounded by 2 in magnitude; may be slightly negative.
    """
    x, y = _check_two_sets(full, subset)
    m, n = x.shape[0], y.shape[0]
    kxx = _kernel_matrix(x, x, config.sigma)
    kyy = _kernel_matrix(y, y, config.sigma)
    kxy = _kernel_matrix(x, y, config.sigma)
    a = (kxx.sum() - np.trace(kxx)) / (m * (m - 1))
    b = (kyy.sum() - np.trace(kyy)) / (n * (n - 1))
    c = kxy.mean()
    return float(a + b - 2.0 * c)


@dataclass
class MmdCache:
    """Incremental state for re-evaluating mmd² under single-member swaps.

    ``sum_ff`` is fixed at build time; the member kernel matrix and per-member
    cross sums are patched in place on each applied swap, so the implied mmd²
    is always an exact function of the current members (no accumulation drift).
    """

    full: np.ndarray
    members: np.ndarray
    sigma: float
    sum_ff: float
    member_kernel: np.ndarray
    cross_sums: np.ndarray

    @property
    def n_full(self) -> int:
        return self.full.shape[0]

    @property
    def n_members(self) -> int:
        return self.members.shape[0]

    @property
    def sum_dd(self) -> float:
        """Off-diagonal kernel sum over the current members."""
        return float(self.member_kernel.sum() - np.trace(self.member_kernel))

    def mmd2(self) -> float:
        m, n = self.n_full, self.n_members
        return float(
            self.sum_ff / (m * (m - 1))
            + self.sum_dd / (n * (n - 1))
            - 2.0 * float(self.cross_sums.sum()) / (m * n)
        )

    def swap_eval(self, out_member: int, in_candidate: np.ndarray):
        """Evaluate replacing member `out_member` with `in_candidate`.

        Returns ``(delta, row, cross)`` where delta is mmd²(after) − mmd²(before)
        and (row, cross) can be handed to :meth:`apply_swap`. Does not mutate.
        """
        n = self.n_members
        if not 0 <= out_member < n:
            raise IndexError(f"coreset position {out_member} out of range [0, {n})")
        vec = np.asarray(in_candidate, dtype=np.float64)
        if vec.shape != (self.members.shape[1],):
            raise ShapeError(f"candidate shape {vec.shape} != ({self.members.shape[1]},)")
        row = _kernel_to(self.members, vec, self.sigma)
        row[out_member] = 1.0  # k(v, v)
        cross = float(_kernel_to(self.full, vec, self.sigma).sum())
        old_off = float(self.member_kernel[out_member].sum()) - 1.0
        new_off = float(row.sum()) - 1.0
        m = self.n_full
        delta = 2.0 * (new_off - old_off) / (n * (n - 1)) - 2.0 * (
            cross - float(self.cross_sums[out_member])
        ) / (m * n)
        return delta, row, cross

    def apply_swap(self, out_member: int, in_candidate: np.ndarray, row=None, cross=None) -> None:
        """Commit a swap, optionally reusing the (row, cross) from swap_eval."""
        if row is None or cross is None:
            _, row, cross = self.swap_eval(out_member, in_candidate)
        self.members[out_member] = np.asarray(in_candidate, dtype=np.float64)
        self.member_kernel[out_member, :] = row
        self.member_kernel[:, out_member] = row
        self.cross_sums[out_member] = cross


def mmd_cache_build(full: EmbeddingMatrix, coreset_rows: EmbeddingMatrix, config: KernelConfig) -> MmdCache:
    """Build the swap cache; its mmd2() matches :func:`mmd_squared` within 1e-9 relative."""
    x, y = _check_two_sets(full, coreset_rows)
    m, n = x.shape[0], y.shape[0]
    sum_ff = 0.0
    for start in range(0, m, _FF_BLOCK):
        block = x[start : start + _FF_BLOCK]
        sum_ff += float(_kernel_matrix(block, x, config.sigma).sum())
    sum_ff -= m  # unit diagonal
    member_kernel = np.empty((n, n), dtype=np.float64)
    cross_sums = np.empty(n, dtype=np.float64)
    for i in range(n):
        member_kernel[i] = _kernel_to(y, y[i], config.sigma)
        cross_sums[i] = float(_kernel_to(x, y[i], config.sigma).sum())
    return MmdCache(
        full=x,
        members=y.copy(),
        sigma=config.sigma,
        sum_ff=sum_ff,
        member_kernel=member_kernel,
        cross_sums=cross_sums,
    )


def mmd_cache_swap_delta(cache: MmdCache, out_member: int, in_candidate: np.ndarray) -> float:
    """mmd²(after swap) − mmd²(before), without mutating the cache."""
    delta, _, _ = cache.swap_eval(out_member, in_candidate)
    return delta
