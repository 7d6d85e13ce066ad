"""Reference selection strategies: random, query-local kNN, and kernel herding."""

from __future__ import annotations

import numpy as np

from .data import Coreset, LabeledDataset
from .errors import ConfigError, ShapeError
from .kernels import KernelConfig, _kernel_matrix
from .rng import stream


def _class_pools(dataset: LabeledDataset, shots_per_class: int) -> list[np.ndarray]:
    pools = [dataset.train_indices_by_class(c) for c in range(dataset.n_classes)]
    for c, pool in enumerate(pools):
        if pool.size < shots_per_class:
            raise ConfigError(
                f"class {c} has {pool.size} train members, fewer than {shots_per_class} shots"
            )
    return pools


def select_random(dataset: LabeledDataset, shots_per_class: int, seed: int) -> Coreset:
    """Class-stratified uniform sample without replacement; deterministic per seed."""
    pools = _class_pools(dataset, shots_per_class)
    rng = stream(seed, "random-select")
    chosen = [np.sort(rng.choice(pool, size=shots_per_class, replace=False)) for pool in pools]
    coreset = Coreset(np.concatenate(chosen), shots_per_class)
    coreset.validate(dataset)
    return coreset


def select_knn(dataset: LabeledDataset, query: np.ndarray, shots_per_class: int) -> Coreset:
    """Per class, the train members nearest (Euclidean) to the query.

    Ties break toward the lower row index, so the result is fully determined
    by the embedding contents.
    """
    query = np.asarray(query, dtype=np.float64).ravel()
    if query.size != dataset.dim:
        raise ShapeError(f"query dim {query.size} != dataset dim {dataset.dim}")
    pools = _class_pools(dataset, shots_per_class)
    emb = dataset.embeddings.as_f64()
    chosen = []
    for pool in pools:
        distances = np.linalg.norm(emb[pool] - query, axis=1)
        order = np.lexsort((pool, distances))
        chosen.append(pool[order[:shots_per_class]])
    coreset = Coreset(np.concatenate(chosen), shots_per_class)
    coreset.validate(dataset)
    return coreset


def select_herding(dataset: LabeledDataset, shots_per_class: int, config: KernelConfig) -> Coreset:
    """Deterministic greedy kernel herding, class by class.

    Each step adds the candidate that most reduces the class-restricted mmd²
    between the class's train rows and the growing class subset, with the
    within-subset term taken over all pairs (V-statistic) so size-1 subsets are
    well defined: for 1 shot this picks the candidate with the highest mean
    kernel similarity to its class.
    """
    pools = _class_pools(dataset, shots_per_class)
    emb = dataset.embeddings.as_f64()
    chosen: list[np.ndarray] = []
    for pool in pools:
        rows = emb[pool]
        p = pool.size
        kernel = _kernel_matrix(rows, rows, config.sigma)
        col_sums = kernel.sum(axis=0)  # Σ_x k(x, u) over the class's train rows
        selected: list[int] = []
        selected_mask = np.zeros(p, dtype=bool)
        within_sum = 0.0  # Σ k over selected×selected, diagonal included
        kernel_to_selected = np.zeros(p)  # Σ_{u∈selected} k(u, ·)
        cross_sum = 0.0  # Σ_{u∈selected} col_sums[u]
        for step in range(shots_per_class):
            size = step + 1
            within_new = within_sum + 2.0 * kernel_to_selected + 1.0
            cross_new = cross_sum + col_sums
            scores = within_new / (size * size) - 2.0 * cross_new / (p * size)
            scores[selected_mask] = np.inf
            pick = int(np.argmin(scores))
            selected.append(pick)
            selected_mask[pick] = True
            within_sum = float(within_new[pick])
            cross_sum = float(cross_new[pick])
            kernel_to_selected = kernel_to_selected + kernel[pick]
        chosen.append(pool[np.asarray(selected, dtype=np.int64)])
    coreset = Coreset(np.concatenate(chosen), shots_per_class)
    coreset.validate(dataset)
    return coreset
