"""Joint objective assembly and greedy swap search.

The objective is mmd² + α·(prompt-shift upper bound) + β·(predictive variance),
minimized over class-balanced coresets by accept-only-improving random
single swaps within a class. The kernel bandwidth, probe set, and prompt
summaries are frozen before iteration 0, so the objective is stationary.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .data import PROBE, TRAIN, Coreset, EmbeddingMatrix, LabeledDataset, PromptEmbeddingSet
from .errors import ConfigError
from .gaussians import emid_upper
from .kernels import BANDWIDTH_MEDIAN, KernelConfig, MmdCache, mmd_cache_build, mmd_squared, median_heuristic_sigma
from .predictor import PredictorConfig, build_emid_inputs, variance_term
from .rng import stream

ACCEPT_TOLERANCE = 1e-12  # swaps must improve by more than this; ties keep the incumbent
DEFAULT_PROBE_CAP = 64
MEDIAN_PAIR_CAP = 10_000
SIGMA_SAMPLE_SEED = 0  # bandwidth is a per-dataset constant, not a per-run draw


@dataclass(frozen=True)
class ObjectiveWeights:
    """Trade-off weights: alpha on the prompt-shift bound, beta on the variance term."""

    alpha: float
    beta: float

    def __post_init__(self) -> None:
        if not (np.isfinite(self.alpha) and self.alpha >= 0):
            raise ConfigError("alpha must be >= 0 and finite")
        if not (np.isfinite(self.beta) and self.beta >= 0):
            raise ConfigError("beta must be >= 0 and finite")


@dataclass(frozen=True)
class ObjectiveValue:
    total: float
    mmd2: float
    emid: float
    var: float


def combine_terms(mmd2: float, emid: float, var: float, weights: ObjectiveWeights) -> float:
    return mmd2 + weights.alpha * emid + weights.beta * var


@dataclass(frozen=True)
class ObjectiveContext:
    """Frozen evaluation context: dataset, kernel, prompts, predictor, probes, weights."""

    dataset: LabeledDataset
    prompts: PromptEmbeddingSet
    kernel: KernelConfig
    predictor: PredictorConfig
    probe_indices: np.ndarray
    weights: ObjectiveWeights
    shrinkage: float = 0.1

    def __post_init__(self) -> None:
        idx = np.asarray(self.probe_indices, dtype=np.int64).copy()
        idx.setflags(write=False)
        object.__setattr__(self, "probe_indices", idx)


def _stratified_probe_sample(dataset: LabeledDataset, cap: int, seed: int) -> np.ndarray:
    """All probe rows, subsampled per class to the cap when more exist."""
    probe = dataset.split_indices(PROBE)
    if cap < 1 or probe.size <= cap:
        return probe
    labels = dataset.labels[probe]
    classes = [probe[labels == c] for c in range(dataset.n_classes)]
    quotas = [cap * rows.size / probe.size for rows in classes]
    counts = [int(q) for q in quotas]
    leftover = cap - sum(counts)
    order = sorted(range(len(quotas)), key=lambda c: quotas[c] - counts[c], reverse=True)
    for c in order[:leftover]:
        counts[c] += 1
    rng = stream(seed, "probe")
    picked = [
        np.sort(rng.choice(rows, size=min(k, rows.size), replace=False))
        for rows, k in zip(classes, counts)
        if k > 0 and rows.size > 0
    ]
    return np.sort(np.concatenate(picked)) if picked else probe[:0]


def make_context(
    dataset: LabeledDataset,
    prompts: PromptEmbeddingSet,
    kernel: KernelConfig,
    predictor: PredictorConfig,
    weights: ObjectiveWeights,
    probe_cap: int = DEFAULT_PROBE_CAP,
    seed: int = 0,
    shrinkage: float = 0.1,
) -> ObjectiveContext:
    """Resolve the bandwidth and probe subsample, freezing the objective for a run."""
    if kernel.bandwidth_rule == BANDWIDTH_MEDIAN:
        train = dataset.split_indices(TRAIN)
        if train.size < 2:
            raise ConfigError("median bandwidth needs at least 2 train rows")
        sigma = median_heuristic_sigma(
            EmbeddingMatrix(dataset.embeddings.values[train]),
            max_pairs=MEDIAN_PAIR_CAP,
            seed=SIGMA_SAMPLE_SEED,
        )
        kernel = dataclasses.replace(kernel, sigma=sigma)
    probe_indices = _stratified_probe_sample(dataset, probe_cap, seed)
    return ObjectiveContext(
        dataset=dataset,
        prompts=prompts,
        kernel=kernel,
        predictor=predictor,
        probe_indices=probe_indices,
        weights=weights,
        shrinkage=shrinkage,
    )


def _soft_terms(
    indices: np.ndarray,
    shots_per_class: int,
    context: ObjectiveContext,
    original_prompt_mean: np.ndarray,
    want_emid: bool,
    want_var: bool,
) -> tuple[float, float]:
    coreset = Coreset(indices, shots_per_class)
    emid = 0.0
    var = 0.0
    if want_emid:
        inputs = build_emid_inputs(
            coreset, context.dataset, context.probe_indices, context.prompts,
            context.predictor, context.shrinkage,
        )
        emid = emid_upper(inputs)
    if want_var:
        var = variance_term(coreset, context.dataset, context.probe_indices, original_prompt_mean, context.predictor)
    return emid, var


def objective(coreset: Coreset, context: ObjectiveContext) -> ObjectiveValue:
    """Evaluate the joint objective for one coreset under a frozen context.

    The distributional target of the mmd² term is the train split. The soft
    terms are measured whenever probe rows exist, even at zero weight.
    """
    dataset = context.dataset
    train = dataset.split_indices(TRAIN)
    full = EmbeddingMatrix(dataset.embeddings.values[train])
    subset = EmbeddingMatrix(dataset.embeddings.values[coreset.indices])
    mmd2 = mmd_squared(full, subset, context.kernel)
    weights = context.weights
    have_probes = context.probe_indices.size >= 2
    if not have_probes and (weights.alpha > 0 or weights.beta > 0):
        raise ConfigError("nonzero alpha/beta need a probe set of at least 2 rows")
    emid = var = 0.0
    if have_probes:
        original_mean = context.prompts.original.as_f64().mean(axis=0)
        emid, var = _soft_terms(
            coreset.indices, coreset.shots_per_class, context, original_mean,
            want_emid=True, want_var=True,
        )
    total = combine_terms(mmd2, emid, var, weights)
    return ObjectiveValue(total=total, mmd2=mmd2, emid=emid, var=var)


@dataclass
class SelectionResult:
    """Outcome of one greedy run: final coreset, trace, and term breakdown."""

    coreset: Coreset
    objective_trace: list[float]
    term_breakdown: tuple[float, float, float]  # (mmd2, emid, var)
    accepted_swaps: int
    seed: int
    config: dict = field(default_factory=dict)

    def validate(self) -> None:
        trace = self.objective_trace
        if any(b > a for a, b in zip(trace, trace[1:])):
            raise ConfigError("objective trace must be non-increasing")
        weights = ObjectiveWeights(self.config["alpha"], self.config["beta"])
        recombined = combine_terms(*self.term_breakdown, weights)
        if abs(recombined - trace[-1]) > 1e-9:
            raise ConfigError("term breakdown does not recombine to the final objective")


def greedy_select(
    dataset: LabeledDataset,
    shots_per_class: int,
    iterations: int,
    weights: ObjectiveWeights,
    seed: int,
    context: ObjectiveContext,
) -> SelectionResult:
    """Accept-only-improving random single-swap search over balanced coresets.

    Starts from a seeded class-stratified random coreset. Each iteration
    proposes replacing a uniformly random member with a uniformly random
    non-member train row of the same class and accepts iff the total strictly
    decreases (ties keep the incumbent). The mmd² term is re-evaluated through
    the swap cache; the soft terms by full re-evaluation. Deterministic for a
    fixed seed.
    """
    if dataset is not context.dataset:
        raise ConfigError("context was built for a different dataset")
    if iterations < 0:
        raise ConfigError("iterations must be >= 0")
    n_classes = dataset.n_classes
    pools = [dataset.train_indices_by_class(c) for c in range(n_classes)]
    for c, pool in enumerate(pools):
        if pool.size <= shots_per_class:
            raise ConfigError(
                f"class {c} needs more than {shots_per_class} train members for swap proposals"
            )
    need_emid = weights.alpha > 0.0
    need_var = weights.beta > 0.0
    have_probes = context.probe_indices.size >= 2
    if (need_emid or need_var) and not have_probes:
        raise ConfigError("nonzero alpha/beta need a probe set of at least 2 rows")

    init_rng = stream(seed, "init")
    indices = np.concatenate(
        [np.sort(init_rng.choice(pool, size=shots_per_class, replace=False)) for pool in pools]
    )
    member_labels = dataset.labels[indices]
    member_flag = np.zeros(dataset.rows, dtype=bool)
    member_flag[indices] = True

    emb64 = dataset.embeddings.as_f64()
    train = dataset.split_indices(TRAIN)
    cache = mmd_cache_build(
        EmbeddingMatrix(dataset.embeddings.values[train]),
        EmbeddingMatrix(dataset.embeddings.values[indices]),
        context.kernel,
    )
    original_mean = context.prompts.original.as_f64().mean(axis=0) if have_probes else None

    mmd2 = cache.mmd2()
    emid, var = (0.0, 0.0)
    if need_emid or need_var:
        emid, var = _soft_terms(indices, shots_per_class, context, original_mean, need_emid, need_var)
    total = combine_terms(mmd2, emid, var, weights)
    trace = [total]
    accepted = 0

    proposal_rng = stream(seed, "proposals")
    for _ in range(iterations):
        pos = int(proposal_rng.integers(indices.size))
        pool = pools[member_labels[pos]]
        candidates = pool[~member_flag[pool]]
        candidate = int(candidates[proposal_rng.integers(candidates.size)])
        delta, row, cross = cache.swap_eval(pos, emb64[candidate])
        new_mmd2 = mmd2 + delta
        if need_emid or need_var:
            trial = indices.copy()
            trial[pos] = candidate
            new_emid, new_var = _soft_terms(trial, shots_per_class, context, original_mean, need_emid, need_var)
        else:
            new_emid, new_var = emid, var
        new_total = combine_terms(new_mmd2, new_emid, new_var, weights)
        if total - new_total > ACCEPT_TOLERANCE:
            cache.apply_swap(pos, emb64[candidate], row=row, cross=cross)
            member_flag[indices[pos]] = False
            member_flag[candidate] = True
            indices[pos] = candidate
            mmd2 = cache.mmd2()
            emid, var = new_emid, new_var
            total = combine_terms(mmd2, emid, var, weights)
            accepted += 1
        trace.append(total)

    # Final breakdown measures both soft terms when probes exist, even at zero weight.
    final_emid, final_var = emid, var
    if have_probes and not (need_emid and need_var):
        fresh_emid, fresh_var = _soft_terms(
            indices, shots_per_class, context, original_mean,
            want_emid=not need_emid, want_var=not need_var,
        )
        if not need_emid:
            final_emid = fresh_emid
        if not need_var:
            final_var = fresh_var

    coreset = Coreset(indices.copy(), shots_per_class)
    coreset.validate(dataset)
    result = SelectionResult(
        coreset=coreset,
        objective_trace=trace,
        term_breakdown=(mmd2, final_emid, final_var),
        accepted_swaps=accepted,
        seed=seed,
        config={
            "shots_per_class": shots_per_class,
            "iterations": iterations,
            "alpha": weights.alpha,
            "beta": weights.beta,
            "sigma": context.kernel.sigma,
            "temperature": context.predictor.temperature,
            "prompt_coupling": context.predictor.prompt_coupling,
            "probe_count": int(context.probe_indices.size),
            "shrinkage": context.shrinkage,
        },
    )
    result.validate()
    return result


def ablate(
    dataset: LabeledDataset,
    grid: list[ObjectiveWeights],
    shots_per_class: int,
    iterations: int,
    seed: int,
    context: ObjectiveContext,
) -> list[SelectionResult]:
    """Run greedy_select once per weight setting with the same seed and initial coreset."""
    if not grid:
        raise ConfigError("ablation grid must be nonempty")
    return [
        greedy_select(dataset, shots_per_class, iterations, weights, seed, context)
        for weights in grid
    ]
