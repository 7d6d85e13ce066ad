"""Command-line surface: `synth`, `select`, `eval`, and `ablate`.

Configuration comes from a single JSON file plus flag overrides (flags win);
the effective config is echoed into every output. Exit codes: 0 success,
2 config error, 3 data/format error, 4 numerical error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .baselines import select_herding, select_random
from .data import (
    TRAIN,
    Coreset,
    EmbeddingMatrix,
    LabeledDataset,
    PromptEmbeddingSet,
    generate_synthetic,
    l2_normalized,
    load_dataset,
    read_embeddings,
    write_class_names,
    write_embeddings,
    write_labels,
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
from .evaluation import PER_SEED_METRICS, aggregate_mean_std, evaluate_selection
from .kernels import BANDWIDTH_FIXED, BANDWIDTH_MEDIAN, KernelConfig, median_heuristic_sigma
from .metrics import DEFAULT_ECE_BINS, EvalReport, var_runs, wilcoxon_signed_rank
from .optimizer import (
    MEDIAN_PAIR_CAP,
    SIGMA_SAMPLE_SEED,
    ObjectiveWeights,
    ablate,
    greedy_select,
    make_context,
)
from .predictor import PredictorConfig
from .rng import stream

METHODS = ("gauc", "random", "knn", "herding")
ABLATION_LABELS = ("full", "no_emid", "no_var", "mmd_only")

_DATASET_FIELDS = ("embeddings", "labels", "class_names", "prompts_original", "prompts_paraphrase")


@dataclass
class RunConfig:
    """Effective run configuration; defaults follow the selection protocol."""

    embeddings: str = ""
    labels: str = ""
    class_names: str = ""
    prompts_original: str = ""
    prompts_paraphrase: str = ""
    method: str = "gauc"
    shots: int = 1
    iterations: int = 1000
    alpha: float = 0.1
    beta: float = 0.1
    sigma: float | None = None
    sigma_rule: str = BANDWIDTH_MEDIAN
    temperature: float = 4.0
    prompt_coupling: float = 0.3
    probe_cap: int = 64
    ece_bins: int = DEFAULT_ECE_BINS
    l2_normalize: bool = False
    seeds: tuple[int, ...] = (0,)
    out_dir: str = "runs"

    def echo(self) -> dict:
        out = dataclasses.asdict(self)
        out["seeds"] = list(self.seeds)
        return out


def _parse_seed_list(text: str) -> tuple[int, ...]:
    try:
        seeds = tuple(int(part) for part in text.split(",") if part.strip() != "")
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from exc
    if not seeds:
        raise argparse.ArgumentTypeError("seed list is empty")
    return seeds


def _parse_ratio_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(part) for part in text.split(",") if part.strip() != "")
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad ratio list {text!r}") from exc


def _load_config_file(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise FormatError(f"config {path} must hold a JSON object")
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return raw


def build_config(args, base: dict | None = None) -> RunConfig:
    """Defaults < base dict < config file < flags."""
    merged: dict = {}
    if base:
        merged.update({k: v for k, v in base.items() if k in {f.name for f in dataclasses.fields(RunConfig)}})
    if getattr(args, "config", None):
        merged.update(_load_config_file(args.config))
    for name in (
        "embeddings", "labels", "class_names", "prompts_original", "prompts_paraphrase",
        "method", "shots", "iterations", "alpha", "beta", "sigma", "sigma_rule",
        "temperature", "prompt_coupling", "probe_cap", "ece_bins", "l2_normalize",
    ):
        value = getattr(args, name, None)
        if value is not None:
            merged[name] = value
    if getattr(args, "seed", None) is not None:
        merged["seeds"] = args.seed
    if getattr(args, "out", None) is not None:
        merged["out_dir"] = args.out
    if "seeds" in merged:
        merged["seeds"] = tuple(int(s) for s in merged["seeds"])
    config = RunConfig(**merged)
    _validate_config(config)
    return config


def _validate_config(config: RunConfig) -> None:
    if config.method not in METHODS:
        raise ConfigError(f"method must be one of {METHODS}, got {config.method!r}")
    if not config.seeds:
        raise ConfigError("seed list is empty")
    if config.shots < 1:
        raise ConfigError("shots must be >= 1")
    if config.iterations < 0:
        raise ConfigError("iterations must be >= 0")
    if config.alpha < 0 or config.beta < 0:
        raise ConfigError("alpha and beta must be >= 0")
    if config.ece_bins < 1:
        raise ConfigError("ece_bins must be >= 1")
    if config.sigma_rule not in (BANDWIDTH_FIXED, BANDWIDTH_MEDIAN):
        raise ConfigError(f"sigma_rule must be '{BANDWIDTH_FIXED}' or '{BANDWIDTH_MEDIAN}'")
    if config.sigma_rule == BANDWIDTH_FIXED and config.sigma is None:
        raise ConfigError("fixed sigma rule needs a sigma value")
    for field_name in _DATASET_FIELDS:
        path = getattr(config, field_name)
        if not path:
            raise ConfigError(f"missing dataset path: {field_name}")
        if not Path(path).exists():
            raise ConfigError(f"{field_name} file does not exist: {path}")


def _load_inputs(config: RunConfig) -> tuple[LabeledDataset, PromptEmbeddingSet]:
    dataset = load_dataset(config.embeddings, config.labels, config.class_names, config.l2_normalize)
    original = read_embeddings(config.prompts_original)
    paraphrases = read_embeddings(config.prompts_paraphrase)
    if config.l2_normalize:
        original = l2_normalized(original)
        paraphrases = l2_normalized(paraphrases)
    return dataset, PromptEmbeddingSet(original, paraphrases)


def _resolve_kernel(config: RunConfig, dataset: LabeledDataset) -> KernelConfig:
    if config.sigma_rule == BANDWIDTH_FIXED:
        return KernelConfig(float(config.sigma), BANDWIDTH_FIXED)
    train = dataset.split_indices(TRAIN)
    sigma = median_heuristic_sigma(
        EmbeddingMatrix(dataset.embeddings.values[train]),
        max_pairs=MEDIAN_PAIR_CAP,
        seed=SIGMA_SAMPLE_SEED,
    )
    return KernelConfig(sigma, BANDWIDTH_MEDIAN)


def _timestamp() -> str:
    return datetime.now(timezone.utc).isoformat()


def _write_json(payload: dict, path: Path) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def _seed_label(seeds) -> str:
    seeds = sorted(seeds)
    return str(seeds[0]) if len(seeds) == 1 else f"{seeds[0]}-{seeds[-1]}"


def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seed = args.seed[0] if args.seed else 0
    imbalance = list(args.imbalance) if args.imbalance else None
    dataset = generate_synthetic(
        classes=args.classes,
        per_class=args.per_class,
        dim=args.dim,
        separation=args.separation,
        imbalance=imbalance,
        seed=seed,
    )
    prompt_dim = args.prompt_dim if args.prompt_dim is not None else args.dim
    n_paraphrases = args.paraphrases if args.paraphrases is not None else args.prompts
    if args.prompts < 1 or n_paraphrases < 1:
        raise ConfigError("need at least one prompt template and one paraphrase")
    originals = stream(seed, "prompts").standard_normal((args.prompts, prompt_dim))
    tiled = originals[np.arange(n_paraphrases) % args.prompts]
    noise = stream(seed, "paraphrase-noise").standard_normal((n_paraphrases, prompt_dim))
    paraphrases = tiled + args.paraphrase_noise * noise

    files = {
        "embeddings": out / "embeddings.gemb",
        "labels": out / "labels.csv",
        "class_names": out / "classes.txt",
        "prompts_original": out / "prompts_original.gemb",
        "prompts_paraphrase": out / "prompts_paraphrase.gemb",
    }
    write_embeddings(dataset.embeddings, files["embeddings"])
    write_labels(dataset.labels, dataset.splits, files["labels"])
    write_class_names(dataset.class_names, files["class_names"])
    write_embeddings(EmbeddingMatrix(originals.astype(np.float32)), files["prompts_original"])
    write_embeddings(EmbeddingMatrix(paraphrases.astype(np.float32)), files["prompts_paraphrase"])
    for path in files.values():
        print(path)
    return 0


def _select_one(config: RunConfig, dataset: LabeledDataset, prompts: PromptEmbeddingSet, seed: int) -> dict:
    payload = {
        "command": "select",
        "created_at": _timestamp(),
        "method": config.method,
        "shots": config.shots,
        "seed": seed,
        "config": config.echo(),
        "sigma": None,
        "indices": None,
    }
    if config.method == "gauc":
        weights = ObjectiveWeights(config.alpha, config.beta)
        context = make_context(
            dataset,
            prompts,
            kernel=KernelConfig(config.sigma if config.sigma_rule == BANDWIDTH_FIXED else 1.0, config.sigma_rule),
            predictor=PredictorConfig(config.temperature, config.prompt_coupling),
            weights=weights,
            probe_cap=config.probe_cap,
            seed=seed,
        )
        result = greedy_select(dataset, config.shots, config.iterations, weights, seed, context)
        mmd2, emid, var = result.term_breakdown
        payload["sigma"] = context.kernel.sigma
        payload["indices"] = [int(i) for i in result.coreset.indices]
        payload["objective_trace"] = [float(v) for v in result.objective_trace]
        payload["terms"] = {"mmd2": mmd2, "emid": emid, "var": var}
        payload["accepted_swaps"] = result.accepted_swaps
    elif config.method == "random":
        coreset = select_random(dataset, config.shots, seed)
        payload["indices"] = [int(i) for i in coreset.indices]
    elif config.method == "herding":
        kernel = _resolve_kernel(config, dataset)
        coreset = select_herding(dataset, config.shots, kernel)
        payload["sigma"] = kernel.sigma
        payload["indices"] = [int(i) for i in coreset.indices]
    else:  # knn re-selects per query at evaluation time
        payload["note"] = "kNN selections are query-dependent; resolved during eval"
    return payload


def cmd_select(args) -> int:
    config = build_config(args)
    dataset, prompts = _load_inputs(config)
    out = Path(config.out_dir)
    for seed in config.seeds:
        payload = _select_one(config, dataset, prompts, seed)
        path = out / f"select_{config.method}_{config.shots}shot_seed{seed}.json"
        _write_json(payload, path)
        print(path)
    return 0


def _load_selection(path: str) -> dict:
    if not Path(path).exists():
        raise ConfigError(f"selection file does not exist: {path}")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"selection {path} is not valid JSON: {exc}") from exc
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    for key in ("command", "method", "shots", "seed", "config"):
        if key not in payload:
            raise FormatError(f"selection {path} is missing the {key!r} field")
    return payload


def _check_same_dataset(selections: list[dict], config: RunConfig) -> None:
    for sel in selections:
        echoed = sel["config"]
        for field_name in _DATASET_FIELDS:
            if echoed.get(field_name) != getattr(config, field_name):
                raise ConfigError(
                    f"selection for seed {sel['seed']} references a different dataset "
                    f"({field_name}: {echoed.get(field_name)!r} vs {getattr(config, field_name)!r})"
                )


def _coreset_from_selection(sel: dict, dataset: LabeledDataset) -> tuple[Coreset | None, int | None]:
    shots = int(sel["shots"])
    if sel["method"] == "knn":
        return None, shots
    if sel.get("indices") is None:
        raise DataError(f"selection for seed {sel['seed']} has no indices")
    coreset = Coreset(np.asarray(sel["indices"], dtype=np.int64), shots)
    coreset.validate(dataset)
    return coreset, None


def _evaluate_selections(
    selections: list[dict],
    dataset: LabeledDataset,
    prompts: PromptEmbeddingSet,
    config: RunConfig,
) -> tuple[dict, list[np.ndarray]]:
    per_seed: dict[str, list[float]] = {name: [] for name in PER_SEED_METRICS}
    predictions = []
    predictor = PredictorConfig(config.temperature, config.prompt_coupling)
    for sel in selections:
        coreset, knn_shots = _coreset_from_selection(sel, dataset)
        values, logp = evaluate_selection(
            dataset, prompts, predictor, config.ece_bins, coreset=coreset, knn_shots=knn_shots
        )
        for name in PER_SEED_METRICS:
            per_seed[name].append(values[name])
        predictions.append(logp)
    return per_seed, predictions


def _sorted_unique_by_seed(selections: list[dict]) -> list[dict]:
    seeds = [int(sel["seed"]) for sel in selections]
    if len(set(seeds)) != len(seeds):
        raise ConfigError("duplicate seeds across selection files")
    return sorted(selections, key=lambda sel: int(sel["seed"]))


def cmd_eval(args) -> int:
    selections = _sorted_unique_by_seed([_load_selection(p) for p in args.selections])
    first = selections[0]
    if any(sel["method"] != first["method"] or sel["shots"] != first["shots"] for sel in selections):
        raise ConfigError("all selection files must share one method and shot setting")
    config = build_config(args, base=first["config"])
    _check_same_dataset(selections, config)
    dataset, prompts = _load_inputs(config)

    per_seed, predictions = _evaluate_selections(selections, dataset, prompts, config)
    seeds = [int(sel["seed"]) for sel in selections]
    aggregate = {name: aggregate_mean_std(per_seed[name]) for name in PER_SEED_METRICS}
    runs_variance = var_runs(predictions) if len(predictions) >= 2 else None
    aggregate["var_runs"] = runs_variance

    # constructing the report enforces the metric range invariants
    EvalReport(
        accuracy=aggregate["accuracy"]["mean"],
        macro_f1=aggregate["macro_f1"]["mean"],
        nll=aggregate["nll"]["mean"],
        ece=aggregate["ece"]["mean"],
        var_para=aggregate["var_para"]["mean"],
        var_runs=runs_variance if runs_variance is not None else 0.0,
        chairs=aggregate["chairs"]["mean"],
        chairi=aggregate["chairi"]["mean"],
        per_run_values=per_seed,
    )

    comparison = None
    if args.baseline:
        baseline_paths = [p for part in args.baseline for p in part.split(",") if p]
        baseline = _sorted_unique_by_seed([_load_selection(p) for p in baseline_paths])
        _check_same_dataset(baseline, config)
        if [int(sel["seed"]) for sel in baseline] != seeds:
            raise ConfigError("baseline selections must cover the same seeds")
        base_per_seed, _ = _evaluate_selections(baseline, dataset, prompts, config)
        p_values: dict[str, float | None] = {}
        statistics: dict[str, float | None] = {}
        for name in PER_SEED_METRICS:
            try:
                stat, p = wilcoxon_signed_rank(per_seed[name], base_per_seed[name])
                statistics[name], p_values[name] = stat, p
            except InsufficientDataError:
                statistics[name], p_values[name] = None, None
        comparison = {
            "baseline_method": baseline[0]["method"],
            "per_seed": base_per_seed,
            "statistics": statistics,
            "p_values": p_values,
        }

    payload = {
        "command": "eval",
        "created_at": _timestamp(),
        "method": first["method"],
        "shots": first["shots"],
        "seeds": seeds,
        "config": config.echo(),
        "per_seed": per_seed,
        "aggregate": aggregate,
        "wilcoxon": comparison,
    }
    path = Path(config.out_dir) / f"eval_{first['method']}_{first['shots']}shot_seed{_seed_label(seeds)}.json"
    _write_json(payload, path)
    print(path)
    return 0


def cmd_ablate(args) -> int:
    config = build_config(args)
    dataset, prompts = _load_inputs(config)
    grid = [
        ("full", config.alpha, config.beta),
        ("no_emid", 0.0, config.beta),
        ("no_var", config.alpha, 0.0),
        ("mmd_only", 0.0, 0.0),
    ]
    weights_grid = [ObjectiveWeights(alpha, beta) for _, alpha, beta in grid]
    predictor = PredictorConfig(config.temperature, config.prompt_coupling)

    per_variant_metrics: list[dict[str, list[float]]] = [
        {name: [] for name in PER_SEED_METRICS} for _ in grid
    ]
    per_variant_predictions: list[list[np.ndarray]] = [[] for _ in grid]
    per_variant_terms: list[list[tuple[float, float, float]]] = [[] for _ in grid]

    for seed in config.seeds:
        context = make_context(
            dataset,
            prompts,
            kernel=KernelConfig(config.sigma if config.sigma_rule == BANDWIDTH_FIXED else 1.0, config.sigma_rule),
            predictor=predictor,
            weights=weights_grid[0],
            probe_cap=config.probe_cap,
            seed=seed,
        )
        results = ablate(dataset, weights_grid, config.shots, config.iterations, seed, context)
        for v, result in enumerate(results):
            values, logp = evaluate_selection(
                dataset, prompts, predictor, config.ece_bins, coreset=result.coreset
            )
            for name in PER_SEED_METRICS:
                per_variant_metrics[v][name].append(values[name])
            per_variant_predictions[v].append(logp)
            per_variant_terms[v].append(result.term_breakdown)

    variants = []
    for v, (label, alpha, beta) in enumerate(grid):
        aggregate = {name: aggregate_mean_std(per_variant_metrics[v][name]) for name in PER_SEED_METRICS}
        aggregate["var_runs"] = (
            var_runs(per_variant_predictions[v]) if len(per_variant_predictions[v]) >= 2 else None
        )
        terms = np.asarray(per_variant_terms[v], dtype=np.float64).mean(axis=0)
        variants.append(
            {
                "label": label,
                "alpha": alpha,
                "beta": beta,
                "per_seed": per_variant_metrics[v],
                "aggregate": aggregate,
                "terms": {"mmd2": float(terms[0]), "emid": float(terms[1]), "var": float(terms[2])},
            }
        )

    payload = {
        "command": "ablate",
        "created_at": _timestamp(),
        "method": "gauc",
        "shots": config.shots,
        "seeds": list(config.seeds),
        "config": config.echo(),
        "variants": variants,
    }
    path = Path(config.out_dir) / f"ablate_gauc_{config.shots}shot_seed{_seed_label(config.seeds)}.json"
    _write_json(payload, path)
    print(path)
    return 0


def _add_common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file; flags override its values")
    parser.add_argument("--seed", type=_parse_seed_list, help="comma-separated seed list")
    parser.add_argument("--out", help="output directory")


def _add_dataset_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--embeddings")
    parser.add_argument("--labels")
    parser.add_argument("--class-names", dest="class_names")
    parser.add_argument("--prompts-original", dest="prompts_original")
    parser.add_argument("--prompts-paraphrase", dest="prompts_paraphrase")
    parser.add_argument("--l2-normalize", dest="l2_normalize", action=argparse.BooleanOptionalAction, default=None)


def _add_model_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--sigma", type=float)
    parser.add_argument("--sigma-rule", dest="sigma_rule", choices=(BANDWIDTH_FIXED, BANDWIDTH_MEDIAN))
    parser.add_argument("--temperature", type=float)
    parser.add_argument("--prompt-coupling", dest="prompt_coupling", type=float)
    parser.add_argument("--probe-cap", dest="probe_cap", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coreselect", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="generate a synthetic embedding dataset and prompt files")
    synth.add_argument("--classes", type=int, default=8)
    synth.add_argument("--per-class", dest="per_class", type=int, default=100)
    synth.add_argument("--dim", type=int, default=32)
    synth.add_argument("--separation", type=float, default=3.0)
    synth.add_argument("--imbalance", type=_parse_ratio_list, default=None)
    synth.add_argument("--prompts", type=int, default=4)
    synth.add_argument("--paraphrases", type=int, default=None)
    synth.add_argument("--prompt-dim", dest="prompt_dim", type=int, default=None)
    synth.add_argument("--paraphrase-noise", dest="paraphrase_noise", type=float, default=0.5)
    synth.add_argument("--seed", type=_parse_seed_list, default=(0,))
    synth.add_argument("--out", default="data")
    synth.set_defaults(func=cmd_synth)

    select = sub.add_parser("select", help="run one selection method per seed")
    _add_common_flags(select)
    _add_dataset_flags(select)
    _add_model_flags(select)
    select.add_argument("--method", choices=METHODS)
    select.add_argument("--shots", type=int)
    select.add_argument("--iterations", type=int)
    select.add_argument("--alpha", type=float)
    select.add_argument("--beta", type=float)
    select.set_defaults(func=cmd_select)

    evl = sub.add_parser("eval", help="evaluate selection files on the test split")
    evl.add_argument("selections", nargs="+", help="selection JSON files, one per seed")
    _add_common_flags(evl)
    _add_dataset_flags(evl)
    _add_model_flags(evl)
    evl.add_argument("--ece-bins", dest="ece_bins", type=int)
    evl.add_argument("--baseline", action="append", help="baseline selection file(s); enables the Wilcoxon test")
    evl.set_defaults(func=cmd_eval)

    abl = sub.add_parser("ablate", help="run the four-variant weight grid and evaluate each")
    _add_common_flags(abl)
    _add_dataset_flags(abl)
    _add_model_flags(abl)
    abl.add_argument("--shots", type=int)
    abl.add_argument("--iterations", type=int)
    abl.add_argument("--alpha", type=float)
    abl.add_argument("--beta", type=float)
    abl.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (FormatError, DataError, IoError, ShapeError, InsufficientDataError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 4
    except CoreselectError as exc:  # safety net for future error types
        print(f"error: {exc}", file=sys.stderr)
        return 3


def main_entry() -> None:
    raise SystemExit(main())
