import math

import numpy as np
import pytest
from scipy.special import logsumexp

from coreselect.data import (
    PROBE,
    TRAIN,
    Coreset,
    EmbeddingMatrix,
    LabeledDataset,
    PromptEmbeddingSet,
    generate_synthetic,
)
from coreselect.errors import ConfigError
from coreselect.gaussians import gaussian_js
from coreselect.predictor import (
    PredictorConfig,
    build_emid_inputs,
    predict,
    predict_batch,
    project_prompt,
    smoothed_one_hot,
    variance_term,
)


def _toy_dataset(rows, labels, splits, n_classes=2):
    emb = EmbeddingMatrix(np.asarray(rows, dtype=np.float32))
    names = tuple(f"class_{c}" for c in range(n_classes))
    return LabeledDataset(emb, np.asarray(labels), np.asarray(splits), names)


def _prompts(dim, rng=None, rows=2):
    rng = rng or np.random.default_rng(0)
    original = rng.standard_normal((rows, dim)).astype(np.float32)
    paraphrase = (original + 0.5 * rng.standard_normal((rows, dim))).astype(np.float32)
    return PromptEmbeddingSet(EmbeddingMatrix(original), EmbeddingMatrix(paraphrase))


def test_predict_nearest_prototype_wins():
    dataset = _toy_dataset(
        [[0.0, 0.0], [5.0, 5.0], [0.1, -0.1]],
        [0, 1, 0],
        [TRAIN, TRAIN, PROBE],
    )
    coreset = Coreset(np.array([0, 1]), 1)
    logp = predict(np.array([0.05, 0.0]), coreset, dataset, None, PredictorConfig(1.0))
    assert logp.argmax() == 0


def test_predict_equidistant_prototypes_are_uniform():
    dataset = _toy_dataset(
        [[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]],
        [0, 1, 0],
        [TRAIN, TRAIN, PROBE],
    )
    coreset = Coreset(np.array([0, 1]), 1)
    logp = predict(np.array([0.0, 5.0]), coreset, dataset, None, PredictorConfig(2.0))
    assert np.allclose(logp, -math.log(2.0), atol=1e-12)


def test_predict_large_temperature_approaches_uniform():
    dataset = generate_synthetic(classes=3, per_class=20, dim=6, separation=4.0, seed=0)
    coreset_idx = np.concatenate([dataset.train_indices_by_class(c)[:2] for c in range(3)])
    coreset = Coreset(coreset_idx, 2)
    query = dataset.embeddings.as_f64()[dataset.split_indices(PROBE)[0]]
    logp = predict(query, coreset, dataset, None, PredictorConfig(1e8))
    assert np.allclose(logp, -math.log(3.0), atol=1e-3)


def test_predict_is_normalized_for_random_scenarios():
    rng = np.random.default_rng(1)
    dataset = generate_synthetic(classes=4, per_class=15, dim=8, separation=2.0, seed=1)
    idx = np.concatenate([dataset.train_indices_by_class(c)[:3] for c in range(4)])
    coreset = Coreset(idx, 3)
    queries = rng.standard_normal((20, 8))
    logp = predict_batch(queries, coreset, dataset, rng.standard_normal(8), PredictorConfig(3.0, 0.4))
    assert np.all(np.abs(logsumexp(logp, axis=1)) <= 1e-9)


def test_predict_temperature_scale_consistency():
    # multiplying the temperature by c matches dividing squared distances by c
    rng = np.random.default_rng(2)
    rows = rng.standard_normal((4, 3)).astype(np.float32)
    c = 2.7
    dataset = _toy_dataset(rows, [0, 1, 0, 1], [TRAIN] * 4)
    scaled = _toy_dataset(rows / math.sqrt(c), [0, 1, 0, 1], [TRAIN] * 4)
    coreset = Coreset(np.array([0, 1, 2, 3]), 2)
    query = rng.standard_normal(3)
    a = predict(query, coreset, dataset, None, PredictorConfig(temperature=5.0 * c))
    b = predict(query / math.sqrt(c), coreset, scaled, None, PredictorConfig(temperature=5.0))
    assert np.allclose(a, b, atol=1e-10)


def test_predict_empty_class_raises():
    dataset = _toy_dataset([[0.0, 0.0], [1.0, 1.0]], [0, 0], [TRAIN, TRAIN])
    coreset = Coreset(np.array([0, 1]), 1)  # both members are class 0
    with pytest.raises(ConfigError):
        predict(np.zeros(2), coreset, dataset, None, PredictorConfig(1.0))


def test_project_prompt_truncates_and_pads():
    assert np.array_equal(project_prompt(np.array([1.0, 2.0, 3.0]), 2), [1.0, 2.0])
    assert np.array_equal(project_prompt(np.array([1.0]), 3), [1.0, 0.0, 0.0])


def test_variance_term_hand_value():
    # prototypes at 0 and sqrt(ln 9) with the query on the first prototype
    # put the predictor at p = (0.9, 0.1)
    m = math.sqrt(math.log(9.0))
    dataset = _toy_dataset(
        [[0.0], [m], [0.0]],
        [0, 1, 0],
        [TRAIN, TRAIN, PROBE],
    )
    coreset = Coreset(np.array([0, 1]), 1)
    value = variance_term(coreset, dataset, np.array([2]), None, PredictorConfig(1.0))
    expected = (math.log(0.9) - math.log(0.1)) ** 2 / 4.0  # population variance of two numbers
    assert value == pytest.approx(expected, abs=1e-9)


def test_variance_term_uniform_predictor_is_zero():
    dataset = generate_synthetic(classes=3, per_class=20, dim=6, separation=3.0, seed=2)
    idx = np.concatenate([dataset.train_indices_by_class(c)[:1] for c in range(3)])
    coreset = Coreset(idx, 1)
    probes = dataset.split_indices(PROBE)
    value = variance_term(coreset, dataset, probes, None, PredictorConfig(1e9))
    assert value == pytest.approx(0.0, abs=1e-12)


def test_variance_term_is_mean_of_per_probe_variances():
    dataset = generate_synthetic(classes=3, per_class=20, dim=6, separation=3.0, seed=3)
    idx = np.concatenate([dataset.train_indices_by_class(c)[:2] for c in range(3)])
    coreset = Coreset(idx, 2)
    probes = dataset.split_indices(PROBE)
    config = PredictorConfig(4.0)
    value = variance_term(coreset, dataset, probes, None, config)
    per_probe = [
        float(np.var(predict(dataset.embeddings.as_f64()[i], coreset, dataset, None, config)))
        for i in probes
    ]
    assert value == pytest.approx(float(np.mean(per_probe)), abs=1e-12)


def test_variance_term_invariant_to_probe_order():
    dataset = generate_synthetic(classes=3, per_class=20, dim=6, separation=3.0, seed=4)
    idx = np.concatenate([dataset.train_indices_by_class(c)[:2] for c in range(3)])
    coreset = Coreset(idx, 2)
    probes = dataset.split_indices(PROBE)
    config = PredictorConfig(4.0)
    forward = variance_term(coreset, dataset, probes, None, config)
    backward = variance_term(coreset, dataset, probes[::-1], None, config)
    assert forward == pytest.approx(backward, abs=1e-12)


def test_variance_term_rejects_non_probe_rows():
    dataset = generate_synthetic(classes=2, per_class=20, dim=4, separation=2.0, seed=5)
    idx = np.concatenate([dataset.train_indices_by_class(c)[:1] for c in range(2)])
    coreset = Coreset(idx, 1)
    with pytest.raises(ConfigError):
        variance_term(coreset, dataset, dataset.split_indices(TRAIN)[:3], None, PredictorConfig(1.0))
    with pytest.raises(ConfigError):
        variance_term(coreset, dataset, np.array([], dtype=np.int64), None, PredictorConfig(1.0))


def test_smoothed_one_hot_rows_sum_to_one():
    rows = smoothed_one_hot(np.array([0, 2, 1]), 4, smoothing=0.05)
    assert np.allclose(rows.sum(axis=1), 1.0, atol=1e-12)
    assert rows[0, 0] == pytest.approx(0.95 + 0.05 / 4)
    assert rows[0, 1] == pytest.approx(0.05 / 4)


def _fixture_for_emid(seed=0, coupling=0.3):
    dataset = generate_synthetic(classes=3, per_class=30, dim=6, separation=3.0, seed=seed)
    idx = np.concatenate([dataset.train_indices_by_class(c)[:2] for c in range(3)])
    coreset = Coreset(idx, 2)
    probes = dataset.split_indices(PROBE)
    return dataset, coreset, probes, PredictorConfig(4.0, coupling)


def test_build_emid_inputs_identical_paraphrases_zero_text_term():
    dataset, coreset, probes, config = _fixture_for_emid()
    rng = np.random.default_rng(0)
    original = rng.standard_normal((3, 6)).astype(np.float32)
    prompts = PromptEmbeddingSet(EmbeddingMatrix(original), EmbeddingMatrix(original.copy()))
    inputs = build_emid_inputs(coreset, dataset, probes, prompts, config)
    assert gaussian_js(inputs.text_p, inputs.text_q) == 0.0
    assert gaussian_js(inputs.response_ideal, inputs.response_p) == gaussian_js(
        inputs.response_ideal, inputs.response_q
    )


def test_build_emid_inputs_zero_coupling_equal_response_terms():
    dataset, coreset, probes, config = _fixture_for_emid(coupling=0.0)
    prompts = _prompts(6)
    inputs = build_emid_inputs(coreset, dataset, probes, prompts, config)
    assert np.array_equal(inputs.response_p.mean, inputs.response_q.mean)
    assert np.array_equal(inputs.response_p.covariance, inputs.response_q.covariance)


def test_build_emid_inputs_visual_pair_is_shared():
    dataset, coreset, probes, config = _fixture_for_emid()
    inputs = build_emid_inputs(coreset, dataset, probes, _prompts(6), config)
    assert inputs.visual_p is inputs.visual_q


def test_build_emid_inputs_single_prompt_row_gets_point_summary():
    dataset, coreset, probes, config = _fixture_for_emid()
    rng = np.random.default_rng(1)
    original = rng.standard_normal((1, 6)).astype(np.float32)
    paraphrase = rng.standard_normal((3, 6)).astype(np.float32)
    prompts = PromptEmbeddingSet(EmbeddingMatrix(original), EmbeddingMatrix(paraphrase))
    inputs = build_emid_inputs(coreset, dataset, probes, prompts, config)
    assert np.allclose(np.diag(inputs.text_p.covariance), 1e-6)


def test_accurate_predictor_beats_poor_one_on_response_terms():
    # class prototypes exactly on the probe positions vs swapped prototypes
    rows = [
        [0.0, 0.0], [4.0, 0.0],          # train members, classes 0 and 1
        [4.0, 0.0], [0.0, 0.0],          # train members with the swapped geometry
        [0.0, 0.0], [4.0, 0.0],          # probes for classes 0 and 1
    ]
    labels = [0, 1, 0, 1, 0, 1]
    splits = [TRAIN, TRAIN, TRAIN, TRAIN, PROBE, PROBE]
    dataset = _toy_dataset(rows, labels, splits)
    probes = np.array([4, 5])
    config = PredictorConfig(temperature=1.0, prompt_coupling=0.0)
    prompts = _prompts(2)
    good = build_emid_inputs(Coreset(np.array([0, 1]), 1), dataset, probes, prompts, config)
    bad = build_emid_inputs(Coreset(np.array([2, 3]), 1), dataset, probes, prompts, config)
    good_term = gaussian_js(good.response_ideal, good.response_p)
    bad_term = gaussian_js(bad.response_ideal, bad.response_p)
    assert good_term < bad_term
