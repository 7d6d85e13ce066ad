import hashlib
import math
import struct

import numpy as np
import pytest

from coreselect.data import (
    PROBE,
    TEST,
    TRAIN,
    Coreset,
    EmbeddingMatrix,
    LabeledDataset,
    PromptEmbeddingSet,
    generate_synthetic,
    l2_normalized,
    read_class_names,
    read_embeddings,
    read_labels,
    write_class_names,
    write_embeddings,
    write_labels,
)
from coreselect.baselines import select_random
from coreselect.errors import ConfigError, DataError, FormatError
from coreselect.predictor import PredictorConfig, predict_batch

HEADER_SIZE = 4 + 4 + 8 + 4  # magic, version u32, rows u64, dim u32


def test_empty_matrix_writes_header_only(tmp_path):
    path = tmp_path / "empty.gemb"
    write_embeddings(EmbeddingMatrix(np.zeros((0, 4), dtype=np.float32)), path)
    assert path.stat().st_size == HEADER_SIZE
    matrix = read_embeddings(path)
    assert (matrix.rows, matrix.dim) == (0, 4)


def test_single_value_payload_is_little_endian_f32(tmp_path):
    path = tmp_path / "one.gemb"
    write_embeddings(EmbeddingMatrix(np.array([[2.5]], dtype=np.float32)), path)
    raw = path.read_bytes()
    assert raw[HEADER_SIZE:] == struct.pack("<f", 2.5)


def test_small_matrix_round_trip(tmp_path):
    values = np.array([[1, 0, 0], [0, 1, 0]], dtype=np.float32)
    path = tmp_path / "m.gemb"
    write_embeddings(EmbeddingMatrix(values), path)
    assert np.array_equal(read_embeddings(path).values, values)


def test_round_trip_bit_identical_on_random_matrices(tmp_path):
    rng = np.random.default_rng(42)
    for i in range(100):
        rows = int(rng.integers(0, 21))
        dim = int(rng.integers(1, 9))
        values = rng.standard_normal((rows, dim)).astype(np.float32)
        path = tmp_path / f"m{i}.gemb"
        write_embeddings(EmbeddingMatrix(values), path)
        back = read_embeddings(path)
        assert back.values.tobytes() == values.tobytes()


def _valid_file_bytes(values: np.ndarray) -> bytes:
    header = struct.pack("<4sIQI", b"GEMB", 1, values.shape[0], values.shape[1])
    return header + values.astype("<f4").tobytes()


def test_bad_magic_raises_format_error(tmp_path):
    raw = bytearray(_valid_file_bytes(np.ones((2, 2))))
    raw[0] = ord(b"X")
    path = tmp_path / "bad.gemb"
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError):
        read_embeddings(path)


def test_bad_version_raises_format_error(tmp_path):
    raw = bytearray(_valid_file_bytes(np.ones((2, 2))))
    raw[4] = 9
    path = tmp_path / "bad.gemb"
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError):
        read_embeddings(path)


def test_truncated_payload_raises_format_error(tmp_path):
    raw = _valid_file_bytes(np.ones((2, 2)))
    path = tmp_path / "short.gemb"
    path.write_bytes(raw[:-3])
    with pytest.raises(FormatError):
        read_embeddings(path)


def test_non_finite_payload_raises_data_error(tmp_path):
    values = np.array([[np.nan, 1.0]])
    path = tmp_path / "nan.gemb"
    path.write_bytes(_valid_file_bytes(values))
    with pytest.raises(DataError):
        read_embeddings(path)


def test_embedding_matrix_rejects_non_finite():
    with pytest.raises(DataError):
        EmbeddingMatrix(np.array([[np.inf]], dtype=np.float32))


def test_label_csv_round_trip(tmp_path):
    labels = np.array([0, 1, 1, 0, 2])
    splits = np.array([TRAIN, TRAIN, PROBE, TEST, TRAIN])
    path = tmp_path / "labels.csv"
    write_labels(labels, splits, path)
    back_labels, back_splits = read_labels(path)
    assert np.array_equal(back_labels, labels)
    assert np.array_equal(back_splits, splits)


def test_label_csv_rejects_wrong_header(tmp_path):
    path = tmp_path / "labels.csv"
    path.write_text("idx,label,split\n0,0,train\n")
    with pytest.raises(FormatError):
        read_labels(path)


def test_label_csv_rejects_unknown_split(tmp_path):
    path = tmp_path / "labels.csv"
    path.write_text("index,label,split\n0,0,validation\n")
    with pytest.raises(DataError):
        read_labels(path)


def test_label_csv_rejects_duplicate_index(tmp_path):
    path = tmp_path / "labels.csv"
    path.write_text("index,label,split\n0,0,train\n0,1,train\n")
    with pytest.raises(DataError):
        read_labels(path)


def test_class_names_round_trip(tmp_path):
    path = tmp_path / "classes.txt"
    write_class_names(("tumor", "stroma", "mucus"), path)
    assert read_class_names(path) == ("tumor", "stroma", "mucus")


def test_dataset_rejects_out_of_range_label():
    emb = EmbeddingMatrix(np.zeros((2, 2), dtype=np.float32))
    with pytest.raises(DataError):
        LabeledDataset(emb, np.array([0, 5]), np.array([TRAIN, TRAIN]), ("a", "b"))


def test_coreset_validate_catches_violations():
    dataset = generate_synthetic(classes=2, per_class=10, dim=4, separation=1.0, seed=0)
    train0 = dataset.train_indices_by_class(0)
    train1 = dataset.train_indices_by_class(1)
    good = Coreset(np.array([train0[0], train1[0]]), 1)
    good.validate(dataset)
    with pytest.raises(ConfigError):
        Coreset(np.array([train0[0], train0[1]]), 1).validate(dataset)  # unbalanced
    with pytest.raises(ConfigError):
        Coreset(np.array([train0[0], train0[0]]), 1).validate(dataset)  # duplicate
    probe = dataset.split_indices(PROBE)
    if probe.size:
        with pytest.raises(ConfigError):
            Coreset(np.array([train0[0], probe[0]]), 1).validate(dataset)


def test_prompt_set_requires_matching_dims():
    a = EmbeddingMatrix(np.zeros((1, 3), dtype=np.float32))
    b = EmbeddingMatrix(np.zeros((2, 4), dtype=np.float32))
    with pytest.raises(DataError):
        PromptEmbeddingSet(a, b)


def test_l2_normalized_rows_have_unit_norm():
    rng = np.random.default_rng(0)
    matrix = l2_normalized(EmbeddingMatrix(rng.standard_normal((20, 6)).astype(np.float32)))
    norms = np.linalg.norm(matrix.as_f64(), axis=1)
    assert np.allclose(norms, 1.0, atol=1e-6)


def test_generate_synthetic_is_deterministic():
    a = generate_synthetic(classes=3, per_class=30, dim=8, separation=2.0, seed=11)
    b = generate_synthetic(classes=3, per_class=30, dim=8, separation=2.0, seed=11)
    assert np.array_equal(a.embeddings.values, b.embeddings.values)
    assert np.array_equal(a.labels, b.labels)
    assert np.array_equal(a.splits, b.splits)
    c = generate_synthetic(classes=3, per_class=30, dim=8, separation=2.0, seed=12)
    assert not np.array_equal(a.embeddings.values, c.embeddings.values)


def test_generate_synthetic_rejects_bad_imbalance():
    with pytest.raises(ConfigError):
        generate_synthetic(classes=3, per_class=10, dim=4, separation=1.0, imbalance=[1.0, 2.0], seed=0)


def test_generate_synthetic_rejects_small_dim():
    with pytest.raises(ConfigError):
        generate_synthetic(classes=8, per_class=10, dim=4, separation=1.0, seed=0)


def test_split_proportions_within_one_sample():
    dataset = generate_synthetic(
        classes=4, per_class=37, dim=8, separation=1.0, imbalance=[1.0, 0.5, 2.0, 1.3], seed=5
    )
    for c in range(4):
        mask = dataset.labels == c
        n = int(mask.sum())
        for split, frac in ((TRAIN, 0.7), (PROBE, 0.1), (TEST, 0.2)):
            count = int(np.sum(mask & (dataset.splits == split)))
            assert abs(count - frac * n) <= 1.0


def test_imbalance_scales_class_counts():
    dataset = generate_synthetic(
        classes=4, per_class=50, dim=8, separation=1.0, imbalance=[8, 1, 1, 1], seed=0
    )
    counts = np.bincount(dataset.labels, minlength=4)
    assert counts.tolist() == [400, 50, 50, 50]


def test_class_means_sit_at_pairwise_separation():
    separation = 6.0
    dataset = generate_synthetic(classes=4, per_class=500, dim=8, separation=separation, seed=9)
    emb = dataset.embeddings.as_f64()
    means = np.array([emb[dataset.labels == c].mean(axis=0) for c in range(4)])
    for i in range(4):
        for j in range(i + 1, 4):
            assert abs(np.linalg.norm(means[i] - means[j]) - separation) < 0.3


def test_zero_separation_gives_chance_level_accuracy():
    classes = 4
    dataset = generate_synthetic(classes=classes, per_class=50, dim=8, separation=0.0, seed=2)
    coreset = select_random(dataset, 3, seed=0)
    test_idx = dataset.split_indices(TEST)
    logp = predict_batch(
        dataset.embeddings.as_f64()[test_idx], coreset, dataset, None, PredictorConfig(4.0)
    )
    accuracy = float((logp.argmax(axis=1) == dataset.labels[test_idx]).mean())
    chance = 1.0 / classes
    sigma = math.sqrt(chance * (1 - chance) / test_idx.size)
    assert abs(accuracy - chance) <= 3.0 * sigma


def test_high_separation_gives_high_accuracy():
    dataset = generate_synthetic(classes=2, per_class=50, dim=8, separation=10.0, seed=3)
    coreset = select_random(dataset, 5, seed=0)
    test_idx = dataset.split_indices(TEST)
    logp = predict_batch(
        dataset.embeddings.as_f64()[test_idx], coreset, dataset, None, PredictorConfig(4.0)
    )
    accuracy = float((logp.argmax(axis=1) == dataset.labels[test_idx]).mean())
    assert accuracy > 0.95
