import gzip

import numpy as np
import pytest

from memvir.data import (
    Dataset,
    InsufficientClasses,
    InsufficientSamples,
    InvalidSpec,
    ParseError,
    SchemaError,
    SyntheticSpec,
    gen_synthetic,
    load_dataset,
    sample_batch,
    save_dataset,
    subset_classes,
)


def test_train_test_classes_disjoint():
    for seed in range(10):
        train, test = gen_synthetic(SyntheticSpec(seed=seed))
        assert not set(train.class_ids) & set(test.class_ids)
        assert train.class_ids.size == 20 and test.class_ids.size == 20


def test_generation_deterministic():
    a = gen_synthetic(SyntheticSpec(seed=3))
    b = gen_synthetic(SyntheticSpec(seed=3))
    assert a[0].inputs.tobytes() == b[0].inputs.tobytes() and a[1].labels.tobytes() == b[1].labels.tobytes()


def test_tiny_spread_is_nearest_centroid_separable():
    train, _ = gen_synthetic(SyntheticSpec(cluster_spread=1e-6, seed=1))
    centroids = {c: train.inputs[train.labels == c].mean(axis=0) for c in train.class_ids}
    correct = 0
    for x, label in zip(train.inputs, train.labels):
        nearest = min(centroids, key=lambda c: np.sum((x - centroids[c]) ** 2))
        correct += nearest == label
    assert correct == len(train)


def test_invalid_spec():
    with pytest.raises(InvalidSpec):
        gen_synthetic(SyntheticSpec(cluster_spread=0.0))
    with pytest.raises(InvalidSpec):
        gen_synthetic(SyntheticSpec(num_train_classes=0))


def test_balanced_batch():
    train, _ = gen_synthetic(SyntheticSpec(seed=0))
    rows = sample_batch(train, 8, 4, np.random.default_rng(0))
    labels, counts = np.unique(train.labels[rows], return_counts=True)
    assert labels.size == 4 and np.all(counts == 2)
    assert np.unique(rows).size == 8


def test_sampler_errors():
    train, _ = gen_synthetic(SyntheticSpec(num_train_classes=3, samples_per_class=4))
    with pytest.raises(InsufficientClasses):
        sample_batch(train, 8, 4, np.random.default_rng(0))
    with pytest.raises(InsufficientSamples):
        sample_batch(train, 15, 3, np.random.default_rng(0))
    with pytest.raises(ValueError):
        sample_batch(train, 7, 3, np.random.default_rng(0))


def test_class_ratio_subset_never_leaks():
    train, _ = gen_synthetic(SyntheticSpec(seed=2))
    sub = subset_classes(train, 0.5, np.random.default_rng(9))
    assert sub.class_ids.size == 10
    rng = np.random.default_rng(1)
    for _ in range(200):
        rows = sample_batch(sub, 10, 5, rng)
        assert set(sub.labels[rows]) <= set(sub.class_ids)


def test_sampler_class_frequencies_uniform():
    train, _ = gen_synthetic(SyntheticSpec(seed=0))
    rng = np.random.default_rng(123)
    draws = 4000
    counts = np.zeros(20)
    for _ in range(draws):
        rows = sample_batch(train, 10, 5, rng)
        for c in np.unique(train.labels[rows]):
            counts[c] += 1
    p = 5 / 20
    expected = draws * p
    sigma = np.sqrt(draws * p * (1 - p))
    assert np.all(np.abs(counts - expected) < 3 * sigma)


@pytest.mark.parametrize("suffix", [".csv", ".csv.gz"])
def test_csv_roundtrip(tmp_path, suffix):
    train, _ = gen_synthetic(SyntheticSpec(seed=4, num_train_classes=3, samples_per_class=3, input_dim=5))
    path = tmp_path / f"d{suffix}"
    save_dataset(train, path)
    assert load_dataset(path) == train


def test_csv_header_only_is_empty(tmp_path):
    path = tmp_path / "e.csv"
    path.write_text("label,f0,f1\n")
    ds = load_dataset(path)
    assert len(ds) == 0 and ds.inputs.shape == (0, 2)


def test_csv_errors(tmp_path):
    ragged = tmp_path / "r.csv"
    ragged.write_text("label,f0,f1\n0,1.0,2.0\n0,1.0\n")
    with pytest.raises(SchemaError, match="line 3"):
        load_dataset(ragged)
    bad = tmp_path / "b.csv"
    bad.write_text("label,f0\n0,1.0\n0,abc\n")
    with pytest.raises(ParseError, match="line 3"):
        load_dataset(bad)
    gz = tmp_path / "g.csv.gz"
    with gzip.open(gz, "wt") as fh:
        fh.write("label,f0\n1,0.5\n1,0.25\n")
    assert load_dataset(gz).labels.tolist() == [1, 1]


def test_dataset_requires_two_samples_per_class():
    with pytest.raises(ValueError):
        Dataset(np.zeros((3, 2)), [0, 0, 1])
